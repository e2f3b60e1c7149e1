//! End-to-end orchestration: ingest, graph, meta-paths, targets, training
//! replicates and evaluation. Each stage writes its artifacts under the
//! output directory before the next one starts.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::attributes::{write_matrix_csv, AttributeError, RegionTargets};
use crate::config::{ConfigError, InputSource, PipelineConfig, StageSeeds};
use crate::eval::{
    evaluate, metapath_ablation, write_ablation_csv, AblationRow, EvalError, EvalInputs, EvalReport,
};
use crate::graph::{build_hug, GraphError, GraphStatistics, HeterogeneousUrbanGraph, NodeType, RelationType};
use crate::ingest::{ingest, Dataset, IngestError};
use crate::metapath::{all_builtin_adjacencies, MetaPathAdjacency, MetaPathError};
use crate::model::EmbeddingMatrix;
use crate::synth::{generate_synthetic_city, SynthError};
use crate::train::{train_replicates, LossRecord, TrainError, TrainingRun};

pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Graph,
    Metapaths,
    Targets,
    Train,
    Eval,
    Ablation,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::Metapaths => "metapaths",
            Stage::Targets => "targets",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Ablation => "ablation",
        }
    }

    /// Process exit status for a failure in this stage.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Ingest | Stage::Graph | Stage::Metapaths | Stage::Targets => 3,
            Stage::Train => 4,
            Stage::Eval | Stage::Ablation => 5,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            Stage::Ingest,
            Stage::Graph,
            Stage::Metapaths,
            Stage::Targets,
            Stage::Train,
            Stage::Eval,
            Stage::Ablation,
        ]
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("ingest: {0}")]
    Synth(#[from] SynthError),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("metapaths: {0}")]
    MetaPath(#[from] MetaPathError),
    #[error("targets: {0}")]
    Targets(#[from] AttributeError),
    #[error("train: {0}")]
    Train(#[from] TrainError),
    #[error("{stage}: {source}")]
    Eval { stage: Stage, source: EvalError },
    #[error("{stage}: writing {path}: {message}")]
    Artifact { stage: Stage, path: PathBuf, message: String },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::Config(_) => Stage::Config,
            PipelineError::Ingest(_) | PipelineError::Synth(_) => Stage::Ingest,
            PipelineError::Graph(_) => Stage::Graph,
            PipelineError::MetaPath(_) => Stage::Metapaths,
            PipelineError::Targets(_) => Stage::Targets,
            PipelineError::Train(_) => Stage::Train,
            PipelineError::Eval { stage, .. } | PipelineError::Artifact { stage, .. } => *stage,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage().exit_code()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphSummary {
    pub nodes: BTreeMap<String, usize>,
    pub edges: BTreeMap<String, usize>,
    pub statistics: GraphStatistics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs: usize,
    pub first: Option<LossRecord>,
    pub epoch_10: Option<LossRecord>,
    pub last: Option<LossRecord>,
    pub beta: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedEval {
    pub seed: u64,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Means across replicates of each reported score.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub crime_r2: Option<f64>,
    pub income_r2: Option<f64>,
    pub flow_r2: Option<f64>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
}

/// Machine-readable record of one pipeline invocation. Contains no wall
/// clock data, so identical configs give identical files.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub root_seed: u64,
    pub stage_seeds: Option<StageSeeds>,
    pub completed: Vec<Stage>,
    pub row_counts: BTreeMap<String, usize>,
    pub graph: Option<GraphSummary>,
    pub metapath_pairs: BTreeMap<String, usize>,
    pub training: Vec<RunSummary>,
    pub eval: Vec<SeedEval>,
    pub aggregate: Option<Aggregate>,
    pub ablation: Option<Vec<AblationRow>>,
}

/// Everything produced before training.
pub struct Prepared {
    pub dataset: Dataset,
    pub graph: HeterogeneousUrbanGraph,
    pub adjacencies: Vec<MetaPathAdjacency>,
    pub targets: RegionTargets,
}

struct Run<'a> {
    cfg: PipelineConfig,
    out: &'a Path,
    summary: Summary,
}

fn artifact<E: fmt::Display>(stage: Stage, path: &Path) -> impl FnOnce(E) -> PipelineError + '_ {
    move |e| PipelineError::Artifact {
        stage,
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn create(stage: Stage, path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(artifact(stage, dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(artifact(stage, path))
}

fn write_json<T: Serialize>(stage: Stage, path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(artifact(stage, path))?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(artifact(stage, dir))?;
    }
    fs::write(path, text).map_err(artifact(stage, path))
}

/// Synthetic inputs are generated into `dir`; file inputs are read in place.
pub fn load_dataset(cfg: &PipelineConfig, dir: &Path) -> Result<Dataset, PipelineError> {
    match &cfg.inputs {
        InputSource::Synthetic(spec) => {
            let city = generate_synthetic_city(spec)?;
            city.dataset.write_dir(dir)?;
            Ok(city.dataset)
        }
        InputSource::Paths(paths) => Ok(ingest(paths)?),
    }
}

impl<'a> Run<'a> {
    fn new(cfg: &PipelineConfig, out: &'a Path) -> Result<Self, PipelineError> {
        let mut cfg = cfg.clone();
        cfg.validate()?;
        let seeds = cfg.stage_seeds();
        cfg = cfg.seeded();
        fs::create_dir_all(out).map_err(artifact(Stage::Config, out))?;
        write_json(Stage::Config, &out.join("config.json"), &cfg)?;
        let summary = Summary {
            root_seed: cfg.seed,
            stage_seeds: Some(seeds),
            ..Default::default()
        };
        Ok(Self { cfg, out, summary })
    }

    fn done(&mut self, stage: Stage) {
        log::info!("stage {stage} complete");
        self.summary.completed.push(stage);
    }

    fn ingest(&mut self) -> Result<Dataset, PipelineError> {
        let dataset = load_dataset(&self.cfg, &self.out.join("data"))?;
        self.summary.row_counts = dataset.row_counts().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        for (table, rows) in &self.summary.row_counts {
            log::info!("{table}: {rows} rows");
        }
        write_json(Stage::Ingest, &self.out.join("row_counts.json"), &self.summary.row_counts)?;
        self.done(Stage::Ingest);
        Ok(dataset)
    }

    /// Graph, meta-path and target stages, stopping after `last`.
    fn build(&mut self, dataset: Dataset, last: Stage) -> Result<Option<Prepared>, PipelineError> {
        let graph = build_hug(&dataset.tables, &self.cfg.graph)?;
        let stats = graph.statistics();
        let path = self.out.join("graph_stats.txt");
        fs::write(&path, stats.to_string()).map_err(artifact(Stage::Graph, &path))?;
        log::info!("graph statistics:\n{stats}");
        self.summary.graph = Some(GraphSummary {
            nodes: NodeType::ALL.iter().map(|t| (t.to_string(), graph.node_count(*t))).collect(),
            edges: RelationType::ALL
                .iter()
                .map(|r| (format!("{r:?}"), graph.edge_count(*r)))
                .collect(),
            statistics: stats,
        });
        self.done(Stage::Graph);
        if last < Stage::Metapaths {
            return Ok(None);
        }

        let adjacencies = all_builtin_adjacencies(&graph)?;
        for a in &adjacencies {
            let path = self.out.join("metapaths").join(format!("{}.csv", a.metapath.name));
            a.write_edge_list(create(Stage::Metapaths, &path)?)
                .map_err(artifact(Stage::Metapaths, &path))?;
            self.summary.metapath_pairs.insert(a.metapath.name.clone(), a.pair_count());
        }
        self.done(Stage::Metapaths);
        if last < Stage::Targets {
            return Ok(None);
        }

        let t = &dataset.tables;
        let targets = RegionTargets::from_tables(t.regions.len(), &t.pois, &t.checkins, &t.trips, &dataset.landuse)?;
        self.write_targets(&targets)?;
        self.done(Stage::Targets);
        Ok(Some(Prepared { dataset, graph, adjacencies, targets }))
    }

    fn write_targets(&self, t: &RegionTargets) -> Result<(), PipelineError> {
        let n = t.region_count();
        let regions: Vec<String> = (0..n).map(|j| format!("r{j}")).collect();
        let tables = [
            ("od.csv", &t.od.0, &regions),
            ("p_org_given_dst.csv", &t.trips.p_org_given_dst, &regions),
            ("p_dst_given_org.csv", &t.trips.p_dst_given_org, &regions),
            ("checkin_distribution.csv", &t.checkin.p, &t.checkin.categories),
            ("landuse_distribution.csv", &t.landuse.p, &t.landuse.categories),
            ("s_chk.csv", &t.s_chk.0, &regions),
            ("s_land.csv", &t.s_land.0, &regions),
        ];
        for (name, m, headers) in tables {
            let path = self.out.join("targets").join(name);
            write_matrix_csv(create(Stage::Targets, &path)?, m, headers).map_err(artifact(Stage::Targets, &path))?;
        }
        Ok(())
    }

    fn train(&mut self, prep: &Prepared) -> Result<Vec<TrainingRun>, PipelineError> {
        let runs = train_replicates(&prep.graph, &prep.adjacencies, &prep.targets, &self.cfg.training)?;
        for run in &runs {
            let dir = self.out.join("train").join(format!("seed_{}", run.seed));
            let write = |name: &str, f: &dyn Fn(BufWriter<File>) -> csv::Result<()>| {
                let path = dir.join(name);
                f(create(Stage::Train, &path)?).map_err(artifact(Stage::Train, &path))
            };
            write("embeddings.csv", &|w| run.embeddings.write_csv(w))?;
            write("loss_history.csv", &|w| run.write_loss_history(w))?;
            write("beta_history.csv", &|w| run.write_beta_history(w))?;
            self.summary.training.push(RunSummary {
                seed: run.seed,
                epochs: run.history.len(),
                first: run.history.first().copied(),
                epoch_10: run.history.get(9).copied(),
                last: run.history.last().copied(),
                beta: prep
                    .adjacencies
                    .iter()
                    .map(|a| a.metapath.name.clone())
                    .zip(run.beta.iter().copied())
                    .collect(),
            });
        }
        self.done(Stage::Train);
        Ok(runs)
    }

    fn evaluate(&mut self, inputs: &EvalInputs, embeddings: &[(u64, EmbeddingMatrix)]) -> Result<(), PipelineError> {
        let seed = self.summary.stage_seeds.map_or(0, |s| s.eval);
        for (run_seed, e) in embeddings {
            let report = evaluate(&e.z, inputs, &self.cfg.eval, seed)
                .map_err(|source| PipelineError::Eval { stage: Stage::Eval, source })?;
            if let Some(c) = &report.clustering {
                let path = self.out.join("eval").join(format!("clusters_seed_{run_seed}.csv"));
                let mut w = csv::Writer::from_writer(create(Stage::Eval, &path)?);
                let rows = c.labels.iter().enumerate().map(|(i, k)| {
                    let truth = inputs.labels.as_ref().map_or(String::new(), |l| l[i].to_string());
                    [i.to_string(), k.to_string(), truth]
                });
                let res: csv::Result<()> = (|| {
                    w.write_record(["region_id", "cluster", "reference"])?;
                    for r in rows {
                        w.write_record(&r)?;
                    }
                    w.flush()?;
                    Ok(())
                })();
                res.map_err(artifact(Stage::Eval, &path))?;
            }
            let entry = SeedEval { seed: *run_seed, report };
            write_json(Stage::Eval, &self.out.join("eval").join(format!("seed_{run_seed}.json")), &entry)?;
            self.summary.eval.push(entry);
        }
        self.summary.aggregate = Some(aggregate(&self.summary.eval));
        self.done(Stage::Eval);
        Ok(())
    }

    fn ablate(&mut self, prep: &Prepared) -> Result<(), PipelineError> {
        let seed = self.summary.stage_seeds.map_or(0, |s| s.eval);
        let rows = metapath_ablation(
            &prep.graph,
            &prep.adjacencies,
            &prep.targets,
            &self.cfg.training,
            &EvalInputs::from_dataset(&prep.dataset),
            &self.cfg.eval,
            seed,
        )
        .map_err(|source| match source {
            EvalError::Training(e) => PipelineError::Train(e),
            source => PipelineError::Eval { stage: Stage::Ablation, source },
        })?;
        let path = self.out.join("ablation.csv");
        write_ablation_csv(create(Stage::Ablation, &path)?, &rows).map_err(artifact(Stage::Ablation, &path))?;
        self.summary.ablation = Some(rows);
        self.done(Stage::Ablation);
        Ok(())
    }

    fn finish(self) -> Result<Summary, PipelineError> {
        let stage = self.summary.completed.last().copied().unwrap_or(Stage::Config);
        write_json(stage, &self.out.join(SUMMARY_FILE), &self.summary)?;
        Ok(self.summary)
    }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate(evals: &[SeedEval]) -> Aggregate {
    let r = |f: fn(&EvalReport) -> Option<f64>| mean(evals.iter().map(|e| f(&e.report)));
    Aggregate {
        crime_r2: r(|e| e.crime.as_ref().map(|x| x.r2)),
        income_r2: r(|e| e.income.as_ref().map(|x| x.r2)),
        flow_r2: r(|e| e.flow.as_ref().map(|x| x.r2)),
        nmi: r(|e| e.clustering.as_ref().and_then(|c| c.nmi)),
        ari: r(|e| e.clustering.as_ref().and_then(|c| c.ari)),
    }
}

fn output_dir(cfg: &PipelineConfig, out: Option<&Path>) -> PathBuf {
    out.map_or_else(|| cfg.output_dir.clone(), Path::to_path_buf)
}

/// Runs stages in order through `last`. Ablation runs when `last` is
/// [`Stage::Ablation`] or the eval config enables it.
pub fn run_stages(cfg: &PipelineConfig, out: Option<&Path>, last: Stage) -> Result<Summary, PipelineError> {
    let out = output_dir(cfg, out);
    let mut run = Run::new(cfg, &out)?;
    let dataset = run.ingest()?;
    if last < Stage::Graph {
        return run.finish();
    }
    let Some(prep) = run.build(dataset, last)? else {
        return run.finish();
    };
    if last < Stage::Train {
        return run.finish();
    }
    let runs = run.train(&prep)?;
    if last >= Stage::Eval {
        let embeddings: Vec<_> = runs.into_iter().map(|r| (r.seed, r.embeddings)).collect();
        run.evaluate(&EvalInputs::from_dataset(&prep.dataset), &embeddings)?;
    }
    if last == Stage::Ablation || (last >= Stage::Eval && run.cfg.eval.ablation) {
        run.ablate(&prep)?;
    }
    run.finish()
}

/// Full pipeline through evaluation.
pub fn run_pipeline(cfg: &PipelineConfig, out: Option<&Path>) -> Result<Summary, PipelineError> {
    run_stages(cfg, out, Stage::Eval)
}

/// Ingest through targets, then the ablation table only.
pub fn run_ablation(cfg: &PipelineConfig, out: Option<&Path>) -> Result<Summary, PipelineError> {
    let out = output_dir(cfg, out);
    let mut run = Run::new(cfg, &out)?;
    let dataset = run.ingest()?;
    let prep = run.build(dataset, Stage::Targets)?.expect("targets stage reached");
    run.ablate(&prep)?;
    run.finish()
}

/// Scores embeddings saved by an earlier training run in the same output
/// directory.
pub fn evaluate_saved(cfg: &PipelineConfig, out: Option<&Path>) -> Result<Summary, PipelineError> {
    let out = output_dir(cfg, out);
    let mut run = Run::new(cfg, &out)?;
    let data = run.ingest()?;
    let seeds = (0..run.cfg.training.replicates as u64).map(|k| run.cfg.training.seed.wrapping_add(k));
    let mut embeddings = Vec::new();
    for seed in seeds {
        let path = out.join("train").join(format!("seed_{seed}")).join("embeddings.csv");
        let file = File::open(&path).map_err(artifact(Stage::Eval, &path))?;
        let e = EmbeddingMatrix::read_csv(file).map_err(artifact(Stage::Eval, &path))?;
        embeddings.push((seed, e));
    }
    run.evaluate(&EvalInputs::from_dataset(&data), &embeddings)?;
    run.finish()
}

/// Writes only the synthetic input tables into `out`.
pub fn synthesize(cfg: &PipelineConfig, out: Option<&Path>) -> Result<Summary, PipelineError> {
    let out = output_dir(cfg, out);
    if !matches!(cfg.inputs, InputSource::Synthetic(_)) {
        return Err(ConfigError::Invalid("synth needs inputs.synthetic in the config".into()).into());
    }
    let mut run = Run::new(cfg, &out)?;
    run.ingest()?;
    run.finish()
}
