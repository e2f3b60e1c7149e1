use std::io::Write;

use serde::Serialize;

use super::{evaluate, EvalConfig, EvalError, EvalInputs};
use crate::attributes::RegionTargets;
use crate::graph::HeterogeneousUrbanGraph;
use crate::metapath::MetaPathAdjacency;
use crate::train::{train, TrainingConfig};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub metapath_set: String,
    pub crime_r2: Option<f64>,
    pub income_r2: Option<f64>,
    pub flow_r2: Option<f64>,
    pub nmi: Option<f64>,
}

/// The meta-path subsets tried: each path alone, then growing prefixes of
/// the given order.
fn subsets(count: usize) -> Vec<Vec<usize>> {
    let singles = (0..count).map(|i| vec![i]);
    let prefixes = (1..=count).map(|len| (0..len).collect());
    singles.chain(prefixes).collect()
}

fn run_subset(
    g: &HeterogeneousUrbanGraph,
    adjacencies: &[MetaPathAdjacency],
    subset: &[usize],
    targets: &RegionTargets,
    train_cfg: &TrainingConfig,
    inputs: &EvalInputs,
    eval_cfg: &EvalConfig,
    eval_seed: u64,
) -> Result<AblationRow, EvalError> {
    let chosen: Vec<MetaPathAdjacency> = subset.iter().map(|&i| adjacencies[i].clone()).collect();
    let run = train(g, &chosen, targets, train_cfg)?;
    let cfg = EvalConfig { neighbor_queries: Vec::new(), ..eval_cfg.clone() };
    let report = evaluate(&run.embeddings.z, inputs, &cfg, eval_seed)?;
    Ok(AblationRow {
        metapath_set: chosen.iter().map(|a| a.metapath.name.as_str()).collect::<Vec<_>>().join("+"),
        crime_r2: report.crime.map(|r| r.r2),
        income_r2: report.income.map(|r| r.r2),
        flow_r2: report.flow.map(|r| r.r2),
        nmi: report.clustering.and_then(|c| c.nmi),
    })
}

/// Trains and evaluates one model per meta-path subset with the seed in
/// `train_cfg`. Rows come back singles first, then cumulative prefixes.
pub fn metapath_ablation(
    g: &HeterogeneousUrbanGraph,
    adjacencies: &[MetaPathAdjacency],
    targets: &RegionTargets,
    train_cfg: &TrainingConfig,
    inputs: &EvalInputs,
    eval_cfg: &EvalConfig,
    eval_seed: u64,
) -> Result<Vec<AblationRow>, EvalError> {
    let sets = subsets(adjacencies.len());
    let one = |s: &Vec<usize>| run_subset(g, adjacencies, s, targets, train_cfg, inputs, eval_cfg, eval_seed);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        sets.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        sets.iter().map(one).collect()
    }
}

pub fn write_ablation_csv<W: Write>(w: W, rows: &[AblationRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
