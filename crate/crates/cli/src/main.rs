use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hugat_core::config::PipelineConfig;
use hugat_core::pipeline::{
    evaluate_saved, run_ablation, run_stages, synthesize, PipelineError, Stage, Summary, SUMMARY_FILE,
};

/// Region embeddings from heterogeneous urban graphs.
#[derive(Parser, Debug)]
#[command(name = "hugat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed (overrides the config and HUGAT_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic city tables only.
    Synth,
    /// Ingest, build the graph, meta-path neighbors and targets.
    BuildGraph,
    /// Everything up to and including training.
    Train,
    /// Score embeddings saved by an earlier `train` in the same output dir.
    Eval,
    /// Meta-path ablation table.
    Ablate,
    /// Full pipeline.
    Run {
        /// Last stage to run.
        #[arg(long, default_value = "eval")]
        stage: Stage,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<Summary, PipelineError> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Synth => synthesize(&cfg, out),
        Command::BuildGraph => run_stages(&cfg, out, Stage::Targets),
        Command::Train => run_stages(&cfg, out, Stage::Train),
        Command::Eval => evaluate_saved(&cfg, out),
        Command::Ablate => run_ablation(&cfg, out),
        Command::Run { stage } => run_stages(&cfg, out, stage),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            if let Some(g) = &summary.graph {
                print!("{}", g.statistics);
            }
            if let Some(a) = &summary.aggregate {
                println!(
                    "nmi {:?}  ari {:?}  crime r2 {:?}  income r2 {:?}  flow r2 {:?}",
                    a.nmi, a.ari, a.crime_r2, a.income_r2, a.flow_r2
                );
            }
            let dir = cli.out.clone().unwrap_or_else(|| {
                load_config(&cli).map(|c| c.output_dir).unwrap_or_default()
            });
            println!("summary written to {}", dir.join(SUMMARY_FILE).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
