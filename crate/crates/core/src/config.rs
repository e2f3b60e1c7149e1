//! Pipeline configuration as read from JSON, plus root-seed splitting.

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::EvalConfig;
use crate::graph::HugConfig;
use crate::ingest::InputPaths;
use crate::synth::SyntheticCitySpec;
use crate::train::TrainingConfig;

pub const SEED_ENV: &str = "HUGAT_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSource {
    Paths(InputPaths),
    Synthetic(SyntheticCitySpec),
}

impl Default for InputSource {
    fn default() -> Self {
        Self::Synthetic(SyntheticCitySpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stage seed is derived from it.
    pub seed: u64,
    pub inputs: InputSource,
    pub graph: HugConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            inputs: InputSource::default(),
            graph: HugConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("hugat-out"),
        }
    }
}

/// Seeds handed to each stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub synth: u64,
    pub features: u64,
    pub training: u64,
    pub eval: u64,
}

impl StageSeeds {
    /// One ChaCha stream per stage keyed by the root seed.
    pub fn split(root: u64) -> Self {
        let draw = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(root);
            rng.set_stream(stream);
            rng.next_u64()
        };
        Self {
            synth: draw(1),
            features: draw(2),
            training: draw(3),
            eval: draw(4),
        }
    }
}

impl PipelineConfig {
    /// Parses a config file. Relative input paths resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })?;
        if let InputSource::Paths(p) = &cfg.inputs {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.inputs = InputSource::Paths(p.rebased(base));
        }
        Ok(cfg)
    }

    /// Applies `HUGAT_SEED` when set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_ENV}={v:?} is not a u64")))?;
        }
        Ok(())
    }

    pub fn stage_seeds(&self) -> StageSeeds {
        StageSeeds::split(self.seed)
    }

    /// The nested configs with their seeds filled in from the root seed.
    pub fn seeded(&self) -> Self {
        let seeds = self.stage_seeds();
        let mut cfg = self.clone();
        if let InputSource::Synthetic(spec) = &mut cfg.inputs {
            spec.seed = seeds.synth;
        }
        cfg.graph.seed = seeds.features;
        cfg.training.seed = seeds.training;
        cfg
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.graph.feature_dim == 0 || self.graph.feature_dim != self.training.model.feature_dim {
            return bad(format!(
                "graph feature_dim {} must be positive and equal model feature_dim {}",
                self.graph.feature_dim, self.training.model.feature_dim
            ));
        }
        if !(self.graph.hotspot_fraction > 0.0 && self.graph.hotspot_fraction <= 1.0) {
            return bad(format!("hotspot_fraction {} outside (0, 1]", self.graph.hotspot_fraction));
        }
        if self.graph.time_slots.slots_per_week == 0 {
            return bad("slots_per_week must be positive".into());
        }
        self.training.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.eval.folds < 2 || self.eval.kmeans_restarts == 0 || self.eval.lambda_grid.count == 0 {
            return bad("eval needs folds >= 2, kmeans_restarts >= 1 and a non-empty lambda grid".into());
        }
        match &self.inputs {
            InputSource::Synthetic(spec) => spec.validate().map_err(|e| ConfigError::Invalid(e.to_string())),
            InputSource::Paths(p) => {
                if p.dir.is_none() && p.regions.is_none() {
                    return bad("inputs.paths needs a dir or explicit file paths".into());
                }
                Ok(())
            }
        }
    }
}
