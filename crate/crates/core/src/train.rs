//! Full-batch Adam training of the attention model.

use std::io::Write;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::attributes::RegionTargets;
use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Matrix, SoftmaxMask, Tape};
use crate::graph::{HeterogeneousUrbanGraph, NodeType};
use crate::metapath::MetaPathAdjacency;
use crate::model::{adjacency_mask, forward_on_tape, EmbeddingMatrix, HanParameters, ModelConfig, ModelError, ParamVars};
use crate::objectives::{loss_on_tape, LossTargets, LossWeights, ObjectiveError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_epochs() -> usize {
    1000
}
fn default_lr() -> f64 {
    0.001
}
fn default_replicates() -> usize {
    5
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            lr: default_lr(),
            seed: 0,
            replicates: default_replicates(),
            weights: LossWeights::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.replicates == 0 {
            return Err(TrainError::InvalidConfig("replicates must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Loss components recorded before the update of one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub checkin: f64,
    pub landuse: f64,
    pub mobility: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRun {
    pub seed: u64,
    pub params: HanParameters,
    pub embeddings: EmbeddingMatrix,
    /// Final semantic attention weights, one per meta-path.
    pub beta: Vec<f64>,
    pub history: Vec<LossRecord>,
    pub beta_history: Vec<Vec<f64>>,
}

impl TrainingRun {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.total)
    }

    /// Header `epoch,L_chk,L_land,L_mob,total`.
    pub fn write_loss_history<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epoch", "L_chk", "L_land", "L_mob", "total"])?;
        for r in &self.history {
            wr.write_record([
                r.epoch.to_string(),
                r.checkin.to_string(),
                r.landuse.to_string(),
                r.mobility.to_string(),
                r.total.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Header `epoch,<meta-path names>`.
    pub fn write_beta_history<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut head = vec!["epoch".to_string()];
        head.extend(self.params.metapaths.iter().cloned());
        wr.write_record(&head)?;
        for (e, beta) in self.beta_history.iter().enumerate() {
            let mut rec = vec![(e + 1).to_string()];
            rec.extend(beta.iter().map(|b| b.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn diverged(epoch: usize) -> impl Fn(AutodiffError) -> TrainError {
    move |e| match e {
        AutodiffError::NonFiniteValue { .. } => TrainError::DivergenceDetected { epoch },
        other => other.into(),
    }
}

fn lift<E: Into<TrainError>>(epoch: usize) -> impl Fn(E) -> TrainError {
    move |e| match e.into() {
        TrainError::Model(ModelError::Autodiff(a)) | TrainError::Objective(ObjectiveError::Autodiff(a)) => diverged(epoch)(a),
        TrainError::Autodiff(a) => diverged(epoch)(a),
        other => other,
    }
}

/// Trains one model from `cfg.seed`.
pub fn train(
    g: &HeterogeneousUrbanGraph,
    adjacencies: &[MetaPathAdjacency],
    targets: &RegionTargets,
    cfg: &TrainingConfig,
) -> Result<TrainingRun, TrainError> {
    cfg.validate()?;
    let masks = adjacencies.iter().map(adjacency_mask).collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = adjacencies.iter().map(|a| a.metapath.name.clone()).collect();
    let loss_targets = LossTargets::new(targets);
    let features = g
        .features
        .get(&NodeType::Region)
        .ok_or_else(|| TrainError::InvalidConfig("graph has no region features".into()))?;
    train_with(features, &masks, &names, &loss_targets, cfg, cfg.seed)
}

fn train_with(
    features: &Matrix,
    masks: &[Rc<SoftmaxMask>],
    names: &[String],
    loss_targets: &LossTargets,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<TrainingRun, TrainError> {
    let mut params = HanParameters::init(&cfg.model, names, seed)?;
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        params.store.values(),
    );
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut beta_history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, &params).map_err(lift(epoch))?;
        let x = tape.constant(features.clone()).map_err(lift(epoch))?;
        let fw = forward_on_tape(&mut tape, &params, &vars, x, masks).map_err(lift(epoch))?;
        let loss = loss_on_tape(&mut tape, fw.z, loss_targets, &cfg.weights).map_err(lift(epoch))?;
        let b = loss.breakdown(&tape);
        if !b.total.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch });
        }
        history.push(LossRecord {
            epoch,
            checkin: b.checkin,
            landuse: b.landuse,
            mobility: b.mobility,
            total: b.total,
        });
        beta_history.push(tape.value(fw.beta).as_slice().to_vec());
        let grads = tape.backward(loss.total).map_err(lift(epoch))?;
        let g: Vec<Matrix> = vars
            .all
            .iter()
            .zip(params.store.values())
            .map(|(v, p)| grads.get_or_zeros(*v, p))
            .collect();
        adam.step(params.store.values_mut(), &g).map_err(lift(epoch))?;
        if params.store.values().iter().any(|p| !p.is_finite()) {
            return Err(TrainError::DivergenceDetected { epoch });
        }
    }
    let mut tape = Tape::new();
    let vars = ParamVars::constants(&mut tape, &params).map_err(lift(cfg.epochs))?;
    let x = tape.constant(features.clone()).map_err(lift(cfg.epochs))?;
    let fw = forward_on_tape(&mut tape, &params, &vars, x, masks).map_err(lift(cfg.epochs))?;
    Ok(TrainingRun {
        seed,
        embeddings: EmbeddingMatrix {
            z: tape.value(fw.z).clone(),
        },
        beta: tape.value(fw.beta).as_slice().to_vec(),
        params,
        history,
        beta_history,
    })
}

/// Independent runs from seeds `cfg.seed .. cfg.seed + cfg.replicates`,
/// returned in seed order.
pub fn train_replicates(
    g: &HeterogeneousUrbanGraph,
    adjacencies: &[MetaPathAdjacency],
    targets: &RegionTargets,
    cfg: &TrainingConfig,
) -> Result<Vec<TrainingRun>, TrainError> {
    cfg.validate()?;
    for a in adjacencies {
        adjacency_mask(a)?;
    }
    let seeds: Vec<u64> = (0..cfg.replicates as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    let one = |seed: u64| {
        train(
            g,
            adjacencies,
            targets,
            &TrainingConfig {
                seed,
                ..cfg.clone()
            },
        )
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.into_iter().map(one).collect()
    }
}
