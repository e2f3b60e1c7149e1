//! Downstream evaluation of region embeddings: Lasso-CV prediction of
//! per-region values and pairwise flows, k-means clustering scored against
//! reference labels, nearest-neighbor lookup and meta-path ablation.

mod ablation;
mod kmeans;
mod lasso;
mod metrics;
mod neighbors;

use serde::{Deserialize, Serialize};

pub use ablation::{metapath_ablation, write_ablation_csv, AblationRow};
pub use kmeans::{kmeans, within_cluster_ss, KMeansResult};
pub use lasso::{
    flow_features, flow_regression, fold_assignment, lasso_cv_fit, lasso_fit, LambdaGrid, LassoModel,
    RegressionReport,
};
pub use metrics::{ari, nmi, regression_metrics, RegressionMetrics};
pub use neighbors::nearest_neighbors;

use crate::autodiff::Matrix;
use crate::ingest::{Dataset, DistanceRecord, FlowRecord};
use crate::train::TrainError;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("target is constant")]
    DegenerateTarget,
    #[error("non-finite input")]
    NonFinite,
    #[error("k = {k} exceeds {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error("unknown region {0}")]
    UnknownRegion(usize),
    #[error("no distance for pair ({origin}, {dest})")]
    MissingDistance { origin: usize, dest: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("training failed: {0}")]
    Training(#[from] TrainError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub folds: usize,
    pub lambda_grid: LambdaGrid,
    pub kmeans_restarts: usize,
    /// Cluster count; defaults to the number of distinct reference labels.
    pub clusters: Option<usize>,
    pub crime: bool,
    pub income: bool,
    pub flow: bool,
    pub clustering: bool,
    pub ablation: bool,
    /// Regions whose nearest neighbors are reported.
    pub neighbor_queries: Vec<usize>,
    pub neighbor_count: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            lambda_grid: LambdaGrid::default(),
            kmeans_restarts: 10,
            clusters: None,
            crime: true,
            income: true,
            flow: true,
            clustering: true,
            ablation: false,
            neighbor_queries: Vec::new(),
            neighbor_count: 5,
        }
    }
}

/// Reference data the embeddings are scored against. Absent pieces skip
/// the corresponding task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalInputs {
    pub crime: Option<Vec<f64>>,
    pub income: Option<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
    pub flows: Option<Vec<FlowRecord>>,
    pub distances: Option<Vec<DistanceRecord>>,
}

impl EvalInputs {
    pub fn from_dataset(data: &Dataset) -> Self {
        let n = data.region_count();
        Self {
            crime: Dataset::values(&data.crime, n),
            income: Dataset::values(&data.income, n),
            labels: data.district_labels(),
            flows: data.bike_flows.clone(),
            distances: data.distances.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusteringReport {
    pub k: usize,
    pub restarts: usize,
    pub objective: f64,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    #[serde(skip)]
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeighborReport {
    pub region: usize,
    pub neighbors: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub crime: Option<RegressionReport>,
    pub income: Option<RegressionReport>,
    pub flow: Option<RegressionReport>,
    pub clustering: Option<ClusteringReport>,
    pub neighbors: Vec<NeighborReport>,
}

pub fn cluster_embeddings(
    z: &Matrix,
    labels: Option<&[usize]>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<Option<ClusteringReport>, EvalError> {
    let k = match (cfg.clusters, labels) {
        (Some(k), _) => k,
        (None, Some(l)) => l.iter().collect::<std::collections::BTreeSet<_>>().len(),
        (None, None) => return Ok(None),
    };
    let result = kmeans(z, k, cfg.kmeans_restarts, seed)?;
    let (nmi, ari) = match labels {
        Some(l) => (Some(nmi(&result.labels, l)?), Some(ari(&result.labels, l)?)),
        None => (None, None),
    };
    Ok(Some(ClusteringReport {
        k,
        restarts: cfg.kmeans_restarts,
        objective: result.objective,
        nmi,
        ari,
        labels: result.labels,
    }))
}

/// Runs every enabled task for which reference data is present.
pub fn evaluate(z: &Matrix, inputs: &EvalInputs, cfg: &EvalConfig, seed: u64) -> Result<EvalReport, EvalError> {
    let value_task = |name: &str, on: bool, y: &Option<Vec<f64>>| -> Result<Option<RegressionReport>, EvalError> {
        match y {
            Some(y) if on => lasso_cv_fit(name, z, y, cfg.folds, &cfg.lambda_grid, seed).map(Some),
            _ => Ok(None),
        }
    };
    let crime = value_task("crime", cfg.crime, &inputs.crime)?;
    let income = value_task("income", cfg.income, &inputs.income)?;
    let flow = match &inputs.flows {
        Some(flows) if cfg.flow => {
            let distances = inputs.distances.as_deref().unwrap_or(&[]);
            Some(flow_regression(z, distances, flows, cfg.folds, &cfg.lambda_grid, seed)?)
        }
        _ => None,
    };
    let clustering = if cfg.clustering {
        cluster_embeddings(z, inputs.labels.as_deref(), cfg, seed)?
    } else {
        None
    };
    let neighbors = cfg
        .neighbor_queries
        .iter()
        .map(|&r| {
            Ok(NeighborReport {
                region: r,
                neighbors: nearest_neighbors(z, r, cfg.neighbor_count)?,
            })
        })
        .collect::<Result<_, EvalError>>()?;
    Ok(EvalReport { crime, income, flow, clustering, neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tasks_without_inputs_are_skipped() {
        let z = Matrix::from_fn(10, 2, |i, j| (i * 2 + j) as f64);
        let r = evaluate(&z, &EvalInputs::default(), &EvalConfig::default(), 0).unwrap();
        assert_eq!(r, EvalReport::default());
    }

    #[test]
    fn clustering_uses_label_count() {
        let z = Matrix::from_fn(12, 1, |i, _| if i < 6 { 0.0 } else { 10.0 } + i as f64 * 0.01);
        let labels: Vec<usize> = (0..12).map(|i| usize::from(i >= 6) + 3).collect();
        let inputs = EvalInputs { labels: Some(labels), ..Default::default() };
        let cfg = EvalConfig { neighbor_queries: vec![0], neighbor_count: 2, ..Default::default() };
        let r = evaluate(&z, &inputs, &cfg, 0).unwrap();
        let c = r.clustering.unwrap();
        assert_eq!(c.k, 2);
        assert!((c.nmi.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.neighbors[0].neighbors.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn flows_without_distances_fail() {
        let z = Matrix::zeros(3, 2);
        let inputs = EvalInputs {
            flows: Some(vec![FlowRecord { origin: 0, dest: 1, count: 1.0 }]),
            ..Default::default()
        };
        let err = evaluate(&z, &inputs, &EvalConfig::default(), 0).unwrap_err();
        assert_eq!(err, EvalError::MissingDistance { origin: 0, dest: 1 });
    }
}
