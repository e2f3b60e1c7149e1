//! Coordinate-descent Lasso on standardized features with seeded k-fold CV.
//!
//! The objective per fit is `(1/2n)‖y − ȳ − Xβ‖² + λ‖β‖₁` where `X` has
//! zero-mean, unit-variance columns. Coordinate updates run on the Gram
//! matrix so cost per sweep does not depend on the row count.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::regression_metrics;
use super::EvalError;
use crate::autodiff::Matrix;
use crate::ingest::{DistanceRecord, FlowRecord};

const MAX_SWEEPS: usize = 10_000;
const TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self { min: 1e-4, max: 1e2, count: 50 }
    }
}

impl LambdaGrid {
    /// Log-spaced values from `max` down to `min`.
    pub fn values(&self) -> Vec<f64> {
        if self.count <= 1 {
            return vec![self.min];
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        (0..self.count)
            .map(|i| (hi + (lo - hi) * i as f64 / (self.count - 1) as f64).exp())
            .collect()
    }

    fn validate(&self) -> Result<(), EvalError> {
        if self.count == 0 || !(self.min > 0.0) || !(self.max >= self.min) || !self.max.is_finite() {
            return Err(EvalError::InvalidArgument(format!("bad lambda grid {self:?}")));
        }
        Ok(())
    }
}

/// A fitted linear model in the original feature scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
}

impl LassoModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }
}

/// Column statistics and the Gram system of standardized training rows.
struct Standardized {
    means: Vec<f64>,
    scales: Vec<f64>,
    y_mean: f64,
    gram: Vec<f64>,
    xty: Vec<f64>,
    d: usize,
}

impl Standardized {
    fn new(x: &Matrix, y: &[f64], rows: &[usize]) -> Self {
        let d = x.cols();
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for &i in rows {
            for (m, v) in means.iter_mut().zip(x.row(i)) {
                *m += v / n;
            }
        }
        let mut scales = vec![0.0; d];
        for &i in rows {
            for ((s, v), m) in scales.iter_mut().zip(x.row(i)).zip(&means) {
                *s += (v - m).powi(2) / n;
            }
        }
        // constant columns carry no signal and stay at zero
        for s in &mut scales {
            *s = if *s > 1e-24 { s.sqrt() } else { 0.0 };
        }
        let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
        let std_rows = Matrix::from_fn(rows.len(), d, |r, j| {
            if scales[j] > 0.0 {
                (x.get(rows[r], j) - means[j]) / scales[j]
            } else {
                0.0
            }
        });
        let gram = std_rows.transpose().matmul(&std_rows).map(|v| v / n).into_vec();
        let yc = Matrix::column(&rows.iter().map(|&i| (y[i] - y_mean) / n).collect::<Vec<_>>());
        let xty = std_rows.transpose().matmul(&yc).into_vec();
        Self { means, scales, y_mean, gram, xty, d }
    }

    /// Runs coordinate descent from `beta` (warm start) at strength `lambda`.
    fn solve(&self, lambda: f64, beta: &mut [f64]) {
        let d = self.d;
        for _ in 0..MAX_SWEEPS {
            let mut max_step = 0.0f64;
            for j in 0..d {
                let gjj = self.gram[j * d + j];
                if gjj <= 0.0 {
                    beta[j] = 0.0;
                    continue;
                }
                let row = &self.gram[j * d..(j + 1) * d];
                let dot: f64 = row.iter().zip(beta.iter()).map(|(g, b)| g * b).sum();
                let rho = self.xty[j] - dot + gjj * beta[j];
                let next = soft_threshold(rho, lambda) / gjj;
                max_step = max_step.max((next - beta[j]).abs());
                beta[j] = next;
            }
            if max_step < TOLERANCE {
                break;
            }
        }
    }

    fn model(&self, beta: &[f64], lambda: f64) -> LassoModel {
        let coefficients: Vec<f64> = beta
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
            .collect();
        let intercept = self.y_mean - coefficients.iter().zip(&self.means).map(|(c, m)| c * m).sum::<f64>();
        LassoModel { intercept, coefficients, lambda }
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn check_inputs(x: &Matrix, y: &[f64]) -> Result<(), EvalError> {
    if x.rows() != y.len() {
        return Err(EvalError::LengthMismatch { left: x.rows(), right: y.len() });
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    Ok(())
}

/// Fits a single Lasso model on all rows.
pub fn lasso_fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<LassoModel, EvalError> {
    check_inputs(x, y)?;
    if y.is_empty() {
        return Err(EvalError::TooFewSamples { needed: 1, got: 0 });
    }
    if !(lambda >= 0.0) {
        return Err(EvalError::InvalidArgument(format!("lambda {lambda} must be non-negative")));
    }
    let rows: Vec<usize> = (0..y.len()).collect();
    let sys = Standardized::new(x, y, &rows);
    let mut beta = vec![0.0; x.cols()];
    sys.solve(lambda, &mut beta);
    Ok(sys.model(&beta, lambda))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegressionReport {
    pub task: String,
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    /// Set when the target is constant and R² is undefined (reported as 0).
    pub degenerate_target: bool,
    pub lambda: f64,
    pub folds: usize,
    #[serde(skip)]
    pub fold_of: Vec<usize>,
    #[serde(skip)]
    pub predictions: Vec<f64>,
}

/// Seeded fold assignment: shuffled positions dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, i) in order.into_iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    fold_of
}

/// Chooses λ from `grid` by out-of-fold mean squared error and reports
/// metrics of the out-of-fold predictions at that λ.
pub fn lasso_cv_fit(
    task: &str,
    x: &Matrix,
    y: &[f64],
    folds: usize,
    grid: &LambdaGrid,
    seed: u64,
) -> Result<RegressionReport, EvalError> {
    check_inputs(x, y)?;
    grid.validate()?;
    let n = y.len();
    if folds < 2 || n < folds {
        return Err(EvalError::TooFewSamples { needed: folds.max(2), got: n });
    }
    let fold_of = fold_assignment(n, folds, seed);
    let lambdas = grid.values();
    // predictions[l][i]: out-of-fold prediction for row i at lambdas[l]
    let mut predictions = vec![vec![0.0; n]; lambdas.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let sys = Standardized::new(x, y, &train);
        let mut beta = vec![0.0; x.cols()];
        for (l, &lambda) in lambdas.iter().enumerate() {
            sys.solve(lambda, &mut beta);
            let model = sys.model(&beta, lambda);
            for i in (0..n).filter(|&i| fold_of[i] == f) {
                predictions[l][i] = model.predict_row(x.row(i));
            }
        }
    }
    let mse = |p: &[f64]| p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    let best = (0..lambdas.len())
        .min_by(|&a, &b| mse(&predictions[a]).total_cmp(&mse(&predictions[b])))
        .unwrap_or(0);
    let chosen = std::mem::take(&mut predictions[best]);
    let (metrics, degenerate) = match regression_metrics(y, &chosen) {
        Ok(m) => (m, false),
        Err(EvalError::DegenerateTarget) => {
            let mae = chosen.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
            let rmse = mse(&chosen).sqrt();
            (super::RegressionMetrics { mae, rmse, r2: 0.0 }, true)
        }
        Err(e) => return Err(e),
    };
    Ok(RegressionReport {
        task: task.to_string(),
        mae: metrics.mae,
        rmse: metrics.rmse,
        r2: metrics.r2,
        degenerate_target: degenerate,
        lambda: lambdas[best],
        folds,
        fold_of,
        predictions: chosen,
    })
}

/// Pair features `[z_i ‖ z_j ‖ z_i ⊙ z_j ‖ d_ij]` for each observed flow.
pub fn flow_features(
    z: &Matrix,
    distances: &[DistanceRecord],
    flows: &[FlowRecord],
) -> Result<(Matrix, Vec<f64>), EvalError> {
    let n = z.rows();
    let d = z.cols();
    let lookup: HashMap<(usize, usize), f64> = distances.iter().map(|r| ((r.src, r.dst), r.distance)).collect();
    let mut data = Vec::with_capacity(flows.len() * (3 * d + 1));
    let mut y = Vec::with_capacity(flows.len());
    for f in flows {
        for r in [f.origin, f.dest] {
            if r >= n {
                return Err(EvalError::UnknownRegion(r));
            }
        }
        let dist = lookup
            .get(&(f.origin, f.dest))
            .or_else(|| lookup.get(&(f.dest, f.origin)))
            .ok_or(EvalError::MissingDistance { origin: f.origin, dest: f.dest })?;
        let (zi, zj) = (z.row(f.origin), z.row(f.dest));
        data.extend_from_slice(zi);
        data.extend_from_slice(zj);
        data.extend(zi.iter().zip(zj).map(|(a, b)| a * b));
        data.push(*dist);
        y.push(f.count);
    }
    Ok((Matrix::from_vec(flows.len(), 3 * d + 1, data), y))
}

pub fn flow_regression(
    z: &Matrix,
    distances: &[DistanceRecord],
    flows: &[FlowRecord],
    folds: usize,
    grid: &LambdaGrid,
    seed: u64,
) -> Result<RegressionReport, EvalError> {
    let (x, y) = flow_features(z, distances, flows)?;
    lasso_cv_fit("flow", &x, &y, folds, grid, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn grid_is_log_spaced_and_descending() {
        let g = LambdaGrid::default().values();
        assert_eq!(g.len(), 50);
        assert!((g[0] - 1e2).abs() < 1e-9 && (g[49] - 1e-4).abs() < 1e-15);
        let ratio = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - ratio).abs() < 1e-9));
    }

    #[test]
    fn linear_target_is_recovered() {
        let x = random_matrix(60, 4, 1);
        let y: Vec<f64> = (0..60).map(|i| 3.0 + x.row(i)[0] * 2.0 - x.row(i)[2]).collect();
        let r = lasso_cv_fit("t", &x, &y, 5, &LambdaGrid::default(), 0).unwrap();
        assert!(r.r2 >= 0.999, "{r:?}");
        assert!(!r.degenerate_target);
    }

    #[test]
    fn huge_lambda_zeroes_everything() {
        let x = random_matrix(30, 3, 2);
        let y: Vec<f64> = (0..30).map(|i| x.row(i)[1] * 5.0 + 1.0).collect();
        let m = lasso_fit(&x, &y, 1e6).unwrap();
        assert!(m.coefficients.iter().all(|c| *c == 0.0));
        let mean = y.iter().sum::<f64>() / 30.0;
        assert!((m.intercept - mean).abs() < 1e-12);
        assert!(m.predict(&x).iter().all(|p| (p - mean).abs() < 1e-12));
    }

    #[test]
    fn constant_target_is_flagged() {
        let x = random_matrix(20, 2, 3);
        let r = lasso_cv_fit("c", &x, &[4.0; 20], 5, &LambdaGrid::default(), 0).unwrap();
        assert!(r.degenerate_target);
        assert_eq!(r.r2, 0.0);
        assert!(r.mae < 1e-12);
    }

    #[test]
    fn cv_is_deterministic_and_folds_balanced() {
        let x = random_matrix(23, 3, 4);
        let y: Vec<f64> = (0..23).map(|i| x.row(i)[0] + (i as f64).sin()).collect();
        let a = lasso_cv_fit("t", &x, &y, 5, &LambdaGrid::default(), 9).unwrap();
        let b = lasso_cv_fit("t", &x, &y, 5, &LambdaGrid::default(), 9).unwrap();
        assert_eq!(a, b);
        let mut sizes = [0; 5];
        for f in &a.fold_of {
            sizes[*f] += 1;
        }
        assert!(sizes.iter().all(|s| *s == 4 || *s == 5));
        assert!(lasso_cv_fit("t", &x, &y[..3], 5, &LambdaGrid::default(), 0).is_err());
    }

    #[test]
    fn flow_features_layout_and_missing_distance() {
        let z = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let dist = [DistanceRecord { src: 1, dst: 0, distance: 7.0 }];
        let flows = [FlowRecord { origin: 0, dest: 1, count: 5.0 }];
        let (x, y) = flow_features(&z, &dist, &flows).unwrap();
        assert_eq!(x.row(0), &[1.0, 2.0, 3.0, 4.0, 3.0, 8.0, 7.0]);
        assert_eq!(y, vec![5.0]);
        assert_eq!(
            flow_features(&z, &[], &flows),
            Err(EvalError::MissingDistance { origin: 0, dest: 1 })
        );
    }

    #[test]
    fn flows_proportional_to_distance() {
        let z = random_matrix(12, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut dist = Vec::new();
        let mut flows = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                if i != j {
                    let d = rng.gen_range(0.5..5.0);
                    dist.push(DistanceRecord { src: i, dst: j, distance: d });
                    flows.push(FlowRecord { origin: i, dest: j, count: 5.0 * d });
                }
            }
        }
        let r = flow_regression(&z, &dist, &flows, 5, &LambdaGrid::default(), 0).unwrap();
        assert!(r.r2 >= 0.999, "{r:?}");
        let constant: Vec<_> = flows.iter().map(|f| FlowRecord { count: 3.0, ..f.clone() }).collect();
        let r = flow_regression(&z, &dist, &constant, 5, &LambdaGrid::default(), 0).unwrap();
        assert!(r.mae < 1e-9);
    }
}
