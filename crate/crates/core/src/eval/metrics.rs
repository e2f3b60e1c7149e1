use std::collections::HashMap;

use serde::Serialize;

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
}

/// MAE, RMSE and `R² = 1 − SS_res / SS_tot`.
pub fn regression_metrics(y: &[f64], pred: &[f64]) -> Result<RegressionMetrics, EvalError> {
    if y.len() != pred.len() {
        return Err(EvalError::LengthMismatch { left: y.len(), right: pred.len() });
    }
    if y.len() < 2 {
        return Err(EvalError::TooFewSamples { needed: 2, got: y.len() });
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::DegenerateTarget);
    }
    let (abs, sq) = y
        .iter()
        .zip(pred)
        .fold((0.0, 0.0), |(a, s), (t, p)| (a + (t - p).abs(), s + (t - p).powi(2)));
    Ok(RegressionMetrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        r2: 1.0 - sq / ss_tot,
    })
}

/// Contingency counts between two labelings, with the row and column totals.
struct Contingency {
    cells: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    n: f64,
}

fn dense_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect();
    (out, ids.len())
}

fn contingency(a: &[usize], b: &[usize]) -> Result<Contingency, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(EvalError::TooFewSamples { needed: 1, got: 0 });
    }
    let (a, ka) = dense_labels(a);
    let (b, kb) = dense_labels(b);
    let mut cells = vec![0.0; ka * kb];
    let mut ra = vec![0.0; ka];
    let mut rb = vec![0.0; kb];
    for (x, y) in a.iter().zip(&b) {
        cells[x * kb + y] += 1.0;
        ra[*x] += 1.0;
        rb[*y] += 1.0;
    }
    Ok(Contingency { cells, a: ra, b: rb, n: a.len() as f64 })
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|c| **c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information, `I(A;B) / ((H(A) + H(B)) / 2)`.
/// Zero when both labelings have a single cluster.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64, EvalError> {
    let t = contingency(a, b)?;
    let (ha, hb) = (entropy(&t.a, t.n), entropy(&t.b, t.n));
    let denom = 0.5 * (ha + hb);
    if denom <= 0.0 {
        return Ok(0.0);
    }
    let kb = t.b.len();
    let mut mi = 0.0;
    for (idx, &c) in t.cells.iter().enumerate() {
        if c > 0.0 {
            let (i, j) = (idx / kb, idx % kb);
            mi += c / t.n * (c * t.n / (t.a[i] * t.b[j])).ln();
        }
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn pairs(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index. Returns 1 when both labelings are equally trivial
/// (all singletons, or one cluster each) since the index is then 0/0.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64, EvalError> {
    let t = contingency(a, b)?;
    let index: f64 = t.cells.iter().map(|c| pairs(*c)).sum();
    let sa: f64 = t.a.iter().map(|c| pairs(*c)).sum();
    let sb: f64 = t.b.iter().map(|c| pairs(*c)).sum();
    let total = pairs(t.n);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
