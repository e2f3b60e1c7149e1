use super::EvalError;
use crate::autodiff::Matrix;

/// The `n` regions closest to `region` in Euclidean distance, ties broken by
/// region id. Returns `(region, distance)` pairs.
pub fn nearest_neighbors(z: &Matrix, region: usize, n: usize) -> Result<Vec<(usize, f64)>, EvalError> {
    let total = z.rows();
    if region >= total {
        return Err(EvalError::UnknownRegion(region));
    }
    if n >= total {
        return Err(EvalError::InvalidArgument(format!("asked for {n} neighbors among {total} regions")));
    }
    let anchor = z.row(region);
    let mut ranked: Vec<(usize, f64)> = (0..total)
        .filter(|&j| j != region)
        .map(|j| {
            let d: f64 = z.row(j).iter().zip(anchor).map(|(a, b)| (a - b).powi(2)).sum();
            (j, d.sqrt())
        })
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked.truncate(n);
    Ok(ranked)
}
