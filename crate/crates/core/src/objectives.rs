//! Training objectives: mobility KL, check-in and land-use similarity
//! regressions, and their convex combination.
//!
//! Category similarities are predicted from the softmax of each embedding,
//! which lives in embedding space rather than category space. Only the
//! Hellinger distances between those softmaxes are compared with the
//! targets, so no projection to the category simplex is needed.

use serde::{Deserialize, Serialize};

use crate::attributes::RegionTargets;
use crate::autodiff::{softmax_rows_value, AutodiffError, Matrix, Tape, Var};

/// Lower clamp applied to predicted probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ObjectiveError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("loss weights must be non-negative and sum to 1, got ({checkin}, {landuse}, {mobility})")]
    InvalidWeights { checkin: f64, landuse: f64, mobility: f64 },
    #[error("target has {got} regions, embeddings have {expected}")]
    RegionCount { expected: usize, got: usize },
}

type Result<T> = std::result::Result<T, ObjectiveError>;

/// Convex weights of the check-in, land-use and mobility losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct LossWeights {
    checkin: f64,
    landuse: f64,
    mobility: f64,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
struct RawWeights {
    checkin: f64,
    landuse: f64,
    mobility: f64,
}

impl TryFrom<RawWeights> for LossWeights {
    type Error = ObjectiveError;
    fn try_from(r: RawWeights) -> Result<Self> {
        LossWeights::new(r.checkin, r.landuse, r.mobility)
    }
}

impl From<LossWeights> for RawWeights {
    fn from(w: LossWeights) -> Self {
        RawWeights {
            checkin: w.checkin,
            landuse: w.landuse,
            mobility: w.mobility,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            checkin: 0.3,
            landuse: 0.6,
            mobility: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(checkin: f64, landuse: f64, mobility: f64) -> Result<Self> {
        let ok = [checkin, landuse, mobility].iter().all(|w| w.is_finite() && *w >= 0.0)
            && (checkin + landuse + mobility - 1.0).abs() <= 1e-12;
        if !ok {
            return Err(ObjectiveError::InvalidWeights { checkin, landuse, mobility });
        }
        Ok(Self { checkin, landuse, mobility })
    }

    /// Mobility loss only.
    pub fn mobility_only() -> Self {
        Self {
            checkin: 0.0,
            landuse: 0.0,
            mobility: 1.0,
        }
    }

    pub fn checkin(&self) -> f64 {
        self.checkin
    }

    pub fn landuse(&self) -> f64 {
        self.landuse
    }

    pub fn mobility(&self) -> f64 {
        self.mobility
    }

    pub fn combine(&self, checkin: f64, landuse: f64, mobility: f64) -> f64 {
        self.checkin * checkin + self.landuse * landuse + self.mobility * mobility
    }
}

/// Per-component loss values of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub checkin: f64,
    pub landuse: f64,
    pub mobility: f64,
    pub total: f64,
}

/// Predicted trip conditionals from embeddings: `(p̂(origin | dest)` with
/// columns summing to one, `p̂(dest | origin)` with rows summing to one).
pub fn estimated_od(z: &Matrix) -> Result<(Matrix, Matrix)> {
    if !z.is_finite() {
        return Err(AutodiffError::NonFiniteValue { op: "estimated_od" }.into());
    }
    let logits = z.matmul(&z.transpose());
    let dst_given_org = softmax_rows_value(&logits, None)?;
    let org_given_dst = softmax_rows_value(&logits.transpose(), None)?.transpose();
    Ok((org_given_dst, dst_given_org))
}

/// `Σ p (log p − log max(q, floor))` over every entry, with `0 log 0 = 0`.
pub fn kl_sum(p: &Matrix, q: &Matrix) -> f64 {
    p.as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p.ln() - q.max(PROB_FLOOR).ln()))
        .sum()
}

/// KL of both trip conditionals, summed over every conditioned slice.
/// Arguments are `(origin | dest, dest | origin)` pairs as returned by
/// [`estimated_od`].
pub fn mobility_loss(target: (&Matrix, &Matrix), estimate: (&Matrix, &Matrix)) -> f64 {
    kl_sum(target.0, estimate.0) + kl_sum(target.1, estimate.1)
}

/// Pairwise Hellinger distances between the row softmaxes of `z`.
pub fn predicted_similarity(z: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone())?;
    let s = similarity_on_tape(&mut tape, zv)?;
    Ok(tape.value(s).clone())
}

/// `Σ_{i≠j} (S_ij − Ŝ_ij)²`.
pub fn similarity_loss(z: &Matrix, target: &Matrix) -> Result<f64> {
    if target.shape() != (z.rows(), z.rows()) {
        return Err(ObjectiveError::RegionCount {
            expected: z.rows(),
            got: target.rows(),
        });
    }
    let s_hat = predicted_similarity(z)?;
    let mut total = 0.0;
    for i in 0..z.rows() {
        for j in 0..z.rows() {
            if i != j {
                total += (target.get(i, j) - s_hat.get(i, j)).powi(2);
            }
        }
    }
    Ok(total)
}

pub fn checkin_loss(z: &Matrix, s_chk: &Matrix) -> Result<f64> {
    similarity_loss(z, s_chk)
}

pub fn landuse_loss(z: &Matrix, s_land: &Matrix) -> Result<f64> {
    similarity_loss(z, s_land)
}

/// All three components and their weighted total.
pub fn total_loss(z: &Matrix, targets: &RegionTargets, weights: &LossWeights) -> Result<LossBreakdown> {
    let n = z.rows();
    if targets.region_count() != n {
        return Err(ObjectiveError::RegionCount {
            expected: n,
            got: targets.region_count(),
        });
    }
    let (org, dst) = estimated_od(z)?;
    let mobility = mobility_loss(
        (&targets.trips.p_org_given_dst, &targets.trips.p_dst_given_org),
        (&org, &dst),
    );
    let checkin = checkin_loss(z, &targets.s_chk.0)?;
    let landuse = landuse_loss(z, &targets.s_land.0)?;
    Ok(LossBreakdown {
        checkin,
        landuse,
        mobility,
        total: weights.combine(checkin, landuse, mobility),
    })
}

/// `sqrt(max(1 − R Rᵀ, 0))` with `R = sqrt(softmax_rows(z))`. Rows of `R`
/// have unit norm, so this is the Hellinger distance.
pub fn similarity_on_tape(tape: &mut Tape, z: Var) -> Result<Var> {
    let p = tape.softmax_rows(z)?;
    let r = tape.sqrt(p)?;
    let rt = tape.transpose(r)?;
    let bc = tape.matmul(r, rt)?;
    let neg = tape.scale(bc, -1.0)?;
    let one_minus = tape.add_scalar(neg, 1.0)?;
    Ok(tape.sqrt(one_minus)?)
}

/// Targets laid out for repeated use on the tape.
#[derive(Clone, Debug)]
pub struct LossTargets {
    /// `p(dest | origin)`, rows indexed by origin.
    dst_given_org: Matrix,
    /// `p(origin | dest)` transposed, rows indexed by destination.
    org_given_dst_t: Matrix,
    /// `Σ p log p` over both conditionals.
    neg_entropy: f64,
    s_chk: Matrix,
    s_land: Matrix,
    off_diagonal: Matrix,
}

impl LossTargets {
    pub fn new(targets: &RegionTargets) -> Self {
        let n = targets.region_count();
        let org_t = targets.trips.p_org_given_dst.transpose();
        let dst = targets.trips.p_dst_given_org.clone();
        let neg_entropy = kl_sum(&org_t, &Matrix::filled(n, n, 1.0)) + kl_sum(&dst, &Matrix::filled(n, n, 1.0));
        Self {
            dst_given_org: dst,
            org_given_dst_t: org_t,
            neg_entropy,
            s_chk: targets.s_chk.0.clone(),
            s_land: targets.s_land.0.clone(),
            off_diagonal: Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }),
        }
    }

    pub fn region_count(&self) -> usize {
        self.off_diagonal.rows()
    }
}

/// Tape handles of each loss component.
pub struct LossVars {
    pub checkin: Var,
    pub landuse: Var,
    pub mobility: Var,
    pub total: Var,
}

fn mobility_on_tape(tape: &mut Tape, z: Var, t: &LossTargets) -> Result<Var> {
    let zt = tape.transpose(z)?;
    let logits = tape.matmul(z, zt)?;
    let logits_t = tape.transpose(logits)?;
    let mut cross = Vec::with_capacity(2);
    for (logit, target) in [(logits, &t.dst_given_org), (logits_t, &t.org_given_dst_t)] {
        let q = tape.softmax_rows(logit)?;
        let log_q = tape.log(q, PROB_FLOOR)?;
        let p = tape.constant(target.clone())?;
        let weighted = tape.mul(p, log_q)?;
        cross.push(tape.sum(weighted)?);
    }
    let cross = tape.add(cross[0], cross[1])?;
    let neg = tape.scale(cross, -1.0)?;
    Ok(tape.add_scalar(neg, t.neg_entropy)?)
}

fn pair_loss_on_tape(tape: &mut Tape, s_hat: Var, target: &Matrix, off_diagonal: Var) -> Result<Var> {
    let s = tape.constant(target.clone())?;
    let diff = tape.sub(s, s_hat)?;
    let diff = tape.mul(diff, off_diagonal)?;
    let sq = tape.square(diff)?;
    Ok(tape.sum(sq)?)
}

/// Records every loss component and the weighted total on the tape.
pub fn loss_on_tape(tape: &mut Tape, z: Var, targets: &LossTargets, weights: &LossWeights) -> Result<LossVars> {
    let n = tape.shape(z).0;
    if targets.region_count() != n {
        return Err(ObjectiveError::RegionCount {
            expected: n,
            got: targets.region_count(),
        });
    }
    let mobility = mobility_on_tape(tape, z, targets)?;
    let s_hat = similarity_on_tape(tape, z)?;
    let off = tape.constant(targets.off_diagonal.clone())?;
    let checkin = pair_loss_on_tape(tape, s_hat, &targets.s_chk, off)?;
    let landuse = pair_loss_on_tape(tape, s_hat, &targets.s_land, off)?;
    let a = tape.scale(checkin, weights.checkin)?;
    let b = tape.scale(landuse, weights.landuse)?;
    let c = tape.scale(mobility, weights.mobility)?;
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(LossVars {
        checkin,
        landuse,
        mobility,
        total,
    })
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let v = |x: Var| tape.value(x).get(0, 0);
        LossBreakdown {
            checkin: v(self.checkin),
            landuse: v(self.landuse),
            mobility: v(self.mobility),
            total: v(self.total),
        }
    }
}
