use super::{AutodiffError, Matrix, Tape, Var};

/// Denominator floor for the relative error, so that gradients near zero are
/// compared absolutely instead of amplifying rounding noise.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (parameter index, flat element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    pub passed: bool,
}

/// Compares tape gradients of the scalar `f(θ)` against central differences.
///
/// `f` receives a fresh tape and the parameter vars registered in order.
pub fn gradient_check<F>(f: F, theta: &[Matrix], h: f64, tol: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    assert!(h > 0.0, "step must be positive");
    let eval = |params: &[Matrix]| -> Result<(Tape, Vec<Var>, Var), AutodiffError> {
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|p| tape.param(p.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = eval(theta)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .zip(theta)
        .map(|(v, p)| grads.get_or_zeros(*v, p))
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
        passed: true,
    };
    let mut work = theta.to_vec();
    for (pi, p) in theta.iter().enumerate() {
        for k in 0..p.len() {
            let orig = p.as_slice()[k];
            work[pi].as_mut_slice()[k] = orig + h;
            let (t_plus, _, o_plus) = eval(&work)?;
            let f_plus = t_plus.value(o_plus).get(0, 0);
            work[pi].as_mut_slice()[k] = orig - h;
            let (t_minus, _, o_minus) = eval(&work)?;
            let f_minus = t_minus.value(o_minus).get(0, 0);
            work[pi].as_mut_slice()[k] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[pi].as_slice()[k];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, k);
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
