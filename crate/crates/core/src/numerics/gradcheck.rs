//! Central finite-difference checks of reverse-mode gradients.

use super::graph::{Graph, Mode, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative errors are taken against `max(|analytic|, |numeric|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor, element)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval_scalar<F>(params: &[Tensor], mode: Mode, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(params, mode);
    let out = f(&mut g)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::Shape("grad check objective must be scalar".into()));
    }
    let v = v.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite("grad check objective".into()));
    }
    Ok(v)
}

/// Checks the gradient of a scalar graph `f` with respect to every element of
/// `params`, which `f` reaches through [`Graph::param`].
///
/// `mode` is used for every evaluation, so a fixed train seed reproduces the
/// same dropout masks across perturbed evaluations.
pub fn grad_check_params<F>(
    params: &[Tensor],
    mode: Mode,
    step: f64,
    tol: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params, mode);
        let out = f(&mut g)?;
        if !g.value(out).all_finite() {
            return Err(Error::NonFinite("grad check objective".into()));
        }
        g.backward(out)?.into_params()
    };
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        tol,
    };
    for p in 0..params.len() {
        for e in 0..params[p].len() {
            let orig = params[p].data()[e];
            work[p].data_mut()[e] = orig + step;
            let up = eval_scalar(&work, mode, &f)?;
            work[p].data_mut()[e] = orig - step;
            let down = eval_scalar(&work, mode, &f)?;
            work[p].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[p].as_ref().map_or(0.0, |t| t.data()[e]);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((p, e));
            }
        }
    }
    Ok(report)
}

/// Single-input form: `f` receives the point as a graph variable.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, Var) -> Result<Var>,
{
    grad_check_params(std::slice::from_ref(point), Mode::Eval, step, tol, |g| {
        let x = g.param(0)?;
        f(g, x)
    })
}
