//! Central finite-difference checking of analytic gradients.

use alloc::vec::Vec;

use crate::error::Error;
use crate::graph::{Graph, Var};
use crate::params::{bound_from_pairs, Bound, ParamSet};
use alloc::string::String;
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// `(block, coordinate)` where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare `analytic` against central differences `(f(p+eps) − f(p−eps)) / 2eps`
/// of `f` taken one coordinate at a time over every block of `params`.
pub fn grad_check(
    mut f: impl FnMut(&[Tensor]) -> f64,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
) -> Result<GradCheck, Error> {
    grad_check_split(|p| (f(p), 0.0), params, analytic, &[eps])
}

/// [`grad_check`] for a function returning its value as `hi + lo`; the
/// difference of two nearby values is formed before rounding away `lo`.
///
/// With several `steps`, a coordinate's error is the smallest over the steps,
/// tried in order until one is within `1e-6`. Large steps lose to kinks near
/// the point and small ones to rounding; a wrong gradient disagrees at all.
pub fn grad_check_split(
    mut f: impl FnMut(&[Tensor]) -> (f64, f64),
    params: &[Tensor],
    analytic: &[Tensor],
    steps: &[f64],
) -> Result<GradCheck, Error> {
    if steps.is_empty() || steps.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Input(alloc::format!("steps must be positive, got {steps:?}")));
    }
    if params.len() != analytic.len()
        || params.iter().zip(analytic).any(|(p, a)| p.shape() != a.shape())
    {
        return Err(Error::Shape("analytic gradients do not match parameter shapes".into()));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheck { max_rel_error: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, coordinates: 0 };
    for block in 0..work.len() {
        for i in 0..work[block].numel() {
            let orig = work[block].data()[i];
            let a = analytic[block].data()[i];
            let (mut err, mut numeric) = (f64::INFINITY, f64::NAN);
            for &eps in steps {
                work[block].data_mut()[i] = orig + eps;
                let up = f(&work);
                work[block].data_mut()[i] = orig - eps;
                let down = f(&work);
                work[block].data_mut()[i] = orig;
                let n = ((up.0 - down.0) + (up.1 - down.1)) / (2.0 * eps);
                let e = relative_error(a, n);
                if e < err || e.is_nan() {
                    (err, numeric) = (e, n);
                }
                if err < 1e-6 || err.is_nan() {
                    break;
                }
            }
            report.coordinates += 1;
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = (block, i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Gradient-check a scalar function expressed as a graph over parameter leaves.
///
/// `build` receives a fresh graph and one leaf per parameter block and returns
/// the scalar loss node.
pub fn check_graph(
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var, Error>,
    params: &[Tensor],
    eps: f64,
) -> Result<GradCheck, Error> {
    check_graph_steps(build, params, &[eps])
}

/// [`check_graph`] over a ladder of step sizes, see [`grad_check_split`].
pub fn check_graph_steps(
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var, Error>,
    params: &[Tensor],
    steps: &[f64],
) -> Result<GradCheck, Error> {
    let (_, analytic) = value_and_grad(&build, params)?;
    let mut failure = None;
    let report = grad_check_split(
        |p| match value_and_grad_forward(&build, p) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                (f64::NAN, 0.0)
            }
        },
        params,
        &analytic,
        steps,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

/// Gradient-check a loss written against a named [`ParamSet`]; the report's
/// `worst.0` indexes blocks in the set's name order.
pub fn check_param_set(
    build: impl Fn(&mut Graph, &Bound) -> Result<Var, Error>,
    set: &ParamSet,
    eps: f64,
) -> Result<GradCheck, Error> {
    check_param_set_steps(build, set, &[eps])
}

/// [`check_param_set`] over a ladder of step sizes, see [`grad_check_split`].
pub fn check_param_set_steps(
    build: impl Fn(&mut Graph, &Bound) -> Result<Var, Error>,
    set: &ParamSet,
    steps: &[f64],
) -> Result<GradCheck, Error> {
    let names: Vec<String> = set.names().cloned().collect();
    let tensors: Vec<Tensor> = set.iter().map(|(_, t)| t.clone()).collect();
    check_graph_steps(
        |g, vars| {
            let bound = bound_from_pairs(names.iter().cloned().zip(vars.iter().copied()));
            build(g, &bound)
        },
        &tensors,
        steps,
    )
}

/// Loss value and gradients for every parameter block.
pub fn value_and_grad(
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var, Error>,
    params: &[Tensor],
) -> Result<(f64, Vec<Tensor>), Error> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let out = vars.iter().zip(params).map(|(v, p)| grads.get_or_zeros(*v, p.shape())).collect();
    Ok((g.value(loss).item(), out))
}

fn value_and_grad_forward(
    build: &impl Fn(&mut Graph, &[Var]) -> Result<Var, Error>,
    params: &[Tensor],
) -> Result<(f64, f64), Error> {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = build(&mut g, &vars)?;
    Ok(g.value_split(loss))
}
