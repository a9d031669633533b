//! Value function `u(w) = min_x L(x) + phi_mu(gamma) + (eta/2)||x - w||^2` and its
//! gradient `eta (w - x*)`, computed with a damped primal-dual Newton method on
//!
//! ```text
//! G(beta, gamma, v) = [ grad_beta L + eta (beta - beta~)
//!                       grad_gamma L + eta (gamma - gamma~) - v
//!                       v o gamma - mu 1 ]
//! ```
//!
//! The dual block is eliminated before solving, leaving a `(p+q)` system.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{relaxed_objective, Order, ParamPoint, PointEval, RelaxConfig};
use crate::problem::LmeProblem;

/// Fraction-to-boundary factor.
pub const BOUNDARY_FRACTION: f64 = 0.99;

/// Primal-dual iterate; `gamma > 0` and `v > 0` throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktState {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub v: DVector<f64>,
}

impl KktState {
    /// `beta = 0`, `gamma = 1`, `v = 1`.
    pub fn default_start(p: usize, q: usize) -> Self {
        Self { beta: DVector::zeros(p), gamma: DVector::from_element(q, 1.0), v: DVector::from_element(q, 1.0) }
    }

    pub fn from_point(point: &ParamPoint, v: DVector<f64>) -> Self {
        Self { beta: point.beta.clone(), gamma: point.gamma.clone(), v }
    }

    pub fn point(&self) -> ParamPoint {
        ParamPoint::new(self.beta.clone(), self.gamma.clone())
    }

    /// `v^T gamma / q`.
    pub fn duality_measure(&self) -> f64 {
        self.v.dot(&self.gamma) / self.gamma.len().max(1) as f64
    }

    fn check_interior(&self) -> Result<()> {
        if self.gamma.iter().chain(self.v.iter()).any(|x| !(*x > 0.0)) {
            return Err(Error::Domain("KKT state requires gamma > 0 and v > 0".into()));
        }
        Ok(())
    }
}

/// Result of a value-function evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueEval {
    pub value: f64,
    /// `eta (outer - minimizer)`.
    pub gradient: DVector<f64>,
    pub minimizer: ParamPoint,
    pub dual: DVector<f64>,
    pub kkt_residual: f64,
    pub newton_iters: usize,
}

impl ValueEval {
    pub fn state(&self) -> KktState {
        KktState::from_point(&self.minimizer, self.dual.clone())
    }
}

/// Newton step `(d_beta, d_gamma, d_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonDirection {
    pub d_beta: DVector<f64>,
    pub d_gamma: DVector<f64>,
    pub d_v: DVector<f64>,
}

impl NewtonDirection {
    pub fn stacked(&self) -> DVector<f64> {
        let (p, q) = (self.d_beta.len(), self.d_gamma.len());
        let mut out = DVector::zeros(p + 2 * q);
        out.rows_mut(0, p).copy_from(&self.d_beta);
        out.rows_mut(p, q).copy_from(&self.d_gamma);
        out.rows_mut(p + q, q).copy_from(&self.d_v);
        out
    }
}

/// Tolerances for the inner solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub use_psd_approx: bool,
}

impl Default for InnerOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, use_psd_approx: true }
    }
}

/// A KKT state with the likelihood evaluated to Hessian order, so `G` can be
/// re-formed cheaply when `mu` or the outer point change and the next Newton
/// system reuses the factorization.
pub(crate) struct KktPoint {
    pub state: KktState,
    pub loglik: f64,
    grad_beta: DVector<f64>,
    grad_gamma: DVector<f64>,
    eval: PointEval,
}

impl KktPoint {
    pub fn new(problem: &LmeProblem, state: KktState) -> Result<Self> {
        let eval = PointEval::new(problem, &state.point(), Order::Hessian)?;
        let (grad_beta, grad_gamma) = eval.gradient();
        Ok(Self { state, loglik: eval.value(), grad_beta, grad_gamma, eval })
    }

    pub fn residual(&self, outer: &ParamPoint, eta: f64, mu: f64) -> DVector<f64> {
        let s = &self.state;
        let (p, q) = (s.beta.len(), s.gamma.len());
        let mut g = DVector::zeros(p + 2 * q);
        g.rows_mut(0, p).copy_from(&(&self.grad_beta + (&s.beta - &outer.beta) * eta));
        g.rows_mut(p, q).copy_from(&(&self.grad_gamma + (&s.gamma - &outer.gamma) * eta - &s.v));
        g.rows_mut(p + q, q).copy_from(&(s.v.component_mul(&s.gamma).add_scalar(-mu)));
        g
    }
}

/// Stacked KKT residual `G` of length `p + 2q`.
pub fn kkt_residual(problem: &LmeProblem, state: &KktState, outer: &ParamPoint, cfg: &RelaxConfig) -> Result<DVector<f64>> {
    state.check_interior()?;
    Ok(KktPoint::new(problem, state.clone())?.residual(outer, cfg.eta, cfg.mu))
}

/// Solves the Newton system `J d = -G` through the reduced `(p+q)` system
/// obtained by eliminating `d_v = (mu - v o gamma - v o d_gamma) / gamma`.
fn solve_reduced(
    ev: &PointEval,
    state: &KktState,
    g: &DVector<f64>,
    eta: f64,
    use_psd_approx: bool,
) -> Result<NewtonDirection> {
    let (p, q) = (state.beta.len(), state.gamma.len());
    let mut m = if use_psd_approx { ev.hessian_psd() } else { ev.hessian() };
    for k in 0..p + q {
        m[(k, k)] += eta;
    }
    for j in 0..q {
        m[(p + j, p + j)] += state.v[j] / state.gamma[j];
    }
    let mut rhs = DVector::zeros(p + q);
    rhs.rows_mut(0, p).copy_from(&(-g.rows(0, p)));
    for j in 0..q {
        rhs[p + j] = -g[p + j] - g[p + q + j] / state.gamma[j];
    }
    let sol = match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => m.lu().solve(&rhs).ok_or_else(|| {
            Error::Numerical(format!(
                "singular Newton system; increase eta above the convexity threshold or use the PSD Hessian approximation (eta = {eta})"
            ))
        })?,
    };
    if sol.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite Newton direction".into()));
    }
    let d_beta = sol.rows(0, p).into_owned();
    let d_gamma = sol.rows(p, q).into_owned();
    let d_v = DVector::from_fn(q, |j, _| {
        (-g[p + q + j] - state.v[j] * d_gamma[j]) / state.gamma[j]
    });
    Ok(NewtonDirection { d_beta, d_gamma, d_v })
}

/// Newton direction for `G` at `state`, with the exact or PSD-approximated likelihood Hessian.
pub fn newton_direction(
    problem: &LmeProblem,
    state: &KktState,
    outer: &ParamPoint,
    cfg: &RelaxConfig,
    use_psd_approx: bool,
) -> Result<NewtonDirection> {
    state.check_interior()?;
    let here = KktPoint::new(problem, state.clone())?;
    let g = here.residual(outer, cfg.eta, cfg.mu);
    solve_reduced(&here.eval, state, &g, cfg.eta, use_psd_approx)
}

/// `0.99 * min(1, -gamma_i / d_gamma_i, -v_i / d_v_i)` over negative directions.
pub fn fraction_to_boundary(gamma: &DVector<f64>, d_gamma: &DVector<f64>, v: &DVector<f64>, d_v: &DVector<f64>) -> f64 {
    let ratio = |x: &DVector<f64>, dx: &DVector<f64>| {
        x.iter()
            .zip(dx.iter())
            .filter(|(_, d)| **d < 0.0)
            .map(|(x, d)| -x / d)
            .fold(f64::INFINITY, f64::min)
    };
    BOUNDARY_FRACTION * 1f64.min(ratio(gamma, d_gamma)).min(ratio(v, d_v))
}

/// Neighborhood test `||gamma o v - (gamma^T v / q) 1|| <= 0.5 gamma^T v / q`.
pub fn central_path_ok(gamma: &DVector<f64>, v: &DVector<f64>) -> bool {
    let q = gamma.len();
    if q == 0 {
        return true;
    }
    let prod = gamma.component_mul(v);
    let mean = prod.sum() / q as f64;
    prod.add_scalar(-mean).norm() <= 0.5 * mean
}

/// Outcome of one damped Newton step.
pub(crate) struct NewtonStep {
    pub next: KktPoint,
    pub residual_norm: f64,
}

/// Newton direction, fraction-to-boundary damping, then halving of the step
/// (up to 20 times) while the residual grows by more than 10x.
pub(crate) fn damped_newton_step(
    problem: &LmeProblem,
    here: &KktPoint,
    outer: &ParamPoint,
    eta: f64,
    mu: f64,
    use_psd_approx: bool,
) -> Result<NewtonStep> {
    let current = &here.state;
    let g = here.residual(outer, eta, mu);
    let g_norm = g.norm();
    let d = solve_reduced(&here.eval, current, &g, eta, use_psd_approx)?;
    let mut alpha = fraction_to_boundary(&current.gamma, &d.d_gamma, &current.v, &d.d_v);
    let mut best: Option<(KktPoint, f64)> = None;
    for _ in 0..=20 {
        let trial = KktState {
            beta: &current.beta + &d.d_beta * alpha,
            gamma: &current.gamma + &d.d_gamma * alpha,
            v: &current.v + &d.d_v * alpha,
        };
        let point = KktPoint::new(problem, trial)?;
        let norm = point.residual(outer, eta, mu).norm();
        let acceptable = norm <= 10.0 * g_norm;
        if best.as_ref().is_none_or(|(_, n)| norm < *n) {
            best = Some((point, norm));
        }
        if acceptable {
            break;
        }
        alpha *= 0.5;
    }
    let (next, residual_norm) = best.expect("at least one trial step");
    Ok(NewtonStep { next, residual_norm })
}

/// Evaluates `u_{eta,mu}(outer)` and its gradient at fixed `mu > 0`.
pub fn eval_value_function(
    problem: &LmeProblem,
    outer: &ParamPoint,
    cfg: &RelaxConfig,
    opts: &InnerOptions,
    warm_start: Option<&KktState>,
) -> Result<ValueEval> {
    if !(cfg.mu > 0.0) {
        return Err(Error::Domain(format!("value function needs mu > 0, got {}", cfg.mu)));
    }
    if !(cfg.eta > 0.0) {
        return Err(Error::Domain(format!("value function needs eta > 0, got {}", cfg.eta)));
    }
    let start = match warm_start {
        Some(s) => {
            s.check_interior()?;
            s.clone()
        }
        None => KktState::default_start(problem.p(), problem.q()),
    };
    let mut current = KktPoint::new(problem, start)?;
    let mut norm = current.residual(outer, cfg.eta, cfg.mu).norm();
    let mut iters = 0;
    while norm > opts.tol {
        if iters >= opts.max_iter {
            return Err(Error::InnerConvergence { iterations: iters, residual: norm, best: Box::new(current.state) });
        }
        let step = damped_newton_step(problem, &current, outer, cfg.eta, cfg.mu, opts.use_psd_approx)?;
        current = step.next;
        norm = step.residual_norm;
        iters += 1;
    }
    let minimizer = current.state.point();
    let value = relaxed_objective(problem, &minimizer, outer, cfg)?;
    let gradient = (outer.stacked() - minimizer.stacked()) * cfg.eta;
    Ok(ValueEval { value, gradient, minimizer, dual: current.state.v, kkt_residual: norm, newton_iters: iters })
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(a.tr_mul(a)).eigenvalues.max().max(0.0).sqrt()
}

/// `||H_1^{-1} R||` at the minimizer, with `H_1 = d^2L/d beta^2 + eta I` and `R = d^2L/d beta d gamma`.
pub fn coupling_block_norm(problem: &LmeProblem, minimizer: &ParamPoint, eta: f64) -> Result<f64> {
    let p = problem.p();
    let h = PointEval::new(problem, minimizer, Order::Hessian)?.hessian();
    let mut h1 = h.view((0, 0), (p, p)).into_owned();
    for k in 0..p {
        h1[(k, k)] += eta;
    }
    let r = h.view((0, p), (p, problem.q())).into_owned();
    let sol = h1
        .cholesky()
        .ok_or_else(|| Error::Numerical("H_1 is not positive definite".into()))?
        .solve(&r);
    Ok(spectral_norm(&sol))
}

/// Closed-form upper bound on [`coupling_block_norm`]:
/// `eta^{-1} mu_min(Lambda)^{-2} sigma_max(X) sigma_max(Z)^2 ||X beta - y||`.
pub fn coupling_block_bound(problem: &LmeProblem, minimizer: &ParamPoint, eta: f64) -> f64 {
    let lmin = problem.lambda_min_eigs().iter().copied().fold(f64::INFINITY, f64::min);
    let zmax = problem.z_sigma_max().iter().copied().fold(0.0, f64::max);
    let resid: f64 = problem
        .groups()
        .iter()
        .map(|g| (&g.x * &minimizer.beta - &g.y).norm_squared())
        .sum::<f64>()
        .sqrt();
    problem.x_sigma_max() * zmax * zmax * resid / (eta * lmin * lmin)
}

/// Estimate `eta / (eta - eta_bar) (1 + ||H_1^{-1} R||^2)` of the local Lipschitz
/// modulus of the solution map at the evaluated minimizer.
pub fn lipschitz_diagnostic(problem: &LmeProblem, eval: &ValueEval, cfg: &RelaxConfig) -> Result<f64> {
    if cfg.eta <= cfg.eta_bar {
        return Err(Error::Domain(format!(
            "Lipschitz bound needs eta > eta_bar ({} <= {})",
            cfg.eta, cfg.eta_bar
        )));
    }
    let norm = coupling_block_norm(problem, &eval.minimizer, cfg.eta)?;
    Ok(cfg.eta / (cfg.eta - cfg.eta_bar) * (1.0 + norm * norm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn fraction_to_boundary_examples() {
        assert!((fraction_to_boundary(&v(&[1.0]), &v(&[-2.0]), &v(&[1.0]), &v(&[0.0])) - 0.495).abs() < 1e-15);
        assert_eq!(fraction_to_boundary(&v(&[1.0, 2.0]), &v(&[0.5, 0.0]), &v(&[1.0]), &v(&[3.0])), 0.99);
        assert!((fraction_to_boundary(&v(&[1.0, 4.0]), &v(&[-1.0, -8.0]), &v(&[1.0]), &v(&[1.0])) - 0.495).abs() < 1e-15);
        // the dual can bind too
        assert!((fraction_to_boundary(&v(&[1.0]), &v(&[1.0]), &v(&[1.0]), &v(&[-4.0])) - 0.2475).abs() < 1e-15);
    }

    #[test]
    fn central_path_examples() {
        assert!(central_path_ok(&v(&[1.0, 1.0, 1.0]), &v(&[1.0, 1.0, 1.0])));
        assert!(!central_path_ok(&v(&[1.0, 3.0]), &v(&[1.0, 1.0])));
        assert!(central_path_ok(&v(&[7.0]), &v(&[0.001])));
    }

    #[test]
    fn interior_required() {
        let s = KktState { beta: v(&[0.0]), gamma: v(&[0.0]), v: v(&[1.0]) };
        let prob = crate::problem::LmeProblem::from_json_str(
            r#"{"groups": [{"X": [[1.0]], "Z": [[1.0]], "Y": [1.0], "Lambda": 1.0}]}"#,
        )
        .unwrap();
        let cfg = RelaxConfig::new(&prob, 1.0, 0.1);
        assert!(matches!(kkt_residual(&prob, &s, &ParamPoint::zeros(1, 1), &cfg), Err(Error::Domain(_))));
    }
}
