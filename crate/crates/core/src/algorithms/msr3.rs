//! Hybrid interior-point / proximal methods.
//!
//! `msr3` solves each value-function subproblem with Newton steps, shrinking
//! `mu` whenever the iterate is near the central path, then takes one prox step
//! on the sparse variables. `msr3_fast` interleaves the two: every near-central
//! Newton iterate also triggers a prox step and a `mu` update.

use std::time::Instant;

use nalgebra::DVector;

use super::pgd::{default_start, resolve_mu};
use super::{SolveReport, SolverConfig, Termination, TraceRow};
use crate::error::Result;
use crate::inner::{central_path_ok, damped_newton_step, KktPoint, KktState};
use crate::model::{coupling, log_barrier, ParamPoint};
use crate::problem::LmeProblem;
use crate::regularizer::{ProxRequest, Regularizer};

fn dual_mu(state: &KktState) -> f64 {
    state.duality_measure() / 10.0
}

struct Sparse {
    beta: DVector<f64>,
    gamma: DVector<f64>,
}

impl Sparse {
    fn point(&self) -> ParamPoint {
        ParamPoint::new(self.beta.clone(), self.gamma.clone())
    }

    fn prox_of(reg: &Regularizer, x: &KktState, t: f64) -> Result<Self> {
        let p = x.beta.len();
        let w = reg.prox(&ProxRequest::new(x.point().stacked(), t, x.gamma.len()))?;
        let pt = ParamPoint::from_stacked(&w, p);
        Ok(Self { beta: pt.beta, gamma: pt.gamma })
    }
}

fn objective(kp: &KktPoint, w: &Sparse, reg: &Regularizer, eta: f64, mu: f64) -> Result<f64> {
    let s = &kp.state;
    let d = ParamPoint::new(&s.beta - &w.beta, &s.gamma - &w.gamma).stacked();
    let r = reg.penalty(&w.point().stacked())?;
    Ok(kp.loglik + log_barrier(&s.gamma, mu)? + coupling(&d, eta) + r)
}

fn exceeds(gamma: &DVector<f64>, cap: &DVector<f64>) -> bool {
    gamma.iter().zip(cap.iter()).any(|(g, c)| g > c)
}

fn changed(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    (a - b).norm() >= tol
}

/// Hybrid proximal gradient with inner interior-point solves.
pub fn msr3(problem: &LmeProblem, reg: &Regularizer, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let q = problem.q();
    let cap = cfg.gamma_max_for(problem)?;
    let eta = cfg.eta;
    let prox_t = cfg.prox_scale();
    let x0 = default_start(problem);
    let mut w = Sparse { beta: x0.beta.clone(), gamma: x0.gamma.clone() };
    let mut kp = KktPoint::new(problem, KktState::from_point(&x0, DVector::from_element(q, 1.0)))?;
    let mut trace = Vec::new();
    let mut newton = 0;
    let mut outer = 0;
    let mut progress = true;
    let mut termination = Termination::MaxIter;
    let mut last_x = x0;
    let mut mu = resolve_mu(cfg, &kp.state.gamma);

    while outer < cfg.max_iter_outer && progress {
        if !cfg.warm_start && outer > 0 {
            kp = KktPoint::new(problem, KktState::default_start(problem.p(), q))?;
        }
        kp.state.v = DVector::from_element(q, 1.0);
        if outer > 0 || matches!(cfg.mu_init, super::MuRule::Dual) {
            mu = dual_mu(&kp.state);
        }
        let mut g_norm = kp.residual(&w.point(), eta, mu).norm();
        let mut inner = 0;
        let mut moved = true;
        while inner < cfg.max_iter_inner && g_norm > cfg.inner_tol && moved {
            let step = damped_newton_step(problem, &kp, &w.point(), eta, mu, cfg.use_psd_approx)?;
            moved = changed(&step.next.state.beta, &kp.state.beta, cfg.tol)
                || changed(&step.next.state.gamma, &kp.state.gamma, cfg.tol);
            kp = step.next;
            if central_path_ok(&kp.state.gamma, &kp.state.v) {
                mu = dual_mu(&kp.state);
            }
            g_norm = kp.residual(&w.point(), eta, mu).norm();
            inner += 1;
        }
        newton += inner;
        let next = Sparse::prox_of(reg, &kp.state, prox_t)?;
        outer += 1;
        progress = changed(&next.beta, &w.beta, cfg.tol) || changed(&next.gamma, &w.gamma, cfg.tol);
        w = next;
        trace.push(TraceRow {
            iter: outer,
            objective: objective(&kp, &w, reg, eta, mu)?,
            residual: g_norm,
            mu,
            elapsed: clock.elapsed().as_secs_f64(),
        });
        last_x = kp.state.point();
        if exceeds(&w.gamma, &cap) {
            termination = Termination::GammaMaxExceeded;
            break;
        }
        if !progress {
            termination = Termination::Converged;
        }
    }
    Ok(SolveReport::new(
        "msr3",
        &w.point(),
        &last_x,
        termination,
        outer,
        newton,
        clock.elapsed().as_secs_f64(),
        trace,
        Vec::new(),
    ))
}

/// Accelerated hybrid: a single loop of Newton steps where every iterate near
/// the central path also updates the sparse variables and shrinks `mu`.
pub fn msr3_fast(problem: &LmeProblem, reg: &Regularizer, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let q = problem.q();
    let cap = cfg.gamma_max_for(problem)?;
    let eta = cfg.eta;
    let prox_t = cfg.prox_scale();
    let x0 = default_start(problem);
    let mut w = Sparse { beta: x0.beta.clone(), gamma: x0.gamma.clone() };
    let state = KktState::from_point(&x0, DVector::from_element(q, 1.0));
    let mut mu = resolve_mu(cfg, &state.gamma);
    let mut kp = KktPoint::new(problem, state)?;
    let mut g_norm = kp.residual(&w.point(), eta, mu).norm();
    let mut trace = vec![TraceRow {
        iter: 0,
        objective: objective(&kp, &w, reg, eta, mu)?,
        residual: g_norm,
        mu,
        elapsed: 0.0,
    }];
    let mut iter = 0;
    let mut progress = true;
    let mut termination = Termination::MaxIter;
    while iter < cfg.max_iter_outer && g_norm > cfg.inner_tol && progress {
        let step = damped_newton_step(problem, &kp, &w.point(), eta, mu, cfg.use_psd_approx)?;
        let prev = kp;
        kp = step.next;
        let mut moved_w = false;
        if central_path_ok(&kp.state.gamma, &kp.state.v) {
            let next = Sparse::prox_of(reg, &kp.state, prox_t)?;
            moved_w = changed(&next.beta, &w.beta, cfg.tol) || changed(&next.gamma, &w.gamma, cfg.tol);
            w = next;
            mu = dual_mu(&kp.state);
        }
        progress = moved_w
            || changed(&kp.state.beta, &prev.state.beta, cfg.tol)
            || changed(&kp.state.gamma, &prev.state.gamma, cfg.tol);
        g_norm = kp.residual(&w.point(), eta, mu).norm();
        iter += 1;
        trace.push(TraceRow {
            iter,
            objective: objective(&kp, &w, reg, eta, mu)?,
            residual: g_norm,
            mu,
            elapsed: clock.elapsed().as_secs_f64(),
        });
        if exceeds(&w.gamma, &cap) {
            termination = Termination::GammaMaxExceeded;
            break;
        }
    }
    if termination != Termination::GammaMaxExceeded && (g_norm <= cfg.inner_tol || !progress) {
        termination = Termination::Converged;
    }
    Ok(SolveReport::new(
        "msr3_fast",
        &w.point(),
        &kp.state.point(),
        termination,
        iter,
        iter,
        clock.elapsed().as_secs_f64(),
        trace,
        Vec::new(),
    ))
}
