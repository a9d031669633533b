//! Proximal gradient on the likelihood itself and on the value function.

use std::time::Instant;

use nalgebra::DVector;

use super::{LineSearchRecord, MuRule, SolveReport, SolverConfig, StepRule, Termination, TraceRow};
use crate::error::{Error, Result};
use crate::inner::{eval_value_function, KktState, ValueEval};
use crate::model::{Order, ParamPoint, PointEval, RelaxConfig};
use crate::problem::LmeProblem;
use crate::regularizer::{ProxRequest, Regularizer};

pub(crate) fn default_start(problem: &LmeProblem) -> ParamPoint {
    ParamPoint::new(DVector::zeros(problem.p()), DVector::from_element(problem.q(), 1.0))
}

fn exceeds(gamma: &DVector<f64>, cap: &DVector<f64>) -> bool {
    gamma.iter().zip(cap.iter()).any(|(g, c)| g > c)
}

fn prox_step(reg: &Regularizer, w: DVector<f64>, t: f64, q: usize) -> Result<DVector<f64>> {
    reg.prox(&ProxRequest::new(w, t, q))
}

/// Plain proximal gradient on `L + R` over `R^p x R^q_+`.
pub fn pgd_naive(problem: &LmeProblem, reg: &Regularizer, cfg: &SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let (p, q) = (problem.p(), problem.q());
    let cap = cfg.gamma_max_for(problem)?;
    let objective = |w: &DVector<f64>| -> Result<f64> {
        let pt = ParamPoint::from_stacked(w, p);
        Ok(PointEval::new(problem, &pt, Order::Value)?.value() + reg.penalty_constrained(w, q)?)
    };

    let mut w = default_start(problem).stacked();
    let mut phi = objective(&w)?;
    let mut trace = vec![TraceRow { iter: 0, objective: phi, residual: f64::NAN, mu: 0.0, elapsed: 0.0 }];
    let mut ledger = Vec::new();
    let mut termination = Termination::MaxIter;
    let mut iters = 0;
    while iters < cfg.max_iter_outer {
        let grad = PointEval::new(problem, &ParamPoint::from_stacked(&w, p), Order::Gradient)?.gradient_stacked();
        let (next, next_phi) = match cfg.step {
            StepRule::Fixed { alpha } => {
                let next = prox_step(reg, &w - &grad * alpha, alpha, q)?;
                let f = objective(&next)?;
                (next, f)
            }
            StepRule::Backtracking { t0, theta, tau } => {
                let mut t = t0.unwrap_or(1.0);
                let mut accepted = None;
                for s in 0..=cfg.max_backtracks {
                    let cand = prox_step(reg, &w - &grad * t, t, q)?;
                    let f = objective(&cand)?;
                    let dsq = (&cand - &w).norm_squared();
                    if f <= phi - tau * t * dsq {
                        ledger.push(LineSearchRecord {
                            iter: iters,
                            step: t,
                            tau,
                            phi_before: phi,
                            phi_after: f,
                            step_norm_sq: dsq,
                            backtracks: s,
                        });
                        accepted = Some((cand, f));
                        break;
                    }
                    t *= theta;
                }
                accepted.ok_or_else(|| Error::Convergence {
                    iterations: iters,
                    message: format!("backtracking exhausted {} halvings", cfg.max_backtracks),
                })?
            }
        };
        let step = (&next - &w).norm();
        w = next;
        phi = next_phi;
        iters += 1;
        trace.push(TraceRow { iter: iters, objective: phi, residual: step, mu: 0.0, elapsed: clock.elapsed().as_secs_f64() });
        if exceeds(&w.rows(p, q).into_owned(), &cap) {
            termination = Termination::GammaMaxExceeded;
            break;
        }
        if step <= cfg.tol {
            termination = Termination::Converged;
            break;
        }
    }
    let x = ParamPoint::from_stacked(&w, p);
    Ok(SolveReport::new("pgd", &x, &x, termination, iters, 0, clock.elapsed().as_secs_f64(), trace, ledger))
}

/// Value-function evaluations with warm starts carried between calls.
pub(crate) struct ValueOracle<'a> {
    pub problem: &'a LmeProblem,
    pub relax: RelaxConfig,
    pub cfg: &'a SolverConfig,
    pub warm: Option<KktState>,
    pub newton_iters: usize,
}

impl<'a> ValueOracle<'a> {
    pub fn eval(&mut self, w: &DVector<f64>) -> Result<ValueEval> {
        let outer = ParamPoint::from_stacked(w, self.problem.p());
        let warm = if self.cfg.warm_start { self.warm.as_ref() } else { None };
        let ev = eval_value_function(self.problem, &outer, &self.relax, &self.cfg.inner_options(), warm)?;
        self.newton_iters += ev.newton_iters;
        if self.cfg.warm_start {
            self.warm = Some(ev.state());
        }
        Ok(ev)
    }
}

/// Initial barrier weight; the dual rule uses `v = 1`.
pub(crate) fn resolve_mu(cfg: &SolverConfig, gamma: &DVector<f64>) -> f64 {
    match cfg.mu_init {
        MuRule::Fixed(mu) => mu,
        MuRule::Dual => gamma.sum() / (10.0 * gamma.len().max(1) as f64),
    }
}

/// Proximal gradient on `Phi = u_{eta,mu} + R + indicator(gamma~ >= 0)`, with
/// fixed step or backtracking. `mu` stays fixed for the whole run.
pub fn pgd_value(problem: &LmeProblem, reg: &Regularizer, cfg: &SolverConfig) -> Result<SolveReport> {
    pgd_value_from(problem, reg, cfg, default_start(problem), None)
}

/// [`pgd_value`] from a chosen outer start and optional inner warm start.
pub fn pgd_value_from(
    problem: &LmeProblem,
    reg: &Regularizer,
    cfg: &SolverConfig,
    start: ParamPoint,
    warm: Option<KktState>,
) -> Result<SolveReport> {
    cfg.validate()?;
    let clock = Instant::now();
    let (p, q) = (problem.p(), problem.q());
    let cap = cfg.gamma_max_for(problem)?;
    let mu = resolve_mu(cfg, &start.gamma);
    let relax = RelaxConfig::new(problem, cfg.eta, mu);
    let mut oracle = ValueOracle { problem, relax, cfg, warm, newton_iters: 0 };
    let penalty = |w: &DVector<f64>| reg.penalty_constrained(w, q);

    let w_bar = start.stacked();
    let ev_bar = oracle.eval(&w_bar)?;
    let (t_first, theta_tau) = match cfg.step {
        StepRule::Fixed { alpha } => (alpha, None),
        StepRule::Backtracking { t0, theta, tau } => (t0.unwrap_or(1.0 / cfg.eta), Some((theta, tau))),
    };
    let mut w = prox_step(reg, &w_bar - &ev_bar.gradient * t_first, t_first, q)?;
    let mut ev = oracle.eval(&w)?;
    let mut phi = ev.value + penalty(&w)?;
    let mut step = (&w - &w_bar).norm();
    let mut iters = 1;
    let mut trace = vec![TraceRow { iter: 1, objective: phi, residual: step, mu, elapsed: clock.elapsed().as_secs_f64() }];
    let mut ledger = Vec::new();
    let mut termination = Termination::MaxIter;
    loop {
        if exceeds(&w.rows(p, q).into_owned(), &cap) {
            termination = Termination::GammaMaxExceeded;
            break;
        }
        if step <= cfg.tol {
            termination = Termination::Converged;
            break;
        }
        if iters >= cfg.max_iter_outer {
            break;
        }
        let (next, next_ev, next_phi) = match theta_tau {
            None => {
                let next = prox_step(reg, &w - &ev.gradient * t_first, t_first, q)?;
                let nev = oracle.eval(&next)?;
                let f = nev.value + penalty(&next)?;
                (next, nev, f)
            }
            Some((theta, tau)) => {
                let mut t = t_first;
                let mut accepted = None;
                let warm_here = oracle.warm.clone();
                for s in 0..=cfg.max_backtracks {
                    let cand = prox_step(reg, &w - &ev.gradient * t, t, q)?;
                    oracle.warm = warm_here.clone();
                    let cev = oracle.eval(&cand)?;
                    let f = cev.value + penalty(&cand)?;
                    let dsq = (&cand - &w).norm_squared();
                    if f <= phi - tau * t * dsq {
                        ledger.push(LineSearchRecord {
                            iter: iters,
                            step: t,
                            tau,
                            phi_before: phi,
                            phi_after: f,
                            step_norm_sq: dsq,
                            backtracks: s,
                        });
                        accepted = Some((cand, cev, f));
                        break;
                    }
                    t *= theta;
                }
                accepted.ok_or_else(|| Error::Convergence {
                    iterations: iters,
                    message: format!("backtracking exhausted {} halvings", cfg.max_backtracks),
                })?
            }
        };
        step = (&next - &w).norm();
        w = next;
        ev = next_ev;
        phi = next_phi;
        iters += 1;
        trace.push(TraceRow { iter: iters, objective: phi, residual: step, mu, elapsed: clock.elapsed().as_secs_f64() });
    }
    let sparse = ParamPoint::from_stacked(&w, p);
    Ok(SolveReport::new(
        "pgd_value",
        &sparse,
        &ev.minimizer,
        termination,
        iters,
        oracle.newton_iters,
        clock.elapsed().as_secs_f64(),
        trace,
        ledger,
    ))
}
