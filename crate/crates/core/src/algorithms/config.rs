use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner::InnerOptions;
use crate::problem::LmeProblem;

/// How the barrier weight is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MuRule {
    /// `mu = v^T gamma / (10 q)` from the current primal-dual pair.
    Dual,
    Fixed(f64),
}

/// Step control for the proximal gradient loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    Fixed {
        alpha: f64,
    },
    /// `t = t0 theta^s` for the smallest `s` giving sufficient decrease
    /// `Phi(w) <= Phi(w_k) - tau t ||w_k - w||^2`.
    Backtracking {
        /// Missing means `1/eta` for the value-function method and `1` for plain PGD.
        #[serde(default)]
        t0: Option<f64>,
        theta: f64,
        tau: f64,
    },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking { t0: None, theta: 0.5, tau: 0.5 }
    }
}

/// Settings shared by all outer algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub eta: f64,
    pub mu_init: MuRule,
    pub step: StepRule,
    /// Prox scale inside the hybrid interior-point methods. Missing means `1/eta`.
    pub prox_step: Option<f64>,
    /// Termination tolerance on parameter change.
    pub tol: f64,
    /// Residual tolerance for inner Newton solves.
    pub inner_tol: f64,
    pub max_iter_outer: usize,
    pub max_iter_inner: usize,
    /// Upper safeguard on `gamma~`. Missing means `100 * max group variance of Y`.
    pub gamma_max: Option<Vec<f64>>,
    pub use_psd_approx: bool,
    /// Reuse the last inner solution as the start of the next inner solve.
    pub warm_start: bool,
    /// Step halvings allowed per backtracking search.
    pub max_backtracks: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            mu_init: MuRule::Dual,
            step: StepRule::default(),
            prox_step: None,
            tol: 1e-6,
            inner_tol: 1e-8,
            max_iter_outer: 1000,
            max_iter_inner: 100,
            gamma_max: None,
            use_psd_approx: true,
            warm_start: true,
            max_backtracks: 60,
        }
    }
}

impl SolverConfig {
    pub fn with_eta(eta: f64) -> Self {
        Self { eta, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Domain(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.tol > 0.0) || !(self.inner_tol > 0.0) {
            return Err(Error::Domain("tolerances must be positive".into()));
        }
        if let MuRule::Fixed(mu) = self.mu_init {
            if !(mu > 0.0) {
                return Err(Error::Domain(format!("fixed mu must be positive, got {mu}")));
            }
        }
        match self.step {
            StepRule::Fixed { alpha } if !(alpha > 0.0) => {
                return Err(Error::Domain(format!("step must be positive, got {alpha}")));
            }
            StepRule::Backtracking { t0, theta, tau } => {
                if !(theta > 0.0 && theta < 1.0) || !(tau > 0.0 && tau < 1.0) {
                    return Err(Error::Domain("backtracking needs theta, tau in (0, 1)".into()));
                }
                if t0.is_some_and(|t| !(t > 0.0)) {
                    return Err(Error::Domain("backtracking t0 must be positive".into()));
                }
            }
            _ => {}
        }
        if self.prox_step.is_some_and(|a| !(a > 0.0)) {
            return Err(Error::Domain("prox step must be positive".into()));
        }
        if let Some(g) = &self.gamma_max {
            if g.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::Domain("gamma_max must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn prox_scale(&self) -> f64 {
        self.prox_step.unwrap_or(1.0 / self.eta)
    }

    pub fn gamma_max_for(&self, problem: &LmeProblem) -> Result<DVector<f64>> {
        match &self.gamma_max {
            Some(g) if g.len() == problem.q() => Ok(DVector::from_column_slice(g)),
            Some(g) => Err(Error::Structure(format!("gamma_max has length {}, expected {}", g.len(), problem.q()))),
            None => {
                let var = problem.max_outcome_variance();
                let cap = if var > 0.0 { 100.0 * var } else { 100.0 };
                Ok(DVector::from_element(problem.q(), cap))
            }
        }
    }

    pub fn inner_options(&self) -> InnerOptions {
        InnerOptions { tol: self.inner_tol, max_iter: self.max_iter_inner, use_psd_approx: self.use_psd_approx }
    }
}
