use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::ParamPoint;
use crate::regularizer::select_mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIter,
    GammaMaxExceeded,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIter => "max_iter",
            Termination::GammaMaxExceeded => "gamma_max_exceeded",
        }
    }
}

/// One row of the iterate trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    /// Stationarity measure: prox-gradient step length for PGD methods, `||G||` for hybrids.
    pub residual: f64,
    pub mu: f64,
    pub elapsed: f64,
}

/// An accepted backtracking step: `phi_after <= phi_before - tau * step * step_norm_sq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchRecord {
    pub iter: usize,
    pub step: f64,
    pub tau: f64,
    pub phi_before: f64,
    pub phi_after: f64,
    pub step_norm_sq: f64,
    pub backtracks: usize,
}

impl LineSearchRecord {
    pub fn satisfies_decrease(&self) -> bool {
        self.phi_after <= self.phi_before - self.tau * self.step * self.step_norm_sq
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub algorithm: String,
    pub beta_tilde: Vec<f64>,
    pub gamma_tilde: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    pub beta_mask: Vec<bool>,
    pub gamma_mask: Vec<bool>,
    pub termination: Termination,
    pub iterations: usize,
    pub newton_iterations: usize,
    pub seconds: f64,
    pub trace: Vec<TraceRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub line_search: Vec<LineSearchRecord>,
}

impl SolveReport {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        algorithm: &str,
        sparse: &ParamPoint,
        inner: &ParamPoint,
        termination: Termination,
        iterations: usize,
        newton_iterations: usize,
        seconds: f64,
        trace: Vec<TraceRow>,
        line_search: Vec<LineSearchRecord>,
    ) -> Self {
        Self {
            algorithm: algorithm.to_string(),
            beta_tilde: sparse.beta.iter().copied().collect(),
            gamma_tilde: sparse.gamma.iter().copied().collect(),
            beta_hat: inner.beta.iter().copied().collect(),
            gamma_hat: inner.gamma.iter().copied().collect(),
            beta_mask: select_mask(&sparse.beta, 0.0),
            gamma_mask: select_mask(&sparse.gamma, 0.0),
            termination,
            iterations,
            newton_iterations,
            seconds,
            trace,
            line_search,
        }
    }

    pub fn sparse_point(&self) -> ParamPoint {
        ParamPoint::from_slices(&self.beta_tilde, &self.gamma_tilde)
    }

    pub fn inner_point(&self) -> ParamPoint {
        ParamPoint::from_slices(&self.beta_hat, &self.gamma_hat)
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Trace as CSV with header `iter,objective,residual,mu,elapsed`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Checks the sufficient-decrease inequality on every logged step and the
    /// `O(1/sqrt(k))` shape of the best step length. Returns the first failure.
    pub fn check_descent_ledger(&self) -> std::result::Result<(), String> {
        if let Some(bad) = self.line_search.iter().find(|r| !r.satisfies_decrease()) {
            return Err(format!(
                "iteration {}: {} > {} - {} * {} * {}",
                bad.iter, bad.phi_after, bad.phi_before, bad.tau, bad.step, bad.step_norm_sq
            ));
        }
        let Some(first) = self.line_search.first() else { return Ok(()) };
        let last = self.line_search.last().unwrap();
        let t_min = self.line_search.iter().map(|r| r.step).fold(f64::INFINITY, f64::min);
        let drop = (first.phi_before - last.phi_after).max(0.0);
        let constant = (drop / (first.tau * t_min)).sqrt();
        let mut best = f64::INFINITY;
        for (k, r) in self.line_search.iter().enumerate() {
            best = best.min(r.step_norm_sq.sqrt());
            let scaled = best * ((k + 1) as f64).sqrt();
            if scaled > constant * (1.0 + 1e-9) + 1e-12 {
                return Err(format!("iteration {k}: min residual * sqrt(k+1) = {scaled} exceeds {constant}"));
            }
        }
        Ok(())
    }
}
