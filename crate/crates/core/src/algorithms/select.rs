use serde::{Deserialize, Serialize};

use super::{msr3_fast, SolverConfig, Termination};
use crate::error::{Error, Result};
use crate::model::{neg_loglik, ParamPoint};
use crate::problem::LmeProblem;
use crate::regularizer::Regularizer;

/// `2 L(beta, gamma) + k ln n` with `k` the number of nonzero coordinates.
pub fn bic(problem: &LmeProblem, point: &ParamPoint) -> Result<f64> {
    let k = point.beta.iter().chain(point.gamma.iter()).filter(|x| **x != 0.0).count();
    Ok(2.0 * neg_loglik(problem, point)? + k as f64 * (problem.n() as f64).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaScore {
    pub eta: f64,
    /// `None` when the fit failed.
    pub bic: Option<f64>,
    pub nonzeros: usize,
    pub termination: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSelection {
    pub best_eta: f64,
    pub scores: Vec<EtaScore>,
}

/// Fits `msr3_fast` at each `eta` and returns the one with the smallest BIC.
/// Ties go to the smaller `eta`.
pub fn select_eta(problem: &LmeProblem, reg: &Regularizer, eta_grid: &[f64], cfg: &SolverConfig) -> Result<EtaSelection> {
    if eta_grid.is_empty() {
        return Err(Error::Invalid("eta grid is empty".into()));
    }
    if let Some(bad) = eta_grid.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::Domain(format!("eta grid values must be positive, got {bad}")));
    }
    let mut grid = eta_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let mut scores = Vec::with_capacity(grid.len());
    for &eta in &grid {
        let run = SolverConfig { eta, ..cfg.clone() };
        let score = match msr3_fast(problem, reg, &run).and_then(|r| {
            let pt = r.sparse_point();
            Ok((bic(problem, &pt)?, r))
        }) {
            Ok((b, r)) => EtaScore {
                eta,
                bic: Some(b),
                nonzeros: r.beta_mask.iter().chain(&r.gamma_mask).filter(|m| **m).count(),
                termination: Some(r.termination),
                error: None,
            },
            Err(e) => EtaScore { eta, bic: None, nonzeros: 0, termination: None, error: Some(e.to_string()) },
        };
        scores.push(score);
    }
    let best = best_of(scores.iter().map(|s| (s.eta, s.bic)))
        .ok_or_else(|| Error::Convergence { iterations: 0, message: "every eta in the grid failed".into() })?;
    Ok(EtaSelection { best_eta: best, scores })
}

/// Smallest score; entries must come in increasing key order so ties keep the first.
pub(crate) fn best_of(items: impl Iterator<Item = (f64, Option<f64>)>) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (key, score) in items {
        let Some(s) = score.filter(|s| s.is_finite()) else { continue };
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((key, s));
        }
    }
    best.map(|(k, _)| k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_keep_smallest_key() {
        let items = vec![(1.0, Some(5.0)), (3.0, Some(5.0)), (10.0, None)];
        assert_eq!(best_of(items.into_iter()), Some(1.0));
        assert_eq!(best_of(vec![(1.0, None)].into_iter()), None);
        assert_eq!(best_of(vec![(1.0, Some(2.0)), (2.0, Some(1.0))].into_iter()), Some(2.0));
    }

    #[test]
    fn bic_counts_nonzeros() {
        let prob = LmeProblem::from_json_str(
            r#"{"groups": [{"X": [[1.0],[2.0]], "Z": [[1.0],[0.0]], "Y": [1.0, 2.0], "Lambda": 1.0}]}"#,
        )
        .unwrap();
        let zero = ParamPoint::zeros(1, 1);
        let one = ParamPoint::from_slices(&[1.0], &[0.0]);
        let l0 = neg_loglik(&prob, &zero).unwrap();
        let l1 = neg_loglik(&prob, &one).unwrap();
        assert!((bic(&prob, &zero).unwrap() - 2.0 * l0).abs() < 1e-12);
        assert!((bic(&prob, &one).unwrap() - (2.0 * l1 + 2f64.ln())).abs() < 1e-12);
    }
}
