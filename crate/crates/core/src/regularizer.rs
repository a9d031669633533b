//! Separable sparsity penalties (L0, L1, adaptive lasso, SCAD) and their
//! proximal operators, optionally composed with a nonnegativity constraint on
//! the trailing coordinates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conventional SCAD shape parameter.
pub const DEFAULT_SCAD_A: f64 = 3.7;

/// Floor applied to reference magnitudes when deriving adaptive-lasso weights.
pub const ALASSO_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    L0,
    L1,
    Alasso,
    Scad,
}

impl RegKind {
    pub const ALL: [RegKind; 4] = [RegKind::L0, RegKind::L1, RegKind::Alasso, RegKind::Scad];

    pub fn name(&self) -> &'static str {
        match self {
            RegKind::L0 => "l0",
            RegKind::L1 => "l1",
            RegKind::Alasso => "alasso",
            RegKind::Scad => "scad",
        }
    }

    /// Convex penalties have nonexpansive proximal maps.
    pub fn is_convex(&self) -> bool {
        matches!(self, RegKind::L1 | RegKind::Alasso)
    }
}

impl std::str::FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l0" => Ok(RegKind::L0),
            "l1" | "lasso" => Ok(RegKind::L1),
            "alasso" => Ok(RegKind::Alasso),
            "scad" => Ok(RegKind::Scad),
            other => Err(Error::Invalid(format!("unknown regularizer kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for RegKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A penalty `R(w) = sum_j r_j(w_j)` over the stacked `(beta, gamma)` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularizer {
    pub kind: RegKind,
    pub lambda: f64,
    /// Per-coordinate weights, adaptive lasso only. Missing means all ones.
    pub alasso_weights: Option<Vec<f64>>,
    pub scad_a: f64,
    /// Coordinates exempt from penalization. Empty means none.
    pub fixed_mask: Vec<bool>,
}

impl Regularizer {
    pub fn new(kind: RegKind, lambda: f64) -> Result<Self> {
        let reg = Self { kind, lambda, alasso_weights: None, scad_a: DEFAULT_SCAD_A, fixed_mask: Vec::new() };
        reg.validate()?;
        Ok(reg)
    }

    pub fn l0(lambda: f64) -> Self {
        Self::new(RegKind::L0, lambda).expect("lambda must be nonnegative")
    }

    pub fn l1(lambda: f64) -> Self {
        Self::new(RegKind::L1, lambda).expect("lambda must be nonnegative")
    }

    pub fn scad(lambda: f64, a: f64) -> Result<Self> {
        let reg = Self { scad_a: a, ..Self::new(RegKind::Scad, lambda)? };
        reg.validate()?;
        Ok(reg)
    }

    pub fn alasso(lambda: f64, weights: Vec<f64>) -> Result<Self> {
        let reg = Self { alasso_weights: Some(weights), ..Self::new(RegKind::Alasso, lambda)? };
        reg.validate()?;
        Ok(reg)
    }

    /// Adaptive lasso with weights `1 / max(|w_ref_j|, 1e-6)` from a preliminary fit.
    pub fn alasso_from_reference(lambda: f64, reference: &DVector<f64>) -> Result<Self> {
        let weights = reference.iter().map(|w| 1.0 / w.abs().max(ALASSO_WEIGHT_FLOOR)).collect();
        Self::alasso(lambda, weights)
    }

    /// Same penalty shape with a different strength.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }

    pub fn with_fixed_mask(mut self, mask: Vec<bool>) -> Self {
        self.fixed_mask = mask;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Domain(format!("lambda must be finite and nonnegative, got {}", self.lambda)));
        }
        if self.kind == RegKind::Scad && !(self.scad_a > 2.0) {
            return Err(Error::Domain(format!("SCAD parameter a must exceed 2, got {}", self.scad_a)));
        }
        if let Some(w) = &self.alasso_weights {
            if w.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
                return Err(Error::Domain("adaptive lasso weights must be positive and finite".into()));
            }
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if !self.fixed_mask.is_empty() && self.fixed_mask.len() != len {
            return Err(Error::Structure(format!(
                "fixed mask has length {}, vector has length {len}",
                self.fixed_mask.len()
            )));
        }
        if let Some(w) = &self.alasso_weights {
            if w.len() != len {
                return Err(Error::Structure(format!(
                    "adaptive lasso weights have length {}, vector has length {len}",
                    w.len()
                )));
            }
        }
        Ok(())
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.fixed_mask.get(j).copied().unwrap_or(false)
    }

    fn weight(&self, j: usize) -> f64 {
        self.alasso_weights.as_ref().map_or(1.0, |w| w[j])
    }

    fn scalar(&self, j: usize) -> ScalarPenalty {
        ScalarPenalty { kind: self.kind, lambda: self.lambda * self.weight(j), a: self.scad_a }
    }

    /// Penalty value `R(w)`.
    pub fn penalty(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_len(w.len())?;
        Ok(w.iter()
            .enumerate()
            .filter(|(j, _)| !self.is_fixed(*j))
            .map(|(j, wj)| self.scalar(j).value(*wj))
            .sum())
    }

    /// `R(w) + indicator(trailing `nonneg_tail` coordinates >= 0)`.
    pub fn penalty_constrained(&self, w: &DVector<f64>, nonneg_tail: usize) -> Result<f64> {
        let start = w.len().saturating_sub(nonneg_tail);
        if w.rows(start, w.len() - start).iter().any(|v| *v < 0.0) {
            return Ok(f64::INFINITY);
        }
        self.penalty(w)
    }

    /// Coordinatewise `argmin_w t R(w) + 1/2 ||w - x||^2`, restricted to `w >= 0`
    /// on the trailing `req.nonneg_tail` coordinates.
    pub fn prox(&self, req: &ProxRequest) -> Result<DVector<f64>> {
        if !(req.step > 0.0) {
            return Err(Error::Domain(format!("prox step must be positive, got {}", req.step)));
        }
        let len = req.point.len();
        self.check_len(len)?;
        let start = len.saturating_sub(req.nonneg_tail);
        Ok(DVector::from_iterator(
            len,
            req.point.iter().enumerate().map(|(j, &x)| {
                let nonneg = j >= start;
                if self.is_fixed(j) || self.lambda == 0.0 {
                    if nonneg { x.max(0.0) } else { x }
                } else {
                    self.scalar(j).prox(x, req.step, nonneg)
                }
            }),
        ))
    }
}

/// Input to [`Regularizer::prox`].
#[derive(Debug, Clone)]
pub struct ProxRequest {
    pub point: DVector<f64>,
    pub step: f64,
    /// Number of trailing coordinates constrained to be nonnegative (the `gamma` block).
    pub nonneg_tail: usize,
}

impl ProxRequest {
    pub fn new(point: DVector<f64>, step: f64, nonneg_tail: usize) -> Self {
        Self { point, step, nonneg_tail }
    }
}

/// One coordinate of a penalty with the weight folded into `lambda`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScalarPenalty {
    kind: RegKind,
    lambda: f64,
    a: f64,
}

impl ScalarPenalty {
    fn value(&self, w: f64) -> f64 {
        let lam = self.lambda;
        let aw = w.abs();
        match self.kind {
            RegKind::L0 => {
                if w != 0.0 {
                    lam
                } else {
                    0.0
                }
            }
            RegKind::L1 | RegKind::Alasso => lam * aw,
            RegKind::Scad => scad_value(aw, lam, self.a),
        }
    }

    fn objective(&self, w: f64, x: f64, t: f64) -> f64 {
        t * self.value(w) + 0.5 * (w - x) * (w - x)
    }

    fn prox(&self, x: f64, t: f64, nonneg: bool) -> f64 {
        let free = match self.kind {
            RegKind::L1 | RegKind::Alasso => soft_threshold(x, t * self.lambda),
            RegKind::L0 => {
                // keep x only when 1/2 x^2 > t lambda; ties go to zero
                if 0.5 * x * x > t * self.lambda {
                    x
                } else {
                    0.0
                }
            }
            RegKind::Scad => scad_prox(x, t, self.lambda, self.a),
        };
        if !nonneg {
            return free;
        }
        match self.kind {
            // separable and monotone: projection after the prox is exact
            RegKind::L1 | RegKind::Alasso => free.max(0.0),
            RegKind::L0 | RegKind::Scad => {
                let clipped = free.max(0.0);
                if clipped > 0.0 && self.objective(clipped, x, t) < self.objective(0.0, x, t) {
                    clipped
                } else {
                    0.0
                }
            }
        }
    }
}

fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x.abs() <= tau {
        0.0
    } else {
        x - tau.copysign(x)
    }
}

fn scad_value(aw: f64, lam: f64, a: f64) -> f64 {
    if aw <= lam {
        lam * aw
    } else if aw <= a * lam {
        (2.0 * a * lam * aw - aw * aw - lam * lam) / (2.0 * (a - 1.0))
    } else {
        0.5 * (a + 1.0) * lam * lam
    }
}

/// SCAD prox for an arbitrary step: the minimizer over each of the three zones
/// (linear, concave quadratic, constant), best one wins. For `t < a - 1` this is
/// the usual three-zone closed form.
fn scad_prox(x: f64, t: f64, lam: f64, a: f64) -> f64 {
    let y = x.abs();
    let obj = |c: f64| t * scad_value(c, lam, a) + 0.5 * (c - y) * (c - y);
    let mut cands = [
        (y - t * lam).clamp(0.0, lam),
        lam,
        a * lam,
        y.max(a * lam),
        0.0,
    ];
    let curvature = 1.0 - t / (a - 1.0);
    let mut extra = None;
    if curvature > 0.0 {
        extra = Some(((y - t * a * lam / (a - 1.0)) / curvature).clamp(lam, a * lam));
    }
    cands.sort_by(f64::total_cmp);
    let mut best = 0.0;
    let mut best_val = obj(0.0);
    for c in cands.into_iter().chain(extra) {
        let v = obj(c);
        if v < best_val {
            best = c;
            best_val = v;
        }
    }
    if best == 0.0 { 0.0 } else { best.copysign(x) }
}

/// `mask_j = |w_j| > tol`.
pub fn select_mask(w: &DVector<f64>, tol: f64) -> Vec<bool> {
    w.iter().map(|v| v.abs() > tol).collect()
}

/// Regularizer as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerSpec {
    pub kind: RegKind,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<Vec<bool>>,
}

impl TryFrom<RegularizerSpec> for Regularizer {
    type Error = Error;

    fn try_from(spec: RegularizerSpec) -> Result<Self> {
        let mut reg = Regularizer::new(spec.kind, spec.lambda)?;
        if let Some(a) = spec.a {
            reg.scad_a = a;
        }
        reg.alasso_weights = spec.weights;
        reg.fixed_mask = spec.fixed.unwrap_or_default();
        reg.validate()?;
        Ok(reg)
    }
}

impl From<&Regularizer> for RegularizerSpec {
    fn from(reg: &Regularizer) -> Self {
        RegularizerSpec {
            kind: reg.kind,
            lambda: reg.lambda,
            a: (reg.kind == RegKind::Scad).then_some(reg.scad_a),
            weights: reg.alasso_weights.clone(),
            fixed: (!reg.fixed_mask.is_empty()).then(|| reg.fixed_mask.clone()),
        }
    }
}
