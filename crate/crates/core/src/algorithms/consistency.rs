//! Behaviour of the relaxed solution as `eta` grows and `mu` shrinks.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::pgd::{default_start, pgd_value_from};
use super::{MuRule, SolverConfig, StepRule};
use crate::error::{Error, Result};
use crate::inner::KktState;
use crate::model::ParamPoint;
use crate::problem::LmeProblem;
use crate::regularizer::{ProxRequest, RegKind, Regularizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub tol: f64,
    pub inner_tol: f64,
    pub max_iter: usize,
    /// Oracle search box: `|beta| <= beta_box`, `0 <= gamma <= gamma_box`.
    pub beta_box: f64,
    pub gamma_box: f64,
    /// Final oracle grid spacing.
    pub oracle_step: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { tol: 1e-11, inner_tol: 1e-10, max_iter: 200_000, beta_box: 10.0, gamma_box: 10.0, oracle_step: 1e-6 }
    }
}

/// Relaxed solution at one `eta` for fixed `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaRow {
    pub eta: f64,
    pub mu: f64,
    /// `||x_hat - w_tilde||`.
    pub gap: f64,
    pub iterations: usize,
    pub sparse: Vec<f64>,
    pub inner: Vec<f64>,
}

/// Relaxed solution at one `mu` for the largest `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuRow {
    pub mu: f64,
    pub eta: f64,
    pub iterations: usize,
    pub sparse: Vec<f64>,
    pub inner: Vec<f64>,
    /// `||(x_hat, w_tilde) - (x*, w*)||` against the `mu = 0` oracle, when available.
    pub distance: Option<f64>,
}

/// The `mu = 0` relaxed solution `(x*, w*)` at the largest `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub inner: Vec<f64>,
    pub sparse: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTable {
    pub eta_rows: Vec<EtaRow>,
    pub mu_rows: Vec<MuRow>,
    pub oracle: Option<OracleSolution>,
}

impl ConsistencyTable {
    /// Whether the coupling gap never increases along the `eta` rows (up to `slack`).
    pub fn gap_nonincreasing(&self, slack: f64) -> bool {
        self.eta_rows.windows(2).all(|w| w[1].gap <= w[0].gap + slack)
    }
}

fn increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

/// Solves the relaxed problem with warm-started proximal gradient on the value
/// function along `eta_sequence` (at the smallest `mu`) and then along
/// `mu_sequence` (at the largest `eta`).
///
/// For `p = q = 1` and a weighted-L1 regularizer the `mu = 0` solution is also
/// computed from a refined grid minimization of `L + R`: when every coordinate
/// is nonzero, its minimizer `x*` is the relaxed inner solution and
/// `w* = prox_{R/eta}(x*)`.
pub fn consistency_probe(
    problem: &LmeProblem,
    reg: &Regularizer,
    eta_sequence: &[f64],
    mu_sequence: &[f64],
    opts: &ProbeOptions,
) -> Result<ConsistencyTable> {
    if eta_sequence.is_empty() || mu_sequence.is_empty() {
        return Err(Error::Invalid("eta and mu sequences must be nonempty".into()));
    }
    if !increasing(eta_sequence) || eta_sequence[0] <= 0.0 {
        return Err(Error::Invalid("eta sequence must be positive and increasing".into()));
    }
    let rev: Vec<f64> = mu_sequence.iter().rev().copied().collect();
    if !increasing(&rev) || rev[0] <= 0.0 {
        return Err(Error::Invalid("mu sequence must be positive and decreasing".into()));
    }
    let q = problem.q();
    let solve = |eta: f64, mu: f64, start: ParamPoint, warm: Option<KktState>| {
        let cfg = SolverConfig {
            eta,
            mu_init: MuRule::Fixed(mu),
            step: StepRule::Backtracking { t0: None, theta: 0.5, tau: 0.5 },
            tol: opts.tol,
            inner_tol: opts.inner_tol,
            max_iter_outer: opts.max_iter,
            gamma_max: Some(vec![f64::MAX; q]),
            ..SolverConfig::default()
        };
        let report = pgd_value_from(problem, reg, &cfg, start, warm)?;
        let inner = report.inner_point();
        let warm = KktState::from_point(&inner, inner.gamma.map(|g| mu / g));
        Ok::<_, Error>((report, warm))
    };

    let mu_fixed = *mu_sequence.last().unwrap();
    let mut start = default_start(problem);
    let mut warm = None;
    let mut eta_rows = Vec::new();
    for &eta in eta_sequence {
        let (r, w) = solve(eta, mu_fixed, start.clone(), warm.clone())?;
        let (sparse, inner) = (r.sparse_point().stacked(), r.inner_point().stacked());
        eta_rows.push(EtaRow {
            eta,
            mu: mu_fixed,
            gap: (&inner - &sparse).norm(),
            iterations: r.iterations,
            sparse: sparse.iter().copied().collect(),
            inner: inner.iter().copied().collect(),
        });
        start = r.sparse_point();
        warm = Some(w);
    }

    let eta = *eta_sequence.last().unwrap();
    let oracle = mu_zero_oracle(problem, reg, eta, opts)?;
    let mut start = default_start(problem);
    let mut warm = None;
    let mut mu_rows = Vec::new();
    for &mu in mu_sequence {
        let (r, w) = solve(eta, mu, start.clone(), warm.clone())?;
        let (sparse, inner) = (r.sparse_point().stacked(), r.inner_point().stacked());
        let distance = oracle.as_ref().map(|o| {
            let dx = &inner - DVector::from_column_slice(&o.inner);
            let dw = &sparse - DVector::from_column_slice(&o.sparse);
            (dx.norm_squared() + dw.norm_squared()).sqrt()
        });
        mu_rows.push(MuRow {
            mu,
            eta,
            iterations: r.iterations,
            sparse: sparse.iter().copied().collect(),
            inner: inner.iter().copied().collect(),
            distance,
        });
        start = r.sparse_point();
        warm = Some(w);
    }
    Ok(ConsistencyTable { eta_rows, mu_rows, oracle })
}

/// `L(beta, gamma)` for `p = q = 1`, reduced to per-group scalars.
pub(crate) struct ScalarLoglik {
    /// Per group: `x'L^-1 x`, `x'L^-1 y`, `y'L^-1 y`, `z'L^-1 x`, `z'L^-1 y`, `z'L^-1 z`, `ln det Lambda`.
    terms: Vec<[f64; 7]>,
}

impl ScalarLoglik {
    pub fn new(problem: &LmeProblem) -> Result<Self> {
        if problem.p() != 1 || problem.q() != 1 {
            return Err(Error::Structure("scalar likelihood needs p = q = 1".into()));
        }
        let mut terms = Vec::with_capacity(problem.m());
        for g in problem.groups() {
            let ch = g
                .lambda
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical("Lambda is not positive definite".into()))?;
            let x = g.x.column(0).into_owned();
            let z = g.z.column(0).into_owned();
            let lx = ch.solve(&x);
            let lz = ch.solve(&z);
            let ly = ch.solve(&g.y);
            let logdet = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            terms.push([x.dot(&lx), x.dot(&ly), g.y.dot(&ly), z.dot(&lx), z.dot(&ly), z.dot(&lz), logdet]);
        }
        Ok(Self { terms })
    }

    pub fn value(&self, beta: f64, gamma: f64) -> f64 {
        self.terms
            .iter()
            .map(|[xx, xy, yy, zx, zy, zz, logdet]| {
                let quad = beta * beta * xx - 2.0 * beta * xy + yy;
                let c = beta * zx - zy;
                let s = 1.0 + gamma * zz;
                0.5 * (quad - gamma * c * c / s + logdet + s.ln())
            })
            .sum()
    }
}

fn grid_argmin(
    f: &impl Fn(f64, f64) -> f64,
    (b_lo, b_hi): (f64, f64),
    (g_lo, g_hi): (f64, f64),
    h: f64,
) -> (f64, f64, f64) {
    let nb = ((b_hi - b_lo) / h).round() as usize;
    let ng = ((g_hi - g_lo) / h).round() as usize;
    let mut best = (f64::INFINITY, b_lo, g_lo);
    for i in 0..=nb {
        let b = b_lo + i as f64 * h;
        for j in 0..=ng {
            let g = g_lo + j as f64 * h;
            let v = f(b, g);
            if v < best.0 {
                best = (v, b, g);
            }
        }
    }
    best
}

/// Refined grid minimization of `L + R` over `beta in [-B, B]`, `gamma in [0, G]`,
/// starting at spacing `0.01` and refining by 100x around the incumbent.
pub(crate) fn grid_minimize(
    problem: &LmeProblem,
    reg: &Regularizer,
    opts: &ProbeOptions,
) -> Result<(f64, f64, f64)> {
    let lik = ScalarLoglik::new(problem)?;
    let f = |b: f64, g: f64| lik.value(b, g) + reg.penalty(&DVector::from_column_slice(&[b, g])).unwrap_or(f64::INFINITY);
    let mut h = 0.01;
    let (mut v, mut b, mut g) = grid_argmin(&f, (-opts.beta_box, opts.beta_box), (0.0, opts.gamma_box), h);
    while h > opts.oracle_step * 1.000001 {
        let next = (h / 100.0).max(opts.oracle_step);
        let g_lo = (g - 2.0 * h).max(0.0);
        (v, b, g) = grid_argmin(&f, (b - 2.0 * h, b + 2.0 * h), (g_lo, g + 2.0 * h), next);
        h = next;
    }
    Ok((v, b, g))
}

fn mu_zero_oracle(problem: &LmeProblem, reg: &Regularizer, eta: f64, opts: &ProbeOptions) -> Result<Option<OracleSolution>> {
    if problem.p() != 1 || problem.q() != 1 || !matches!(reg.kind, RegKind::L1 | RegKind::Alasso) {
        return Ok(None);
    }
    let (objective, b, g) = grid_minimize(problem, reg, opts)?;
    let x = DVector::from_column_slice(&[b, g]);
    let w = reg.prox(&ProxRequest::new(x.clone(), 1.0 / eta, 1))?;
    if w.iter().any(|c| *c == 0.0) {
        return Ok(None);
    }
    Ok(Some(OracleSolution { inner: x.iter().copied().collect(), sparse: w.iter().copied().collect(), objective }))
}
