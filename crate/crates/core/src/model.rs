//! Marginal likelihood of the LME model, its exact derivatives, and the pieces
//! of the relaxed objective (log-barrier and coupling).
//!
//! All evaluations go through [`PointEval`], which factors every
//! `Omega_i = Z_i Diag(gamma) Z_i^T + Lambda_i` once and reuses the Cholesky
//! factor for the value, gradient and Hessian at that point.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::LmeProblem;

/// Variance entries with magnitude below this are read as exact zeros on the boundary.
pub const GAMMA_ZERO_TOL: f64 = 1e-12;

/// Fixed effects and random-effect variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
}

impl ParamPoint {
    pub fn new(beta: DVector<f64>, gamma: DVector<f64>) -> Self {
        Self { beta, gamma }
    }

    pub fn from_slices(beta: &[f64], gamma: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(beta), DVector::from_column_slice(gamma))
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Self::new(DVector::zeros(p), DVector::zeros(q))
    }

    /// Concatenation `(beta, gamma)`.
    pub fn stacked(&self) -> DVector<f64> {
        let p = self.beta.len();
        let mut out = DVector::zeros(p + self.gamma.len());
        out.rows_mut(0, p).copy_from(&self.beta);
        out.rows_mut(p, self.gamma.len()).copy_from(&self.gamma);
        out
    }

    pub fn from_stacked(w: &DVector<f64>, p: usize) -> Self {
        let q = w.len() - p;
        Self::new(w.rows(0, p).into_owned(), w.rows(p, q).into_owned())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.beta.len(), self.gamma.len())
    }
}

/// Coupling and barrier weights for the relaxed objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxConfig {
    pub eta: f64,
    pub mu: f64,
    pub eta_bar: f64,
}

impl RelaxConfig {
    pub fn new(problem: &LmeProblem, eta: f64, mu: f64) -> Self {
        Self { eta, mu, eta_bar: eta_bar(problem) }
    }

    /// True when the relaxed subproblem is guaranteed strongly convex with the exact Hessian.
    pub fn strongly_convex(&self) -> bool {
        self.eta > self.eta_bar
    }
}

/// How much of the derivative information a [`PointEval`] should prepare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

struct GroupEval {
    chol: Cholesky<f64, Dyn>,
    resid: DVector<f64>,
    /// Whitened residual `L^{-1} r`.
    white_r: DVector<f64>,
    quad: f64,
    logdet: f64,
    /// `Z^T Omega^{-1} r`
    s: Option<DVector<f64>>,
    /// `diag(Z^T Omega^{-1} Z)`
    zt_oi_z_diag: Option<DVector<f64>>,
    zt_oi_z: Option<DMatrix<f64>>,
    xt_oi_r: Option<DVector<f64>>,
    zt_oi_x: Option<DMatrix<f64>>,
    xt_oi_x: Option<DMatrix<f64>>,
}

/// Per-point factorization cache.
pub struct PointEval {
    p: usize,
    q: usize,
    order: Order,
    groups: Vec<GroupEval>,
}

fn check_gamma(gamma: &DVector<f64>, q: usize) -> Result<DVector<f64>> {
    if gamma.len() != q {
        return Err(Error::Structure(format!("gamma has length {}, expected {q}", gamma.len())));
    }
    if let Some(g) = gamma.iter().find(|g| !(**g >= -GAMMA_ZERO_TOL)) {
        return Err(Error::Domain(format!("gamma must be nonnegative, found {g}")));
    }
    Ok(gamma.map(|g| g.max(0.0)))
}

fn check_point(problem: &LmeProblem, point: &ParamPoint) -> Result<DVector<f64>> {
    if point.beta.len() != problem.p() {
        return Err(Error::Structure(format!(
            "beta has length {}, expected {}",
            point.beta.len(),
            problem.p()
        )));
    }
    check_gamma(&point.gamma, problem.q())
}

fn omega_unchecked(problem: &LmeProblem, i: usize, gamma: &DVector<f64>) -> DMatrix<f64> {
    let g = &problem.groups()[i];
    let mut zg = g.z.clone();
    for (j, mut col) in zg.column_iter_mut().enumerate() {
        col *= gamma[j];
    }
    let mut om = &zg * g.z.transpose() + &g.lambda;
    for c in 0..om.ncols() {
        for r in c + 1..om.nrows() {
            om[(c, r)] = om[(r, c)];
        }
    }
    om
}

/// `Z_i Diag(gamma) Z_i^T + Lambda_i`.
pub fn omega(problem: &LmeProblem, group_index: usize, gamma: &DVector<f64>) -> Result<DMatrix<f64>> {
    if group_index >= problem.m() {
        return Err(Error::Structure(format!(
            "group index {group_index} out of range for {} groups",
            problem.m()
        )));
    }
    let gamma = check_gamma(gamma, problem.q())?;
    Ok(omega_unchecked(problem, group_index, &gamma))
}

impl PointEval {
    pub fn new(problem: &LmeProblem, point: &ParamPoint, order: Order) -> Result<Self> {
        let gamma = check_point(problem, point)?;
        let mut groups = Vec::with_capacity(problem.m());
        for (i, g) in problem.groups().iter().enumerate() {
            let om = omega_unchecked(problem, i, &gamma);
            let chol = Cholesky::new(om).ok_or_else(|| {
                Error::Numerical(format!("Cholesky factorization of Omega_{i} failed"))
            })?;
            let l = chol.l_dirty();
            let logdet = 2.0 * (0..g.n()).map(|k| l[(k, k)].ln()).sum::<f64>();
            let resid = &g.x * &point.beta - &g.y;
            let white_r = lower_solve(&chol, &resid);
            let quad = white_r.norm_squared();
            let mut ge = GroupEval {
                chol,
                resid,
                white_r,
                quad,
                logdet,
                s: None,
                zt_oi_z_diag: None,
                zt_oi_z: None,
                xt_oi_r: None,
                zt_oi_x: None,
                xt_oi_x: None,
            };
            if order >= Order::Gradient {
                let wz = lower_solve_mat(&ge.chol, &g.z);
                let wx = lower_solve_mat(&ge.chol, &g.x);
                ge.s = Some(wz.tr_mul(&ge.white_r));
                ge.xt_oi_r = Some(wx.tr_mul(&ge.white_r));
                ge.zt_oi_z_diag = Some(DVector::from_iterator(wz.ncols(), wz.column_iter().map(|c| c.norm_squared())));
                if order >= Order::Hessian {
                    ge.zt_oi_z = Some(wz.tr_mul(&wz));
                    ge.zt_oi_x = Some(wz.tr_mul(&wx));
                    ge.xt_oi_x = Some(wx.tr_mul(&wx));
                }
            }
            groups.push(ge);
        }
        Ok(Self { p: problem.p(), q: problem.q(), order, groups })
    }

    fn require(&self, order: Order) {
        assert!(self.order >= order, "PointEval prepared for {:?}, {order:?} requested", self.order);
    }

    /// Marginal negative log-likelihood.
    pub fn value(&self) -> f64 {
        self.groups.iter().map(|g| 0.5 * (g.quad + g.logdet)).sum()
    }

    /// Per-group `(r_i, 0.5 (r^T Omega^{-1} r + ln det Omega))`.
    pub fn group_terms(&self) -> impl Iterator<Item = (&DVector<f64>, f64)> {
        self.groups.iter().map(|g| (&g.resid, 0.5 * (g.quad + g.logdet)))
    }

    /// Solves `Omega_i x = b` with the cached factor.
    pub fn omega_solve(&self, group: usize, b: &DVector<f64>) -> DVector<f64> {
        self.groups[group].chol.solve(b)
    }

    pub fn gradient(&self) -> (DVector<f64>, DVector<f64>) {
        self.require(Order::Gradient);
        let mut gb = DVector::zeros(self.p);
        let mut gg = DVector::zeros(self.q);
        for g in &self.groups {
            gb += g.xt_oi_r.as_ref().unwrap();
            let s = g.s.as_ref().unwrap();
            let d = g.zt_oi_z_diag.as_ref().unwrap();
            for j in 0..self.q {
                gg[j] += 0.5 * (d[j] - s[j] * s[j]);
            }
        }
        (gb, gg)
    }

    pub fn gradient_stacked(&self) -> DVector<f64> {
        let (gb, gg) = self.gradient();
        ParamPoint::new(gb, gg).stacked()
    }

    pub fn order(&self) -> Order {
        self.order
    }

    /// Exact Hessian, ordered `(beta, gamma)`.
    pub fn hessian(&self) -> DMatrix<f64> {
        let mut h = self.hessian_psd();
        for g in &self.groups {
            let ztz = g.zt_oi_z.as_ref().unwrap();
            let mut block = h.view_mut((self.p, self.p), (self.q, self.q));
            block -= ztz.component_mul(ztz) * 0.5;
        }
        h
    }

    /// Hessian with the negative semidefinite `-1/2 (Z^T Omega^{-1} Z)^{o2}` term dropped.
    pub fn hessian_psd(&self) -> DMatrix<f64> {
        self.require(Order::Hessian);
        let (p, q) = (self.p, self.q);
        let mut h = DMatrix::zeros(p + q, p + q);
        for g in &self.groups {
            let s = g.s.as_ref().unwrap();
            let ztz = g.zt_oi_z.as_ref().unwrap();
            let ztx = g.zt_oi_x.as_ref().unwrap();
            let xtx = g.xt_oi_x.as_ref().unwrap();
            let mut bb = h.view_mut((0, 0), (p, p));
            bb += xtx;
            // d^2 L / d gamma d beta = -Diag(s) Z^T Omega^{-1} X
            let mut gb = ztx.clone();
            for (j, mut row) in gb.row_iter_mut().enumerate() {
                row *= -s[j];
            }
            let mut hgb = h.view_mut((p, 0), (q, p));
            hgb += &gb;
            let mut hbg = h.view_mut((0, p), (p, q));
            hbg += gb.transpose();
            // (s s^T) o (Z^T Omega^{-1} Z)
            let mut gg = h.view_mut((p, p), (q, q));
            for j in 0..q {
                for k in 0..q {
                    gg[(j, k)] += s[j] * s[k] * ztz[(j, k)];
                }
            }
        }
        h
    }

    /// `sum_i 1/2 (Z_i^T Omega_i^{-1} Z_i)^{o2}`, the term separating the two Hessians.
    pub fn hessian_gap(&self) -> DMatrix<f64> {
        self.require(Order::Hessian);
        let mut out = DMatrix::zeros(self.q, self.q);
        for g in &self.groups {
            let ztz = g.zt_oi_z.as_ref().unwrap();
            out += ztz.component_mul(ztz) * 0.5;
        }
        out
    }
}

fn lower_solve(chol: &Cholesky<f64, Dyn>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = b.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut out);
    out
}

fn lower_solve_mat(chol: &Cholesky<f64, Dyn>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = b.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut out);
    out
}

pub fn neg_loglik(problem: &LmeProblem, point: &ParamPoint) -> Result<f64> {
    Ok(PointEval::new(problem, point, Order::Value)?.value())
}

/// Gradient `(d/d beta, d/d gamma)` of the negative log-likelihood.
pub fn grad(problem: &LmeProblem, point: &ParamPoint) -> Result<(DVector<f64>, DVector<f64>)> {
    Ok(PointEval::new(problem, point, Order::Gradient)?.gradient())
}

pub fn hess(problem: &LmeProblem, point: &ParamPoint) -> Result<DMatrix<f64>> {
    Ok(PointEval::new(problem, point, Order::Hessian)?.hessian())
}

pub fn hess_psd_approx(problem: &LmeProblem, point: &ParamPoint) -> Result<DMatrix<f64>> {
    Ok(PointEval::new(problem, point, Order::Hessian)?.hessian_psd())
}

/// Perspective of the negative log: `-mu sum ln(gamma_j / mu)` for `mu > 0`,
/// the indicator of the nonnegative orthant for `mu = 0`.
pub fn log_barrier(gamma: &DVector<f64>, mu: f64) -> Result<f64> {
    if mu < 0.0 || mu.is_nan() {
        return Err(Error::Domain(format!("barrier weight must be nonnegative, got {mu}")));
    }
    if mu == 0.0 {
        let inside = gamma.iter().all(|g| *g >= -GAMMA_ZERO_TOL);
        return Ok(if inside { 0.0 } else { f64::INFINITY });
    }
    if gamma.iter().any(|g| *g <= 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok(-mu * gamma.iter().map(|g| (g / mu).ln()).sum::<f64>())
}

/// `(eta / 2) ||d||^2`.
pub fn coupling(d: &DVector<f64>, eta: f64) -> f64 {
    0.5 * eta * d.norm_squared()
}

/// `L(inner) + phi_mu(inner.gamma) + kappa_eta(inner - outer)`.
pub fn relaxed_objective(
    problem: &LmeProblem,
    inner: &ParamPoint,
    outer: &ParamPoint,
    cfg: &RelaxConfig,
) -> Result<f64> {
    let barrier = log_barrier(&inner.gamma, cfg.mu)?;
    if barrier.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let d = inner.stacked() - outer.stacked();
    Ok(neg_loglik(problem, inner)? + barrier + coupling(&d, cfg.eta))
}

/// Coupling weight above which the relaxed subproblem is strongly convex:
/// `m * max_i 1/2 mu_min(Lambda_i)^{-2} sigma_max(Z_i)^4`.
pub fn eta_bar(problem: &LmeProblem) -> f64 {
    let nu = problem
        .lambda_min_eigs()
        .iter()
        .zip(problem.z_sigma_max())
        .map(|(lmin, smax)| 0.5 * smax.powi(4) / (lmin * lmin))
        .fold(0.0, f64::max);
    problem.m() as f64 * nu
}

/// Right-hand side of the likelihood lower bound for `f(r, Omega) = 1/2 [r^T Omega^{-1} r + ln det Omega]`:
/// `max{ln(||r||^2 / n), ln ||Omega||} + ((n - 1) / 2) ln mu_min(Omega)`.
pub fn loglik_lower_bound(r: &DVector<f64>, omega: &DMatrix<f64>) -> f64 {
    let n = r.len() as f64;
    let eig = nalgebra::SymmetricEigen::new(omega.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    (r.norm_squared() / n).ln().max(hi.ln()) + 0.5 * (n - 1.0) * lo.ln()
}

/// The same bound with the factor 1/2 carried through every term:
/// `1/2 max{1 + ln(||r||^2 / n), ln ||Omega||} + ((n - 1) / 2) ln mu_min(Omega)`.
pub fn loglik_lower_bound_halved(r: &DVector<f64>, omega: &DMatrix<f64>) -> f64 {
    let n = r.len() as f64;
    let eig = nalgebra::SymmetricEigen::new(omega.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    0.5 * (1.0 + (r.norm_squared() / n).ln()).max(hi.ln()) + 0.5 * (n - 1.0) * lo.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::GroupBlock;

    fn scalar_problem(y: f64) -> LmeProblem {
        LmeProblem::new(vec![GroupBlock {
            x: DMatrix::from_element(1, 1, 1.0),
            z: DMatrix::from_element(1, 1, 1.0),
            y: DVector::from_element(1, y),
            lambda: DMatrix::from_element(1, 1, 1.0),
        }])
        .unwrap()
    }

    #[test]
    fn omega_scalar_cases() {
        let p = scalar_problem(0.0);
        assert_eq!(omega(&p, 0, &DVector::from_element(1, 0.0)).unwrap()[(0, 0)], 1.0);
        assert_eq!(omega(&p, 0, &DVector::from_element(1, 1.0)).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn omega_rejects_bad_inputs() {
        let p = scalar_problem(0.0);
        assert!(matches!(omega(&p, 0, &DVector::from_element(1, -0.5)), Err(Error::Domain(_))));
        assert!(matches!(omega(&p, 1, &DVector::from_element(1, 0.5)), Err(Error::Structure(_))));
        assert!(matches!(omega(&p, 0, &DVector::from_element(2, 0.5)), Err(Error::Structure(_))));
    }

    #[test]
    fn tiny_negative_gamma_reads_as_zero() {
        let p = scalar_problem(0.0);
        let om = omega(&p, 0, &DVector::from_element(1, -1e-14)).unwrap();
        assert_eq!(om[(0, 0)], 1.0);
    }

    #[test]
    fn neg_loglik_scalar_cases() {
        let at = |y: f64, g: f64| neg_loglik(&scalar_problem(y), &ParamPoint::from_slices(&[0.0], &[g])).unwrap();
        assert_eq!(at(0.0, 0.0), 0.0);
        assert_eq!(at(1.0, 0.0), 0.5);
        let expected = 0.5 * 0.5 + 0.5 * 2f64.ln();
        assert!((at(1.0, 1.0) - expected).abs() < 1e-15);
        assert!((at(1.0, 1.0) - 0.5966).abs() < 1e-4);
    }

    #[test]
    fn scalar_derivatives() {
        let p = scalar_problem(0.0);
        let x = ParamPoint::from_slices(&[0.0], &[0.0]);
        let (gb, gg) = grad(&p, &x).unwrap();
        assert_eq!(gb[0], 0.0);
        assert_eq!(gg[0], 0.5);
        let h = hess(&p, &x).unwrap();
        assert_eq!(h[(0, 0)], 1.0);
        assert_eq!(h[(0, 1)], 0.0);
        assert_eq!(h[(1, 0)], 0.0);
        assert_eq!(h[(1, 1)], -0.5);
        let hp = hess_psd_approx(&p, &x).unwrap();
        assert_eq!(hp, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn barrier_cases() {
        assert_eq!(log_barrier(&DVector::from_element(1, 1.0), 1.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((log_barrier(&DVector::from_element(2, e), 1.0).unwrap() + 2.0).abs() < 1e-15);
        assert_eq!(log_barrier(&DVector::from_element(1, -1.0), 0.0).unwrap(), f64::INFINITY);
        assert_eq!(log_barrier(&DVector::from_element(1, 0.0), 0.0).unwrap(), 0.0);
        assert_eq!(log_barrier(&DVector::from_element(1, 0.0), 0.1).unwrap(), f64::INFINITY);
        assert!(matches!(log_barrier(&DVector::from_element(1, 1.0), -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn coupling_cases() {
        assert_eq!(coupling(&DVector::zeros(3), 5.0), 0.0);
        assert_eq!(coupling(&DVector::from_element(2, 1.0), 2.0), 2.0);
        assert_eq!(coupling(&DVector::from_element(1, 3.0), 4.0), 18.0);
    }

    #[test]
    fn relaxed_objective_reduces_to_likelihood() {
        let p = scalar_problem(0.7);
        let x = ParamPoint::from_slices(&[0.0], &[1.0]);
        let cfg = RelaxConfig::new(&p, 3.0, 1.0);
        let val = relaxed_objective(&p, &x, &x, &cfg).unwrap();
        assert_eq!(val, neg_loglik(&p, &x).unwrap());
    }

    #[test]
    fn eta_bar_scales_with_group_count() {
        assert_eq!(eta_bar(&scalar_problem(0.0)), 0.5);
        let g = scalar_problem(0.0).groups()[0].clone();
        let three = LmeProblem::new(vec![g.clone(), g.clone(), g]).unwrap();
        assert_eq!(eta_bar(&three), 1.5);
    }

    #[test]
    #[should_panic(expected = "prepared for Value")]
    fn gradient_requires_preparation() {
        let p = scalar_problem(0.0);
        let e = PointEval::new(&p, &ParamPoint::from_slices(&[0.0], &[0.0]), Order::Value).unwrap();
        let _ = e.gradient();
    }

    fn f(r: &DVector<f64>, om: &DMatrix<f64>) -> f64 {
        let chol = om.clone().cholesky().unwrap();
        0.5 * (r.dot(&chol.solve(r)) + chol.determinant().ln())
    }

    #[test]
    fn halved_bound_holds_on_random_inputs() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for n in 1..6 {
            for _ in 0..200 {
                let a = DMatrix::from_fn(n, n, |_, _| 3.0 * next());
                let om = &a * a.transpose() + DMatrix::identity(n, n) * (0.05 + next().abs());
                let r = DVector::from_fn(n, |_, _| 10.0 * next());
                assert!(f(&r, &om) >= loglik_lower_bound_halved(&r, &om) - 1e-10);
            }
        }
    }

    #[test]
    fn unhalved_bound_fails_for_a_single_observation() {
        // n = 1, r^2 = Omega = 10: f = 1/2 + 1/2 ln 10 < ln 10.
        let r = DVector::from_element(1, 10f64.sqrt());
        let om = DMatrix::from_element(1, 1, 10.0);
        assert!(f(&r, &om) < loglik_lower_bound(&r, &om));
        assert!(f(&r, &om) >= loglik_lower_bound_halved(&r, &om));
    }
}
