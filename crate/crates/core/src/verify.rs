//! Self-checks run by `lme-select verify`: finite-difference derivative checks,
//! value-function gradient checks, prox grid checks, the strong-convexity
//! threshold and (in the full suite) the consistency probe.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::algorithms::{consistency_probe, ConsistencyTable, ProbeOptions};
use crate::error::Result;
use crate::inner::{eval_value_function, InnerOptions};
use crate::model::{eta_bar, hess, neg_loglik, Order, ParamPoint, PointEval, RelaxConfig};
use crate::problem::{GroupBlock, LmeProblem};
use crate::regularizer::{ProxRequest, RegKind, Regularizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Test hook: perturbs the analytic gradient so the gradient suite must fail.
    pub corrupt_gradient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub checks: usize,
    pub failures: usize,
    /// Largest error statistic seen, in the units of the suite's tolerance.
    pub worst: f64,
    pub tolerance: f64,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub level: Level,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

/// Random instance with `m` groups of size `1..=max_n`, `Lambda_i` diagonal in `[0.2, 2]`.
pub fn random_problem(rng: &mut ChaCha8Rng, p: usize, q: usize, m: usize, max_n: usize) -> Result<LmeProblem> {
    let mut groups = Vec::with_capacity(m);
    for _ in 0..m {
        let n = rng.random_range(1..=max_n);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        let z = DMatrix::from_fn(n, q, |_, _| rng.sample(StandardNormal));
        let y = DVector::from_fn(n, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
        let lambda = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.2..2.0)));
        groups.push(GroupBlock { x, z, y, lambda });
    }
    LmeProblem::new(groups)
}

/// `beta ~ N(0, 1)`, `gamma ~ U[0.1, 2]`.
pub fn random_point(rng: &mut ChaCha8Rng, p: usize, q: usize) -> ParamPoint {
    ParamPoint::new(
        DVector::from_fn(p, |_, _| rng.sample(StandardNormal)),
        DVector::from_fn(q, |_, _| rng.random_range(0.1..2.0)),
    )
}

/// The derivative-suite corpus: `count` instances with `p, q <= 4`, each with one evaluation point.
pub fn derivative_corpus(count: usize, seed: u64) -> Result<Vec<(LmeProblem, ParamPoint)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let p = rng.random_range(1..=4);
            let q = rng.random_range(1..=4);
            let m = rng.random_range(2..=4);
            let prob = random_problem(&mut rng, p, q, m, 5)?;
            let pt = random_point(&mut rng, p, q);
            Ok((prob, pt))
        })
        .collect()
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-12)
}

fn shifted(point: &ParamPoint, k: usize, h: f64) -> ParamPoint {
    let p = point.beta.len();
    let mut w = point.stacked();
    w[k] += h;
    ParamPoint::from_stacked(&w, p)
}

/// Central differences of `L` with step `h`.
pub fn fd_gradient(problem: &LmeProblem, point: &ParamPoint, h: f64) -> Result<DVector<f64>> {
    let n = problem.p() + problem.q();
    let mut g = DVector::zeros(n);
    for k in 0..n {
        let fp = neg_loglik(problem, &shifted(point, k, h))?;
        let fm = neg_loglik(problem, &shifted(point, k, -h))?;
        g[k] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central differences of the analytic gradient with step `h`.
pub fn fd_hessian(problem: &LmeProblem, point: &ParamPoint, h: f64) -> Result<DMatrix<f64>> {
    let n = problem.p() + problem.q();
    let grad = |pt: &ParamPoint| PointEval::new(problem, pt, Order::Gradient).map(|e| e.gradient_stacked());
    let mut hm = DMatrix::zeros(n, n);
    for k in 0..n {
        let col = (grad(&shifted(point, k, h))? - grad(&shifted(point, k, -h))?) / (2.0 * h);
        hm.set_column(k, &col);
    }
    Ok(hm)
}

fn finish(name: &str, clock: Instant, checks: usize, errors: &[f64], tolerance: f64) -> SuiteResult {
    let failures = errors.iter().filter(|e| !(**e < tolerance)).count();
    SuiteResult {
        name: name.into(),
        passed: failures == 0,
        checks,
        failures,
        worst: errors.iter().copied().fold(0.0, f64::max),
        tolerance,
        seconds: clock.elapsed().as_secs_f64(),
        consistency: None,
    }
}

fn gradient_suite(corpus: &[(LmeProblem, ParamPoint)], opts: &VerifyOptions) -> Result<SuiteResult> {
    let clock = Instant::now();
    let mut errs = Vec::new();
    for (prob, pt) in corpus {
        let mut an = PointEval::new(prob, pt, Order::Gradient)?.gradient_stacked();
        if opts.corrupt_gradient {
            an[0] += 1e-3 * (1.0 + an[0].abs());
        }
        errs.push(rel_err(&an, &fd_gradient(prob, pt, 1e-6)?));
    }
    Ok(finish("gradient", clock, corpus.len(), &errs, 1e-5))
}

fn hessian_suite(corpus: &[(LmeProblem, ParamPoint)]) -> Result<SuiteResult> {
    let clock = Instant::now();
    let mut errs = Vec::new();
    for (prob, pt) in corpus {
        let an = hess(prob, pt)?;
        let fd = fd_hessian(prob, pt, 1e-4)?;
        errs.push((&an - &fd).norm() / an.norm().max(fd.norm()).max(1e-12));
    }
    Ok(finish("hessian", clock, corpus.len(), &errs, 1e-4))
}

fn value_gradient_suite(count: usize) -> Result<SuiteResult> {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = InnerOptions { tol: 1e-10, max_iter: 200, use_psd_approx: true };
    let mut errs = Vec::new();
    let mut checks = 0;
    while checks < count {
        let (p, q) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let prob = random_problem(&mut rng, p, q, 3, 4)?;
        let outer = random_point(&mut rng, p, q);
        for eta_mult in [2.0, 10.0] {
            for mu in [1e-2, 1e-4] {
                let cfg = RelaxConfig::new(&prob, eta_mult * eta_bar(&prob), mu);
                let ev = eval_value_function(&prob, &outer, &cfg, &opts, None)?;
                let mut fd = DVector::zeros(p + q);
                let h = 1e-5;
                for k in 0..p + q {
                    let up = eval_value_function(&prob, &shifted(&outer, k, h), &cfg, &opts, Some(&ev.state()))?.value;
                    let dn = eval_value_function(&prob, &shifted(&outer, k, -h), &cfg, &opts, Some(&ev.state()))?.value;
                    fd[k] = (up - dn) / (2.0 * h);
                }
                errs.push(rel_err(&ev.gradient, &fd));
                checks += 1;
            }
        }
    }
    Ok(finish("value_gradient", clock, checks, &errs, 1e-4))
}

fn prox_objective(reg: &Regularizer, w: f64, x: f64, t: f64) -> f64 {
    t * reg.penalty(&DVector::from_element(1, w)).unwrap_or(f64::INFINITY) + 0.5 * (w - x) * (w - x)
}

fn prox_suite(per_kind: usize) -> Result<SuiteResult> {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut errs = Vec::new();
    for kind in RegKind::ALL {
        for _ in 0..per_kind {
            let lambda = rng.random_range(0.05..3.0);
            let reg = match kind {
                RegKind::Alasso => Regularizer::alasso(lambda, vec![rng.random_range(0.2..5.0)])?,
                _ => Regularizer::new(kind, lambda)?,
            };
            let (x, t) = (rng.random_range(-8.0..8.0), rng.random_range(0.1..2.0));
            for nonneg in [0, 1] {
                let w = reg.prox(&ProxRequest::new(DVector::from_element(1, x), t, nonneg))?[0];
                let best = prox_objective(&reg, w, x, t);
                // the minimizer lies between 0 and x for every supported penalty
                let hi = (x.max(0.0) * 1e4).ceil() as i64 + 1;
                let lo = if nonneg == 1 { 0 } else { (x.min(0.0) * 1e4).floor() as i64 - 1 };
                let grid_best = (lo..=hi)
                    .map(|k| prox_objective(&reg, k as f64 * 1e-4, x, t))
                    .fold(f64::INFINITY, f64::min);
                // margin below zero means the grid found something better
                errs.push((best - grid_best).max(0.0));
            }
        }
    }
    let checks = errs.len();
    Ok(finish("prox", clock, checks, &errs, 1e-8))
}

/// Smallest eigenvalue of `hess L + Diag(0, mu / gamma^2) + eta I` at `point`.
pub fn relaxed_min_eig(problem: &LmeProblem, point: &ParamPoint, eta: f64, mu: f64) -> Result<f64> {
    let mut h = hess(problem, point)?;
    let p = problem.p();
    for k in 0..h.nrows() {
        h[(k, k)] += eta;
    }
    for (j, g) in point.gamma.iter().enumerate() {
        h[(p + j, p + j)] += mu / (g * g);
    }
    Ok(SymmetricEigen::new(h).eigenvalues.min())
}

fn spectral_suite(instances: usize, points: usize) -> Result<SuiteResult> {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut errs = Vec::new();
    for _ in 0..instances {
        let (p, q) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let prob = random_problem(&mut rng, p, q, 3, 4)?;
        let bar = eta_bar(&prob);
        for _ in 0..points {
            let pt = random_point(&mut rng, p, q);
            let lo = relaxed_min_eig(&prob, &pt, 1.05 * bar, 0.0)?;
            errs.push((0.04 * bar - 1e-8 - lo).max(0.0));
        }
    }
    let checks = errs.len();
    Ok(finish("spectral", clock, checks, &errs, 1e-300))
}

/// Small `p = q = 1` instance used for the consistency tables.
pub fn consistency_instance() -> Result<LmeProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut groups = Vec::new();
    for _ in 0..8 {
        let n = 4;
        let x = DMatrix::from_fn(n, 1, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let z = DMatrix::from_fn(n, 1, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
        let u: f64 = 1.5 * rng.sample::<f64, _>(StandardNormal);
        let y = DVector::from_fn(n, |i, _| 1.5 * x[(i, 0)] + u * z[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        groups.push(GroupBlock { x, z, y, lambda: DMatrix::identity(n, n) });
    }
    LmeProblem::new(groups)
}

fn consistency_suite() -> Result<SuiteResult> {
    let clock = Instant::now();
    let prob = consistency_instance()?;
    let bar = eta_bar(&prob);
    let etas: Vec<f64> = [2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|k| k * bar).collect();
    let mus = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
    let table = consistency_probe(&prob, &Regularizer::l1(0.5), &etas, &mus, &ProbeOptions::default())?;
    let endpoint = table.mu_rows.last().and_then(|r| r.distance).unwrap_or(f64::INFINITY);
    let monotone = table.gap_nonincreasing(1e-12);
    let mut res = finish("consistency", clock, 2, &[endpoint, if monotone { 0.0 } else { f64::INFINITY }], 1e-2);
    res.consistency = Some(table);
    Ok(res)
}

/// Runs the suites for `level`. Suite errors count as failures.
pub fn run(level: Level, opts: &VerifyOptions) -> VerifyReport {
    let (n_deriv, n_value, n_prox, n_spec) = match level {
        Level::Quick => (20, 8, 40, (3, 20)),
        Level::Full => (50, 20, 200, (5, 100)),
    };
    let failed = |name: &str, e: crate::Error| SuiteResult {
        name: format!("{name}: {e}"),
        passed: false,
        checks: 0,
        failures: 1,
        worst: f64::INFINITY,
        tolerance: 0.0,
        seconds: 0.0,
        consistency: None,
    };
    let mut suites = Vec::new();
    match derivative_corpus(n_deriv, 1) {
        Ok(corpus) => {
            suites.push(gradient_suite(&corpus, opts).unwrap_or_else(|e| failed("gradient", e)));
            suites.push(hessian_suite(&corpus).unwrap_or_else(|e| failed("hessian", e)));
        }
        Err(e) => suites.push(failed("derivative corpus", e)),
    }
    suites.push(value_gradient_suite(n_value).unwrap_or_else(|e| failed("value_gradient", e)));
    suites.push(prox_suite(n_prox).unwrap_or_else(|e| failed("prox", e)));
    suites.push(spectral_suite(n_spec.0, n_spec.1).unwrap_or_else(|e| failed("spectral", e)));
    if level == Level::Full {
        suites.push(consistency_suite().unwrap_or_else(|e| failed("consistency", e)));
    }
    VerifyReport { level, passed: suites.iter().all(|s| s.passed), suites }
}
