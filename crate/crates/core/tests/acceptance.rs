//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stderr (bypassing output capture) and then asserts its criterion.

mod common;

use std::io::Write;
use std::time::Instant;

use common::{fd_grad, rel, relaxed_l1_oracle};
use lme_select::algorithms::{
    consistency_probe, pgd_naive, pgd_value, Algorithm, MuRule, ProbeOptions, SolveReport, SolverConfig,
};
use lme_select::bench::{bic_sweep, cmd_bench, default_lambda_grid, resolve_workers, BenchSpec};
use lme_select::inner::{eval_value_function, InnerOptions};
use lme_select::model::{eta_bar, grad, hess, loglik_lower_bound, loglik_lower_bound_halved, neg_loglik, omega};
use lme_select::model::{Order, PointEval, RelaxConfig};
use lme_select::regularizer::ProxRequest;
use lme_select::simulator::{generate, SimConfig};
use lme_select::verify::{consistency_instance, derivative_corpus, random_problem};
use lme_select::{GroupBlock, LmeProblem, ParamPoint, RegKind, Regularizer};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!("{} criterion {n} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn stacked(pt: &ParamPoint) -> Vec<f64> {
    pt.stacked().iter().copied().collect()
}

fn point_of(v: &[f64], p: usize) -> ParamPoint {
    ParamPoint::from_slices(&v[..p], &v[p..])
}

/// The derivative corpus: 50 instances with `p, q <= 4`.
fn suite_one() -> Vec<(LmeProblem, ParamPoint)> {
    derivative_corpus(50, 1).unwrap()
}

#[test]
fn c1_derivatives_match_finite_differences() {
    let clock = Instant::now();
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for (prob, pt) in suite_one() {
        let p = prob.p();
        let x = stacked(&pt);
        let fd = fd_grad(|v| neg_loglik(&prob, &point_of(v, p)).unwrap(), &x, 1e-6);
        let (gb, gg) = grad(&prob, &pt).unwrap();
        let an: Vec<f64> = gb.iter().chain(gg.iter()).copied().collect();
        worst_g = worst_g.max(rel(&an, &fd));

        let h = hess(&prob, &pt).unwrap();
        let n = x.len();
        let mut fd_h = Vec::with_capacity(n * n);
        for k in 0..n {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[k] += 1e-4;
            dn[k] -= 1e-4;
            let gu = grad(&prob, &point_of(&up, p)).unwrap();
            let gd = grad(&prob, &point_of(&dn, p)).unwrap();
            for (a, b) in gu.0.iter().chain(gu.1.iter()).zip(gd.0.iter().chain(gd.1.iter())) {
                fd_h.push((a - b) / 2e-4);
            }
        }
        let an_h: Vec<f64> = h.iter().copied().collect();
        worst_h = worst_h.max(rel(&an_h, &fd_h));
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = worst_g < 1e-5 && worst_h < 1e-4 && secs < 10.0;
    report(1, "derivatives", pass, &format!("max grad rel {worst_g:.2e} (<1e-5), max hess rel {worst_h:.2e} (<1e-4), {secs:.2}s"));
    assert!(pass);
}

#[test]
fn c2_value_function_gradient() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let opts = InnerOptions { tol: 1e-10, max_iter: 200, use_psd_approx: true };
    let (mut worst, mut combos) = (0.0f64, 0);
    for _ in 0..5 {
        let (p, q) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let prob = random_problem(&mut rng, p, q, 3, 5).unwrap();
        let w: Vec<f64> = (0..p + q)
            .map(|k| if k < p { rng.sample(StandardNormal) } else { rng.random_range(0.05..2.0) })
            .collect();
        let bar = eta_bar(&prob);
        for eta in [2.0 * bar, 10.0 * bar] {
            for mu in [1e-2, 1e-4] {
                let cfg = RelaxConfig::new(&prob, eta, mu);
                let u = |v: &[f64]| eval_value_function(&prob, &point_of(v, p), &cfg, &opts, None).unwrap().value;
                let fd = fd_grad(u, &w, 1e-5);
                let ev = eval_value_function(&prob, &point_of(&w, p), &cfg, &opts, None).unwrap();
                let an: Vec<f64> = ev.gradient.iter().copied().collect();
                worst = worst.max(rel(&an, &fd));
                combos += 1;
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = combos == 20 && worst < 1e-4 && secs < 30.0;
    report(2, "value-function gradient", pass, &format!("{combos} combos, max rel {worst:.2e} (<1e-4), {secs:.2}s"));
    assert!(pass);
}

fn min_eig(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.min()
}

/// `m` identical one-observation groups with `x = z = 1`, `Lambda = 1`, `y = 0`.
fn adversarial(m: usize) -> LmeProblem {
    let one = DMatrix::from_element(1, 1, 1.0);
    let g = GroupBlock { x: one.clone(), z: one.clone(), y: DVector::zeros(1), lambda: one };
    LmeProblem::new(vec![g; m]).unwrap()
}

#[test]
fn c3_strong_convexity_threshold() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst_margin = f64::INFINITY;
    let mut points = 0;
    for _ in 0..5 {
        let (p, q) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let m = rng.random_range(2..=4);
        let prob = random_problem(&mut rng, p, q, m, 5).unwrap();
        let bar = eta_bar(&prob);
        for _ in 0..100 {
            let beta = DVector::from_fn(p, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
            let gamma = DVector::from_fn(q, |_, _| 10f64.powf(rng.random_range(-4.0..1.0)));
            let h = hess(&prob, &ParamPoint::new(beta, gamma)).unwrap();
            let lo = min_eig(h + DMatrix::identity(p + q, p + q) * (1.05 * bar));
            worst_margin = worst_margin.min((lo - (0.04 * bar - 1e-8)) / bar);
            points += 1;
        }
    }

    // Zero residual removes the beta-gamma coupling, so the Schur complement is the gamma block.
    let prob = adversarial(4);
    let bar = eta_bar(&prob);
    let mut most_negative = f64::INFINITY;
    for k in 0..100 {
        let gamma = 0.3 * k as f64 / 100.0 + 1e-6;
        let h = hess(&prob, &ParamPoint::from_slices(&[0.0], &[gamma])).unwrap() + DMatrix::identity(2, 2) * (0.5 * bar);
        let schur = h[(1, 1)] - h[(1, 0)] * h[(0, 1)] / h[(0, 0)];
        most_negative = most_negative.min(schur);
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = worst_margin >= 0.0 && most_negative < 0.0 && secs < 30.0;
    report(
        3,
        "strong convexity",
        pass,
        &format!(
            "{points} points, min (lambda_min - 0.04 eta_bar)/eta_bar = {worst_margin:.3e} (>=0); adversarial Schur min at 0.5 eta_bar = {most_negative:.3e} (<0), {secs:.2}s"
        ),
    );
    assert!(pass);
}

fn scalar_penalty(kind: RegKind, lambda: f64, weight: f64, w: f64) -> f64 {
    let a = w.abs();
    match kind {
        RegKind::L0 => if w != 0.0 { lambda } else { 0.0 },
        RegKind::L1 => lambda * a,
        RegKind::Alasso => lambda * weight * a,
        RegKind::Scad => {
            let s = 3.7;
            if a <= lambda {
                lambda * a
            } else if a <= s * lambda {
                (2.0 * s * lambda * a - a * a - lambda * lambda) / (2.0 * (s - 1.0))
            } else {
                lambda * lambda * (s + 1.0) / 2.0
            }
        }
    }
}

#[test]
fn c4_prox_beats_grid() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = f64::INFINITY;
    let mut problems = 0;
    for kind in RegKind::ALL {
        for _ in 0..200 {
            let (lambda, weight) = (rng.random_range(0.05..3.0), rng.random_range(0.2..5.0));
            let (x, t) = (rng.random_range(-5.0..5.0), rng.random_range(0.1..2.0));
            let reg = match kind {
                RegKind::Alasso => Regularizer::alasso(lambda, vec![weight]).unwrap(),
                RegKind::Scad => Regularizer::scad(lambda, 3.7).unwrap(),
                _ => Regularizer::new(kind, lambda).unwrap(),
            };
            let obj = |w: f64| t * scalar_penalty(kind, lambda, weight, w) + 0.5 * (w - x) * (w - x);
            let reach = ((x.abs() + 1.0) * 1e4).ceil() as i64;
            for nonneg in [0usize, 1] {
                let w = reg.prox(&ProxRequest::new(DVector::from_element(1, x), t, nonneg)).unwrap()[0];
                assert!(nonneg == 0 || w >= 0.0);
                let lo = if nonneg == 1 { 0 } else { -reach };
                let grid = (lo..=reach).map(|k| obj(k as f64 * 1e-4)).fold(f64::INFINITY, f64::min);
                worst = worst.min(grid - obj(w));
                problems += 1;
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = worst >= -1e-8 && secs < 10.0;
    report(4, "prox vs grid", pass, &format!("{problems} problems, min margin {worst:.3e} (>=-1e-8), {secs:.2}s"));
    assert!(pass);
}

#[test]
fn c5_consistency_probes() {
    let clock = Instant::now();
    let prob = consistency_instance().unwrap();
    let bar = eta_bar(&prob);
    let lambda = 0.5;
    let etas: Vec<f64> = [2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|k| k * bar).collect();
    let mus = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
    let table = consistency_probe(&prob, &Regularizer::l1(lambda), &etas, &mus, &ProbeOptions::default()).unwrap();
    let gaps: Vec<f64> = table.eta_rows.iter().map(|r| r.gap).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);

    let ((xb, xg), (wb, wg)) = relaxed_l1_oracle(&prob, lambda, etas[4]);
    let end = table.mu_rows.last().unwrap();
    let target = [xb, xg, wb, wg];
    let got: Vec<f64> = end.inner.iter().chain(&end.sparse).copied().collect();
    let dist = got.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let secs = clock.elapsed().as_secs_f64();
    let pass = monotone && dist < 1e-2 && secs < 60.0;
    let gap_text: Vec<String> = gaps.iter().map(|g| format!("{g:.3e}")).collect();
    report(
        5,
        "consistency",
        pass,
        &format!("gaps [{}] nonincreasing={monotone}; mu=1e-5 distance to mu=0 oracle {dist:.3e} (<1e-2), {secs:.2}s", gap_text.join(", ")),
    );
    assert!(pass);
}

#[test]
fn c6_sufficient_decrease_and_rate() {
    let mut runs: Vec<SolveReport> = Vec::new();
    for seed in 1..=3 {
        let (prob, _) = generate(&SimConfig::with_seed(seed)).unwrap();
        for kind in RegKind::ALL {
            let reg = match kind {
                RegKind::Alasso => Regularizer::alasso(1.0, vec![1.0; 40]).unwrap(),
                _ => Regularizer::new(kind, 1.0).unwrap(),
            };
            runs.push(pgd_naive(&prob, &reg, &SolverConfig::default()).unwrap());
        }
    }
    let (prob, _) = generate(&SimConfig::with_seed(1)).unwrap();
    let cfg = SolverConfig { mu_init: MuRule::Fixed(1e-2), max_iter_outer: 200, max_iter_inner: 2000, ..SolverConfig::default() };
    for kind in [RegKind::L0, RegKind::L1, RegKind::Scad] {
        runs.push(pgd_value(&prob, &Regularizer::new(kind, 1.0).unwrap(), &cfg).unwrap());
    }
    let small = consistency_instance().unwrap();
    for eta in [1.0, 10.0, 100.0] {
        let cfg = SolverConfig { eta, mu_init: MuRule::Fixed(1e-3), tol: 1e-9, max_iter_outer: 5000, ..SolverConfig::default() };
        runs.push(pgd_value(&small, &Regularizer::l1(0.5), &cfg).unwrap());
    }
    let steps: usize = runs.iter().map(|r| r.line_search.len()).sum();
    let failures: Vec<String> = runs
        .iter()
        .filter(|r| r.line_search.is_empty() || r.check_descent_ledger().is_err())
        .map(|r| format!("{}: {:?}", r.algorithm, r.check_descent_ledger().err().unwrap_or_else(|| "empty ledger".into())))
        .collect();
    let pass = failures.is_empty();
    report(6, "sufficient decrease", pass, &format!("{} runs, {steps} accepted steps, failures {failures:?}", runs.len()));
    assert!(pass);
}

#[test]
fn c7_benchmark_reproduction() {
    let workers = resolve_workers(Some(4)).unwrap();
    let spec = BenchSpec::default();
    let clock = Instant::now();
    let result = cmd_bench(&spec, workers).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    let targets = [(RegKind::L0, 0.92), (RegKind::L1, 0.88), (RegKind::Alasso, 0.91), (RegKind::Scad, 0.92)];
    let mut pass = secs <= 900.0 && spec.seeds == 20;
    let mut lines = Vec::new();
    for (kind, target) in targets {
        let cell = |a| result.cell(a, kind).unwrap();
        let (fast, slow, pgd) = (cell(Algorithm::Msr3Fast), cell(Algorithm::Msr3), cell(Algorithm::Pgd));
        let ratio = fast.mean_seconds / pgd.mean_seconds;
        let ok_acc = (fast.mean_accuracy - target).abs() <= 0.10;
        let ok_gap = (slow.mean_accuracy - fast.mean_accuracy).abs() <= 0.03;
        let ok_ratio = ratio < 0.05;
        pass &= ok_acc && ok_gap && ok_ratio;
        lines.push(format!(
            "{}: fast {:.3} vs {target} [{}], |msr3-fast| {:.3} [{}], time ratio {:.4} [{}], pgd {:.3}",
            kind.name(),
            fast.mean_accuracy,
            if ok_acc { "ok" } else { "off" },
            (slow.mean_accuracy - fast.mean_accuracy).abs(),
            if ok_gap { "ok" } else { "off" },
            ratio,
            if ok_ratio { "ok" } else { "off" },
            pgd.mean_accuracy
        ));
    }
    report(
        7,
        "benchmark",
        pass,
        &format!("{workers} workers, {secs:.0}s, failure rate {:.2}; {}", result.failure_rate, lines.join("; ")),
    );
    assert!(pass);
}

#[test]
fn c8_eta_robustness() {
    let clock = Instant::now();
    let grid = [0.1, 1.0, 3.0, 10.0, 40.0];
    let mut chosen = Vec::new();
    for seed in 1..=20 {
        let (prob, _) = generate(&SimConfig::with_seed(seed)).unwrap();
        let sweep = bic_sweep(&prob, Algorithm::Msr3Fast, RegKind::L1, &grid, &default_lambda_grid(), &SolverConfig::default(), None);
        chosen.push(sweep.best.map(|b| b.eta).unwrap_or(f64::NAN));
    }
    let inside = chosen.iter().filter(|e| (1.0..=10.0).contains(*e)).count();
    let secs = clock.elapsed().as_secs_f64();
    let pass = inside >= 15 && secs <= 600.0;
    report(8, "eta robustness", pass, &format!("eta in [1,10] on {inside}/20 seeds (>=15), choices {chosen:?}, {secs:.0}s"));
    assert!(pass);
}

#[test]
fn c9_likelihood_lower_bound() {
    let mut evaluations = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut halved_violations = 0;
    for (prob, pt) in suite_one() {
        let p = prob.p();
        let x = stacked(&pt);
        let mut points = vec![x.clone()];
        for h in [1e-6, 1e-4] {
            for k in 0..x.len() {
                for s in [h, -h] {
                    let mut v = x.clone();
                    v[k] += s;
                    points.push(v);
                }
            }
        }
        for v in points {
            let at = point_of(&v, p);
            let ev = PointEval::new(&prob, &at, Order::Value).unwrap();
            for (i, (r, f)) in ev.group_terms().enumerate() {
                let om = omega(&prob, i, &at.gamma).unwrap();
                let margin = f - loglik_lower_bound(r, &om);
                worst = worst.min(margin);
                if margin < -1e-10 {
                    violations += 1;
                }
                if f - loglik_lower_bound_halved(r, &om) < -1e-10 {
                    halved_violations += 1;
                }
                evaluations += 1;
            }
        }
    }
    let pass = violations == 0;
    report(
        9,
        "likelihood lower bound",
        pass,
        &format!(
            "{violations}/{evaluations} per-group evaluations violate the bound (worst margin {worst:.3e}); halved-constant variant violated {halved_violations} times"
        ),
    );
    assert!(pass);
}
