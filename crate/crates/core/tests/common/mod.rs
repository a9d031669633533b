#![allow(dead_code)]

use lme_select::{GroupBlock, LmeProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `L` from explicit inverses and determinants.
#[allow(clippy::needless_range_loop)]
pub fn brute_loglik(problem: &LmeProblem, beta: &[f64], gamma: &[f64]) -> f64 {
    let mut total = 0.0;
    for g in problem.groups() {
        let n = g.n();
        let mut omega = g.lambda.clone();
        for i in 0..n {
            for j in 0..n {
                for k in 0..gamma.len() {
                    omega[(i, j)] += g.z[(i, k)] * gamma[k] * g.z[(j, k)];
                }
            }
        }
        let r = &g.y - &g.x * DVector::from_column_slice(beta);
        let inv = omega.clone().try_inverse().expect("invertible");
        total += 0.5 * ((r.transpose() * inv * &r)[0] + omega.determinant().ln());
    }
    total
}

pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / n(a).max(n(b)).max(1e-12)
}

/// Minimizes `f` over a box by repeated 41 x 41 grids, shrinking around the incumbent.
/// The lower `y` bound is kept throughout.
pub fn grid_min_2d(f: impl Fn(f64, f64) -> f64, bx: (f64, f64), by: (f64, f64), final_h: f64) -> (f64, f64, f64) {
    let (mut bx, mut by) = (bx, by);
    let y_floor = by.0;
    let mut best = (f64::INFINITY, bx.0, by.0);
    loop {
        let hx = (bx.1 - bx.0) / 40.0;
        let hy = (by.1 - by.0) / 40.0;
        for i in 0..=40 {
            for j in 0..=40 {
                let (x, y) = (bx.0 + i as f64 * hx, by.0 + j as f64 * hy);
                let v = f(x, y);
                if v < best.0 {
                    best = (v, x, y);
                }
            }
        }
        if hx.max(hy) <= final_h {
            return best;
        }
        bx = (best.1 - 3.0 * hx, best.1 + 3.0 * hx);
        by = ((best.2 - 3.0 * hy).max(y_floor), best.2 + 3.0 * hy);
    }
}

pub fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Small `p = q = 1` instance with a clearly nonzero fixed and random effect.
pub fn scalar_instance(seed: u64) -> LmeProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = (0..6)
        .map(|_| {
            let n = 4;
            let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
            let u = 1.2 * rng.sample::<f64, _>(StandardNormal);
            let y = DVector::from_fn(n, |i, _| 1.0 * x[(i, 0)] + u * z[(i, 0)] + 0.5 * rng.sample::<f64, _>(StandardNormal));
            GroupBlock { x, z, y, lambda: DMatrix::identity(n, n) * 0.25 }
        })
        .collect();
    LmeProblem::new(groups).unwrap()
}

/// `(x*, w*)` for `mu = 0`: minimize `L(x) + env(x)` with the Huber envelope of
/// `lambda |.|` at scale `1/eta`, then `w* = soft(x*, lambda/eta)`.
pub fn relaxed_l1_oracle(prob: &LmeProblem, lambda: f64, eta: f64) -> ((f64, f64), (f64, f64)) {
    let t = lambda / eta;
    let env = |x: f64| if x.abs() <= t { 0.5 * eta * x * x } else { lambda * x.abs() - 0.5 * lambda * t };
    let f = |b: f64, g: f64| brute_loglik(prob, &[b], &[g]) + env(b) + env(g);
    let (_, b, g) = grid_min_2d(f, (-10.0, 10.0), (0.0, 10.0), 1e-6);
    ((b, g), (soft(b, t), soft(g, t)))
}
