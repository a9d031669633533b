//! Analytic gradient and Hessian of the marginal likelihood against finite differences.
//!
//! cargo run --release --example derivative_check -- [instances]

use lme_select::model::{grad, hess};
use lme_select::verify::{derivative_corpus, fd_gradient, fd_hessian};

fn main() -> lme_select::Result<()> {
    let count = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    for (i, (problem, point)) in derivative_corpus(count, 1)?.iter().enumerate() {
        let (gb, gg) = grad(problem, point)?;
        let g = gb.iter().chain(gg.iter()).copied().collect::<Vec<_>>();
        let g = nalgebra::DVector::from_vec(g);
        let h = hess(problem, point)?;
        let g_err = (&g - fd_gradient(problem, point, 1e-6)?).norm() / g.norm();
        let h_err = (&h - fd_hessian(problem, point, 1e-4)?).norm() / h.norm();
        println!("instance {i:>2} p={} q={} m={}: gradient {g_err:.2e}, hessian {h_err:.2e}", problem.p(), problem.q(), problem.m());
    }
    Ok(())
}
