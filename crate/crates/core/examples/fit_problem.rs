//! Fit one simulated problem with every algorithm and compare the selected support.
//!
//! cargo run --release --example fit_problem -- [seed] [lambda]

use lme_select::algorithms::{Algorithm, SolverConfig};
use lme_select::simulator::{generate, selection_score, SimConfig};
use lme_select::Regularizer;

fn main() -> lme_select::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let lambda = args.next().and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let (problem, truth) = generate(&SimConfig::with_seed(seed))?;
    println!("seed {seed}: m = {}, n = {}, p = q = {}", problem.m(), problem.n(), problem.p());
    let reg = Regularizer::l0(lambda);
    for algo in [Algorithm::Pgd, Algorithm::Msr3, Algorithm::Msr3Fast] {
        let report = algo.run(&problem, &reg, &SolverConfig::default())?;
        let score = selection_score(&report.beta_mask, &report.gamma_mask, &truth)?;
        println!(
            "{:<10} {:?} after {:>5} iterations, {:.3}s, accuracy {:.3}",
            algo.name(),
            report.termination,
            report.iterations,
            report.seconds,
            score.accuracy
        );
    }
    Ok(())
}
