//! Choose `eta` by BIC, alone at fixed `lambda` and jointly with `lambda`.
//!
//! cargo run --release --example select_eta -- [seed]

use lme_select::algorithms::{select_eta, Algorithm, SolverConfig};
use lme_select::bench::{bic_sweep, default_eta_grid, default_lambda_grid};
use lme_select::simulator::{generate, SimConfig};
use lme_select::{RegKind, Regularizer};

fn main() -> lme_select::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let (problem, _) = generate(&SimConfig::with_seed(seed))?;
    let sel = select_eta(&problem, &Regularizer::l1(1.0), &default_eta_grid(), &SolverConfig::default())?;
    for s in &sel.scores {
        println!("eta {:>5}: bic {:?}, {} nonzeros", s.eta, s.bic, s.nonzeros);
    }
    println!("lambda = 1: best eta {}", sel.best_eta);
    let sweep = bic_sweep(
        &problem,
        Algorithm::Msr3Fast,
        RegKind::L1,
        &default_eta_grid(),
        &default_lambda_grid(),
        &SolverConfig::default(),
        None,
    );
    if let Some(best) = sweep.best {
        println!("joint: eta {}, lambda {:.4}, bic {:.3} over {} fits", best.eta, best.lambda, best.bic, sweep.fits);
    }
    Ok(())
}
