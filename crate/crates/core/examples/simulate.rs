//! Write a simulated corpus to disk and reload it.
//!
//! cargo run --example simulate -- <out_dir> [seeds]

use std::path::PathBuf;

use lme_select::bench::cmd_simulate;
use lme_select::simulator::{default_config, GroundTruth};
use lme_select::LmeProblem;

fn main() -> lme_select::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lme-select-corpus"));
    let seeds = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let files = cmd_simulate(&default_config(), 1, seeds, &dir)?;
    for pair in files.chunks(2) {
        let problem = LmeProblem::from_file(&pair[0])?;
        let truth = GroundTruth::from_file(&pair[1])?;
        let active = truth.beta_mask.iter().filter(|m| **m).count();
        println!(
            "{}: {} groups, {} observations, {active} active fixed effects, max var(Y) {:.2}",
            pair[0].display(),
            problem.m(),
            problem.n(),
            problem.max_outcome_variance()
        );
    }
    Ok(())
}
