//! Accuracy and timing of PGD, MSR3 and MSR3-fast across the four penalties.
//!
//! cargo run --release --example benchmark -- [seeds] [out_dir]

use std::path::PathBuf;

use lme_select::bench::{cmd_bench, resolve_workers, BenchSpec};

fn main() -> lme_select::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let spec = BenchSpec { seeds, output_dir: args.next().map(PathBuf::from), ..BenchSpec::default() };
    let workers = resolve_workers(Some(4))?;
    let result = cmd_bench(&spec, workers)?;
    println!("{:<8} {:<10} {:>9} {:>7} {:>9}", "penalty", "algorithm", "accuracy", "std", "seconds");
    for c in &result.cells {
        println!(
            "{:<8} {:<10} {:>9.3} {:>7.3} {:>9.3}",
            c.regularizer.name(),
            c.algorithm.name(),
            c.mean_accuracy,
            c.std_accuracy,
            c.mean_seconds
        );
    }
    println!("{} trials in {:.1}s, failure rate {:.2}", result.trials.len(), result.seconds, result.failure_rate);
    Ok(())
}
