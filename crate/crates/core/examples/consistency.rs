//! How the relaxed solution approaches the `mu = 0` solution on a one-dimensional instance.
//!
//! cargo run --release --example consistency

use lme_select::algorithms::{consistency_probe, ProbeOptions};
use lme_select::model::eta_bar;
use lme_select::verify::consistency_instance;
use lme_select::Regularizer;

fn main() -> lme_select::Result<()> {
    let problem = consistency_instance()?;
    let bar = eta_bar(&problem);
    let etas: Vec<f64> = [2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|k| k * bar).collect();
    let mus = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
    let table = consistency_probe(&problem, &Regularizer::l1(0.5), &etas, &mus, &ProbeOptions::default())?;
    println!("eta_bar = {bar:.4}");
    for r in &table.eta_rows {
        println!("eta {:>9.3}: gap {:.3e}, sparse {:?}", r.eta, r.gap, r.sparse);
    }
    if let Some(o) = &table.oracle {
        println!("mu = 0 oracle: inner {:?}, sparse {:?}", o.inner, o.sparse);
    }
    for r in &table.mu_rows {
        println!("mu {:.0e}: distance {:?}", r.mu, r.distance);
    }
    Ok(())
}
