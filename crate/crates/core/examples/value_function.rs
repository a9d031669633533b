//! The relaxed value function and its gradient `eta (w - x_hat)`, checked by central differences.
//!
//! cargo run --release --example value_function

use lme_select::inner::{eval_value_function, InnerOptions};
use lme_select::model::{eta_bar, RelaxConfig};
use lme_select::simulator::{generate, SimConfig};
use lme_select::ParamPoint;

fn main() -> lme_select::Result<()> {
    let sim = SimConfig { p: 3, q: 3, beta_true: vec![1.0, 0.0, 2.0], gamma_true: vec![1.0, 0.0, 0.5], ..SimConfig::with_seed(4) };
    let (problem, _) = generate(&sim)?;
    let outer = ParamPoint::from_slices(&[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5]);
    let opts = InnerOptions { tol: 1e-10, ..InnerOptions::default() };
    println!("eta_bar = {:.4e}", eta_bar(&problem));
    for (eta, mu) in [(1.0, 1e-2), (10.0, 1e-2), (10.0, 1e-4)] {
        let cfg = RelaxConfig::new(&problem, eta, mu);
        let ev = eval_value_function(&problem, &outer, &cfg, &opts, None)?;
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..6 {
            let mut w = outer.stacked();
            w[k] += h;
            let up = eval_value_function(&problem, &ParamPoint::from_stacked(&w, 3), &cfg, &opts, Some(&ev.state()))?.value;
            w[k] -= 2.0 * h;
            let dn = eval_value_function(&problem, &ParamPoint::from_stacked(&w, 3), &cfg, &opts, Some(&ev.state()))?.value;
            worst = worst.max(((up - dn) / (2.0 * h) - ev.gradient[k]).abs());
        }
        println!(
            "eta {eta:>5} mu {mu:.0e}: u = {:.6}, newton {:>2}, |grad| = {:.4e}, max fd error {worst:.2e}",
            ev.value,
            ev.newton_iters,
            ev.gradient.norm()
        );
        let fmt = |v: &nalgebra::DVector<f64>| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
        println!("    x_hat: beta [{}] gamma [{}]", fmt(&ev.minimizer.beta), fmt(&ev.minimizer.gamma));
    }
    Ok(())
}
