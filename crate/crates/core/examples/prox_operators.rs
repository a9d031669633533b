//! Scalar proximal maps of the four penalties, with and without a nonnegativity constraint.
//!
//! cargo run --example prox_operators

use lme_select::regularizer::ProxRequest;
use lme_select::{RegKind, Regularizer};
use nalgebra::DVector;

fn main() -> lme_select::Result<()> {
    let xs = [-4.0, -2.0, -1.2, -0.5, 0.0, 0.5, 1.2, 2.0, 4.0];
    let point = DVector::from_column_slice(&xs);
    let (lambda, step) = (1.0, 1.0);
    print!("{:<14}", "x");
    xs.iter().for_each(|x| print!("{x:>7.2}"));
    println!();
    for kind in RegKind::ALL {
        let reg = match kind {
            RegKind::Alasso => Regularizer::alasso(lambda, vec![0.5; xs.len()])?,
            _ => Regularizer::new(kind, lambda)?,
        };
        for (label, tail) in [("", 0), (" w>=0", xs.len())] {
            let w = reg.prox(&ProxRequest::new(point.clone(), step, tail))?;
            print!("{:<14}", format!("{}{label}", kind.name()));
            w.iter().for_each(|v| print!("{v:>7.2}"));
            println!();
        }
    }
    Ok(())
}
