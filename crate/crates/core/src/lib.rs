//! Sparse feature selection for linear mixed-effects models.
//!
//! The negative marginal log-likelihood `L(beta, gamma)` is relaxed with a
//! log-barrier on `gamma` and a quadratic coupling to auxiliary sparse
//! variables. The resulting value function is smooth, so proximal gradient
//! and hybrid interior-point methods apply to nonconvex penalties.
//!
//! ```no_run
//! use lme_select::algorithms::{msr3_fast, SolverConfig};
//! use lme_select::regularizer::Regularizer;
//! use lme_select::simulator::{generate, SimConfig};
//!
//! let (problem, truth) = generate(&SimConfig::with_seed(1)).unwrap();
//! let report = msr3_fast(&problem, &Regularizer::l0(2.0), &SolverConfig::default()).unwrap();
//! println!("{:?} vs {:?}", report.beta_mask, truth.beta_mask);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod bench;
pub mod error;
pub mod inner;
pub mod model;
pub mod problem;
pub mod regularizer;
pub mod simulator;
pub mod verify;

pub use error::{Error, Result};
pub use model::ParamPoint;
pub use problem::{GroupBlock, LmeProblem};
pub use regularizer::{RegKind, Regularizer};
