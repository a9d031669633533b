//! Outer solvers for `min L(beta, gamma) + R(beta, gamma)` over `gamma >= 0`.

mod config;
mod consistency;
mod msr3;
mod pgd;
mod report;
mod select;

pub use config::{MuRule, SolverConfig, StepRule};
pub use consistency::{consistency_probe, ConsistencyTable, EtaRow, MuRow, ProbeOptions};
pub use msr3::{msr3, msr3_fast};
pub use pgd::{pgd_naive, pgd_value, pgd_value_from};
pub use report::{LineSearchRecord, SolveReport, Termination, TraceRow};
pub use select::{bic, select_eta, EtaScore, EtaSelection};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::problem::LmeProblem;
use crate::regularizer::Regularizer;

/// Outer algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pgd,
    PgdValue,
    Msr3,
    Msr3Fast,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pgd => "pgd",
            Algorithm::PgdValue => "pgd_value",
            Algorithm::Msr3 => "msr3",
            Algorithm::Msr3Fast => "msr3_fast",
        }
    }

    pub fn run(self, problem: &LmeProblem, reg: &Regularizer, cfg: &SolverConfig) -> Result<SolveReport> {
        match self {
            Algorithm::Pgd => pgd_naive(problem, reg, cfg),
            Algorithm::PgdValue => pgd_value(problem, reg, cfg),
            Algorithm::Msr3 => msr3(problem, reg, cfg),
            Algorithm::Msr3Fast => msr3_fast(problem, reg, cfg),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pgd" | "pgd_naive" => Ok(Algorithm::Pgd),
            "pgd_value" => Ok(Algorithm::PgdValue),
            "msr3" => Ok(Algorithm::Msr3),
            "msr3_fast" => Ok(Algorithm::Msr3Fast),
            other => Err(Error::Invalid(format!("unknown algorithm '{other}'"))),
        }
    }
}
