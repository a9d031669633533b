//! Synthetic LME data with known sparse fixed and random effects.
//!
//! Randomness comes from ChaCha8 seeded with `seed`. Every group draws from its
//! own streams: stream `4 g + k` for group `g`, with `k = 0` for `X`, `1` for
//! `Z`, `2` for `u` and `3` for the noise. Entries are filled row-major with
//! standard normals (`rand_distr::StandardNormal`) and scaled afterwards.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{GroupBlock, LmeProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub p: usize,
    pub q: usize,
    pub beta_true: Vec<f64>,
    pub gamma_true: Vec<f64>,
    pub group_sizes: Vec<usize>,
    pub noise_std: f64,
    pub z_equals_x: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        default_config()
    }
}

/// Twenty covariates, the first ten active with effects `0.5, 1.0, ..., 5.0`,
/// over nine groups totalling 78 observations.
pub fn default_config() -> SimConfig {
    let truth: Vec<f64> = (1..=20).map(|j| if j <= 10 { j as f64 / 2.0 } else { 0.0 }).collect();
    SimConfig {
        p: 20,
        q: 20,
        beta_true: truth.clone(),
        gamma_true: truth,
        group_sizes: vec![10, 15, 4, 8, 3, 5, 18, 9, 6],
        noise_std: 0.3,
        z_equals_x: true,
        seed: 0,
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..default_config() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta_true.len() != self.p || self.gamma_true.len() != self.q {
            return Err(Error::Structure(format!(
                "beta_true/gamma_true have lengths {}/{}, expected {}/{}",
                self.beta_true.len(),
                self.gamma_true.len(),
                self.p,
                self.q
            )));
        }
        if self.gamma_true.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Domain("gamma_true must be nonnegative".into()));
        }
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(Error::Domain("group sizes must be nonempty and at least 1".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Domain(format!("noise_std must be nonnegative, got {}", self.noise_std)));
        }
        if self.z_equals_x && self.p != self.q {
            return Err(Error::Structure("z_equals_x requires p = q".into()));
        }
        Ok(())
    }
}

/// Which coordinates are truly active.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub beta_mask: Vec<bool>,
    pub gamma_mask: Vec<bool>,
}

impl GroundTruth {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            beta_mask: cfg.beta_true.iter().map(|b| *b != 0.0).collect(),
            gamma_mask: cfg.gamma_true.iter().map(|g| *g != 0.0).collect(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

const STREAM_X: u64 = 0;
const STREAM_Z: u64 = 1;
const STREAM_U: u64 = 2;
const STREAM_EPS: u64 = 3;

fn stream(seed: u64, group: usize, kind: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4 * group as u64 + kind);
    rng
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Draws `X_i ~ N(0, 1)`, `Z_i = X_i` (or independent), `u_i ~ N(0, Diag(gamma))`,
/// `eps_i ~ N(0, s^2 I)` and records `Lambda_i = s^2 I`. No validation of `Lambda`.
pub fn generate_groups(cfg: &SimConfig) -> Result<Vec<GroupBlock>> {
    cfg.validate()?;
    let beta = DVector::from_column_slice(&cfg.beta_true);
    let sd_u = DVector::from_iterator(cfg.q, cfg.gamma_true.iter().map(|g| g.sqrt()));
    let var = cfg.noise_std * cfg.noise_std;
    let mut groups = Vec::with_capacity(cfg.group_sizes.len());
    for (g, &n) in cfg.group_sizes.iter().enumerate() {
        let x = normal_matrix(&mut stream(cfg.seed, g, STREAM_X), n, cfg.p);
        let z = if cfg.z_equals_x { x.clone() } else { normal_matrix(&mut stream(cfg.seed, g, STREAM_Z), n, cfg.q) };
        let u = normal_vector(&mut stream(cfg.seed, g, STREAM_U), cfg.q).component_mul(&sd_u);
        let eps = normal_vector(&mut stream(cfg.seed, g, STREAM_EPS), n) * cfg.noise_std;
        let y = &x * &beta + &z * &u + eps;
        groups.push(GroupBlock { x, z, y, lambda: DMatrix::identity(n, n) * var });
    }
    Ok(groups)
}

/// [`generate_groups`] assembled into a validated problem; needs `noise_std > 0`.
pub fn generate(cfg: &SimConfig) -> Result<(LmeProblem, GroundTruth)> {
    Ok((LmeProblem::new(generate_groups(cfg)?)?, GroundTruth::from_config(cfg)))
}

/// Selection quality of one fit against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    /// Joint agreement over `beta` and `gamma`.
    pub accuracy: f64,
    pub beta_accuracy: f64,
    pub gamma_accuracy: f64,
    pub f1: f64,
}

fn agreement(est: &[bool], truth: &[bool]) -> usize {
    est.iter().zip(truth).filter(|(a, b)| a == b).count()
}

fn check_lengths(beta_mask: &[bool], gamma_mask: &[bool], truth: &GroundTruth) -> Result<()> {
    if beta_mask.len() != truth.beta_mask.len() || gamma_mask.len() != truth.gamma_mask.len() {
        return Err(Error::Structure(format!(
            "mask lengths {}/{} do not match truth {}/{}",
            beta_mask.len(),
            gamma_mask.len(),
            truth.beta_mask.len(),
            truth.gamma_mask.len()
        )));
    }
    Ok(())
}

/// Fraction of coordinates, over `beta` and `gamma` jointly, whose selection status matches the truth.
pub fn accuracy(beta_mask: &[bool], gamma_mask: &[bool], truth: &GroundTruth) -> Result<f64> {
    check_lengths(beta_mask, gamma_mask, truth)?;
    let total = beta_mask.len() + gamma_mask.len();
    if total == 0 {
        return Ok(1.0);
    }
    let hits = agreement(beta_mask, &truth.beta_mask) + agreement(gamma_mask, &truth.gamma_mask);
    Ok(hits as f64 / total as f64)
}

/// Joint and per-vector accuracy plus F1 on the union of coordinates.
pub fn selection_score(beta_mask: &[bool], gamma_mask: &[bool], truth: &GroundTruth) -> Result<SelectionScore> {
    let joint = accuracy(beta_mask, gamma_mask, truth)?;
    let frac = |e: &[bool], t: &[bool]| if t.is_empty() { 1.0 } else { agreement(e, t) as f64 / t.len() as f64 };
    let est = beta_mask.iter().chain(gamma_mask);
    let tru = truth.beta_mask.iter().chain(&truth.gamma_mask);
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (e, t) in est.zip(tru) {
        match (e, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let f1 = if tp + fp + fneg == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fneg) as f64 };
    Ok(SelectionScore {
        accuracy: joint,
        beta_accuracy: frac(beta_mask, &truth.beta_mask),
        gamma_accuracy: frac(gamma_mask, &truth.gamma_mask),
        f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_shape() {
        let c = default_config();
        assert_eq!(c.group_sizes.iter().sum::<usize>(), 78);
        assert_eq!(c.group_sizes.len(), 9);
        assert_eq!(c.beta_true[0], 0.5);
        assert_eq!(c.beta_true[9], 5.0);
        assert!(c.beta_true[10..].iter().all(|b| *b == 0.0));
        assert_eq!(c.beta_true, c.gamma_true);
        assert!(c.z_equals_x);
    }

    #[test]
    fn deterministic_per_seed() {
        let (a, _) = generate(&SimConfig::with_seed(7)).unwrap();
        let (b, _) = generate(&SimConfig::with_seed(7)).unwrap();
        let (c, _) = generate(&SimConfig::with_seed(8)).unwrap();
        assert_eq!(a.to_json_string().unwrap(), b.to_json_string().unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn z_equals_x_and_lambda() {
        let (prob, truth) = generate(&SimConfig::with_seed(1)).unwrap();
        assert_eq!(prob.n(), 78);
        for g in prob.groups() {
            assert_eq!(g.x, g.z);
            assert!((g.lambda.clone() - DMatrix::identity(g.n(), g.n()) * 0.09).abs().max() < 1e-15);
        }
        assert_eq!(truth.beta_mask.iter().filter(|m| **m).count(), 10);
    }

    #[test]
    fn no_randomness_gives_zero_outcome() {
        let cfg = SimConfig {
            beta_true: vec![0.0; 20],
            gamma_true: vec![0.0; 20],
            noise_std: 0.0,
            ..default_config()
        };
        let groups = generate_groups(&cfg).unwrap();
        assert!(groups.iter().all(|g| g.y.iter().all(|y| *y == 0.0)));
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let truth = GroundTruth::from_config(&default_config());
        assert_eq!(accuracy(&truth.beta_mask, &truth.gamma_mask, &truth).unwrap(), 1.0);
        assert_eq!(accuracy(&[false; 20], &[false; 20], &truth).unwrap(), 0.5);
        let inv_b: Vec<bool> = truth.beta_mask.iter().map(|m| !m).collect();
        let inv_g: Vec<bool> = truth.gamma_mask.iter().map(|m| !m).collect();
        assert_eq!(accuracy(&inv_b, &inv_g, &truth).unwrap(), 0.0);
        assert!(accuracy(&[true; 3], &[false; 20], &truth).is_err());
        let s = selection_score(&truth.beta_mask, &[false; 20], &truth).unwrap();
        assert_eq!(s.beta_accuracy, 1.0);
        assert_eq!(s.gamma_accuracy, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }
}
