//! Grouped LME data and its JSON file format.
//!
//! A problem file looks like
//!
//! ```json
//! {"groups": [{"X": [[1.0, 0.5]], "Z": [[1.0]], "Y": [0.3], "Lambda": 0.09}]}
//! ```
//!
//! `Lambda` may be a scalar `s` (meaning `s * I`), a vector (the diagonal) or a
//! full matrix. It is normalized to a dense symmetric positive-definite matrix
//! at load time.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One group of observations: `Y = X beta + Z u + eps`, `eps ~ N(0, Lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBlock {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub lambda: DMatrix<f64>,
}

impl GroupBlock {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// An immutable LME instance. Spectral quantities used by the strong-convexity
/// threshold are computed once when the problem is built.
#[derive(Debug, Clone)]
pub struct LmeProblem {
    groups: Vec<GroupBlock>,
    p: usize,
    q: usize,
    n: usize,
    lambda_min_eig: Vec<f64>,
    z_sigma_max: Vec<f64>,
    x_sigma_max: f64,
}

impl PartialEq for LmeProblem {
    fn eq(&self, other: &Self) -> bool {
        self.groups == other.groups
    }
}

impl LmeProblem {
    /// Validates dimensions and positive-definiteness of every `Lambda_i`.
    pub fn new(groups: Vec<GroupBlock>) -> Result<Self> {
        let first = groups
            .first()
            .ok_or_else(|| Error::Structure("problem must contain at least one group".into()))?;
        let p = first.x.ncols();
        let q = first.z.ncols();
        let mut n = 0;
        let mut lambda_min_eig = Vec::with_capacity(groups.len());
        let mut z_sigma_max = Vec::with_capacity(groups.len());
        for (i, g) in groups.iter().enumerate() {
            let ni = g.y.len();
            if ni == 0 {
                return Err(Error::Structure(format!("group {i}: no observations")));
            }
            if g.x.nrows() != ni || g.z.nrows() != ni {
                return Err(Error::Structure(format!(
                    "group {i}: X has {} rows, Z has {} rows, Y has {ni} entries",
                    g.x.nrows(),
                    g.z.nrows()
                )));
            }
            if g.x.ncols() != p || g.z.ncols() != q {
                return Err(Error::Structure(format!(
                    "group {i}: expected X with {p} columns and Z with {q} columns, got {} and {}",
                    g.x.ncols(),
                    g.z.ncols()
                )));
            }
            if g.lambda.nrows() != ni || g.lambda.ncols() != ni {
                return Err(Error::Structure(format!(
                    "group {i}: Lambda must be {ni}x{ni}, got {}x{}",
                    g.lambda.nrows(),
                    g.lambda.ncols()
                )));
            }
            let all_finite = g.x.iter().chain(g.z.iter()).chain(g.y.iter()).chain(g.lambda.iter());
            if all_finite.clone().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("group {i}: non-finite entry")));
            }
            let asym = (&g.lambda - g.lambda.transpose()).amax();
            if asym > 1e-10 * (1.0 + g.lambda.amax()) {
                return Err(Error::Invalid(format!("group {i}: Lambda is not symmetric")));
            }
            let eig = SymmetricEigen::new(g.lambda.clone()).eigenvalues.min();
            if eig <= 0.0 {
                return Err(Error::Invalid(format!(
                    "group {i}: Lambda is not positive definite (smallest eigenvalue {eig:e})"
                )));
            }
            lambda_min_eig.push(eig);
            z_sigma_max.push(sigma_max(&g.z));
            n += ni;
        }
        let x_stacked = stack_rows(groups.iter().map(|g| &g.x), p);
        let x_sigma_max = sigma_max(&x_stacked);
        Ok(Self { groups, p, q, n, lambda_min_eig, z_sigma_max, x_sigma_max })
    }

    pub fn groups(&self) -> &[GroupBlock] {
        &self.groups
    }

    /// Number of groups.
    pub fn m(&self) -> usize {
        self.groups.len()
    }

    /// Fixed-effect dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Random-effect dimension.
    pub fn q(&self) -> usize {
        self.q
    }

    /// Total number of observations.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Smallest eigenvalue of each `Lambda_i`.
    pub fn lambda_min_eigs(&self) -> &[f64] {
        &self.lambda_min_eig
    }

    /// Largest singular value of each `Z_i`.
    pub fn z_sigma_max(&self) -> &[f64] {
        &self.z_sigma_max
    }

    /// Largest singular value of the stacked fixed-effect design.
    pub fn x_sigma_max(&self) -> f64 {
        self.x_sigma_max
    }

    /// Largest per-group sample variance of the outcomes (zero for singleton groups).
    pub fn max_outcome_variance(&self) -> f64 {
        self.groups
            .iter()
            .filter(|g| g.n() > 1)
            .map(|g| g.y.variance() * g.n() as f64 / (g.n() - 1) as f64)
            .fold(0.0, f64::max)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(text)?;
        file.into_problem()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(&ProblemFile::from(self))?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

fn stack_rows<'a>(mats: impl Iterator<Item = &'a DMatrix<f64>>, cols: usize) -> DMatrix<f64> {
    let mats: Vec<_> = mats.collect();
    let rows = mats.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut offset = 0;
    for m in mats {
        out.rows_mut(offset, m.nrows()).copy_from(m);
        offset += m.nrows();
    }
    out
}

pub(crate) fn sigma_max(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    // Largest eigenvalue of the smaller Gram matrix.
    let gram = if a.nrows() < a.ncols() { a * a.transpose() } else { a.transpose() * a };
    SymmetricEigen::new(gram).eigenvalues.max().max(0.0).sqrt()
}

/// Serialized form of a problem.
#[derive(Debug, Serialize, Deserialize)]
pub struct ProblemFile {
    pub groups: Vec<GroupFile>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroupFile {
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    #[serde(rename = "Z")]
    pub z: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    pub y: Vec<f64>,
    #[serde(rename = "Lambda")]
    pub lambda: LambdaSpec,
}

/// Noise covariance as written in a problem file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl LambdaSpec {
    fn to_matrix(&self, n: usize, group: usize) -> Result<DMatrix<f64>> {
        match self {
            LambdaSpec::Scalar(s) => Ok(DMatrix::identity(n, n) * *s),
            LambdaSpec::Diagonal(d) => {
                if d.len() != n {
                    return Err(Error::Structure(format!(
                        "group {group}: Lambda diagonal has {} entries, expected {n}",
                        d.len()
                    )));
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
            }
            LambdaSpec::Full(rows) => rows_to_matrix(rows, n, group, "Lambda"),
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize, group: usize, name: &str) -> Result<DMatrix<f64>> {
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != cols) {
        return Err(Error::Structure(format!(
            "group {group}: {name} row {r} has {} entries, expected {cols}",
            row.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn matrix_to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<LmeProblem> {
        let mut groups = Vec::with_capacity(self.groups.len());
        for (i, g) in self.groups.into_iter().enumerate() {
            let n = g.y.len();
            let p = g.x.first().map_or(0, Vec::len);
            let q = g.z.first().map_or(0, Vec::len);
            if g.x.len() != n || g.z.len() != n {
                return Err(Error::Structure(format!(
                    "group {i}: X has {} rows, Z has {} rows, Y has {n} entries",
                    g.x.len(),
                    g.z.len()
                )));
            }
            groups.push(GroupBlock {
                x: rows_to_matrix(&g.x, p, i, "X")?,
                z: rows_to_matrix(&g.z, q, i, "Z")?,
                y: DVector::from_vec(g.y),
                lambda: g.lambda.to_matrix(n, i)?,
            });
        }
        LmeProblem::new(groups)
    }
}

impl From<&LmeProblem> for ProblemFile {
    fn from(problem: &LmeProblem) -> Self {
        let groups = problem
            .groups()
            .iter()
            .map(|g| GroupFile {
                x: matrix_to_rows(&g.x),
                z: matrix_to_rows(&g.z),
                y: g.y.iter().copied().collect(),
                lambda: LambdaSpec::Full(matrix_to_rows(&g.lambda)),
            })
            .collect();
        ProblemFile { groups }
    }
}
