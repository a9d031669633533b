//! Command implementations behind the `lme-select` binary: simulate corpora,
//! fit one problem, choose `eta`, and run the accuracy/timing benchmark.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{bic, select_eta, Algorithm, EtaSelection, SolveReport, SolverConfig, Termination};
use crate::error::{Error, Result};
use crate::problem::LmeProblem;
use crate::regularizer::{RegKind, Regularizer, RegularizerSpec};
use crate::simulator::{generate, selection_score, GroundTruth, SimConfig};

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "LME_SELECT_WORKERS";

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const CONVERGENCE: i32 = 3;
    pub const BENCH_FAILURES: i32 = 4;
}

/// Maps an error to the exit code reported by the binary.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Convergence { .. } | Error::InnerConvergence { .. } | Error::Numerical(_) => exit::CONVERGENCE,
        _ => exit::VALIDATION,
    }
}

/// Worker count: the environment variable wins, then the flag, then the number of CPUs.
pub fn resolve_workers(flag: Option<usize>) -> Result<usize> {
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| Error::Invalid(format!("{WORKERS_ENV} must be a positive integer, got {raw:?}")))?;
        if n == 0 {
            return Err(Error::Invalid(format!("{WORKERS_ENV} must be positive")));
        }
        return Ok(n);
    }
    match flag {
        Some(0) => Err(Error::Invalid("--workers must be positive".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count).map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64)).collect()
        }
    }
}

/// Twenty log-spaced values in `[1e-2, 1e2]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-2, 1e2, 20)
}

pub fn default_eta_grid() -> Vec<f64> {
    vec![0.1, 1.0, 3.0, 10.0, 40.0]
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

// ---------------------------------------------------------------- simulate

/// Writes `problem_<seed>.json` and `truth_<seed>.json` for `count` consecutive seeds.
pub fn cmd_simulate(config: &SimConfig, first_seed: u64, count: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(2 * count);
    for seed in first_seed..first_seed + count as u64 {
        let (problem, truth) = generate(&SimConfig { seed, ..config.clone() })?;
        let p = out_dir.join(format!("problem_{seed}.json"));
        let t = out_dir.join(format!("truth_{seed}.json"));
        problem.write_json(&p)?;
        truth.write_json(&t)?;
        written.push(p);
        written.push(t);
    }
    Ok(written)
}

// ---------------------------------------------------------------- fit

/// Contents of a `fit` / `select-eta` config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub algorithm: Algorithm,
    pub regularizer: RegularizerSpec,
    pub solver: SolverConfig,
    pub eta_grid: Vec<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Msr3Fast,
            regularizer: RegularizerSpec::from(&Regularizer::l1(1.0)),
            solver: SolverConfig::default(),
            eta_grid: default_eta_grid(),
        }
    }
}

impl FitConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Fits one problem. The report is returned for every finished run; the caller
/// decides the exit status from its termination reason.
pub fn cmd_fit(problem_path: &Path, cfg: &FitConfig) -> Result<SolveReport> {
    let problem = LmeProblem::from_file(problem_path)?;
    let reg = Regularizer::try_from(cfg.regularizer.clone())?;
    cfg.algorithm.run(&problem, &reg, &cfg.solver)
}

pub fn cmd_select_eta(problem_path: &Path, cfg: &FitConfig) -> Result<EtaSelection> {
    let problem = LmeProblem::from_file(problem_path)?;
    let reg = Regularizer::try_from(cfg.regularizer.clone())?;
    select_eta(&problem, &reg, &cfg.eta_grid, &cfg.solver)
}

// ---------------------------------------------------------------- bench

/// `eta` for a benchmark: a number, or `"auto"` to choose it by BIC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaChoice {
    Value(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSpec {
    pub algorithms: Vec<Algorithm>,
    pub regularizers: Vec<RegKind>,
    pub seeds: usize,
    pub first_seed: u64,
    pub lambda_grid: Vec<f64>,
    pub eta: EtaChoice,
    /// Candidates when `eta = "auto"`.
    pub eta_grid: Vec<f64>,
    pub sim: SimConfig,
    pub solver: SolverConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            algorithms: vec![Algorithm::Pgd, Algorithm::Msr3, Algorithm::Msr3Fast],
            regularizers: RegKind::ALL.to_vec(),
            seeds: 20,
            first_seed: 1,
            lambda_grid: default_lambda_grid(),
            eta: EtaChoice::Value(1.0),
            eta_grid: default_eta_grid(),
            sim: SimConfig::default(),
            solver: SolverConfig::default(),
            output_dir: None,
        }
    }
}

impl BenchSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.regularizers.is_empty() {
            return Err(Error::Invalid("bench needs at least one algorithm and one regularizer".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Invalid("bench needs seeds >= 1".into()));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Invalid("lambda grid must be nonempty and nonnegative".into()));
        }
        match self.eta {
            EtaChoice::Value(e) if !(e > 0.0) => return Err(Error::Domain(format!("eta must be positive, got {e}"))),
            EtaChoice::Auto(_) if self.eta_grid.is_empty() || self.eta_grid.iter().any(|e| !(*e > 0.0)) => {
                return Err(Error::Invalid("eta grid must be nonempty and positive".into()))
            }
            _ => {}
        }
        self.sim.validate()?;
        self.solver.validate()
    }

    fn etas(&self) -> Vec<f64> {
        match self.eta {
            EtaChoice::Value(e) => vec![e],
            EtaChoice::Auto(_) => {
                let mut g = self.eta_grid.clone();
                g.sort_by(f64::total_cmp);
                g
            }
        }
    }
}

/// One (seed, regularizer, algorithm) trial with its BIC-selected hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub regularizer: RegKind,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
    pub bic: Option<f64>,
    pub accuracy: Option<f64>,
    pub beta_accuracy: Option<f64>,
    pub gamma_accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub termination: Option<Termination>,
    /// Wall time of the whole hyperparameter sweep.
    pub seconds: f64,
    pub fits: usize,
    pub failed_fits: usize,
    pub error: Option<String>,
}

impl TrialRow {
    pub fn failed(&self) -> bool {
        self.accuracy.is_none()
    }
}

/// Aggregate over seeds for one (algorithm, regularizer) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub algorithm: Algorithm,
    pub regularizer: RegKind,
    pub trials: usize,
    pub failures: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub spec: BenchSpec,
    pub workers: usize,
    pub cells: Vec<CellSummary>,
    pub trials: Vec<TrialRow>,
    pub failure_rate: f64,
    pub seconds: f64,
}

impl BenchResult {
    pub fn cell(&self, algorithm: Algorithm, regularizer: RegKind) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.algorithm == algorithm && c.regularizer == regularizer)
    }

    /// More than 20% of trials failed.
    pub fn too_many_failures(&self) -> bool {
        self.failure_rate > 0.2
    }

    /// One row per regularizer; columns `<algorithm>_accuracy`, `<algorithm>_accuracy_std`, `<algorithm>_seconds`.
    pub fn write_table_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["regularizer".to_string()];
        for a in &self.spec.algorithms {
            header.extend([format!("{a}_accuracy"), format!("{a}_accuracy_std"), format!("{a}_seconds")]);
        }
        w.write_record(&header)?;
        for r in &self.spec.regularizers {
            let mut row = vec![r.name().to_string()];
            for a in &self.spec.algorithms {
                let c = self.cell(*a, *r).expect("every cell is aggregated");
                row.extend([c.mean_accuracy.to_string(), c.std_accuracy.to_string(), c.mean_seconds.to_string()]);
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_trials_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "seed", "algorithm", "regularizer", "lambda", "eta", "bic", "accuracy", "beta_accuracy", "gamma_accuracy", "f1",
            "termination", "seconds", "fits", "failed_fits",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for t in &self.trials {
            w.write_record([
                t.seed.to_string(),
                t.algorithm.to_string(),
                t.regularizer.to_string(),
                opt(t.lambda),
                opt(t.eta),
                opt(t.bic),
                opt(t.accuracy),
                opt(t.beta_accuracy),
                opt(t.gamma_accuracy),
                opt(t.f1),
                t.termination.map(|x| x.name().to_string()).unwrap_or_default(),
                t.seconds.to_string(),
                t.fits.to_string(),
                t.failed_fits.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `bench.json`, `table.csv` and `trials.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("bench.json"), self)?;
        self.write_table_csv(std::fs::File::create(dir.join("table.csv"))?)?;
        self.write_trials_csv(std::fs::File::create(dir.join("trials.csv"))?)
    }
}

/// Adaptive-lasso weights from an unpenalized `msr3_fast` fit.
pub fn alasso_reference(problem: &LmeProblem, solver: &SolverConfig) -> Result<DVector<f64>> {
    let fit = crate::algorithms::msr3_fast(problem, &Regularizer::l1(0.0), solver)?;
    Ok(fit.sparse_point().stacked())
}

fn regularizer_for(kind: RegKind, lambda: f64, reference: Option<&DVector<f64>>) -> Result<Regularizer> {
    match kind {
        RegKind::Alasso => Regularizer::alasso_from_reference(
            lambda,
            reference.ok_or_else(|| Error::Invalid("adaptive lasso needs a reference fit".into()))?,
        ),
        _ => Regularizer::new(kind, lambda),
    }
}

/// A fit chosen from a hyperparameter sweep.
#[derive(Debug, Clone)]
pub struct SweepChoice {
    pub lambda: f64,
    pub eta: f64,
    pub bic: f64,
    pub report: SolveReport,
}

/// Outcome of a BIC sweep over `etas x lambdas`.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub best: Option<SweepChoice>,
    pub fits: usize,
    pub failed_fits: usize,
    pub last_error: Option<String>,
}

/// Runs `algorithm` over every `(eta, lambda)` pair (grids in increasing
/// order) and keeps the smallest BIC; ties keep the earlier pair.
pub fn bic_sweep(
    problem: &LmeProblem,
    algorithm: Algorithm,
    kind: RegKind,
    etas: &[f64],
    lambdas: &[f64],
    solver: &SolverConfig,
    reference: Option<&DVector<f64>>,
) -> Sweep {
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let etas: &[f64] = if algorithm == Algorithm::Pgd { &etas[..1] } else { etas };
    let mut sweep = Sweep { best: None, fits: 0, failed_fits: 0, last_error: None };
    for &eta in etas {
        let cfg = SolverConfig { eta, ..solver.clone() };
        for &lambda in &lambdas {
            sweep.fits += 1;
            let fit = regularizer_for(kind, lambda, reference)
                .and_then(|reg| algorithm.run(problem, &reg, &cfg))
                .and_then(|r| Ok((bic(problem, &r.sparse_point())?, r)));
            match fit {
                Ok((b, report)) if b.is_finite() => {
                    if sweep.best.as_ref().is_none_or(|c| b < c.bic) {
                        sweep.best = Some(SweepChoice { lambda, eta, bic: b, report });
                    }
                }
                Ok(_) => {
                    sweep.failed_fits += 1;
                    sweep.last_error = Some("non-finite BIC".into());
                }
                Err(e) => {
                    sweep.failed_fits += 1;
                    sweep.last_error = Some(e.to_string());
                }
            }
        }
    }
    sweep
}

fn run_trial(spec: &BenchSpec, seed: u64, kind: RegKind, algorithm: Algorithm, problem: &LmeProblem, truth: &GroundTruth, reference: Option<&DVector<f64>>) -> TrialRow {
    let clock = Instant::now();
    let sweep = bic_sweep(problem, algorithm, kind, &spec.etas(), &spec.lambda_grid, &spec.solver, reference);
    let seconds = clock.elapsed().as_secs_f64();
    let mut row = TrialRow {
        seed,
        algorithm,
        regularizer: kind,
        lambda: None,
        eta: None,
        bic: None,
        accuracy: None,
        beta_accuracy: None,
        gamma_accuracy: None,
        f1: None,
        termination: None,
        seconds,
        fits: sweep.fits,
        failed_fits: sweep.failed_fits,
        error: None,
    };
    match sweep.best {
        Some(c) => match selection_score(&c.report.beta_mask, &c.report.gamma_mask, truth) {
            Ok(s) => {
                row.lambda = Some(c.lambda);
                row.eta = (algorithm != Algorithm::Pgd).then_some(c.eta);
                row.bic = Some(c.bic);
                row.accuracy = Some(s.accuracy);
                row.beta_accuracy = Some(s.beta_accuracy);
                row.gamma_accuracy = Some(s.gamma_accuracy);
                row.f1 = Some(s.f1);
                row.termination = Some(c.report.termination);
            }
            Err(e) => row.error = Some(e.to_string()),
        },
        None => row.error = Some(sweep.last_error.unwrap_or_else(|| "no fit succeeded".into())),
    }
    row
}

fn summarize(algorithm: Algorithm, regularizer: RegKind, rows: &[&TrialRow]) -> CellSummary {
    let accs: Vec<f64> = rows.iter().filter_map(|r| r.accuracy).collect();
    let f1s: Vec<f64> = rows.iter().filter_map(|r| r.f1).collect();
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let m = mean(&accs);
    let std = if accs.len() > 1 {
        (accs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let secs: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    CellSummary {
        algorithm,
        regularizer,
        trials: rows.len(),
        failures: rows.len() - accs.len(),
        mean_accuracy: m,
        std_accuracy: std,
        mean_f1: mean(&f1s),
        mean_seconds: mean(&secs),
    }
}

/// Every seed x regularizer x algorithm: simulate, sweep the hyperparameters by
/// BIC, score the chosen fit. Trials run on `workers` threads; trial failures
/// are recorded and the run continues.
type Corpus = (LmeProblem, GroundTruth, Option<DVector<f64>>);

pub fn cmd_bench(spec: &BenchSpec, workers: usize) -> Result<BenchResult> {
    spec.validate()?;
    let clock = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let seeds: Vec<u64> = (spec.first_seed..spec.first_seed + spec.seeds as u64).collect();
    let needs_reference = spec.regularizers.contains(&RegKind::Alasso);
    let trials: Vec<TrialRow> = pool.install(|| {
        let corpora: Vec<Result<Corpus>> = seeds
            .par_iter()
            .map(|&seed| {
                let (problem, truth) = generate(&SimConfig { seed, ..spec.sim.clone() })?;
                let reference = if needs_reference {
                    let cfg = SolverConfig { eta: spec.etas()[0], ..spec.solver.clone() };
                    Some(alasso_reference(&problem, &cfg)?)
                } else {
                    None
                };
                Ok((problem, truth, reference))
            })
            .collect();
        let jobs: Vec<(usize, RegKind, Algorithm)> = (0..seeds.len())
            .flat_map(|s| {
                spec.regularizers.iter().flat_map(move |r| spec.algorithms.iter().map(move |a| (s, *r, *a)))
            })
            .collect();
        jobs.par_iter()
            .map(|&(s, kind, algorithm)| match &corpora[s] {
                Ok((problem, truth, reference)) => {
                    run_trial(spec, seeds[s], kind, algorithm, problem, truth, reference.as_ref())
                }
                Err(e) => TrialRow {
                    seed: seeds[s],
                    algorithm,
                    regularizer: kind,
                    lambda: None,
                    eta: None,
                    bic: None,
                    accuracy: None,
                    beta_accuracy: None,
                    gamma_accuracy: None,
                    f1: None,
                    termination: None,
                    seconds: 0.0,
                    fits: 0,
                    failed_fits: 0,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    });
    let mut cells = Vec::new();
    for &r in &spec.regularizers {
        for &a in &spec.algorithms {
            let rows: Vec<&TrialRow> = trials.iter().filter(|t| t.algorithm == a && t.regularizer == r).collect();
            cells.push(summarize(a, r, &rows));
        }
    }
    let failures = trials.iter().filter(|t| t.failed()).count();
    let result = BenchResult {
        spec: spec.clone(),
        workers,
        cells,
        failure_rate: failures as f64 / trials.len().max(1) as f64,
        trials,
        seconds: clock.elapsed().as_secs_f64(),
    };
    if let Some(dir) = &spec.output_dir {
        result.write_all(dir)?;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints() {
        let g = default_lambda_grid();
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1e-2).abs() < 1e-15);
        assert!((g[19] - 1e2).abs() < 1e-10);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(log_grid(3.0, 5.0, 1), vec![3.0]);
    }

    #[test]
    fn bench_spec_parses_auto_eta() {
        let s: BenchSpec = serde_json::from_str(r#"{"eta": "auto", "seeds": 2, "algorithms": ["msr3_fast"]}"#).unwrap();
        assert_eq!(s.eta, EtaChoice::Auto(AutoTag::Auto));
        assert_eq!(s.seeds, 2);
        assert_eq!(s.etas(), default_eta_grid());
        let s: BenchSpec = serde_json::from_str(r#"{"eta": 3.0}"#).unwrap();
        assert_eq!(s.etas(), vec![3.0]);
        assert!(BenchSpec { seeds: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn csv_termination_names_match_json() {
        for t in [Termination::Converged, Termination::MaxIter, Termination::GammaMaxExceeded] {
            assert_eq!(serde_json::to_value(t).unwrap(), t.name());
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Structure("x".into())), exit::VALIDATION);
        assert_eq!(exit_code(&Error::Convergence { iterations: 1, message: String::new() }), exit::CONVERGENCE);
    }
}
