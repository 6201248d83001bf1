//! Experiment orchestration: seeded sweeps over problem size and sparsity,
//! the balancedness and initialization studies, and the MNIST run.

pub mod config;
pub mod mnist;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use crate::baselines::{mfocuss_run, msp_run, somp_recover, BaselineConfig};
use crate::error::{Error, Result};
use crate::matrix::{lstsq_min_norm, matmul, DenseMatrix};
use crate::problem::{generate_sensing_matrix, synthesize_measurements, Dims, ProblemInstance, RowMagnitudes, Snr};
use crate::solver::{recover, Recovery, RecoveryConfig};

/// `||X - X̂||_F^2 / ||X||_F^2`.
pub fn relative_error(x_true: &DenseMatrix, x_hat: &DenseMatrix) -> Result<f64> {
    let denom = x_true.frobenius_norm_sq();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(x_true.sub(x_hat)?.frobenius_norm_sq() / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Balancedness,
    InitSweep,
    ErrorVsM,
    ErrorVsK,
    Single,
    Mnist,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Balancedness => "balancedness",
            ExperimentKind::InitSweep => "init_sweep",
            ExperimentKind::ErrorVsM => "error_vs_m",
            ExperimentKind::ErrorVsK => "error_vs_k",
            ExperimentKind::Single => "single",
            ExperimentKind::Mnist => "mnist",
        })
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "balancedness" => ExperimentKind::Balancedness,
            "init_sweep" => ExperimentKind::InitSweep,
            "error_vs_m" => ExperimentKind::ErrorVsM,
            "error_vs_k" => ExperimentKind::ErrorVsK,
            "single" => ExperimentKind::Single,
            "mnist" => ExperimentKind::Mnist,
            other => return Err(Error::InvalidConfig(format!("unknown experiment kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Irmmv,
    Momp,
    Msp,
    Mfocuss,
    /// Unrestricted least squares, used as an oracle.
    Lstsq,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [SolverKind::Irmmv, SolverKind::Momp, SolverKind::Msp, SolverKind::Mfocuss];
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Irmmv => "irmmv",
            SolverKind::Momp => "momp",
            SolverKind::Msp => "msp",
            SolverKind::Mfocuss => "mfocuss",
            SolverKind::Lstsq => "lstsq",
        })
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "irmmv" => SolverKind::Irmmv,
            "momp" => SolverKind::Momp,
            "msp" => SolverKind::Msp,
            "mfocuss" => SolverKind::Mfocuss,
            "lstsq" => SolverKind::Lstsq,
            other => return Err(Error::InvalidConfig(format!("unknown solver {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub dims: Dims,
    pub snr: Snr,
    pub trials: usize,
    /// `M` values, `K` values or `α_g` values depending on `kind`.
    pub sweep_values: Vec<f64>,
    pub solvers: Vec<SolverKind>,
    pub seed: u64,
    pub output_path: Option<PathBuf>,
    pub magnitudes: RowMagnitudes,
    /// IR-MMV settings; `alpha_v` is re-derived from `alpha_g` for each `L`.
    pub recovery: RecoveryConfig,
    /// M-FOCUSS diversity exponent.
    pub p: f64,
    /// Write measured wall-clock times; zeros otherwise, which makes the
    /// results file reproducible byte for byte.
    pub record_timing: bool,
    /// Largest per-row balance drift accepted by the balancedness study.
    pub balance_tol: f64,
    pub mnist_path: Option<PathBuf>,
    pub mnist_count: usize,
    pub mnist_batch: usize,
    pub mnist_m: usize,
    pub mnist_k: usize,
}

impl ExperimentSpec {
    /// Defaults for `kind`.
    pub fn new(kind: ExperimentKind) -> Self {
        let dims = Dims::default();
        let mut spec = Self {
            kind,
            dims,
            snr: Snr::Db(40.0),
            trials: 20,
            sweep_values: Vec::new(),
            solvers: SolverKind::ALL.to_vec(),
            seed: 0,
            output_path: None,
            magnitudes: RowMagnitudes::ConstantOne,
            recovery: RecoveryConfig::balanced(dims.l),
            p: 0.8,
            record_timing: true,
            balance_tol: 1e-6,
            mnist_path: None,
            mnist_count: 500,
            mnist_batch: 10,
            mnist_m: 1024,
            mnist_k: 18,
        };
        match kind {
            ExperimentKind::ErrorVsM => spec.sweep_values = (2..=10).map(|i| 5.0 * i as f64).collect(),
            ExperimentKind::ErrorVsK => spec.sweep_values = (1..=8).map(f64::from).collect(),
            // Rows of magnitude 3 need a step below about 1.7e-3 to stay
            // stable; early stopping would cut runs short on the plateaus
            // between rows being learned.
            ExperimentKind::InitSweep => {
                spec.sweep_values = vec![1e-2, 1e-3, 1e-4];
                spec.magnitudes = RowMagnitudes::Values(vec![1.0, 2.0, 3.0]);
                spec.snr = Snr::Noiseless;
                spec.solvers = vec![SolverKind::Irmmv];
                spec.trials = 1;
                spec.recovery.eta_g = 1.5e-3;
                spec.recovery.eta_v = 1.5e-3;
                spec.recovery.max_iters = 600_000;
                spec.recovery.loss_tol = 0.0;
                spec.recovery.rel_change_tol = 0.0;
            }
            ExperimentKind::Balancedness => {
                spec.magnitudes = RowMagnitudes::Values(vec![1.0, 2.0, 3.0]);
                spec.solvers = vec![SolverKind::Irmmv];
                spec.trials = 1;
                spec.recovery.eta_g = 1.5e-3;
                spec.recovery.eta_v = 1.5e-3;
                spec.recovery.max_iters = 600_000;
                spec.recovery.loss_tol = 0.0;
                spec.recovery.rel_change_tol = 0.0;
            }
            ExperimentKind::Mnist => {
                spec.snr = Snr::Noiseless;
                spec.solvers = vec![SolverKind::Lstsq, SolverKind::Irmmv, SolverKind::Momp, SolverKind::Msp];
                spec.trials = 1;
                // The images are dense in the pixel basis, so a larger
                // init reaches the fit in a few thousand steps.
                spec.recovery = RecoveryConfig::balanced(spec.mnist_batch)
                    .with_alpha_g(0.3, spec.mnist_batch)
                    .with_max_iters(4_000);
            }
            ExperimentKind::Single => {}
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        let sweeps = matches!(
            self.kind,
            ExperimentKind::ErrorVsM | ExperimentKind::ErrorVsK | ExperimentKind::InitSweep
        );
        if sweeps && self.sweep_values.is_empty() {
            return Err(Error::InvalidConfig(format!("{} needs sweep values", self.kind)));
        }
        if self.solvers.is_empty() {
            return Err(Error::InvalidConfig("no solvers selected".into()));
        }
        if self.mnist_batch == 0 {
            return Err(Error::InvalidConfig("mnist_batch must be positive".into()));
        }
        self.recovery.validate()
    }

    fn recovery_for(&self, l: usize) -> RecoveryConfig {
        self.recovery.clone().with_alpha_g(self.recovery.alpha_g, l)
    }

    fn sweep_param(&self) -> &'static str {
        match self.kind {
            ExperimentKind::ErrorVsM => "m",
            ExperimentKind::ErrorVsK => "k",
            ExperimentKind::InitSweep => "alpha_g",
            ExperimentKind::Mnist => "batch",
            ExperimentKind::Single | ExperimentKind::Balancedness => "none",
        }
    }
}

/// One (solver, sweep point, trial) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub solver: SolverKind,
    pub sweep_param: &'static str,
    pub sweep_value: f64,
    pub trial: usize,
    /// NaN when the solver failed.
    pub rel_error: f64,
    pub wall_time_s: f64,
    pub iters: usize,
    pub support_exact: bool,
    pub nonzero_rows: usize,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub solver: SolverKind,
    pub sweep_value: f64,
    /// Over the successful trials only.
    pub mean: f64,
    /// Population standard deviation over the successful trials.
    pub std: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<ExperimentRecord>,
    pub aggregates: Vec<Aggregate>,
}

pub const RESULTS_CSV_HEADER: &str = "solver,sweep_param,sweep_value,trial,rel_error,wall_time_s,iters,support_exact";

impl ExperimentResult {
    pub fn from_records(records: Vec<ExperimentRecord>) -> Self {
        let aggregates = aggregate(&records);
        Self { records, aggregates }
    }

    pub fn aggregate_for(&self, solver: SolverKind, sweep_value: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.solver == solver && a.sweep_value == sweep_value)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{RESULTS_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{:?},{},{:e},{:e},{},{}",
                r.solver,
                r.sweep_param,
                r.sweep_value,
                r.trial,
                r.rel_error,
                r.wall_time_s,
                r.iters,
                r.support_exact
            )?;
        }
        Ok(())
    }

    /// Initialization-sweep view: `alpha_g,alpha_v,trial,final_loss,rel_error,iters`.
    pub fn write_init_sweep_csv<W: Write>(&self, l: usize, mut out: W) -> std::io::Result<()> {
        writeln!(out, "alpha_g,alpha_v,trial,final_loss,rel_error,iters")?;
        for r in self.records.iter().filter(|r| r.sweep_param == "alpha_g") {
            writeln!(
                out,
                "{:?},{:?},{},{:e},{:e},{}",
                r.sweep_value,
                crate::solver::balanced_alpha_v(r.sweep_value, l),
                r.trial,
                r.final_loss.unwrap_or(f64::NAN),
                r.rel_error,
                r.iters
            )?;
        }
        Ok(())
    }
}

/// Mean and population std per (solver, sweep value), in first-seen order.
pub fn aggregate(records: &[ExperimentRecord]) -> Vec<Aggregate> {
    let mut keys: Vec<(SolverKind, f64)> = Vec::new();
    for r in records {
        if !keys.iter().any(|&(s, v)| s == r.solver && v == r.sweep_value) {
            keys.push((r.solver, r.sweep_value));
        }
    }
    keys.into_iter()
        .map(|(solver, sweep_value)| {
            let cell: Vec<&ExperimentRecord> = records
                .iter()
                .filter(|r| r.solver == solver && r.sweep_value == sweep_value)
                .collect();
            let ok: Vec<f64> = cell.iter().filter(|r| r.error.is_none()).map(|r| r.rel_error).collect();
            let (mean, std) = mean_std(&ok);
            Aggregate {
                solver,
                sweep_value,
                mean,
                std,
                successes: ok.len(),
                failures: cell.len() - ok.len(),
            }
        })
        .collect()
}

/// Mean and population standard deviation; NaN for an empty slice.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Rows of `x` ranked by norm, largest first, ties to the lower index.
fn top_rows(x: &DenseMatrix, k: usize) -> Vec<usize> {
    let norms = x.row_norms();
    let mut idx: Vec<usize> = (0..norms.len()).collect();
    idx.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

struct SolveOutcome {
    x_hat: DenseMatrix,
    iters: usize,
    final_loss: Option<f64>,
}

fn solve(
    solver: SolverKind,
    a: &DenseMatrix,
    y: &DenseMatrix,
    k: usize,
    lambda: f64,
    spec: &ExperimentSpec,
) -> std::result::Result<SolveOutcome, (Error, usize)> {
    let fail = |e: Error| {
        let at = match &e {
            Error::Divergence { iteration, .. } => *iteration,
            _ => 0,
        };
        (e, at)
    };
    let bcfg = BaselineConfig::new(k).with_lambda(lambda).with_p(spec.p);
    match solver {
        SolverKind::Irmmv => {
            let rec: Recovery = recover(a, y, &spec.recovery_for(y.cols())).map_err(fail)?;
            Ok(SolveOutcome {
                final_loss: rec.trajectory.loss.last().copied(),
                iters: rec.iterations,
                x_hat: rec.x_hat,
            })
        }
        SolverKind::Momp => {
            let (x_hat, _) = somp_recover(a, y, &bcfg).map_err(fail)?;
            Ok(SolveOutcome { x_hat, iters: k, final_loss: None })
        }
        SolverKind::Msp => {
            let (x_hat, _, rounds) = msp_run(a, y, &bcfg).map_err(fail)?;
            Ok(SolveOutcome { x_hat, iters: rounds, final_loss: None })
        }
        SolverKind::Mfocuss => {
            let run = mfocuss_run(a, y, &bcfg, false).map_err(fail)?;
            Ok(SolveOutcome {
                x_hat: run.x_hat,
                iters: run.iterations,
                final_loss: None,
            })
        }
        SolverKind::Lstsq => {
            let x_hat = lstsq_min_norm(a, y).map_err(fail)?;
            Ok(SolveOutcome { x_hat, iters: 0, final_loss: None })
        }
    }
}

struct Cell<'a> {
    sweep_param: &'static str,
    sweep_value: f64,
    trial: usize,
    a: &'a DenseMatrix,
    y: &'a DenseMatrix,
    x_true: &'a DenseMatrix,
    support: &'a [usize],
    k: usize,
    lambda: f64,
}

fn run_cell(solver: SolverKind, cell: &Cell<'_>, spec: &ExperimentSpec) -> ExperimentRecord {
    let start = Instant::now();
    let outcome = solve(solver, cell.a, cell.y, cell.k, cell.lambda, spec);
    let elapsed = start.elapsed().as_secs_f64();
    let wall_time_s = if spec.record_timing { elapsed } else { 0.0 };
    let base = ExperimentRecord {
        solver,
        sweep_param: cell.sweep_param,
        sweep_value: cell.sweep_value,
        trial: cell.trial,
        rel_error: f64::NAN,
        wall_time_s,
        iters: 0,
        support_exact: false,
        nonzero_rows: 0,
        final_loss: None,
        error: None,
    };
    match outcome {
        Ok(out) => match relative_error(cell.x_true, &out.x_hat) {
            Ok(rel_error) => ExperimentRecord {
                rel_error,
                iters: out.iters,
                support_exact: top_rows(&out.x_hat, cell.support.len()) == cell.support,
                nonzero_rows: out.x_hat.row_norms().iter().filter(|&&n| n > 0.0).count(),
                final_loss: out.final_loss,
                ..base
            },
            Err(e) => ExperimentRecord {
                error: Some(e.to_string()),
                ..base
            },
        },
        Err((e, at)) => ExperimentRecord {
            iters: at,
            error: Some(e.to_string()),
            ..base
        },
    }
}

fn count(value: f64, what: &str) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value.is_finite() {
        Ok(value as usize)
    } else {
        Err(Error::InvalidConfig(format!("{what} sweep value {value} is not a positive integer")))
    }
}

/// Runs every (sweep point, trial, solver) cell. Trial `t` uses seed
/// `spec.seed + t` for its instance; a failing solver is recorded in its
/// cell and the sweep continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    match spec.kind {
        ExperimentKind::Mnist => return run_mnist(spec),
        ExperimentKind::InitSweep => return run_init_sweep(spec),
        _ => {}
    }
    let points: Vec<(f64, Dims)> = match spec.kind {
        ExperimentKind::ErrorVsM => spec
            .sweep_values
            .iter()
            .map(|&v| Ok((v, Dims { m: count(v, "m")?, ..spec.dims })))
            .collect::<Result<_>>()?,
        ExperimentKind::ErrorVsK => spec
            .sweep_values
            .iter()
            .map(|&v| Ok((v, Dims { k: count(v, "k")?, ..spec.dims })))
            .collect::<Result<_>>()?,
        _ => vec![(0.0, spec.dims)],
    };
    let mut records = Vec::new();
    for (value, dims) in points {
        let magnitudes = match (&spec.magnitudes, spec.kind) {
            (RowMagnitudes::Values(v), ExperimentKind::ErrorVsK) if v.len() != dims.k => RowMagnitudes::ConstantOne,
            (m, _) => m.clone(),
        };
        for trial in 0..spec.trials {
            let inst = ProblemInstance::generate(dims, &magnitudes, spec.snr, spec.seed + trial as u64)?;
            let lambda = inst.noise_variance()?;
            let cell = Cell {
                sweep_param: spec.sweep_param(),
                sweep_value: value,
                trial,
                a: &inst.a,
                y: &inst.y,
                x_true: &inst.x_true,
                support: &inst.support,
                k: dims.k,
                lambda,
            };
            for &solver in &spec.solvers {
                records.push(run_cell(solver, &cell, spec));
            }
        }
    }
    Ok(ExperimentResult::from_records(records))
}

/// One IR-MMV run per `α_g` in `spec.sweep_values` and trial, all with the
/// same step sizes and iteration budget. `final_loss` is filled in.
pub fn run_init_sweep(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let mut records = Vec::new();
    for trial in 0..spec.trials {
        let inst = ProblemInstance::generate(spec.dims, &spec.magnitudes, spec.snr, spec.seed + trial as u64)?;
        for &alpha_g in &spec.sweep_values {
            let mut sub = spec.clone();
            sub.recovery.alpha_g = alpha_g;
            let cell = Cell {
                sweep_param: "alpha_g",
                sweep_value: alpha_g,
                trial,
                a: &inst.a,
                y: &inst.y,
                x_true: &inst.x_true,
                support: &inst.support,
                k: spec.dims.k,
                lambda: 0.0,
            };
            records.push(run_cell(SolverKind::Irmmv, &cell, &sub));
        }
    }
    Ok(ExperimentResult::from_records(records))
}

/// When an active row first reaches half of its final norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub row: usize,
    pub magnitude: f64,
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct BalancednessStudy {
    pub instance: ProblemInstance,
    pub recovery: Recovery,
    /// Largest change of `½ g_i^2 - ||V_i||^2` from its initial value.
    pub max_drift: f64,
    pub drift_ok: bool,
    /// Sorted by decreasing magnitude.
    pub crossings: Vec<Crossing>,
    /// Crossing iterations strictly increase as magnitude decreases.
    pub order_ok: bool,
    /// Largest off-support final norm over the smallest on-support one.
    pub off_support_ratio: f64,
    pub off_support_ok: bool,
}

/// IR-MMV on an instance whose active rows have distinct magnitudes; checks
/// balance drift, the order in which rows are learned, and that inactive
/// rows stay small.
pub fn run_balancedness_study(spec: &ExperimentSpec) -> Result<BalancednessStudy> {
    spec.validate()?;
    let instance = ProblemInstance::generate(spec.dims, &spec.magnitudes, spec.snr, spec.seed)?;
    let recovery = recover(&instance.a, &instance.y, &spec.recovery_for(spec.dims.l))?;
    let traj = &recovery.trajectory;
    let n = spec.dims.n;

    let initial: Vec<f64> = (0..n).map(|i| traj.half_g_sq[0][i] - traj.v_row_sq[0][i]).collect();
    let mut max_drift = 0.0_f64;
    for s in 0..traj.len() {
        for i in 0..n {
            let b = traj.half_g_sq[s][i] - traj.v_row_sq[s][i];
            max_drift = max_drift.max((b - initial[i]).abs());
        }
    }

    let last = traj.len() - 1;
    let final_norms = &traj.row_norms[last];
    let mut crossings: Vec<Crossing> = instance
        .support
        .iter()
        .map(|&row| {
            let half = 0.5 * final_norms[row];
            Crossing {
                row,
                magnitude: instance.x_true.row(row).iter().map(|v| v.abs()).fold(0.0, f64::max),
                iteration: (0..traj.len())
                    .find(|&s| traj.row_norms[s][row] >= half)
                    .map(|s| traj.times[s]),
            }
        })
        .collect();
    crossings.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.row.cmp(&b.row)));
    let order_ok = crossings.windows(2).all(|w| match (w[0].iteration, w[1].iteration) {
        (Some(a), Some(b)) => w[0].magnitude > w[1].magnitude && a < b,
        _ => false,
    });

    let smallest_on = instance
        .support
        .iter()
        .map(|&r| final_norms[r])
        .fold(f64::INFINITY, f64::min);
    let largest_off = (0..n)
        .filter(|r| instance.support.binary_search(r).is_err())
        .map(|r| final_norms[r])
        .fold(0.0, f64::max);
    let off_support_ratio = largest_off / smallest_on;
    Ok(BalancednessStudy {
        max_drift,
        drift_ok: max_drift <= spec.balance_tol,
        crossings,
        order_ok,
        off_support_ratio,
        off_support_ok: off_support_ratio <= 1e-3,
        instance,
        recovery,
    })
}

/// Loads the images named by `spec.mnist_path` and runs [`run_mnist_on`].
pub fn run_mnist(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let path = spec.mnist_path.as_ref().ok_or_else(|| {
        Error::InvalidConfig(
            "mnist needs mnist_path pointing at an IDX3 image file such as train-images-idx3-ubyte".into(),
        )
    })?;
    let images = mnist::load_mnist_idx(path, spec.mnist_count)?;
    run_mnist_on(&images, spec)
}

/// Recovers the columns of `images` (one image per column) in batches of
/// `spec.mnist_batch` from `Y = A X` with a seeded Gaussian `A` of
/// `spec.mnist_m` rows. One record per image and solver, with the image
/// index as the trial; `nonzero_rows` refers to the whole batch estimate.
pub fn run_mnist_on(images: &DenseMatrix, spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let (n, count) = images.shape();
    let a = generate_sensing_matrix(spec.mnist_m, n, spec.seed)?;
    let mut records = Vec::new();
    for (b, start) in (0..count).step_by(spec.mnist_batch).enumerate() {
        let cols: Vec<usize> = (start..(start + spec.mnist_batch).min(count)).collect();
        let x = images.select_columns(&cols)?;
        let (y, _) = synthesize_measurements(&a, &x, spec.snr, spec.seed + b as u64)?;
        let lambda = match spec.snr {
            Snr::Noiseless => 0.0,
            snr => crate::problem::noise_variance(matmul(&a, &x)?.frobenius_norm_sq(), a.rows(), x.cols(), snr),
        };
        let support: Vec<usize> = (0..n).filter(|&r| x.row(r).iter().any(|&v| v != 0.0)).collect();
        for &solver in &spec.solvers {
            let start_t = Instant::now();
            let outcome = solve(solver, &a, &y, spec.mnist_k, lambda, spec);
            let elapsed = start_t.elapsed().as_secs_f64();
            let wall = if spec.record_timing { elapsed } else { 0.0 };
            for (j, &col) in cols.iter().enumerate() {
                let mut rec = ExperimentRecord {
                    solver,
                    sweep_param: "batch",
                    sweep_value: b as f64,
                    trial: col,
                    rel_error: f64::NAN,
                    wall_time_s: wall,
                    iters: 0,
                    support_exact: false,
                    nonzero_rows: 0,
                    final_loss: None,
                    error: None,
                };
                match &outcome {
                    Ok(out) => {
                        let truth = DenseMatrix::new(n, 1, x.column(j))?;
                        let est = DenseMatrix::new(n, 1, out.x_hat.column(j))?;
                        match relative_error(&truth, &est) {
                            Ok(e) => rec.rel_error = e,
                            Err(e) => rec.error = Some(e.to_string()),
                        }
                        rec.iters = out.iters;
                        rec.support_exact = top_rows(&out.x_hat, support.len()) == support;
                        rec.nonzero_rows = out.x_hat.row_norms().iter().filter(|&&v| v > 0.0).count();
                        rec.final_loss = out.final_loss;
                    }
                    Err((e, at)) => {
                        rec.iters = *at;
                        rec.error = Some(e.to_string());
                    }
                }
                records.push(rec);
            }
        }
    }
    Ok(ExperimentResult::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_examples() {
        let x = DenseMatrix::from_rows(&[[1.0, -2.0], [0.0, 3.0]]).unwrap();
        assert_eq!(relative_error(&x, &x).unwrap(), 0.0);
        assert_eq!(relative_error(&x, &DenseMatrix::zeros(2, 2).unwrap()).unwrap(), 1.0);
        assert_eq!(relative_error(&x, &x.scale(2.0).unwrap()).unwrap(), 1.0);
        assert!(matches!(
            relative_error(&DenseMatrix::zeros(2, 2).unwrap(), &x),
            Err(Error::UndefinedMetric)
        ));
    }

    #[test]
    fn kind_and_solver_names_round_trip() {
        for k in ["balancedness", "init_sweep", "error_vs_m", "error_vs_k", "single", "mnist"] {
            assert_eq!(k.parse::<ExperimentKind>().unwrap().to_string(), k);
        }
        for s in ["irmmv", "momp", "msp", "mfocuss", "lstsq"] {
            assert_eq!(s.parse::<SolverKind>().unwrap().to_string(), s);
        }
        assert!("omp".parse::<SolverKind>().is_err());
    }

    #[test]
    fn default_sweeps() {
        assert_eq!(
            ExperimentSpec::new(ExperimentKind::ErrorVsM).sweep_values,
            vec![10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0]
        );
        assert_eq!(ExperimentSpec::new(ExperimentKind::ErrorVsK).sweep_values.len(), 8);
        let mut spec = ExperimentSpec::new(ExperimentKind::ErrorVsK);
        spec.sweep_values.clear();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn top_rows_ranks_by_norm() {
        let x = DenseMatrix::from_rows(&[[0.1], [3.0], [0.0], [2.0]]).unwrap();
        assert_eq!(top_rows(&x, 2), vec![1, 3]);
    }
}
