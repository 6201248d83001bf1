use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use irmmv_core::bench::config::{self, KeyValues};
use irmmv_core::bench::{self, ExperimentKind, ExperimentResult, ExperimentSpec};
use irmmv_core::dynamics::{self, write_reports_csv, VerificationReport};
use irmmv_core::problem::ProblemInstance;
use irmmv_core::solver::recover;

#[derive(Parser)]
#[command(name = "irmmv", version, about = "Row-sparse MMV recovery by factorized gradient descent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Recover one synthetic instance; writes the instance, estimate and trajectory into --out
    Recover(Common),
    /// Run an experiment (error_vs_m, error_vs_k, single, init_sweep, balancedness)
    Bench {
        #[command(flatten)]
        common: Common,
        /// Experiment kind when the config does not set one
        #[arg(long, default_value = "single")]
        kind: String,
    },
    /// Numerical checks of the gradient-flow dynamics; writes a report CSV
    Dynamics(Common),
    /// Recover MNIST images from Gaussian measurements
    Mnist {
        #[command(flatten)]
        common: Common,
        /// IDX3 image file, overriding mnist_path
        #[arg(long)]
        images: Option<PathBuf>,
    },
}

fn load_kv(path: &Option<PathBuf>) -> Result<KeyValues> {
    match path {
        Some(p) => KeyValues::read(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(KeyValues::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_results(result: &ExperimentResult, out: &Path) -> Result<()> {
    let mut w = create(out)?;
    result.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn print_aggregates(result: &ExperimentResult) {
    println!("solver  sweep_value  mean_rel_error  std  ok  failed");
    for a in &result.aggregates {
        println!(
            "{:<7} {:<12} {:<15.4e} {:<9.3e} {:<3} {}",
            a.solver.to_string(),
            a.sweep_value,
            a.mean,
            a.std,
            a.successes,
            a.failures
        );
    }
}

fn run_recover(common: Common) -> Result<()> {
    let kv = load_kv(&common.config)?;
    let mut spec = config::recover_spec(&kv)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let out = common.out.unwrap_or_else(|| PathBuf::from("recover_out"));
    let inst = ProblemInstance::generate(spec.dims, &spec.magnitudes, spec.snr, spec.seed)?;
    let rec = recover(&inst.a, &inst.y, &spec.recovery)?;
    let err = bench::relative_error(&inst.x_true, &rec.x_hat)?;
    fs::create_dir_all(&out)?;
    inst.write_csv_bundle(&out)?;
    irmmv_core::problem::write_matrix_csv(&out.join("x_hat.csv"), &rec.x_hat)?;
    let mut w = create(&out.join("trajectory.csv"))?;
    rec.trajectory.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "iterations {}  stop {:?}  rel_error {:.4e}  output {}",
        rec.iterations,
        rec.stop,
        err,
        out.display()
    );
    Ok(())
}

fn run_bench(common: Common, kind: &str) -> Result<()> {
    let kv = load_kv(&common.config)?;
    let mut spec = config::experiment_spec(&kv, kind.parse()?)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if let Some(out) = common.out {
        spec.output_path = Some(out);
    }
    let out = spec
        .output_path
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", spec.kind)));
    match spec.kind {
        ExperimentKind::Balancedness => {
            let study = bench::run_balancedness_study(&spec)?;
            let mut w = create(&out)?;
            study.recovery.trajectory.write_csv(&mut w)?;
            w.flush()?;
            println!("max balance drift {:.3e} (tolerance {:.1e}, ok {})", study.max_drift, spec.balance_tol, study.drift_ok);
            for c in &study.crossings {
                println!("row {} magnitude {} half-norm crossing at {:?}", c.row, c.magnitude, c.iteration);
            }
            println!("crossing order ok {}", study.order_ok);
            println!("off-support ratio {:.3e} (ok {})", study.off_support_ratio, study.off_support_ok);
        }
        ExperimentKind::Mnist => bail!("use the mnist subcommand"),
        ExperimentKind::InitSweep => {
            let result = bench::run_init_sweep(&spec)?;
            write_results(&result, &out)?;
            let losses = out.with_extension("losses.csv");
            let mut w = create(&losses)?;
            result.write_init_sweep_csv(spec.dims.l, &mut w)?;
            w.flush()?;
            for r in &result.records {
                println!(
                    "alpha_g {:e}  trial {}  final loss {:.4e}  rel_error {:.4e}",
                    r.sweep_value,
                    r.trial,
                    r.final_loss.unwrap_or(f64::NAN),
                    r.rel_error
                );
            }
            println!("wrote {} and {}", out.display(), losses.display());
        }
        _ => {
            let result = bench::run_experiment(&spec)?;
            write_results(&result, &out)?;
            print_aggregates(&result);
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn summary(r: &VerificationReport) {
    println!(
        "{:<22} {:?}  statistic {:.4e}  violations {}",
        r.check,
        r.outcome,
        r.statistic,
        r.violations()
    );
}

const MAX_REPORT_ROWS: usize = 60_000;

/// Keeps every violating entry and an evenly spaced subset of the rest.
fn thin(mut r: VerificationReport, max_rows: usize) -> VerificationReport {
    let every = r.entries.len().div_ceil(max_rows).max(1);
    if every > 1 {
        r.entries = r
            .entries
            .into_iter()
            .enumerate()
            .filter(|(i, e)| i % every == 0 || e.violation > 0.0)
            .map(|(_, e)| e)
            .collect();
    }
    r
}

fn run_dynamics(common: Common) -> Result<()> {
    let kv = load_kv(&common.config)?;
    let mut cfg = config::lab_config(&kv)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.unwrap_or_else(|| PathBuf::from("dynamics_report.csv"));
    let inst = cfg.instance()?;

    let cons = dynamics::conservation_study(&inst, &cfg)?;
    println!("conservation drift ratio under step halving {:.4}", cons.drift_ratio);
    let rate = dynamics::rate_law_study(&inst, &cfg)?;
    println!("rate-law residual order {:.4}", rate.order);
    let theorem = dynamics::theorem_study(&inst, &cfg)?;
    println!(
        "theorem: beta {:.4e}  horizon {:.4e}  alpha_v {:.4e}  rho {:.4e}  max distance {:.4e}  held {}",
        theorem.beta,
        theorem.horizon,
        theorem.alpha_v,
        theorem.rho,
        theorem.closeness.max_distance,
        theorem.closeness.guarantee_held
    );
    let corollary = dynamics::corollary_study(&inst, &cfg)?;

    println!(
        "long-run distance to reference (no guarantee at this init) {:.4e}",
        corollary.closeness.max_distance
    );

    for r in &rate.reports {
        summary(r);
    }
    let mut reports = vec![cons.balance, cons.row_bounds, cons.remark1];
    reports.extend(rate.reports.into_iter().take(1));
    reports.push(theorem.closeness.report);
    reports.push(corollary.report);
    for r in &reports[..3] {
        summary(r);
    }
    for r in &reports[4..] {
        summary(r);
    }
    let thinned: Vec<VerificationReport> = reports.into_iter().map(|r| thin(r, MAX_REPORT_ROWS)).collect();
    let mut w = create(&out)?;
    write_reports_csv(&thinned, &mut w)?;
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_mnist(common: Common, images: Option<PathBuf>) -> Result<()> {
    let kv = load_kv(&common.config)?;
    let mut spec: ExperimentSpec = config::experiment_spec(&kv, ExperimentKind::Mnist)?;
    if spec.kind != ExperimentKind::Mnist {
        bail!("config kind must be mnist");
    }
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    if images.is_some() {
        spec.mnist_path = images;
    }
    let out = common
        .out
        .or_else(|| spec.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("mnist.csv"));
    let result = bench::run_experiment(&spec)?;
    write_results(&result, &out)?;
    for solver in &spec.solvers {
        let errs: Vec<f64> = result
            .records
            .iter()
            .filter(|r| r.solver == *solver && r.error.is_none())
            .map(|r| r.rel_error)
            .collect();
        let (mean, _) = bench::mean_std(&errs);
        let worst = errs.iter().copied().fold(f64::NAN, f64::max);
        println!("{solver:<8} images {:<4} mean rel_error {mean:.4e}  worst {worst:.4e}", errs.len());
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Recover(c) => run_recover(c),
        Command::Bench { common, kind } => run_bench(common, &kind),
        Command::Dynamics(c) => run_dynamics(c),
        Command::Mnist { common, images } => run_mnist(common, images),
    }
}
