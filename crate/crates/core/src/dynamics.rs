//! Numerical checks of the gradient-flow theory behind IR-MMV.
//!
//! The flow is emulated by forward Euler with simultaneous updates (the
//! `Simultaneous` mode of [`GradientStepper`]). Each `verify_*` function
//! returns a [`VerificationReport`] instead of failing, so that a violated
//! bound shows up as data.

use std::io::Write;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::problem::{mu_coherence, Dims, ProblemInstance, RowMagnitudes, Snr};
use crate::solver::{balanced_alpha_v, FactorPair, GradientStepper, TrajectoryRecord, UpdateOrder};

/// Global and row-wise unbalancedness of a factor pair.
#[derive(Debug, Clone, PartialEq)]
pub struct UnbalancednessReport {
    pub epsilon: f64,
    pub epsilon_r: f64,
    /// `½ g_i^2 - Σ_j V_ij^2`.
    pub per_row: Vec<f64>,
}

pub fn unbalancedness(fp: &FactorPair) -> UnbalancednessReport {
    let per_row = fp.row_balance();
    UnbalancednessReport {
        epsilon: per_row.iter().sum::<f64>().abs(),
        epsilon_r: per_row.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        per_row,
    }
}

/// One forward-Euler step of the flow: `(g, V) - step * grad` at the current
/// point.
pub fn flow_step(fp: &FactorPair, a: &DenseMatrix, y: &DenseMatrix, step: f64) -> Result<FactorPair> {
    check_step(step)?;
    let mut stepper = GradientStepper::new(a, y)?;
    let mut next = fp.clone();
    match stepper.step(&mut next, step, step, UpdateOrder::Simultaneous) {
        Ok(_) => Ok(next),
        Err(Error::NonFinite(_)) => Err(Error::Divergence {
            iteration: 1,
            last_finite: Box::new(fp.clone()),
        }),
        Err(e) => Err(e),
    }
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("flow step must be positive, got {step}")))
    }
}

/// A sampled Euler integration of the flow. Sample `s` sits at time
/// `record.times[s] as f64 * step` and its factors are `factors[s]`.
#[derive(Debug, Clone)]
pub struct FlowRun {
    pub step: f64,
    pub record: TrajectoryRecord,
    pub factors: Vec<FactorPair>,
}

impl FlowRun {
    pub fn time(&self, s: usize) -> f64 {
        self.record.times[s] as f64 * self.step
    }

    pub fn last(&self) -> &FactorPair {
        self.factors.last().expect("a run always holds its initial sample")
    }
}

/// Integrates `n_steps` Euler steps from `init`, sampling every
/// `record_every` steps and at the end. `on_step` sees every iterate.
pub fn integrate_flow_with(
    a: &DenseMatrix,
    y: &DenseMatrix,
    init: FactorPair,
    step: f64,
    n_steps: usize,
    record_every: usize,
    mut on_step: impl FnMut(usize, &FactorPair) -> Result<()>,
) -> Result<FlowRun> {
    check_step(step)?;
    let every = record_every.max(1);
    let mut stepper = GradientStepper::new(a, y)?;
    let mut fp = init;
    let mut record = TrajectoryRecord::default();
    record.push_sample(0, &fp, a, y)?;
    let mut factors = vec![fp.clone()];
    on_step(0, &fp)?;
    for k in 1..=n_steps {
        if let Err(e) = stepper.step(&mut fp, step, step, UpdateOrder::Simultaneous) {
            return Err(match e {
                Error::NonFinite(_) => Error::Divergence {
                    iteration: k,
                    last_finite: Box::new(fp),
                },
                e => e,
            });
        }
        on_step(k, &fp)?;
        if k % every == 0 || k == n_steps {
            record.push_sample(k, &fp, a, y)?;
            factors.push(fp.clone());
        }
    }
    Ok(FlowRun { step, record, factors })
}

pub fn integrate_flow(
    a: &DenseMatrix,
    y: &DenseMatrix,
    init: FactorPair,
    step: f64,
    n_steps: usize,
    record_every: usize,
) -> Result<FlowRun> {
    integrate_flow_with(a, y, init, step, n_steps, record_every, |_, _| Ok(()))
}

/// One checked quantity at one time. `violation` is how far `lhs` lies
/// outside `[rhs_lower, rhs_upper]`, zero when inside.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub check: &'static str,
    pub row: Option<usize>,
    pub time: f64,
    pub lhs: f64,
    pub rhs_lower: f64,
    pub rhs_upper: f64,
    pub violation: f64,
}

impl ReportEntry {
    fn new(check: &'static str, row: Option<usize>, time: f64, lhs: f64, lo: f64, hi: f64) -> Self {
        let violation = if lhs < lo {
            lo - lhs
        } else if lhs > hi {
            lhs - hi
        } else {
            0.0
        };
        Self {
            check,
            row,
            time,
            lhs,
            rhs_lower: lo,
            rhs_upper: hi,
            violation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Holds,
    Violated,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub check: &'static str,
    pub entries: Vec<ReportEntry>,
    /// Headline statistic of the check (max drift, max residual, ...).
    pub statistic: f64,
    pub outcome: Outcome,
}

pub const REPORT_CSV_HEADER: &str = "check,row,time,lhs,rhs_lower,rhs_upper,violation";

impl VerificationReport {
    fn from_entries(check: &'static str, entries: Vec<ReportEntry>, statistic: f64) -> Self {
        let outcome = if entries.iter().any(|e| e.violation > 0.0) {
            Outcome::Violated
        } else {
            Outcome::Holds
        };
        Self {
            check,
            entries,
            statistic,
            outcome,
        }
    }

    pub fn violations(&self) -> usize {
        self.entries.iter().filter(|e| e.violation > 0.0).count()
    }

    pub fn holds(&self) -> bool {
        self.outcome == Outcome::Holds
    }

    pub fn write_csv_rows<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for e in &self.entries {
            let row = e.row.map(|r| r.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{row},{:e},{:e},{:e},{:e},{:e}",
                e.check, e.time, e.lhs, e.rhs_lower, e.rhs_upper, e.violation
            )?;
        }
        Ok(())
    }
}

/// Writes several reports under one [`REPORT_CSV_HEADER`].
pub fn write_reports_csv<W: Write>(reports: &[VerificationReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{REPORT_CSV_HEADER}")?;
    for r in reports {
        r.write_csv_rows(&mut out)?;
    }
    Ok(())
}

/// Drift of the global and per-row conserved quantities relative to the
/// first sample. `statistic` is the largest drift seen.
pub fn verify_balancedness(traj: &TrajectoryRecord, step: f64, tol: f64) -> Result<VerificationReport> {
    if traj.is_empty() {
        return Err(Error::InvalidConfig("empty trajectory".into()));
    }
    let balance = |s: usize| -> Vec<f64> {
        traj.half_g_sq[s]
            .iter()
            .zip(&traj.v_row_sq[s])
            .map(|(h, v)| h - v)
            .collect()
    };
    let first = balance(0);
    let first_global: f64 = first.iter().sum();
    let mut entries = Vec::new();
    let mut max_drift = 0.0_f64;
    for s in 0..traj.len() {
        let t = traj.times[s] as f64 * step;
        let now = balance(s);
        let drift = now.iter().sum::<f64>() - first_global;
        max_drift = max_drift.max(drift.abs());
        entries.push(ReportEntry::new("balance_global", None, t, drift, -tol, tol));
        for (i, (b, b0)) in now.iter().zip(&first).enumerate() {
            let d = b - b0;
            max_drift = max_drift.max(d.abs());
            entries.push(ReportEntry::new("balance_row", Some(i), t, d, -tol, tol));
        }
    }
    Ok(VerificationReport::from_entries("balancedness", entries, max_drift))
}

/// Central-difference estimates of `d/dt ||X_{i:}||` at the interior samples
/// of a trajectory. Returns `(sample index, per-row derivative)` pairs.
pub fn row_norm_derivatives(traj: &TrajectoryRecord, step: f64) -> Vec<(usize, Vec<f64>)> {
    (1..traj.len().saturating_sub(1))
        .map(|s| {
            let dt = (traj.times[s + 1] - traj.times[s - 1]) as f64 * step;
            let d = traj.row_norms[s + 1]
                .iter()
                .zip(&traj.row_norms[s - 1])
                .map(|(a, b)| (a - b) / dt)
                .collect();
            (s, d)
        })
        .collect()
}

fn active(traj: &TrajectoryRecord, s: usize, i: usize) -> bool {
    traj.half_g_sq[s][i] > 0.0 && traj.v_row_sq[s][i] > 0.0
}

/// Row-norm growth bounds with unbalancedness `eps`. For a positive
/// residual correlation `c` the derivative must lie in
/// `[6 c n^2 / (eps + n^{2/3}), 24 c (eps + n^{2/3})^2]`; for negative `c`
/// the interval is mirrored. Slack is `tol * (1 + |bound|)`.
pub fn verify_row_norm_bounds(traj: &TrajectoryRecord, step: f64, eps: f64, tol: f64) -> VerificationReport {
    let mut entries = Vec::new();
    let mut worst = 0.0_f64;
    for (s, deriv) in row_norm_derivatives(traj, step) {
        let t = traj.times[s] as f64 * step;
        for (i, &d) in deriv.iter().enumerate() {
            if !active(traj, s, i) {
                continue;
            }
            let n = traj.row_norms[s][i];
            let c = traj.residual_corr[s][i];
            let n23 = n.powf(2.0 / 3.0);
            let upper = 24.0 * c * (eps + n23).powi(2);
            let lower = 6.0 * c * n * n / (eps + n23);
            let (lo, hi) = if c >= 0.0 { (lower, upper) } else { (upper, lower) };
            let lo = lo - tol * (1.0 + lo.abs());
            let hi = hi + tol * (1.0 + hi.abs());
            let e = ReportEntry::new("row_norm_bounds", Some(i), t, d, lo, hi);
            worst = worst.max(e.violation);
            entries.push(e);
        }
    }
    VerificationReport::from_entries("row_norm_bounds", entries, worst)
}

/// Rate of `||X_{i:}||` under perfect balance:
/// `2^{2/3} * 6 * c * n^{4/3}`.
pub fn balanced_rate(corr: f64, norm: f64) -> f64 {
    2f64.powf(2.0 / 3.0) * 6.0 * corr * norm.powf(4.0 / 3.0)
}

/// Compares the empirical derivative with [`balanced_rate`]. `statistic`
/// is the largest relative residual `|lhs - rhs| / (1 + |rhs|)`.
pub fn verify_rate_law(traj: &TrajectoryRecord, step: f64, tol: f64) -> VerificationReport {
    let mut entries = Vec::new();
    let mut worst = 0.0_f64;
    for (s, deriv) in row_norm_derivatives(traj, step) {
        let t = traj.times[s] as f64 * step;
        for (i, &d) in deriv.iter().enumerate() {
            if !active(traj, s, i) {
                continue;
            }
            let rhs = balanced_rate(traj.residual_corr[s][i], traj.row_norms[s][i]);
            let slack = tol * (1.0 + rhs.abs());
            worst = worst.max((d - rhs).abs() / (1.0 + rhs.abs()));
            entries.push(ReportEntry::new("rate_law", Some(i), t, d, rhs - slack, rhs + slack));
        }
    }
    VerificationReport::from_entries("rate_law", entries, worst)
}

/// Inputs of the smoothness constant of the loss on a bounded domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessParams {
    pub b_g: f64,
    pub b_v: f64,
    pub b_y: f64,
    pub c: f64,
    pub mu: f64,
    pub m: usize,
    pub n: usize,
    pub l: usize,
}

impl SmoothnessParams {
    pub fn new(b_g: f64, b_v: f64, b_y: f64, c: f64, mu: f64, m: usize, n: usize, l: usize) -> Result<Self> {
        let p = Self {
            b_g,
            b_v,
            b_y,
            c,
            mu,
            m,
            n,
            l,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.b_g, self.b_v, self.b_y, self.c];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("smoothness bounds must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::InvalidConfig(format!("mu must lie in [0, 1], got {}", self.mu)));
        }
        if self.c < 1.0_f64.max(self.b_g).max(2.0 * self.b_v) {
            return Err(Error::InvalidConfig(format!(
                "c = {} is below max(1, b_g, 2 b_v)",
                self.c
            )));
        }
        if self.m == 0 || self.n == 0 || self.l == 0 {
            return Err(Error::InvalidConfig("dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Bounds read off a set of runs on the problem `(a, y)`, with the
    /// smallest admissible `c`.
    pub fn from_runs(a: &DenseMatrix, y: &DenseMatrix, runs: &[&FlowRun]) -> Result<Self> {
        let mut b_g = 0.0_f64;
        let mut b_v = 0.0_f64;
        for fp in runs.iter().flat_map(|r| &r.factors) {
            b_g = fp.g().iter().fold(b_g, |m, v| m.max(v.abs()));
            b_v = b_v.max(fp.v().max_abs());
        }
        let b_g = b_g.max(f64::MIN_POSITIVE);
        let b_v = b_v.max(f64::MIN_POSITIVE);
        let c = 1.0_f64.max(b_g).max(2.0 * b_v);
        Self::new(b_g, b_v, y.max_abs(), c, mu_coherence(a)?, a.rows(), a.cols(), y.cols())
    }
}

/// `β = 16 N L^{3/2} ((N+1) μ C^4 + M B_Y C)`.
pub fn beta_constant(p: &SmoothnessParams) -> f64 {
    let (m, n, l) = (p.m as f64, p.n as f64, p.l as f64);
    16.0 * n * l.powf(1.5) * ((n + 1.0) * p.mu * p.c.powi(4) + m * p.b_y * p.c)
}

/// `D̃ = N^{1/3} sqrt(2L+1) (D/2 + 1/2)^{1/3}`.
pub fn d_tilde(n: usize, l: usize, d: f64) -> f64 {
    (n as f64).cbrt() * (2.0 * l as f64 + 1.0).sqrt() * (0.5 * d + 0.5).cbrt()
}

/// Natural log of the largest admissible `α_V` for approximation accuracy
/// `eps_app` over horizon `t_horizon`:
/// `log ε - log(2(D̃+2)^2) - βT - ½ log(2LN(2L+3))`.
///
/// The value is usually far below the smallest positive double, which is
/// why only its logarithm is returned.
pub fn theorem_init_bound_log(eps_app: f64, beta: f64, t_horizon: f64, n: usize, l: usize, d: f64) -> Result<f64> {
    if !(eps_app > 0.0 && eps_app <= 1.0) {
        return Err(Error::InvalidConfig(format!("eps_app must lie in (0, 1], got {eps_app}")));
    }
    if !(beta >= 0.0 && t_horizon >= 0.0 && beta.is_finite() && t_horizon.is_finite()) || n == 0 || l == 0 {
        return Err(Error::InvalidConfig("beta, horizon and dimensions must be non-negative".into()));
    }
    if !(d >= -1.0 && d.is_finite()) {
        return Err(Error::InvalidConfig(format!("radius {d} gives a negative D̃")));
    }
    let (nf, lf) = (n as f64, l as f64);
    let dt = d_tilde(n, l, d);
    Ok(eps_app.ln()
        - (2.0 * (dt + 2.0).powi(2)).ln()
        - beta * t_horizon
        - 0.5 * (2.0 * lf * nf * (2.0 * lf + 3.0)).ln())
}

/// Admissible interval for `ρ^{1/3}` given `α_V`, clipped below at zero.
/// `None` when `α_V` exceeds the feasibility bound
/// `exp(-βT) / (sqrt(LN) (sqrt(2L) - 1))` or the interval is empty.
pub fn rho_interval(alpha_v: f64, beta: f64, t_horizon: f64, n: usize, l: usize) -> Option<(f64, f64)> {
    if !(alpha_v > 0.0 && alpha_v.is_finite()) || n == 0 || l == 0 {
        return None;
    }
    let (nf, lf) = (n as f64, l as f64);
    let bt = beta * t_horizon;
    let k = (2.0 * lf).sqrt() - 1.0;
    let log_a = alpha_v.ln();
    // Feasibility, in logs: log α_V <= -βT - ½ log(LN) - log(√(2L) - 1).
    if k > 0.0 && log_a > -bt - 0.5 * (lf * nf).ln() - k.ln() {
        return None;
    }
    // ε_α^2 = e^{-2βT}/(2LN) - α_V^2 k^2/4 = e^{-2βT}/(2LN) * (1 - r).
    let log_first = -2.0 * bt - (2.0 * lf * nf).ln();
    let r = if k > 0.0 {
        (2.0 * log_a + 2.0 * k.ln() - 4f64.ln() - log_first).exp()
    } else {
        0.0
    };
    if r > 1.0 {
        return None;
    }
    let log_eps_alpha = 0.5 * (log_first + (1.0 - r).ln());
    let centre = (0.5 * lf).sqrt() + 0.5;
    let lo = alpha_v * (centre - (log_eps_alpha - log_a).exp());
    let lo = lo.max(0.0);
    let hi = alpha_v;
    (lo <= hi).then_some((lo, hi))
}

/// `ρ^{1/3} = min(α_V, hi)` clipped into the interval, cubed.
pub fn default_rho(alpha_v: f64, interval: (f64, f64)) -> f64 {
    alpha_v.min(interval.1).clamp(interval.0, interval.1).powi(3)
}

/// Flow trajectory started from a rank-`K` point supported on `support`.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    pub support: Vec<usize>,
    pub rho: f64,
    /// Reference initialization `(g̃(0), Ṽ(0))`.
    pub factors: FactorPair,
    pub run: FlowRun,
}

/// Reference initialization: on the support `g̃_i = √2 ρ^{1/3}` and
/// `Ṽ_i = ρ^{1/3} V_i / ||V_i||`; zero elsewhere.
pub fn reference_init(support: &[usize], rho: f64, v0: &DenseMatrix) -> Result<FactorPair> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidConfig(format!("rho must be positive, got {rho}")));
    }
    let (n, l) = v0.shape();
    let r13 = rho.cbrt();
    let mut g = vec![0.0; n];
    let mut v = vec![0.0; n * l];
    for &i in support {
        if i >= n {
            return Err(Error::InvalidConfig(format!("support index {i} out of range")));
        }
        let norm = v0.row_norm(i);
        if norm == 0.0 {
            return Err(Error::InvalidConfig(format!("row {i} of v0 is zero")));
        }
        g[i] = 2f64.sqrt() * r13;
        for (o, x) in v[i * l..(i + 1) * l].iter_mut().zip(v0.row(i)) {
            *o = r13 * x / norm;
        }
    }
    FactorPair::new(g, DenseMatrix::new(n, l, v)?)
}

/// Integrates the flow from [`reference_init`], checking after every step
/// that rows off the support are still bitwise zero.
#[allow(clippy::too_many_arguments)]
pub fn build_reference_trajectory(
    support: &[usize],
    rho: f64,
    v0: &DenseMatrix,
    a: &DenseMatrix,
    y: &DenseMatrix,
    step: f64,
    n_steps: usize,
    record_every: usize,
) -> Result<ReferenceTrajectory> {
    let init = reference_init(support, rho, v0)?;
    let off: Vec<usize> = (0..init.n()).filter(|i| !support.contains(i)).collect();
    let run = integrate_flow_with(a, y, init.clone(), step, n_steps, record_every, |k, fp| {
        for &i in &off {
            let zero = fp.g()[i].to_bits() == 0 && fp.v().row(i).iter().all(|v| v.to_bits() == 0);
            if !zero {
                return Err(Error::ConstructionViolation(format!(
                    "off-support row {i} became nonzero at step {k}"
                )));
            }
        }
        Ok(())
    })?;
    Ok(ReferenceTrajectory {
        support: support.to_vec(),
        rho,
        factors: init,
        run,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosenessReport {
    /// Largest `||X(t) - X̃(t)||_F` before the exit time.
    pub max_distance: f64,
    /// First sample time with `||X(t)||_F >= d`, if any.
    pub exit_time: Option<f64>,
    pub guarantee_held: bool,
    /// Smallest `8 D^4 dist^2 - ||X - X̃||_F^2` over samples, where `D` is the
    /// larger of the two parameter norms at that sample.
    pub min_contraction_margin: f64,
    pub report: VerificationReport,
}

fn same_grid(a: &FlowRun, b: &FlowRun) -> Result<()> {
    if a.step != b.step || a.record.times != b.record.times {
        return Err(Error::InvalidConfig("runs were not sampled on the same grid".into()));
    }
    Ok(())
}

/// Squared distance in parameter space with `g` weighted by `L`, matching
/// [`FactorPair::param_norm_sq`].
fn param_dist_sq(a: &FactorPair, b: &FactorPair) -> f64 {
    let l = a.l() as f64;
    let dg: f64 = a.g().iter().zip(b.g()).map(|(x, y)| (x - y) * (x - y)).sum();
    let dv: f64 = a
        .v()
        .as_slice()
        .iter()
        .zip(b.v().as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    l * dg + dv
}

/// `8 D^4 Σ_n Σ_l ((V - Ṽ)^2 + (g - g̃)^2) - ||X - X̃||_F^2` with `D` the larger
/// parameter norm of the two points.
pub fn contraction_margin(est: &FactorPair, reference: &FactorPair) -> Result<f64> {
    let d2 = est.param_norm_sq().max(reference.param_norm_sq());
    let dx = est.reconstruct().sub(&reference.reconstruct())?.frobenius_norm_sq();
    Ok(8.0 * d2 * d2 * param_dist_sq(est, reference) - dx)
}

/// Distance between an estimated and a reference run, until the horizon or
/// until `||X(t)||_F` reaches `d`.
pub fn verify_trajectory_closeness(
    est: &FlowRun,
    reference: &ReferenceTrajectory,
    eps_app: f64,
    d: f64,
) -> Result<ClosenessReport> {
    same_grid(est, &reference.run)?;
    let mut entries = Vec::new();
    let mut max_distance = 0.0_f64;
    let mut exit_time = None;
    let mut min_margin = f64::INFINITY;
    for (s, (fe, fr)) in est.factors.iter().zip(&reference.run.factors).enumerate() {
        let t = est.time(s);
        let margin = contraction_margin(fe, fr)?;
        min_margin = min_margin.min(margin);
        entries.push(ReportEntry::new("contraction_margin", None, t, margin, -1e-12, f64::INFINITY));
        if exit_time.is_some() {
            continue;
        }
        let x = fe.reconstruct();
        if x.frobenius_norm() >= d {
            exit_time = Some(t);
            continue;
        }
        let dist = x.sub(&fr.reconstruct())?.frobenius_norm();
        max_distance = max_distance.max(dist);
        entries.push(ReportEntry::new("closeness", None, t, dist, 0.0, eps_app));
    }
    let report = VerificationReport::from_entries("trajectory_closeness", entries, max_distance);
    Ok(ClosenessReport {
        max_distance,
        exit_time,
        guarantee_held: max_distance < eps_app,
        min_contraction_margin: min_margin,
        report,
    })
}

/// Once the reference is within `eps_app` of `x_star` (from time `t_c`
/// on), the estimate must stay within `2 eps_app` of it. `statistic` is the
/// largest distance to `x_star` seen after entry; the report is
/// inconclusive when the reference never enters the ball.
pub fn verify_corollary_convergence(
    est: &FlowRun,
    reference: &ReferenceTrajectory,
    x_star: &DenseMatrix,
    eps_app: f64,
    t_c: f64,
) -> Result<VerificationReport> {
    same_grid(est, &reference.run)?;
    let entry = (0..reference.run.factors.len()).find(|&s| {
        reference.run.time(s) >= t_c
            && reference.run.factors[s]
                .reconstruct()
                .sub(x_star)
                .map(|d| d.frobenius_norm() <= eps_app)
                .unwrap_or(false)
    });
    let Some(start) = entry else {
        return Ok(VerificationReport {
            check: "corollary",
            entries: Vec::new(),
            statistic: f64::NAN,
            outcome: Outcome::Inconclusive,
        });
    };
    let mut entries = Vec::new();
    let mut worst = 0.0_f64;
    for s in start..est.factors.len() {
        let dist = est.factors[s].reconstruct().sub(x_star)?.frobenius_norm();
        worst = worst.max(dist);
        entries.push(ReportEntry::new("corollary", None, est.time(s), dist, 0.0, 2.0 * eps_app));
    }
    Ok(VerificationReport::from_entries("corollary", entries, worst))
}

/// Settings of the numerical studies run by the `dynamics` command.
#[derive(Debug, Clone, PartialEq)]
pub struct LabConfig {
    pub dims: Dims,
    pub magnitudes: RowMagnitudes,
    pub seed: u64,
    pub alpha_g: f64,
    pub step: f64,
    pub steps: usize,
    pub record_every: usize,
    pub tol: f64,
    /// Relative offset of `α_V` for the deliberately unbalanced run.
    pub unbalance: f64,
    pub rate_step: f64,
    pub rate_horizon: f64,
    /// Time between samples used for the rate-law derivatives.
    pub rate_spacing: f64,
    pub rate_tol: f64,
    pub eps_app: f64,
    pub radius: f64,
    pub theorem_steps: usize,
    /// `log α_V` floor that fixes the toy horizon.
    pub log_alpha_floor: f64,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            dims: Dims { m: 6, n: 6, l: 3, k: 2 },
            magnitudes: RowMagnitudes::Gaussian { mean: 1.0, std: 0.1 },
            seed: 0,
            alpha_g: 0.1,
            step: 1e-4,
            steps: 100_000,
            record_every: 10,
            tol: 1e-6,
            unbalance: 0.5,
            rate_step: 1e-5,
            rate_horizon: 10.0,
            rate_spacing: 4e-5,
            rate_tol: 1e-3,
            eps_app: 0.1,
            radius: 1.0,
            theorem_steps: 1000,
            log_alpha_floor: (1e-12f64).ln(),
        }
    }
}

impl LabConfig {
    pub fn instance(&self) -> Result<ProblemInstance> {
        ProblemInstance::generate(self.dims, &self.magnitudes, Snr::Noiseless, self.seed)
    }

    fn alpha_v(&self) -> f64 {
        balanced_alpha_v(self.alpha_g, self.dims.l)
    }
}

/// `g = alpha_g 1`, `V = alpha_v 1`.
pub fn constant_init(n: usize, l: usize, alpha_g: f64, alpha_v: f64) -> Result<FactorPair> {
    FactorPair::new(vec![alpha_g; n], DenseMatrix::filled(n, l, alpha_v)?)
}

#[derive(Debug, Clone)]
pub struct ConservationStudy {
    pub run: FlowRun,
    pub balance: VerificationReport,
    /// Max drift of the same run at half the step.
    pub halved_drift: f64,
    pub drift_ratio: f64,
    pub row_bounds: VerificationReport,
    /// `ε - N ε_r` at an unbalanced constant start and along the run.
    pub remark1: VerificationReport,
}

/// Balanced constant start: conservation drift, its step-halving ratio,
/// row-norm bounds, and the `ε = N ε_r` identity.
pub fn conservation_study(inst: &ProblemInstance, cfg: &LabConfig) -> Result<ConservationStudy> {
    let (n, l) = (cfg.dims.n, cfg.dims.l);
    let init = constant_init(n, l, cfg.alpha_g, cfg.alpha_v())?;
    let run = integrate_flow(&inst.a, &inst.y, init.clone(), cfg.step, cfg.steps, cfg.record_every)?;
    let balance = verify_balancedness(&run.record, cfg.step, cfg.tol)?;
    let half = integrate_flow(&inst.a, &inst.y, init.clone(), cfg.step / 2.0, 2 * cfg.steps, 2 * cfg.record_every)?;
    let halved_drift = verify_balancedness(&half.record, half.step, cfg.tol)?.statistic;
    let eps = unbalancedness(&init).epsilon;
    let row_bounds = verify_row_norm_bounds(&run.record, cfg.step, eps, cfg.tol);

    let mut entries = Vec::new();
    let mut worst = 0.0_f64;
    let mut remark1 = |time: f64, fp: &FactorPair, slack: f64| {
        let u = unbalancedness(fp);
        let gap = u.epsilon - n as f64 * u.epsilon_r;
        worst = worst.max(gap.abs());
        entries.push(ReportEntry::new("remark1", None, time, gap, -slack, slack));
    };
    // The identity is exact for any constant start, balanced or not.
    let skewed = constant_init(n, l, cfg.alpha_g, cfg.alpha_v() * (1.0 + cfg.unbalance))?;
    let skew_eps = unbalancedness(&skewed).epsilon;
    remark1(0.0, &skewed, 1e-12 * (1.0 + skew_eps));
    for (s, fp) in run.factors.iter().enumerate() {
        let slack = if s == 0 { 1e-12 } else { cfg.tol };
        remark1(run.time(s), fp, slack);
    }
    Ok(ConservationStudy {
        halved_drift,
        drift_ratio: balance.statistic / halved_drift,
        balance,
        row_bounds,
        remark1: VerificationReport::from_entries("remark1", entries, worst),
        run,
    })
}

#[derive(Debug, Clone)]
pub struct RateLawStudy {
    /// Reports at `h`, `2h` and `4h`.
    pub reports: Vec<VerificationReport>,
    /// Observed order `log2((r(4h) - r(2h)) / (r(2h) - r(h)))` of the
    /// max residual.
    pub order: f64,
}

pub fn rate_law_study(inst: &ProblemInstance, cfg: &LabConfig) -> Result<RateLawStudy> {
    let (n, l) = (cfg.dims.n, cfg.dims.l);
    let mut reports = Vec::new();
    for mult in [1.0, 2.0, 4.0] {
        let h = cfg.rate_step * mult;
        let steps = (cfg.rate_horizon / h).round() as usize;
        let every = ((cfg.rate_spacing / h).round() as usize).max(1);
        let init = constant_init(n, l, cfg.alpha_g, cfg.alpha_v())?;
        let run = integrate_flow(&inst.a, &inst.y, init, h, steps, every)?;
        reports.push(verify_rate_law(&run.record, h, cfg.rate_tol));
    }
    let r: Vec<f64> = reports.iter().map(|r| r.statistic).collect();
    let order = ((r[2] - r[1]) / (r[1] - r[0])).log2();
    Ok(RateLawStudy { reports, order })
}

#[derive(Debug, Clone)]
pub struct TheoremStudy {
    pub beta: f64,
    pub horizon: f64,
    pub log_alpha_v_max: f64,
    pub alpha_v: f64,
    pub rho_interval: (f64, f64),
    pub rho: f64,
    /// Bounds measured on both runs; `beta` is recomputed from them.
    pub params: SmoothnessParams,
    pub est: FlowRun,
    pub reference: ReferenceTrajectory,
    pub closeness: ClosenessReport,
}

/// Toy-scale run of the approximation guarantee. `β` is first evaluated
/// with `C = 1`, the horizon is 90% of the largest one keeping the
/// admissible `log α_V` above `cfg.log_alpha_floor`, and `β` is then re-evaluated on
/// the bounds of the two runs. A larger re-evaluated `β` is an error since
/// the horizon would no longer be compliant.
pub fn theorem_study(inst: &ProblemInstance, cfg: &LabConfig) -> Result<TheoremStudy> {
    let (n, l) = (cfg.dims.n, cfg.dims.l);
    let mu = mu_coherence(&inst.a)?;
    let b_y = inst.y.max_abs();
    let assumed = SmoothnessParams::new(1.0, 0.5, b_y, 1.0, mu, cfg.dims.m, n, l)?;
    let beta = beta_constant(&assumed);
    let at_zero = theorem_init_bound_log(cfg.eps_app, beta, 0.0, n, l, cfg.radius)?;
    if at_zero <= cfg.log_alpha_floor {
        return Err(Error::InvalidConfig("no positive horizon meets the alpha floor".into()));
    }
    let horizon = 0.9 * (at_zero - cfg.log_alpha_floor) / beta;
    let log_alpha_v_max = theorem_init_bound_log(cfg.eps_app, beta, horizon, n, l, cfg.radius)?;
    let alpha_v = log_alpha_v_max.exp();
    let interval = rho_interval(alpha_v, beta, horizon, n, l)
        .ok_or_else(|| Error::InvalidConfig("empty rho interval at the compliant alpha".into()))?;
    let rho = default_rho(alpha_v, interval);

    let step = horizon / cfg.theorem_steps as f64;
    let alpha_g = alpha_v * (2.0 * l as f64).sqrt();
    let init = constant_init(n, l, alpha_g, alpha_v)?;
    let v0 = init.v().clone();
    let est = integrate_flow(&inst.a, &inst.y, init, step, cfg.theorem_steps, 1)?;
    let reference = build_reference_trajectory(&inst.support, rho, &v0, &inst.a, &inst.y, step, cfg.theorem_steps, 1)?;
    let params = SmoothnessParams::from_runs(&inst.a, &inst.y, &[&est, &reference.run])?;
    if beta_constant(&params) > beta {
        return Err(Error::InvalidConfig("run bounds exceed the assumed smoothness domain".into()));
    }
    let closeness = verify_trajectory_closeness(&est, &reference, cfg.eps_app, cfg.radius)?;
    Ok(TheoremStudy {
        beta,
        horizon,
        log_alpha_v_max,
        alpha_v,
        rho_interval: interval,
        rho,
        params,
        est,
        reference,
        closeness,
    })
}

#[derive(Debug, Clone)]
pub struct CorollaryStudy {
    pub closeness: ClosenessReport,
    pub report: VerificationReport,
}

/// Long run from the lab's small (not theorem-compliant) initialization
/// against a reference with `ρ = α_V^3`, compared with the ground truth.
pub fn corollary_study(inst: &ProblemInstance, cfg: &LabConfig) -> Result<CorollaryStudy> {
    let (n, l) = (cfg.dims.n, cfg.dims.l);
    let init = constant_init(n, l, cfg.alpha_g, cfg.alpha_v())?;
    let v0 = init.v().clone();
    let every = cfg.record_every * 10;
    let est = integrate_flow(&inst.a, &inst.y, init, cfg.step, cfg.steps, every)?;
    let rho = cfg.alpha_v().powi(3);
    let reference = build_reference_trajectory(&inst.support, rho, &v0, &inst.a, &inst.y, cfg.step, cfg.steps, every)?;
    let closeness = verify_trajectory_closeness(&est, &reference, cfg.eps_app, f64::INFINITY)?;
    let report = verify_corollary_convergence(&est, &reference, &inst.x_true, cfg.eps_app, 0.0)?;
    Ok(CorollaryStudy { closeness, report })
}
