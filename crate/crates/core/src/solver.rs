//! IR-MMV: gradient descent on the Hadamard factorization
//! `X = (g^2 1_L) ⊙ V` of a row-sparse estimate.
//!
//! The loss is the plain squared residual `||Y - A X||_F^2`; no penalty term
//! is added. Small balanced initialization and the multiplicative structure
//! of the updates are what drive the estimate toward few active rows.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::matrix::{gemm_into, DenseMatrix};

/// Row-scaling vector `g` and component matrix `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    g: Vec<f64>,
    v: DenseMatrix,
}

impl FactorPair {
    pub fn new(g: Vec<f64>, v: DenseMatrix) -> Result<Self> {
        if g.len() != v.rows() {
            return Err(Error::DimensionMismatch {
                op: "FactorPair::new",
                lhs: (g.len(), 1),
                rhs: v.shape(),
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("FactorPair::new"));
        }
        Ok(Self { g, v })
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn l(&self) -> usize {
        self.v.cols()
    }

    pub fn into_parts(self) -> (Vec<f64>, DenseMatrix) {
        (self.g, self.v)
    }

    /// `X_ij = g_i^2 V_ij`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut x = vec![0.0; self.v.as_slice().len()];
        reconstruct_into(&self.g, &self.v, &mut x);
        DenseMatrix::from_raw(self.v.rows(), self.v.cols(), x)
    }

    /// `½ g_i^2 - Σ_j V_ij^2` for every row.
    pub fn row_balance(&self) -> Vec<f64> {
        self.g
            .iter()
            .enumerate()
            .map(|(i, gi)| 0.5 * gi * gi - self.v.row(i).iter().map(|v| v * v).sum::<f64>())
            .collect()
    }

    /// Squared parameter norm `L ||g||^2 + ||V||_F^2`.
    pub fn param_norm_sq(&self) -> f64 {
        self.l() as f64 * self.g.iter().map(|x| x * x).sum::<f64>() + self.v.frobenius_norm_sq()
    }
}

fn reconstruct_into(g: &[f64], v: &DenseMatrix, out: &mut [f64]) {
    let l = v.cols();
    for (i, gi) in g.iter().enumerate() {
        let g2 = gi * gi;
        for (o, vij) in out[i * l..(i + 1) * l].iter_mut().zip(v.row(i)) {
            *o = g2 * vij;
        }
    }
}

pub fn reconstruct(fp: &FactorPair) -> DenseMatrix {
    fp.reconstruct()
}

/// Order in which the two factors are refreshed within an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateOrder {
    /// `V` uses the freshly updated `g(t+1)`, as in the algorithm listing.
    #[default]
    Sequential,
    /// Both factors move from time-`t` values (forward Euler on the flow).
    Simultaneous,
}

impl fmt::Display for UpdateOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateOrder::Sequential => "sequential",
            UpdateOrder::Simultaneous => "simultaneous",
        })
    }
}

impl std::str::FromStr for UpdateOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sequential" => Ok(UpdateOrder::Sequential),
            "simultaneous" => Ok(UpdateOrder::Simultaneous),
            other => Err(Error::InvalidConfig(format!("unknown update order {other:?}"))),
        }
    }
}

/// Upper bound on stored trajectory samples when `record_every` is automatic.
pub const MAX_AUTO_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryConfig {
    pub alpha_g: f64,
    pub alpha_v: f64,
    pub eta_g: f64,
    pub eta_v: f64,
    pub max_iters: usize,
    /// Sampling cadence of the trajectory; `0` picks one that keeps at most
    /// [`MAX_AUTO_SAMPLES`] samples.
    pub record_every: usize,
    pub loss_tol: f64,
    /// Stop when `||X(t+1) - X(t)||_F / ||X(t)||_F` falls below this.
    pub rel_change_tol: f64,
    pub update_order: UpdateOrder,
}

impl RecoveryConfig {
    /// Default hyperparameters with `alpha_v = alpha_g / sqrt(2L)`, which
    /// makes every row exactly balanced at initialization.
    pub fn balanced(l: usize) -> Self {
        let alpha_g = 1e-4;
        Self {
            alpha_g,
            alpha_v: balanced_alpha_v(alpha_g, l),
            eta_g: 1e-2,
            eta_v: 1e-2,
            max_iters: 5_000_000,
            record_every: 0,
            loss_tol: 1e-12,
            rel_change_tol: 1e-14,
            update_order: UpdateOrder::Sequential,
        }
    }

    /// Sets `alpha_g` and re-derives the balanced `alpha_v`.
    pub fn with_alpha_g(mut self, alpha_g: f64, l: usize) -> Self {
        self.alpha_g = alpha_g;
        self.alpha_v = balanced_alpha_v(alpha_g, l);
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta_g = eta;
        self.eta_v = eta;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn is_balanced(&self, l: usize) -> bool {
        let lhs = 0.5 * self.alpha_g * self.alpha_g;
        let rhs = l as f64 * self.alpha_v * self.alpha_v;
        (lhs - rhs).abs() <= 1e-12 * lhs.max(rhs)
    }

    pub fn effective_record_every(&self) -> usize {
        if self.record_every > 0 {
            self.record_every
        } else {
            self.max_iters.div_ceil(MAX_AUTO_SAMPLES).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha_g", self.alpha_g),
            ("alpha_v", self.alpha_v),
            ("eta_g", self.eta_g),
            ("eta_v", self.eta_v),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.loss_tol >= 0.0) || !(self.rel_change_tol >= 0.0) {
            return Err(Error::InvalidConfig("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn balanced_alpha_v(alpha_g: f64, l: usize) -> f64 {
    alpha_g / (2.0 * l as f64).sqrt()
}

/// `g = alpha_g 1_N`, `V = alpha_v 1_{N x L}`.
pub fn init_factors(n: usize, l: usize, cfg: &RecoveryConfig) -> Result<FactorPair> {
    FactorPair::new(vec![cfg.alpha_g; n], DenseMatrix::filled(n, l, cfg.alpha_v)?)
}

fn check_problem(fp: &FactorPair, a: &DenseMatrix, y: &DenseMatrix, op: &'static str) -> Result<()> {
    if a.cols() != fp.n() {
        return Err(Error::DimensionMismatch {
            op,
            lhs: a.shape(),
            rhs: fp.v.shape(),
        });
    }
    if a.rows() != y.rows() || y.cols() != fp.l() {
        return Err(Error::DimensionMismatch {
            op,
            lhs: a.shape(),
            rhs: y.shape(),
        });
    }
    Ok(())
}

/// `Λ = A^T (Y - A X)`.
pub fn residual_lambda(a: &DenseMatrix, y: &DenseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != x.rows() || a.rows() != y.rows() || x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            op: "residual_lambda",
            lhs: a.shape(),
            rhs: x.shape(),
        });
    }
    let (r, _) = residual(a, y, x);
    let mut out = vec![0.0; a.cols() * y.cols()];
    gemm_into(a, true, &r, &mut out);
    finite(DenseMatrix::from_raw(a.cols(), y.cols(), out), "residual_lambda")
}

/// `(Y - A X, ||Y - A X||_F^2)`; shapes are checked by the callers.
fn residual(a: &DenseMatrix, y: &DenseMatrix, x: &DenseMatrix) -> (DenseMatrix, f64) {
    let mut ax = vec![0.0; a.rows() * x.cols()];
    gemm_into(a, false, x, &mut ax);
    let mut sq = 0.0;
    for (r, yv) in ax.iter_mut().zip(y.as_slice()) {
        *r = yv - *r;
        sq += *r * *r;
    }
    (DenseMatrix::from_raw(a.rows(), x.cols(), ax), sq)
}

fn finite(m: DenseMatrix, op: &'static str) -> Result<DenseMatrix> {
    if m.as_slice().iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(Error::NonFinite(op))
    }
}

/// `||Y - A reconstruct(fp)||_F^2`.
pub fn loss(fp: &FactorPair, a: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    check_problem(fp, a, y, "loss")?;
    let (_, sq) = residual(a, y, &fp.reconstruct());
    if sq.is_finite() {
        Ok(sq)
    } else {
        Err(Error::NonFinite("loss"))
    }
}

/// Analytic gradients `∇_g = -4 g ⊙ ((Λ ⊙ V) 1)` and `∇_V = -2 (g^2 1_L) ⊙ Λ`.
pub fn gradients(fp: &FactorPair, a: &DenseMatrix, y: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    check_problem(fp, a, y, "gradients")?;
    let lambda = residual_lambda(a, y, &fp.reconstruct())?;
    let l = fp.l();
    let mut grad_g = Vec::with_capacity(fp.n());
    let mut grad_v = vec![0.0; fp.n() * l];
    for (i, gi) in fp.g.iter().enumerate() {
        let lam = lambda.row(i);
        let corr: f64 = lam.iter().zip(fp.v.row(i)).map(|(a, b)| a * b).sum();
        grad_g.push(-4.0 * gi * corr);
        let g2 = gi * gi;
        for (o, lv) in grad_v[i * l..(i + 1) * l].iter_mut().zip(lam) {
            *o = -2.0 * g2 * lv;
        }
    }
    Ok((grad_g, finite(DenseMatrix::from_raw(fp.n(), l, grad_v), "gradients")?))
}

/// Computes `Λ` either directly or through the Gram matrix `A^T A`,
/// whichever needs fewer multiplications for the problem shape.
struct ResidualOperator<'a> {
    a: &'a DenseMatrix,
    y: &'a DenseMatrix,
    gram: Option<(DenseMatrix, DenseMatrix)>,
    y_norm_sq: f64,
    scratch: Vec<f64>,
}

impl<'a> ResidualOperator<'a> {
    fn new(a: &'a DenseMatrix, y: &'a DenseMatrix) -> Self {
        let (m, n) = a.shape();
        let gram = if n < 2 * m {
            let mut ata = vec![0.0; n * n];
            gemm_into(a, true, a, &mut ata);
            let mut aty = vec![0.0; n * y.cols()];
            gemm_into(a, true, y, &mut aty);
            Some((
                DenseMatrix::from_raw(n, n, ata),
                DenseMatrix::from_raw(n, y.cols(), aty),
            ))
        } else {
            None
        };
        Self {
            a,
            y,
            gram,
            y_norm_sq: y.frobenius_norm_sq(),
            scratch: vec![0.0; m * y.cols()],
        }
    }

    /// Fills `lambda` from `x` and returns an estimate of the loss. The
    /// estimate is exact on the direct path; on the Gram path it is
    /// `||Y||^2 - <X, A^T Y> - <X, Λ>` and may carry cancellation error.
    fn lambda_into(&mut self, x: &DenseMatrix, lambda: &mut [f64]) -> f64 {
        match &self.gram {
            Some((ata, aty)) => {
                gemm_into(ata, false, x, lambda);
                let mut xb = 0.0;
                let mut xl = 0.0;
                for ((lv, bv), xv) in lambda.iter_mut().zip(aty.as_slice()).zip(x.as_slice()) {
                    *lv = bv - *lv;
                    xb += xv * bv;
                    xl += xv * *lv;
                }
                self.y_norm_sq - xb - xl
            }
            None => {
                gemm_into(self.a, false, x, &mut self.scratch);
                let mut sq = 0.0;
                for (r, yv) in self.scratch.iter_mut().zip(self.y.as_slice()) {
                    *r = yv - *r;
                    sq += *r * *r;
                }
                let r = DenseMatrix::from_raw(self.a.rows(), x.cols(), std::mem::take(&mut self.scratch));
                gemm_into(self.a, true, &r, lambda);
                self.scratch = r.into_vec();
                sq
            }
        }
    }

    /// Slack to put on a Gram-path loss estimate before trusting it.
    fn loss_estimate_slack(&self) -> f64 {
        if self.gram.is_some() {
            1e-10 * self.y_norm_sq
        } else {
            0.0
        }
    }
}

/// One gradient step on `(g, V)` with reusable buffers. Shared by the
/// recovery loop and the flow integrator so that both produce bitwise
/// identical iterates.
pub struct GradientStepper<'a> {
    op: ResidualOperator<'a>,
    x: DenseMatrix,
    lambda: Vec<f64>,
    g_next: Vec<f64>,
    v_next: DenseMatrix,
}

/// What a single step saw at its starting point.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    /// Loss estimate at the starting point (see `ResidualOperator`).
    pub loss_estimate: f64,
}

impl<'a> GradientStepper<'a> {
    pub fn new(a: &'a DenseMatrix, y: &'a DenseMatrix) -> Result<Self> {
        if a.rows() != y.rows() {
            return Err(Error::DimensionMismatch {
                op: "GradientStepper::new",
                lhs: a.shape(),
                rhs: y.shape(),
            });
        }
        let (n, l) = (a.cols(), y.cols());
        Ok(Self {
            op: ResidualOperator::new(a, y),
            x: DenseMatrix::from_raw(n, l, vec![0.0; n * l]),
            lambda: vec![0.0; n * l],
            g_next: vec![0.0; n],
            v_next: DenseMatrix::from_raw(n, l, vec![0.0; n * l]),
        })
    }

    /// Reconstruction at the start of the most recent step.
    pub fn last_x(&self) -> &DenseMatrix {
        &self.x
    }

    /// Advances `fp` by one step. On a non-finite result `fp` is left at its
    /// previous (finite) value and `NonFinite` is returned.
    pub fn step(&mut self, fp: &mut FactorPair, eta_g: f64, eta_v: f64, order: UpdateOrder) -> Result<StepInfo> {
        if fp.n() != self.x.rows() || fp.l() != self.x.cols() {
            return Err(Error::DimensionMismatch {
                op: "GradientStepper::step",
                lhs: self.x.shape(),
                rhs: fp.v.shape(),
            });
        }
        reconstruct_into(&fp.g, &fp.v, self.x.as_mut_slice());
        let loss_estimate = self.op.lambda_into(&self.x, &mut self.lambda);
        let l = fp.l();
        let mut ok = true;
        for i in 0..fp.n() {
            let gi = fp.g[i];
            let lam = &self.lambda[i * l..(i + 1) * l];
            let v_row = fp.v.row(i);
            let corr: f64 = lam.iter().zip(v_row).map(|(a, b)| a * b).sum();
            let g_new = gi + 4.0 * eta_g * gi * corr;
            let gg = match order {
                UpdateOrder::Sequential => g_new * g_new,
                UpdateOrder::Simultaneous => gi * gi,
            };
            let coef = 2.0 * eta_v * gg;
            let out = self.v_next.row_mut(i);
            for ((o, vij), lv) in out.iter_mut().zip(v_row).zip(lam) {
                *o = vij + coef * lv;
            }
            ok &= g_new.is_finite() && out.iter().all(|v| v.is_finite());
            self.g_next[i] = g_new;
        }
        if !ok {
            return Err(Error::NonFinite("gradient step"));
        }
        std::mem::swap(&mut fp.g, &mut self.g_next);
        std::mem::swap(&mut fp.v, &mut self.v_next);
        Ok(StepInfo { loss_estimate })
    }

    /// Restores the factors from before the last successful `step`.
    fn undo(&mut self, fp: &mut FactorPair) {
        std::mem::swap(&mut fp.g, &mut self.g_next);
        std::mem::swap(&mut fp.v, &mut self.v_next);
    }

    /// Exact loss at an arbitrary point, via the direct residual.
    fn exact_loss(&self, x: &DenseMatrix) -> f64 {
        residual(self.op.a, self.op.y, x).1
    }
}

/// Sampled time series of per-row quantities along a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<usize>,
    pub row_norms: Vec<Vec<f64>>,
    pub half_g_sq: Vec<Vec<f64>>,
    pub v_row_sq: Vec<Vec<f64>>,
    pub loss: Vec<f64>,
    /// `<λ_i, x̂_i>` with `x̂_i = 0` for zero rows.
    pub residual_corr: Vec<Vec<f64>>,
}

pub const TRAJECTORY_CSV_HEADER: &str = "iter,loss,row,half_g_sq,v_row_sq,row_norm,residual_corr";

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_time(&self) -> Option<usize> {
        self.times.last().copied()
    }

    /// Appends a sample at iteration `t` computed directly from `fp`.
    pub fn push_sample(&mut self, t: usize, fp: &FactorPair, a: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
        check_problem(fp, a, y, "TrajectoryRecord::push_sample")?;
        if let Some(last) = self.last_time() {
            if t <= last {
                return Err(Error::InvalidConfig(format!(
                    "sample time {t} does not follow {last}"
                )));
            }
        }
        let x = fp.reconstruct();
        let (r, sq) = residual(a, y, &x);
        let mut lambda = vec![0.0; fp.n() * fp.l()];
        gemm_into(a, true, &r, &mut lambda);
        let l = fp.l();
        let mut norms = Vec::with_capacity(fp.n());
        let mut half = Vec::with_capacity(fp.n());
        let mut vsq = Vec::with_capacity(fp.n());
        let mut corr = Vec::with_capacity(fp.n());
        for i in 0..fp.n() {
            let xr = x.row(i);
            let nrm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
            let lam = &lambda[i * l..(i + 1) * l];
            let c = if nrm > 0.0 {
                lam.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / nrm
            } else {
                0.0
            };
            norms.push(nrm);
            half.push(0.5 * fp.g[i] * fp.g[i]);
            vsq.push(fp.v.row(i).iter().map(|v| v * v).sum());
            corr.push(c);
        }
        self.times.push(t);
        self.row_norms.push(norms);
        self.half_g_sq.push(half);
        self.v_row_sq.push(vsq);
        self.loss.push(sq);
        self.residual_corr.push(corr);
        Ok(())
    }

    /// One line per (sample, row) under [`TRAJECTORY_CSV_HEADER`].
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRAJECTORY_CSV_HEADER}")?;
        for (s, &t) in self.times.iter().enumerate() {
            for row in 0..self.row_norms[s].len() {
                writeln!(
                    out,
                    "{t},{:e},{row},{:e},{:e},{:e},{:e}",
                    self.loss[s],
                    self.half_g_sq[s][row],
                    self.v_row_sq[s][row],
                    self.row_norms[s][row],
                    self.residual_corr[s][row]
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    LossBelowTol,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Recovery {
    pub x_hat: DenseMatrix,
    pub factors: FactorPair,
    pub trajectory: TrajectoryRecord,
    /// Number of parameter updates performed.
    pub iterations: usize,
    pub stop: StopReason,
}

/// Runs IR-MMV from the default constant initialization.
pub fn recover(a: &DenseMatrix, y: &DenseMatrix, cfg: &RecoveryConfig) -> Result<Recovery> {
    let init = init_factors(a.cols(), y.cols(), cfg)?;
    recover_from(a, y, cfg, init)
}

/// Runs IR-MMV from an explicit starting point.
pub fn recover_from(a: &DenseMatrix, y: &DenseMatrix, cfg: &RecoveryConfig, init: FactorPair) -> Result<Recovery> {
    cfg.validate()?;
    check_problem(&init, a, y, "recover")?;
    let every = cfg.effective_record_every();
    let mut fp = init;
    let mut stepper = GradientStepper::new(a, y)?;
    let mut traj = TrajectoryRecord::default();
    traj.push_sample(0, &fp, a, y)?;

    let mut prev_x = fp.reconstruct();
    let mut stop = StopReason::MaxIters;
    let mut t = 0;
    while t < cfg.max_iters {
        let info = match stepper.step(&mut fp, cfg.eta_g, cfg.eta_v, cfg.update_order) {
            Ok(info) => info,
            Err(Error::NonFinite(_)) => {
                return Err(Error::Divergence {
                    iteration: t + 1,
                    last_finite: Box::new(fp),
                })
            }
            Err(e) => return Err(e),
        };
        // The step started from X(t); test the stopping rules on it.
        if info.loss_estimate < cfg.loss_tol + stepper.op.loss_estimate_slack()
            && stepper.exact_loss(stepper.last_x()) < cfg.loss_tol
        {
            // X(t) already met the tolerance: report X(t), not X(t+1).
            stepper.undo(&mut fp);
            stop = StopReason::LossBelowTol;
            break;
        }
        t += 1;
        let x_new = fp.reconstruct();
        let denom = prev_x.frobenius_norm();
        let change = x_new.sub(&prev_x).map(|d| d.frobenius_norm()).unwrap_or(f64::INFINITY);
        prev_x = x_new;
        if t % every == 0 {
            traj.push_sample(t, &fp, a, y)?;
        }
        if denom > 0.0 && change < cfg.rel_change_tol * denom {
            stop = StopReason::Stalled;
            break;
        }
    }
    if traj.last_time() != Some(t) {
        traj.push_sample(t, &fp, a, y)?;
    }
    let x_hat = fp.reconstruct();
    Ok(Recovery {
        x_hat,
        factors: fp,
        trajectory: traj,
        iterations: t,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::matmul;

    fn small_problem() -> (DenseMatrix, DenseMatrix, FactorPair) {
        let a = DenseMatrix::from_rows(&[[0.6, 0.0, 0.8], [0.8, 1.0, -0.6]]).unwrap();
        let y = DenseMatrix::from_rows(&[[1.0, -0.5], [0.25, 2.0]]).unwrap();
        let g = vec![0.9, 1.3, 0.4];
        let v = DenseMatrix::from_rows(&[[0.5, 1.2], [0.3, 0.7], [1.9, 0.2]]).unwrap();
        (a, y, FactorPair::new(g, v).unwrap())
    }

    #[test]
    fn factor_pair_shape_checked() {
        assert!(FactorPair::new(vec![1.0; 2], DenseMatrix::ones(3, 2).unwrap()).is_err());
        assert!(FactorPair::new(vec![f64::NAN], DenseMatrix::ones(1, 2).unwrap()).is_err());
    }

    #[test]
    fn default_init_is_balanced() {
        let cfg = RecoveryConfig::balanced(100);
        assert_eq!(cfg.alpha_v, 1e-4 / 200f64.sqrt());
        assert!(cfg.is_balanced(100));
        let fp = init_factors(25, 100, &cfg).unwrap();
        let eps_r = fp.row_balance().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(eps_r <= 1e-12 * 0.5 * cfg.alpha_g * cfg.alpha_g);
        let x = fp.reconstruct();
        let expected = cfg.alpha_g.powi(3) / 200f64.sqrt();
        for v in x.as_slice() {
            assert!((v - expected).abs() <= 1e-15 * expected);
        }
    }

    #[test]
    fn reconstruct_examples() {
        let v = DenseMatrix::from_rows(&[[3.0, -1.0], [2.0, 5.0]]).unwrap();
        let zero_g = FactorPair::new(vec![0.0, 0.0], v).unwrap();
        assert!(zero_g.reconstruct().is_all_zero());

        let fp = FactorPair::new(vec![1.0, 2.0], DenseMatrix::ones(2, 2).unwrap()).unwrap();
        assert_eq!(
            reconstruct(&fp),
            DenseMatrix::from_rows(&[[1.0, 1.0], [4.0, 4.0]]).unwrap()
        );

        let zero_v = FactorPair::new(vec![1.0, 2.0], DenseMatrix::zeros(2, 2).unwrap()).unwrap();
        assert!(zero_v.reconstruct().is_all_zero());
    }

    #[test]
    fn loss_examples() {
        let (a, _, fp) = small_problem();
        let x = fp.reconstruct();
        let y = matmul(&a, &x).unwrap();
        assert!(loss(&fp, &a, &y).unwrap() < 1e-28);

        let zero = FactorPair::new(vec![0.0; 3], DenseMatrix::ones(3, 2).unwrap()).unwrap();
        assert_eq!(loss(&zero, &a, &y).unwrap(), y.frobenius_norm_sq());

        let (a, y, fp) = small_problem();
        let direct = y.sub(&matmul(&a, &fp.reconstruct()).unwrap()).unwrap().frobenius_norm().powi(2);
        assert!((loss(&fp, &a, &y).unwrap() - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn loss_rejects_mismatched_shapes() {
        let (a, _, fp) = small_problem();
        let bad_y = DenseMatrix::ones(3, 2).unwrap();
        assert!(matches!(loss(&fp, &a, &bad_y), Err(Error::DimensionMismatch { .. })));
        assert!(gradients(&fp, &a, &bad_y).is_err());
    }

    #[test]
    fn residual_lambda_examples() {
        let (a, _, fp) = small_problem();
        let x = fp.reconstruct();
        let y = matmul(&a, &x).unwrap();
        assert!(residual_lambda(&a, &y, &x).unwrap().max_abs() < 1e-14);

        let zero = DenseMatrix::zeros(3, 2).unwrap();
        let aty = matmul(&a.transpose(), &y).unwrap();
        assert_eq!(residual_lambda(&a, &y, &zero).unwrap(), aty);

        // A = [[1,2],[0,1]], Y = [[1,0],[2,1]], X = [[1,0],[0,1]]:
        // Y - AX = [[0,-2],[2,0]], A^T (Y - AX) = [[0,-2],[2,-4]].
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        let y = DenseMatrix::from_rows(&[[1.0, 0.0], [2.0, 1.0]]).unwrap();
        let x = DenseMatrix::identity(2).unwrap();
        assert_eq!(
            residual_lambda(&a, &y, &x).unwrap(),
            DenseMatrix::from_rows(&[[0.0, -2.0], [2.0, -4.0]]).unwrap()
        );
    }

    #[test]
    fn gradients_vanish_at_perfect_fit_and_on_zero_rows() {
        let (a, _, fp) = small_problem();
        let y = matmul(&a, &fp.reconstruct()).unwrap();
        let (gg, gv) = gradients(&fp, &a, &y).unwrap();
        assert!(gg.iter().all(|v| v.abs() < 1e-13));
        assert!(gv.max_abs() < 1e-13);

        let (a, y, fp) = small_problem();
        let (mut g, v) = fp.into_parts();
        g[1] = 0.0;
        let fp = FactorPair::new(g, v).unwrap();
        let (gg, gv) = gradients(&fp, &a, &y).unwrap();
        assert_eq!(gg[1], 0.0);
        assert!(gv.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let (a, y, fp) = small_problem();
        let (gg, gv) = gradients(&fp, &a, &y).unwrap();
        let h = 1e-6;
        let f = |fp: &FactorPair| loss(fp, &a, &y).unwrap();
        for i in 0..fp.n() {
            let mut plus = fp.g().to_vec();
            let mut minus = fp.g().to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fd = (f(&FactorPair::new(plus, fp.v().clone()).unwrap())
                - f(&FactorPair::new(minus, fp.v().clone()).unwrap()))
                / (2.0 * h);
            assert!((fd - gg[i]).abs() <= 1e-5 * gg[i].abs().max(1.0), "g[{i}]: {fd} vs {}", gg[i]);
        }
        for i in 0..fp.n() {
            for j in 0..fp.l() {
                let bump = |d: f64| {
                    let v = DenseMatrix::from_fn(3, 2, |r, c| fp.v().get(r, c) + if (r, c) == (i, j) { d } else { 0.0 })
                        .unwrap();
                    f(&FactorPair::new(fp.g().to_vec(), v).unwrap())
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = gv.get(i, j);
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0));
            }
        }
    }

    #[test]
    fn sequential_and_simultaneous_steps_differ_only_in_v() {
        let (a, y, fp) = small_problem();
        let mut seq = fp.clone();
        let mut sim = fp.clone();
        let mut st = GradientStepper::new(&a, &y).unwrap();
        st.step(&mut seq, 0.01, 0.01, UpdateOrder::Sequential).unwrap();
        st.step(&mut sim, 0.01, 0.01, UpdateOrder::Simultaneous).unwrap();
        assert_eq!(seq.g(), sim.g());
        assert_ne!(seq.v(), sim.v());

        let (gg, gv) = gradients(&fp, &a, &y).unwrap();
        for i in 0..3 {
            assert!((sim.g()[i] - (fp.g()[i] - 0.01 * gg[i])).abs() < 1e-14);
            for j in 0..2 {
                assert!((sim.v().get(i, j) - (fp.v().get(i, j) - 0.01 * gv.get(i, j))).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_signal_stays_near_zero() {
        let a = crate::problem::generate_sensing_matrix(10, 8, 3).unwrap();
        let y = DenseMatrix::zeros(10, 4).unwrap();
        let cfg = RecoveryConfig::balanced(4).with_alpha_g(1e-2, 4).with_max_iters(2000);
        let init = init_factors(8, 4, &cfg).unwrap();
        let x0 = init.reconstruct().frobenius_norm();
        let rec = recover(&a, &y, &cfg).unwrap();
        assert!(rec.x_hat.frobenius_norm() <= x0);
        assert!(rec.trajectory.loss.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn injected_zero_rows_stay_zero() {
        let inst = crate::problem::ProblemInstance::generate(
            crate::problem::Dims { m: 12, n: 8, l: 3, k: 2 },
            &crate::problem::RowMagnitudes::ConstantOne,
            crate::problem::Snr::Noiseless,
            5,
        )
        .unwrap();
        let mut cfg = RecoveryConfig::balanced(3).with_alpha_g(0.1, 3).with_max_iters(3000);
        cfg.record_every = 1;
        let init = init_factors(8, 3, &cfg).unwrap();
        let (mut g, v) = init.into_parts();
        let mut v = v.into_vec();
        for row in [0usize, 5] {
            g[row] = 0.0;
            v[row * 3..row * 3 + 3].fill(0.0);
        }
        let init = FactorPair::new(g, DenseMatrix::new(8, 3, v).unwrap()).unwrap();
        let rec = recover_from(&inst.a, &inst.y, &cfg, init).unwrap();
        for norms in &rec.trajectory.row_norms {
            assert_eq!(norms[0], 0.0);
            assert_eq!(norms[5], 0.0);
        }
        assert_eq!(rec.factors.g()[0], 0.0);
        assert!(rec.factors.v().row(5).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn large_step_reports_divergence_with_finite_iterate() {
        let a = crate::problem::generate_sensing_matrix(6, 4, 1).unwrap();
        let y = DenseMatrix::filled(6, 2, 50.0).unwrap();
        let cfg = RecoveryConfig::balanced(2).with_alpha_g(1.0, 2).with_eta(10.0).with_max_iters(10_000);
        match recover(&a, &y, &cfg) {
            Err(Error::Divergence { iteration, last_finite }) => {
                assert!(iteration >= 1);
                assert!(last_finite.g().iter().all(|v| v.is_finite()));
                assert!(last_finite.v().as_slice().iter().all(|v| v.is_finite()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let a = DenseMatrix::identity(2).unwrap();
        let y = DenseMatrix::ones(2, 1).unwrap();
        let mut cfg = RecoveryConfig::balanced(1);
        cfg.eta_g = 0.0;
        assert!(matches!(recover(&a, &y, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn trajectory_csv_layout() {
        let (a, y, fp) = small_problem();
        let mut traj = TrajectoryRecord::default();
        traj.push_sample(0, &fp, &a, &y).unwrap();
        traj.push_sample(5, &fp, &a, &y).unwrap();
        assert!(traj.push_sample(5, &fp, &a, &y).is_err());
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRAJECTORY_CSV_HEADER);
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[4].starts_with("5,"));
    }
}
