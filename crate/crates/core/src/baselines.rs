//! Reference MMV solvers: simultaneous OMP, simultaneous subspace pursuit
//! and regularized M-FOCUSS.

use crate::error::{Error, Result};
use crate::matrix::{lstsq_min_norm, matmul, matmul_tn, ridge_solve, solve_spd, DenseMatrix};

/// Iteration cap for subspace pursuit, which can cycle.
pub const MSP_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    /// Row sparsity for the greedy solvers.
    pub k: usize,
    /// Diversity exponent of M-FOCUSS.
    pub p: f64,
    /// M-FOCUSS regularization, usually the noise variance.
    pub lambda: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
    /// Rows with a smaller norm are treated as zero.
    pub prune_tol: f64,
}

impl BaselineConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            p: 0.8,
            lambda: 0.0,
            max_iters: 200,
            conv_tol: 1e-8,
            prune_tol: 1e-10,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    fn check_greedy(&self, a: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
        check_shapes(a, y)?;
        if self.k == 0 || self.k > a.cols() {
            return Err(Error::Sparsity { k: self.k, n: a.cols() });
        }
        Ok(())
    }
}

fn check_shapes(a: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
    if a.rows() != y.rows() {
        return Err(Error::DimensionMismatch {
            op: "baseline",
            lhs: a.shape(),
            rhs: y.shape(),
        });
    }
    Ok(())
}

/// Indices of the `k` largest scores, ties going to the lower index.
fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    idx.truncate(k);
    idx
}

/// Least-squares fit of `y` on the columns `support` of `a`, returning the
/// coefficients and the residual `y - a_S x_S`.
fn refit(a: &DenseMatrix, y: &DenseMatrix, support: &[usize]) -> Result<(DenseMatrix, DenseMatrix)> {
    let a_s = a.select_columns(support)?;
    let x_s = ridge_solve(&a_s, y, 0.0)?;
    let r = y.sub(&matmul(&a_s, &x_s)?)?;
    Ok((x_s, r))
}

/// `||a_j^T r||_2` for every column `j`.
fn correlation_norms(a: &DenseMatrix, r: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(matmul_tn(a, r)?.row_norms())
}

fn finish(x_s: &DenseMatrix, support: &[usize], n: usize) -> Result<(DenseMatrix, Vec<usize>)> {
    let mut order: Vec<usize> = (0..support.len()).collect();
    order.sort_by_key(|&i| support[i]);
    let sorted: Vec<usize> = order.iter().map(|&i| support[i]).collect();
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| x_s.row(i).to_vec()).collect();
    let x_sorted = DenseMatrix::from_rows(&rows)?;
    Ok((x_sorted.scatter_rows(&sorted, n)?, sorted))
}

/// Simultaneous orthogonal matching pursuit. Each of the `k` rounds adds the
/// column with the largest row-`ℓ2` residual correlation and refits the
/// selected rows by least squares. Returns the estimate and its sorted
/// support.
pub fn somp_recover(a: &DenseMatrix, y: &DenseMatrix, cfg: &BaselineConfig) -> Result<(DenseMatrix, Vec<usize>)> {
    cfg.check_greedy(a, y)?;
    let mut support = Vec::with_capacity(cfg.k);
    let mut r = y.clone();
    let mut x_s = None;
    for _ in 0..cfg.k {
        let corr = correlation_norms(a, &r)?;
        let pick = (0..corr.len())
            .filter(|j| !support.contains(j))
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if corr[b] >= corr[j] => Some(b),
                _ => Some(j),
            })
            .expect("k <= n leaves a free column");
        support.push(pick);
        let (xs, res) = refit(a, y, &support)?;
        x_s = Some(xs);
        r = res;
    }
    finish(&x_s.expect("k >= 1"), &support, a.cols())
}

/// Simultaneous subspace pursuit with a cap of [`MSP_MAX_ITERS`] rounds.
/// Stops when the support repeats or the residual stops shrinking, and
/// returns the best-residual support seen.
pub fn msp_recover(a: &DenseMatrix, y: &DenseMatrix, cfg: &BaselineConfig) -> Result<(DenseMatrix, Vec<usize>)> {
    msp_run(a, y, cfg).map(|(x, s, _)| (x, s))
}

/// [`msp_recover`] that also reports the number of rounds taken.
pub fn msp_run(a: &DenseMatrix, y: &DenseMatrix, cfg: &BaselineConfig) -> Result<(DenseMatrix, Vec<usize>, usize)> {
    cfg.check_greedy(a, y)?;
    let k = cfg.k;
    let mut support = top_k(&correlation_norms(a, y)?, k);
    let (mut x_s, mut r) = refit(a, y, &support)?;
    let mut res_norm = r.frobenius_norm();
    let mut rounds = 0;
    for _ in 0..MSP_MAX_ITERS {
        rounds += 1;
        let mut merged = support.clone();
        for j in top_k(&correlation_norms(a, &r)?, k) {
            if !merged.contains(&j) {
                merged.push(j);
            }
        }
        let (x_merged, _) = refit(a, y, &merged)?;
        let keep = top_k(&x_merged.row_norms(), k);
        let next: Vec<usize> = keep.iter().map(|&i| merged[i]).collect();
        let mut sorted_next = next.clone();
        sorted_next.sort_unstable();
        let mut sorted_cur = support.clone();
        sorted_cur.sort_unstable();
        if sorted_next == sorted_cur {
            break;
        }
        let (x_next, r_next) = refit(a, y, &next)?;
        let next_norm = r_next.frobenius_norm();
        if next_norm >= res_norm {
            break;
        }
        support = next;
        x_s = x_next;
        r = r_next;
        res_norm = next_norm;
    }
    let (x, s) = finish(&x_s, &support, a.cols())?;
    Ok((x, s, rounds))
}

/// `||Y - A X||_F^2 + lambda Σ_i ||X_{i:}||^p`.
pub fn focuss_objective(a: &DenseMatrix, y: &DenseMatrix, x: &DenseMatrix, lambda: f64, p: f64) -> Result<f64> {
    let fit = y.sub(&matmul(a, x)?)?.frobenius_norm_sq();
    let penalty: f64 = x.row_norms().iter().map(|n| n.powf(p)).sum();
    Ok(fit + lambda * penalty)
}

/// Iterates of a regularized M-FOCUSS run, for inspection.
#[derive(Debug, Clone)]
pub struct FocussRun {
    pub x_hat: DenseMatrix,
    pub iterates: Vec<DenseMatrix>,
    pub iterations: usize,
    pub converged: bool,
}

/// Regularized M-FOCUSS. With `W = diag(||X_{i:}||^{1-p/2})` each round
/// solves `X = W (AW)^T ((AW)(AW)^T + lambda I)^{-1} Y`; the first round
/// uses `W = I`. Rows below `prune_tol` are fixed at zero.
pub fn mfocuss_recover(a: &DenseMatrix, y: &DenseMatrix, cfg: &BaselineConfig) -> Result<DenseMatrix> {
    Ok(mfocuss_run(a, y, cfg, false)?.x_hat)
}

pub fn mfocuss_run(a: &DenseMatrix, y: &DenseMatrix, cfg: &BaselineConfig, keep_iterates: bool) -> Result<FocussRun> {
    check_shapes(a, y)?;
    if !(cfg.p > 0.0 && cfg.p <= 1.0) {
        return Err(Error::InvalidConfig(format!("p must lie in (0, 1], got {}", cfg.p)));
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    let (m, n) = a.shape();
    let l = y.cols();
    let mut weights = vec![1.0; n];
    let mut x = DenseMatrix::zeros(n, l)?;
    let mut iterates = Vec::new();
    for it in 1..=cfg.max_iters {
        let active: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
        if active.is_empty() {
            if y.is_all_zero() {
                return Ok(FocussRun {
                    x_hat: x,
                    iterates,
                    iterations: it - 1,
                    converged: true,
                });
            }
            return Err(Error::DegenerateSolution(it));
        }
        let w: Vec<f64> = active.iter().map(|&i| weights[i]).collect();
        let aw = DenseMatrix::from_fn(m, active.len(), |r, c| a.get(r, active[c]) * w[c])?;
        let q = weighted_solve(&aw, y, cfg.lambda)?;
        let mut next = vec![0.0; n * l];
        for (c, &i) in active.iter().enumerate() {
            for (o, qv) in next[i * l..(i + 1) * l].iter_mut().zip(q.row(c)) {
                *o = w[c] * qv;
            }
        }
        let mut next = DenseMatrix::new(n, l, next)?;
        for i in 0..n {
            let c = next.row_norm(i);
            if c < cfg.prune_tol {
                weights[i] = 0.0;
                next = zero_row(next, i);
            } else {
                weights[i] = c.powf(1.0 - cfg.p / 2.0);
            }
        }
        let change = next.sub(&x)?.frobenius_norm() / x.frobenius_norm().max(f64::MIN_POSITIVE);
        x = next;
        if keep_iterates {
            iterates.push(x.clone());
        }
        if it > 1 && change < cfg.conv_tol {
            return Ok(FocussRun {
                x_hat: x,
                iterates,
                iterations: it,
                converged: true,
            });
        }
        if x.is_all_zero() && y.is_all_zero() {
            return Ok(FocussRun {
                x_hat: x,
                iterates,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(FocussRun {
        x_hat: x,
        iterates,
        iterations: cfg.max_iters,
        converged: false,
    })
}

fn zero_row(m: DenseMatrix, r: usize) -> DenseMatrix {
    let (rows, cols) = m.shape();
    let mut data = m.into_vec();
    data[r * cols..(r + 1) * cols].fill(0.0);
    DenseMatrix::new(rows, cols, data).expect("zeroing keeps entries finite")
}

/// `B^T (B B^T + lambda I)^{-1} Y`, solved in whichever of the two
/// equivalent forms has the smaller system. `lambda == 0` gives the
/// minimum-norm least-squares solution.
fn weighted_solve(b: &DenseMatrix, y: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
    let (m, k) = b.shape();
    if lambda == 0.0 {
        return lstsq_min_norm(b, y);
    }
    if k <= m {
        return ridge_solve(b, y, lambda);
    }
    let mut gram = matmul(b, &b.transpose())?.into_vec();
    for i in 0..m {
        gram[i * m + i] += lambda;
    }
    let z = solve_spd(&DenseMatrix::new(m, m, gram)?, y)?;
    matmul_tn(b, &z)
}
