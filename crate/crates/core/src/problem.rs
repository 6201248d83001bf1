//! Synthetic MMV instances: Gaussian sensing matrices with unit columns,
//! row-sparse ground truth and noise scaled to an exact empirical SNR.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{matmul, DenseMatrix};

const STREAM_SENSING: u64 = 1;
const STREAM_SIGNAL: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Independent generator per (seed, purpose) so that changing one component
/// of an instance never perturbs the others.
fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<DenseMatrix> {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DenseMatrix::new(rows, cols, data)
}

/// Measurement noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Noiseless,
    Db(f64),
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::Noiseless => write!(f, "noiseless"),
            Snr::Db(db) => write!(f, "{db}"),
        }
    }
}

impl std::str::FromStr for Snr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("noiseless") || s.eq_ignore_ascii_case("inf") {
            return Ok(Snr::Noiseless);
        }
        let db = s.trim_end_matches("dB").trim_end_matches("db").trim();
        db.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Snr::Db)
            .ok_or_else(|| Error::InvalidConfig(format!("bad SNR value {s:?}")))
    }
}

/// Magnitudes of the active rows of a synthetic signal.
#[derive(Debug, Clone, PartialEq)]
pub enum RowMagnitudes {
    /// Every active row is `1_L`.
    ConstantOne,
    /// Active row `j` (in sampling order) is `values[j] * 1_L`.
    Values(Vec<f64>),
    /// Active entries are drawn i.i.d. from `N(mean, std^2)`.
    Gaussian { mean: f64, std: f64 },
}

/// Draws an `m x n` matrix with i.i.d. standard Gaussian entries and unit
/// Euclidean columns.
pub fn generate_sensing_matrix(m: usize, n: usize, seed: u64) -> Result<DenseMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidConfig(format!("sensing matrix must be non-empty, got {m}x{n}")));
    }
    let mut rng = rng_for(seed, STREAM_SENSING);
    gaussian_matrix(m, n, &mut rng)?.normalize_columns()
}

/// Largest absolute inner product between two distinct columns.
pub fn mu_coherence(a: &DenseMatrix) -> Result<f64> {
    let n = a.cols();
    if n < 2 {
        return Err(Error::UndefinedCoherence(n));
    }
    let cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut mu = 0.0_f64;
    for i in 0..n {
        for j in i + 1..n {
            let ip: f64 = cols[i].iter().zip(&cols[j]).map(|(x, y)| x * y).sum();
            mu = mu.max(ip.abs());
        }
    }
    Ok(mu.min(1.0))
}

/// Row-sparse `n x l` signal with `k` active rows chosen uniformly without
/// replacement. Returns the signal and its sorted support.
pub fn generate_row_sparse_signal(
    n: usize,
    l: usize,
    k: usize,
    magnitudes: &RowMagnitudes,
    seed: u64,
) -> Result<(DenseMatrix, Vec<usize>)> {
    if k == 0 || k > n {
        return Err(Error::Sparsity { k, n });
    }
    let mut rng = rng_for(seed, STREAM_SIGNAL);
    let values = match magnitudes {
        RowMagnitudes::ConstantOne | RowMagnitudes::Gaussian { .. } => vec![1.0; k],
        RowMagnitudes::Values(v) => {
            if v.len() != k {
                return Err(Error::InvalidConfig(format!(
                    "{} row magnitudes given for sparsity {k}",
                    v.len()
                )));
            }
            if v.iter().any(|m| *m == 0.0 || !m.is_finite()) {
                return Err(Error::InvalidConfig("active row magnitudes must be finite and nonzero".into()));
            }
            v.clone()
        }
    };
    let picked = index::sample(&mut rng, n, k).into_vec();
    let mut data = vec![0.0; n * l];
    for (&row, &mag) in picked.iter().zip(&values) {
        let out = &mut data[row * l..(row + 1) * l];
        match *magnitudes {
            RowMagnitudes::Gaussian { mean, std } => {
                for v in out {
                    *v = mean + std * rng.sample::<f64, _>(StandardNormal);
                }
            }
            _ => out.fill(mag),
        }
    }
    let mut support = picked;
    support.sort_unstable();
    Ok((DenseMatrix::new(n, l, data)?, support))
}

/// Returns `(y, w)` with `y = a x + w` and `||a x||_F^2 / ||w||_F^2` equal to
/// the requested SNR.
pub fn synthesize_measurements(
    a: &DenseMatrix,
    x: &DenseMatrix,
    snr: Snr,
    seed: u64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let clean = matmul(a, x)?;
    let (m, l) = clean.shape();
    let w = match snr {
        Snr::Noiseless => DenseMatrix::zeros(m, l)?,
        Snr::Db(db) => {
            let signal = clean.frobenius_norm_sq();
            if signal == 0.0 {
                return Err(Error::UndefinedSnr);
            }
            let mut rng = rng_for(seed, STREAM_NOISE);
            let raw = gaussian_matrix(m, l, &mut rng)?;
            let target = signal / 10f64.powf(db / 10.0);
            raw.scale((target / raw.frobenius_norm_sq()).sqrt())?
        }
    };
    let y = clean.add(&w)?;
    Ok((y, w))
}

/// Per-entry noise variance implied by an SNR against a given clean signal.
pub fn noise_variance(clean_power: f64, m: usize, l: usize, snr: Snr) -> f64 {
    match snr {
        Snr::Noiseless => 0.0,
        Snr::Db(db) => clean_power / ((m * l) as f64 * 10f64.powf(db / 10.0)),
    }
}

/// Problem dimensions: `m` measurements, `n` unknown rows, `l` vectors,
/// `k` active rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub l: usize,
    pub k: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            m: 50,
            n: 25,
            l: 100,
            k: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub a: DenseMatrix,
    pub x_true: DenseMatrix,
    pub w: DenseMatrix,
    pub y: DenseMatrix,
    pub support: Vec<usize>,
    pub snr: Snr,
    pub seed: u64,
}

impl ProblemInstance {
    pub fn generate(dims: Dims, magnitudes: &RowMagnitudes, snr: Snr, seed: u64) -> Result<Self> {
        let a = generate_sensing_matrix(dims.m, dims.n, seed)?;
        let (x_true, support) = generate_row_sparse_signal(dims.n, dims.l, dims.k, magnitudes, seed)?;
        let (y, w) = synthesize_measurements(&a, &x_true, snr, seed)?;
        let inst = Self {
            a,
            x_true,
            w,
            y,
            support,
            snr,
            seed,
        };
        inst.check_invariants()?;
        Ok(inst)
    }

    pub fn dims(&self) -> Dims {
        Dims {
            m: self.a.rows(),
            n: self.a.cols(),
            l: self.x_true.cols(),
            k: self.support.len(),
        }
    }

    /// Per-entry variance of the noise as the SNR defines it.
    pub fn noise_variance(&self) -> Result<f64> {
        let clean = matmul(&self.a, &self.x_true)?;
        let d = self.dims();
        Ok(noise_variance(clean.frobenius_norm_sq(), d.m, d.l, self.snr))
    }

    pub fn check_invariants(&self) -> Result<()> {
        let violation = |msg: String| Err(Error::ConstructionViolation(msg));
        let ax = matmul(&self.a, &self.x_true)?;
        let recon = ax.add(&self.w)?;
        let scale = 1.0 + self.y.max_abs();
        if recon
            .as_slice()
            .iter()
            .zip(self.y.as_slice())
            .any(|(r, y)| (r - y).abs() > 1e-12 * scale)
        {
            return violation("y != a x + w".into());
        }
        for r in 0..self.x_true.rows() {
            let active = self.support.binary_search(&r).is_ok();
            let zero = self.x_true.row(r).iter().all(|&v| v == 0.0);
            if active == zero {
                return violation(format!("row {r} disagrees with the support"));
            }
        }
        if let Some(c) = self.a.column_norms().iter().position(|n| (n - 1.0).abs() > 1e-12) {
            return violation(format!("column {c} of a is not unit norm"));
        }
        Ok(())
    }

    /// Writes `a.csv`, `x_true.csv`, `w.csv`, `y.csv` and `meta.csv` into `dir`.
    pub fn write_csv_bundle(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_matrix_csv(&dir.join("a.csv"), &self.a)?;
        write_matrix_csv(&dir.join("x_true.csv"), &self.x_true)?;
        write_matrix_csv(&dir.join("w.csv"), &self.w)?;
        write_matrix_csv(&dir.join("y.csv"), &self.y)?;
        let support: Vec<String> = self.support.iter().map(|s| s.to_string()).collect();
        let meta = format!(
            "key,value\nsnr_db,{}\nseed,{}\nsupport,{}\n",
            self.snr,
            self.seed,
            support.join(";")
        );
        fs::write(dir.join("meta.csv"), meta)?;
        Ok(())
    }

    pub fn read_csv_bundle(dir: &Path) -> Result<Self> {
        let a = read_matrix_csv(&dir.join("a.csv"))?;
        let x_true = read_matrix_csv(&dir.join("x_true.csv"))?;
        let w = read_matrix_csv(&dir.join("w.csv"))?;
        let y = read_matrix_csv(&dir.join("y.csv"))?;
        let meta = fs::read_to_string(dir.join("meta.csv"))?;
        let mut snr = Snr::Noiseless;
        let mut seed = 0;
        let mut support = Vec::new();
        for line in meta.lines().skip(1) {
            let (key, value) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("bad meta line {line:?}")))?;
            match key {
                "snr_db" => snr = value.parse()?,
                "seed" => {
                    seed = value
                        .parse()
                        .map_err(|_| Error::Format(format!("bad seed {value:?}")))?
                }
                "support" => {
                    support = value
                        .split(';')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse().map_err(|_| Error::Format(format!("bad support index {s:?}"))))
                        .collect::<Result<_>>()?
                }
                _ => {}
            }
        }
        let inst = Self {
            a,
            x_true,
            w,
            y,
            support,
            snr,
            seed,
        };
        inst.check_invariants()?;
        Ok(inst)
    }
}

/// First line holds the dimensions as `rows,cols`; each following line is one
/// matrix row. Values use the shortest representation that round-trips.
pub fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{},{}", m.rows(), m.cols())?;
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DenseMatrix> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))??;
    let dims: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("{}: bad header {header:?}", path.display())))?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Format(format!("{}: header must be rows,cols", path.display())));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split(',') {
            data.push(
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("{}: bad value {tok:?}", path.display())))?,
            );
        }
    }
    DenseMatrix::new(rows, cols, data)
}
