#![allow(dead_code)]

use irmmv_core::bench::mnist::IdxImages;
use irmmv_core::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Digit-like 28x28 images: three anti-aliased strokes each, about 15-20%
/// nonzero pixels.
pub fn stroke_images(count: usize, seed: u64) -> IdxImages {
    let mut rng = rng(seed);
    let mut pixels = Vec::with_capacity(count);
    for _ in 0..count {
        let mut img = vec![0u8; 28 * 28];
        for _ in 0..3 {
            let x0: f64 = rng.random_range(6.0..22.0);
            let y0: f64 = rng.random_range(4.0..24.0);
            let x1: f64 = rng.random_range(6.0..22.0);
            let y1: f64 = rng.random_range(4.0..24.0);
            let (dx, dy) = (x1 - x0, y1 - y0);
            for r in 0..28 {
                for c in 0..28 {
                    let (px, py) = (c as f64, r as f64);
                    let t = (((px - x0) * dx + (py - y0) * dy) / (dx * dx + dy * dy).max(1e-9)).clamp(0.0, 1.0);
                    let d = ((px - x0 - t * dx).powi(2) + (py - y0 - t * dy).powi(2)).sqrt();
                    let v = (255.0 * (1.0 - (d - 0.8) / 1.2).clamp(0.0, 1.0)) as u8;
                    img[r * 28 + c] = img[r * 28 + c].max(v);
                }
            }
        }
        pixels.push(img);
    }
    IdxImages { rows: 28, cols: 28, pixels }
}

/// `||Y - A ((g^2 1^T) ⊙ V)||_F^2` by plain loops.
pub fn naive_loss(a: &DenseMatrix, y: &DenseMatrix, g: &[f64], v: &DenseMatrix) -> f64 {
    let (m, n) = a.shape();
    let l = v.cols();
    let mut total = 0.0;
    for r in 0..m {
        for c in 0..l {
            let mut ax = 0.0;
            for i in 0..n {
                ax += a.get(r, i) * g[i] * g[i] * v.get(i, c);
            }
            let d = y.get(r, c) - ax;
            total += d * d;
        }
    }
    total
}

/// Random `m x n` matrix with orthonormal columns by modified Gram-Schmidt.
pub fn orthonormal_columns(m: usize, n: usize, seed: u64) -> DenseMatrix {
    assert!(n <= m);
    let mut rng = rng(seed);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        for q in &cols {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    DenseMatrix::from_fn(m, n, |r, c| cols[c][r]).unwrap()
}

/// Row-sparse signal with rows drawn from `[0.5, 2]` with random signs.
pub fn sparse_signal(n: usize, l: usize, support: &[usize], seed: u64) -> DenseMatrix {
    let mut rng = rng(seed);
    let mut x = vec![0.0; n * l];
    for &r in support {
        for c in 0..l {
            let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            x[r * l + c] = s * rng.random_range(0.5..2.0);
        }
    }
    DenseMatrix::new(n, l, x).unwrap()
}

pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.cols(), |r, c| (0..a.cols()).map(|k| a.get(r, k) * b.get(k, c)).sum()).unwrap()
}

pub fn nonzero_rows(x: &DenseMatrix) -> Vec<usize> {
    (0..x.rows()).filter(|&r| x.row(r).iter().any(|&v| v != 0.0)).collect()
}
