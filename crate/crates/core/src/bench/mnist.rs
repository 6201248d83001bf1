//! Reader and writer for the IDX3 image format used by MNIST.

use std::fs;
use std::io;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

const IDX3_MAGIC: u32 = 0x0000_0803;

/// Side length of an MNIST digit.
pub const MNIST_SIDE: usize = 28;

/// Images as stored in an IDX3 file: `count` images of `rows x cols` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<u8>>,
}

pub fn encode_idx3(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len() * images.rows * images.cols);
    out.extend_from_slice(&IDX3_MAGIC.to_be_bytes());
    for d in [images.pixels.len(), images.rows, images.cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for img in &images.pixels {
        out.extend_from_slice(img);
    }
    out
}

fn be_u32(bytes: &[u8], at: usize) -> Result<usize> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| Error::Format("IDX3 header is truncated".into()))
}

/// Decodes at most `count` images (all of them when `count` is `None`).
pub fn decode_idx3(bytes: &[u8], count: Option<usize>) -> Result<IdxImages> {
    let magic = be_u32(bytes, 0)? as u32;
    if magic != IDX3_MAGIC {
        return Err(Error::Format(format!("bad IDX3 magic {magic:#010x}")));
    }
    let total = be_u32(bytes, 4)?;
    let rows = be_u32(bytes, 8)?;
    let cols = be_u32(bytes, 12)?;
    let want = count.unwrap_or(total);
    if want > total {
        return Err(Error::Format(format!("requested {want} images, file holds {total}")));
    }
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < want * size {
        return Err(Error::Format(format!(
            "IDX3 body holds {} bytes, {} needed",
            body.len(),
            want * size
        )));
    }
    let pixels = body.chunks_exact(size.max(1)).take(want).map(<[u8]>::to_vec).collect();
    Ok(IdxImages { rows, cols, pixels })
}

/// `pixels x count` matrix whose column `j` is image `j` flattened row by
/// row, with bytes scaled to `[0, 1]`.
pub fn images_to_matrix(images: &IdxImages) -> Result<DenseMatrix> {
    let n = images.rows * images.cols;
    let count = images.pixels.len();
    DenseMatrix::from_fn(n, count, |p, j| images.pixels[j][p] as f64 / 255.0)
}

/// Loads the first `count` images of an IDX3 file as a `784 x count` matrix.
pub fn load_mnist_idx(path: &Path, count: usize) -> Result<DenseMatrix> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(io::Error::new(
            e.kind(),
            format!(
                "cannot read {}: {e}. Download train-images-idx3-ubyte.gz from \
                 http://yann.lecun.com/exdb/mnist/ (or a mirror), gunzip it and \
                 pass its path",
                path.display()
            ),
        ))
    })?;
    images_to_matrix(&decode_idx3(&bytes, Some(count))?)
}
