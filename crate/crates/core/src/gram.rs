//! Gram-matrix texture representation of a feature map.
//!
//! `G_ij = Σ_m F_im F_jm` summed over spatial samples, with no division by
//! the sample count. The vectorized form keeps the upper triangle including
//! the diagonal, so a layer with `N` channels yields `N(N+1)/2` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::engine::FeatureMap;

pub const GRAM_MAGIC: [u8; 4] = *b"GRAM";
pub const GRAM_RECORD_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GramError {
    #[error("non-finite value in feature map `{0}`")]
    NonFinite(String),
    #[error("vector length {len} is not a triangular number for n = {n}")]
    BadLength { n: usize, len: usize },
    #[error("gram record: {0}")]
    Record(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    values: Vec<f64>,
}

impl GramMatrix {
    pub fn from_rows(n: usize, values: Vec<f64>) -> Option<Self> {
        (values.len() == n * n).then_some(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Squared Frobenius norm of `self - other`.
    pub fn frobenius_sq_diff(&self, other: &GramMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramVector {
    n: usize,
    values: Vec<f64>,
}

impl GramVector {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self, GramError> {
        if values.len() != triangular(n) {
            return Err(GramError::BadLength { n, len: values.len() });
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `n(n+1)/2`.
pub fn triangular(n: usize) -> usize {
    n * (n + 1) / 2
}

pub fn gram_matrix(f: &FeatureMap) -> Result<GramMatrix, GramError> {
    if f.data.iter().any(|v| !v.is_finite()) {
        return Err(GramError::NonFinite(f.layer_name.clone()));
    }
    let n = f.channels;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| f.channel(i).iter().map(|&v| v as f64).collect()).collect();
    let mut values = vec![0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let s: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    Ok(GramMatrix { n, values })
}

pub fn gram_vectorize(g: &GramMatrix) -> GramVector {
    let n = g.n;
    let mut values = Vec::with_capacity(triangular(n));
    for i in 0..n {
        values.extend_from_slice(&g.values[i * n + i..(i + 1) * n]);
    }
    GramVector { n, values }
}

pub fn gram_devectorize(v: &GramVector) -> GramMatrix {
    let n = v.n;
    let mut values = vec![0f64; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            values[i * n + j] = v.values[k];
            values[j * n + i] = v.values[k];
            k += 1;
        }
    }
    GramMatrix { n, values }
}

/// Writes a Gram cache record: the 16-byte header `{"GRAM", version, n, 0}`
/// followed by the vector as little-endian `f32`.
pub fn write_gram_record(path: &Path, v: &GramVector) -> Result<(), GramError> {
    let mut buf = Vec::with_capacity(16 + 4 * v.len());
    buf.write_all(&GRAM_MAGIC)?;
    buf.write_all(&GRAM_RECORD_VERSION.to_le_bytes())?;
    buf.write_all(&(v.n as u32).to_le_bytes())?;
    buf.write_all(&0u32.to_le_bytes())?;
    for &x in &v.values {
        buf.write_all(&(x as f32).to_le_bytes())?;
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_gram_record(path: &Path) -> Result<GramVector, GramError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || bytes[..4] != GRAM_MAGIC {
        return Err(GramError::Record(format!("{}: bad magic", path.display())));
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = word(4);
    if version != GRAM_RECORD_VERSION {
        return Err(GramError::Record(format!("{}: unsupported version {version}", path.display())));
    }
    let n = word(8) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * triangular(n) {
        return Err(GramError::Record(format!(
            "{}: body has {} bytes, expected {}",
            path.display(),
            body.len(),
            4 * triangular(n)
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    GramVector::new(n, values)
}
