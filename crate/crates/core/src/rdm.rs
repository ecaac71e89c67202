//! Representational dissimilarity matrices over Gram vectors.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gram::GramVector;

#[derive(Debug, Error)]
pub enum RdmError {
    #[error("RDM needs at least one vector")]
    Empty,
    #[error("vector {index} has length {actual}, expected {expected}")]
    LengthMismatch { index: usize, expected: usize, actual: usize },
    #[error("{ids} item ids for {size} items")]
    IdCount { size: usize, ids: usize },
    #[error("{labels} class labels for {size} items")]
    LabelCount { size: usize, labels: usize },
    #[error("vector {0} is constant and cannot be standardized")]
    ConstantVector(usize),
    #[error("RDM file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceVariant {
    /// Euclidean distance over the upper triangle including the diagonal.
    #[default]
    UpperTri,
    /// Frobenius distance over the full symmetric matrix.
    FullFrobenius,
}

impl DistanceVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceVariant::UpperTri => "upper-tri",
            DistanceVariant::FullFrobenius => "full-frobenius",
        }
    }
}

impl std::str::FromStr for DistanceVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "upper-tri" => Ok(Self::UpperTri),
            "full-frobenius" => Ok(Self::FullFrobenius),
            other => Err(format!("unknown distance variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RdmOptions {
    pub variant: DistanceVariant,
    /// Z-score each vector before measuring distances.
    pub standardize: bool,
}

/// Symmetric `S × S` distance matrix with a zero diagonal, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    size: usize,
    values: Vec<f32>,
    item_ids: Vec<String>,
    variant: DistanceVariant,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    size: usize,
    layer: String,
    model: String,
    item_ids: Vec<String>,
    distance_variant: DistanceVariant,
}

impl Rdm {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.size + j]
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn variant(&self) -> DistanceVariant {
        self.variant
    }

    /// Rows and columns reordered by `perm` (new index `k` is old `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Rdm {
        let s = self.size;
        assert_eq!(perm.len(), s, "permutation length");
        let mut values = vec![0f32; s * s];
        for (a, &pa) in perm.iter().enumerate() {
            for (b, &pb) in perm.iter().enumerate() {
                values[a * s + b] = self.values[pa * s + pb];
            }
        }
        Rdm {
            size: s,
            values,
            item_ids: perm.iter().map(|&p| self.item_ids[p].clone()).collect(),
            variant: self.variant,
        }
    }

    /// Condensed upper triangle (`i < j`), row-major, as `f64`.
    pub fn condensed(&self) -> Vec<f64> {
        let s = self.size;
        let mut out = Vec::with_capacity(s * s.saturating_sub(1) / 2);
        for i in 0..s {
            for j in i + 1..s {
                out.push(self.values[i * s + j] as f64);
            }
        }
        out
    }

    /// Writes `stem.bin` (little-endian `f32`, row-major) and `stem.json`.
    pub fn write(&self, stem: &Path, model: &str, layer: &str) -> Result<(), RdmError> {
        let mut bytes = Vec::with_capacity(4 * self.values.len());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(stem.with_extension("bin"), bytes)?;
        let side = Sidecar {
            size: self.size,
            layer: layer.to_string(),
            model: model.to_string(),
            item_ids: self.item_ids.clone(),
            distance_variant: self.variant,
        };
        fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    /// Reads a matrix written by [`Rdm::write`]; returns it with its model and layer names.
    pub fn read(stem: &Path) -> Result<(Rdm, String, String), RdmError> {
        let json_path = stem.with_extension("json");
        let bin_path = stem.with_extension("bin");
        let side: Sidecar = serde_json::from_slice(&fs::read(&json_path)?)?;
        let bytes = fs::read(&bin_path)?;
        let format = |message: String| RdmError::Format { path: bin_path.clone(), message };
        if bytes.len() != 4 * side.size * side.size {
            return Err(format(format!("{} bytes for size {}", bytes.len(), side.size)));
        }
        if side.item_ids.len() != side.size {
            return Err(RdmError::IdCount { size: side.size, ids: side.item_ids.len() });
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let s = side.size;
        for i in 0..s {
            if values[i * s + i] != 0.0 {
                return Err(format(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                if values[i * s + j] != values[j * s + i] {
                    return Err(format(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        let rdm = Rdm { size: s, values, item_ids: side.item_ids, variant: side.distance_variant };
        Ok((rdm, side.model, side.layer))
    }
}

fn standardized(index: usize, v: &[f64]) -> Result<Vec<f64>, RdmError> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(RdmError::ConstantVector(index));
    }
    let sd = var.sqrt();
    Ok(v.iter().map(|x| (x - mean) / sd).collect())
}

/// Per-element weights: off-diagonal entries appear twice in the full matrix.
fn frobenius_weights(n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        w.push(1.0);
        w.extend(std::iter::repeat_n(2.0, n - i - 1));
    }
    w
}

/// Pairwise Euclidean distances between Gram vectors, in `f64`, stored as `f32`.
pub fn compute_rdm(vectors: &[GramVector], item_ids: &[String], options: RdmOptions) -> Result<Rdm, RdmError> {
    let s = vectors.len();
    if s == 0 {
        return Err(RdmError::Empty);
    }
    if item_ids.len() != s {
        return Err(RdmError::IdCount { size: s, ids: item_ids.len() });
    }
    let len = vectors[0].len();
    let n = vectors[0].n();
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != len {
            return Err(RdmError::LengthMismatch { index, expected: len, actual: v.len() });
        }
    }
    let data: Vec<Vec<f64>> = if options.standardize {
        vectors
            .iter()
            .enumerate()
            .map(|(i, v)| standardized(i, v.values()))
            .collect::<Result<_, _>>()?
    } else {
        vectors.iter().map(|v| v.values().to_vec()).collect()
    };
    let weights = match options.variant {
        DistanceVariant::UpperTri => None,
        DistanceVariant::FullFrobenius => Some(frobenius_weights(n)),
    };
    let rows: Vec<Vec<f32>> = (0..s)
        .into_par_iter()
        .map(|a| {
            (a + 1..s)
                .map(|b| {
                    let sq: f64 = match &weights {
                        None => data[a].iter().zip(&data[b]).map(|(x, y)| (x - y) * (x - y)).sum(),
                        Some(w) => data[a]
                            .iter()
                            .zip(&data[b])
                            .zip(w)
                            .map(|((x, y), w)| w * (x - y) * (x - y))
                            .sum(),
                    };
                    sq.sqrt() as f32
                })
                .collect()
        })
        .collect();
    let mut values = vec![0f32; s * s];
    for (a, row) in rows.iter().enumerate() {
        for (k, &d) in row.iter().enumerate() {
            let b = a + 1 + k;
            values[a * s + b] = d;
            values[b * s + a] = d;
        }
    }
    Ok(Rdm { size: s, values, item_ids: item_ids.to_vec(), variant: options.variant })
}

/// Stable ordering of items by class label, ties kept in original order.
pub fn class_order(labels: &[usize]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..labels.len()).collect();
    perm.sort_by_key(|&i| labels[i]);
    perm
}

/// Reorders rows and columns so items of the same class are contiguous.
pub fn sort_by_class(rdm: &Rdm, labels: &[usize]) -> Result<(Rdm, Vec<usize>), RdmError> {
    if labels.len() != rdm.size {
        return Err(RdmError::LabelCount { size: rdm.size, labels: labels.len() });
    }
    let perm = class_order(labels);
    Ok((rdm.permuted(&perm), perm))
}
