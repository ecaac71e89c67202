//! Reference activations for cross-checking the engine against another framework.
//!
//! A golden directory holds `golden.json`, the preprocessed input tensor and
//! one blob per tap. Every blob is raw little-endian `f32`; tap blobs are
//! `channels × (height·width)` row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EngineError, FeatureMap};
use crate::tensor::Tensor;

pub const GOLDEN_MANIFEST: &str = "golden.json";

#[derive(Debug, Serialize, Deserialize)]
struct GoldenManifest {
    model_name: String,
    input: GoldenBlob,
    taps: Vec<GoldenTap>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GoldenBlob {
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GoldenTap {
    name: String,
    channels: usize,
    height: usize,
    width: usize,
    file: String,
}

/// Preprocessed input and the expected activation at every tap.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldenFeatures {
    pub model_name: String,
    pub input: Tensor,
    pub taps: Vec<FeatureMap>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io { path: path.display().to_string(), source }
}

fn read_f32(path: &Path, expected_len: usize) -> Result<Vec<f32>, EngineError> {
    let bytes = fs::read(path).map_err(io(path))?;
    if bytes.len() != 4 * expected_len {
        return Err(EngineError::ShapeMismatch {
            context: format!("golden blob {}", path.display()),
            expected: vec![4 * expected_len],
            actual: vec![bytes.len()],
        });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn write_f32(path: &Path, data: &[f32]) -> Result<(), EngineError> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io(path))
}

pub fn load_golden_features(dir: &Path) -> Result<GoldenFeatures, EngineError> {
    let mpath = dir.join(GOLDEN_MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(io(&mpath))?;
    let m: GoldenManifest = serde_json::from_str(&text).map_err(|e| EngineError::Manifest(e.to_string()))?;
    let input_path = dir.join(&m.input.file);
    let data = read_f32(&input_path, m.input.shape.iter().product())?;
    let input = Tensor::new(m.input.shape.clone(), data)?;
    let taps = m
        .taps
        .iter()
        .map(|t| {
            let p = dir.join(&t.file);
            let data = read_f32(&p, t.channels * t.height * t.width)?;
            FeatureMap::new(t.name.clone(), t.channels, t.height, t.width, data)
        })
        .collect::<Result<_, _>>()?;
    Ok(GoldenFeatures { model_name: m.model_name, input, taps })
}

pub fn save_golden_features(golden: &GoldenFeatures, dir: &Path) -> Result<(), EngineError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_f32(&dir.join("input.bin"), golden.input.data())?;
    let mut taps = Vec::new();
    for (i, f) in golden.taps.iter().enumerate() {
        let file = format!("tap{i}.bin");
        write_f32(&dir.join(&file), &f.data)?;
        taps.push(GoldenTap { name: f.layer_name.clone(), channels: f.channels, height: f.height, width: f.width, file });
    }
    let m = GoldenManifest {
        model_name: golden.model_name.clone(),
        input: GoldenBlob { file: "input.bin".into(), shape: golden.input.shape().to_vec() },
        taps,
    };
    let mpath = dir.join(GOLDEN_MANIFEST);
    let text = serde_json::to_string_pretty(&m).map_err(|e| EngineError::Manifest(e.to_string()))?;
    fs::write(&mpath, text).map_err(io(&mpath))
}

/// Largest `|a − b| / max(|b|, floor)` over all values of matching taps,
/// with `floor` set to `1e-6 · max|b|` of that tap.
pub fn max_relative_error(actual: &[FeatureMap], expected: &[FeatureMap]) -> Result<f64, EngineError> {
    if actual.len() != expected.len() {
        return Err(EngineError::TapCount { expected: expected.len(), actual: actual.len() });
    }
    let mut worst = 0f64;
    for (a, e) in actual.iter().zip(expected) {
        if a.channels != e.channels || a.data.len() != e.data.len() {
            return Err(EngineError::ShapeMismatch {
                context: format!("golden tap `{}`", e.layer_name),
                expected: vec![e.channels, e.samples()],
                actual: vec![a.channels, a.samples()],
            });
        }
        let scale = e.data.iter().fold(0f64, |m, v| m.max(v.abs() as f64));
        let floor = (1e-6 * scale).max(f64::MIN_POSITIVE);
        for (x, y) in a.data.iter().zip(&e.data) {
            let err = (*x as f64 - *y as f64).abs() / (y.abs() as f64).max(floor);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
