//! Portable weight bundles: a directory holding `manifest.json` and one raw
//! little-endian `f32` blob per tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{EngineError, InputSpec, LayerKind, LayerNode, NetworkGraph, Window};
use crate::tensor::Tensor;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_name: String,
    input_spec: ManifestInputSpec,
    nodes: Vec<ManifestNode>,
    taps: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestInputSpec {
    shape: Vec<usize>,
    mean: Vec<f32>,
    std: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestNode {
    name: String,
    kind: String,
    #[serde(default)]
    params: Value,
    inputs: Vec<String>,
    #[serde(default)]
    blobs: BTreeMap<String, BlobRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobRef {
    file: String,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> EngineError {
    EngineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn manifest_err(msg: impl Into<String>) -> EngineError {
    EngineError::Manifest(msg.into())
}

/// Loads and validates a bundle directory.
pub fn load_model_bundle(dir: &Path) -> Result<NetworkGraph, EngineError> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| manifest_err(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != BUNDLE_FORMAT_VERSION {
        return Err(manifest_err(format!(
            "unsupported format_version {} (expected {BUNDLE_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let spec = &manifest.input_spec;
    let (Ok(shape), Ok(mean), Ok(std)) = (
        <[usize; 3]>::try_from(spec.shape.as_slice()),
        <[f32; 3]>::try_from(spec.mean.as_slice()),
        <[f32; 3]>::try_from(spec.std.as_slice()),
    ) else {
        return Err(manifest_err("input_spec needs a 3-element shape, mean and std"));
    };
    let input_spec = InputSpec { shape, mean, std };

    let mut nodes = Vec::with_capacity(manifest.nodes.len());
    for mn in &manifest.nodes {
        let kind = parse_kind(dir, mn)?;
        nodes.push(LayerNode {
            name: mn.name.clone(),
            kind,
            inputs: mn.inputs.clone(),
        });
    }
    NetworkGraph::new(manifest.model_name, input_spec, nodes, manifest.taps)
}

fn read_blob(dir: &Path, blob: &BlobRef) -> Result<Tensor, EngineError> {
    let path = dir.join(&blob.file);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let expected = 4 * blob.shape.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(EngineError::ShapeMismatch {
            context: format!("blob `{}` has {} bytes for shape", blob.file, bytes.len()),
            expected: blob.shape.clone(),
            actual: vec![bytes.len() / 4],
        });
    }
    if let Some(want) = &blob.sha256 {
        let got = hex::encode(Sha256::digest(&bytes));
        if !got.eq_ignore_ascii_case(want) {
            return Err(EngineError::Checksum(blob.file.clone()));
        }
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::new(blob.shape.clone(), data)?)
}

fn blob<'a>(mn: &'a ManifestNode, role: &str) -> Result<&'a BlobRef, EngineError> {
    mn.blobs
        .get(role)
        .ok_or_else(|| manifest_err(format!("node `{}` is missing blob `{role}`", mn.name)))
}

fn vector(dir: &Path, mn: &ManifestNode, role: &str) -> Result<Vec<f32>, EngineError> {
    let t = read_blob(dir, blob(mn, role)?)?;
    if t.shape().len() != 1 {
        return Err(manifest_err(format!("blob `{role}` of `{}` must be 1-D", mn.name)));
    }
    Ok(t.into_data())
}

fn pair(params: &Value, key: &str, default: Option<[usize; 2]>, node: &str) -> Result<[usize; 2], EngineError> {
    match params.get(key) {
        None | Some(Value::Null) => default.ok_or_else(|| manifest_err(format!("node `{node}` is missing param `{key}`"))),
        Some(Value::Number(n)) => {
            let v = n.as_u64().ok_or_else(|| manifest_err(format!("param `{key}` of `{node}` must be a nonnegative integer")))? as usize;
            Ok([v, v])
        }
        Some(v) => serde_json::from_value::<[usize; 2]>(v.clone())
            .map_err(|_| manifest_err(format!("param `{key}` of `{node}` must be an integer or a pair"))),
    }
}

fn parse_kind(dir: &Path, mn: &ManifestNode) -> Result<LayerKind, EngineError> {
    let p = &mn.params;
    let name = mn.name.as_str();
    Ok(match mn.kind.as_str() {
        "conv2d" => {
            let weight = read_blob(dir, blob(mn, "weight")?)?;
            let bias = if mn.blobs.contains_key("bias") {
                Some(vector(dir, mn, "bias")?)
            } else {
                None
            };
            LayerKind::Conv2d {
                weight,
                bias,
                stride: pair(p, "stride", Some([1, 1]), name)?,
                padding: pair(p, "padding", Some([0, 0]), name)?,
            }
        }
        "relu" => LayerKind::Relu,
        "maxpool" | "avgpool" => {
            let kernel = pair(p, "kernel", None, name)?;
            let window = Window {
                kernel,
                stride: pair(p, "stride", Some(kernel), name)?,
                padding: pair(p, "padding", Some([0, 0]), name)?,
            };
            if mn.kind == "maxpool" {
                LayerKind::MaxPool(window)
            } else {
                LayerKind::AvgPool {
                    window,
                    count_include_pad: p.get("count_include_pad").and_then(Value::as_bool).unwrap_or(true),
                }
            }
        }
        "batchnorm-inference" => LayerKind::BatchNorm {
            mean: vector(dir, mn, "running_mean")?,
            var: vector(dir, mn, "running_var")?,
            weight: vector(dir, mn, "weight")?,
            bias: vector(dir, mn, "bias")?,
            eps: p.get("eps").and_then(Value::as_f64).unwrap_or(1e-5),
        },
        "add" => LayerKind::Add,
        "concat" => LayerKind::Concat,
        other => return Err(EngineError::UnknownKind(other.to_string())),
    })
}

fn write_blob(dir: &Path, file: String, shape: Vec<usize>, data: &[f32]) -> Result<BlobRef, EngineError> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    let path = dir.join(&file);
    fs::write(&path, &bytes).map_err(|e| io_err(&path, e))?;
    Ok(BlobRef {
        file,
        shape,
        sha256: Some(hex::encode(Sha256::digest(&bytes))),
    })
}

/// Writes `net` as a bundle into `dir` (created if absent), with checksums.
pub fn save_model_bundle(net: &NetworkGraph, dir: &Path) -> Result<(), EngineError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut nodes = Vec::with_capacity(net.nodes().len());
    for (i, node) in net.nodes().iter().enumerate() {
        let stem: String = node
            .name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect();
        let file = |role: &str| format!("{i:04}_{stem}.{role}.bin");
        let mut blobs = BTreeMap::new();
        let params = match &node.kind {
            LayerKind::Conv2d { weight, bias, stride, padding } => {
                blobs.insert("weight".to_string(), write_blob(dir, file("weight"), weight.shape().to_vec(), weight.data())?);
                if let Some(b) = bias {
                    blobs.insert("bias".to_string(), write_blob(dir, file("bias"), vec![b.len()], b)?);
                }
                json!({ "stride": stride, "padding": padding })
            }
            LayerKind::MaxPool(w) => json!({ "kernel": w.kernel, "stride": w.stride, "padding": w.padding }),
            LayerKind::AvgPool { window: w, count_include_pad } => json!({
                "kernel": w.kernel, "stride": w.stride, "padding": w.padding,
                "count_include_pad": count_include_pad,
            }),
            LayerKind::BatchNorm { mean, var, weight, bias, eps } => {
                for (role, v) in [("running_mean", mean), ("running_var", var), ("weight", weight), ("bias", bias)] {
                    blobs.insert(role.to_string(), write_blob(dir, file(role), vec![v.len()], v)?);
                }
                json!({ "eps": eps })
            }
            LayerKind::Relu | LayerKind::Add | LayerKind::Concat => json!({}),
        };
        nodes.push(ManifestNode {
            name: node.name.clone(),
            kind: node.kind.tag().to_string(),
            params,
            inputs: node.inputs.clone(),
            blobs,
        });
    }
    let spec = net.input_spec();
    let manifest = Manifest {
        format_version: BUNDLE_FORMAT_VERSION,
        model_name: net.model_name().to_string(),
        input_spec: ManifestInputSpec {
            shape: spec.shape.to_vec(),
            mean: spec.mean.to_vec(),
            std: spec.std.to_vec(),
        },
        nodes,
        taps: net.taps().to_vec(),
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}
