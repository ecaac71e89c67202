//! A small differentiable CNN inference engine.
//!
//! Networks are directed acyclic graphs of seven layer kinds (conv2d, relu,
//! max/avg pool, inference batch norm, add, concat) evaluated on a single
//! `C×H×W` image. A forward pass returns the activations of the tapped
//! layers as [`FeatureMap`]s; a [`Session`] additionally retains what the
//! backward pass needs to push tap gradients back to the input pixels.

mod bundle;
mod golden;
pub mod ops;
mod session;

pub use bundle::{load_model_bundle, save_model_bundle, BUNDLE_FORMAT_VERSION};
pub use golden::{load_golden_features, max_relative_error, save_golden_features, GoldenFeatures};
pub use ops::Window;
pub use session::{forward_with_taps, Session};

use std::collections::HashMap;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

/// Name under which graph nodes refer to the network input.
pub const INPUT_NAME: &str = "input";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("shape mismatch ({context}): expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("nonpositive output extent")]
    NonPositiveExtent,
    #[error("node `{node}` expects {expected} inputs, got {actual}")]
    Arity {
        node: String,
        expected: &'static str,
        actual: usize,
    },
    #[error("node `{node}` references unknown input `{input}`")]
    DanglingInput { node: String, input: String },
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("unknown tap `{0}`")]
    UnknownTap(String),
    #[error("graph has no taps")]
    NoTaps,
    #[error("invalid parameters for node `{node}`: {reason}")]
    InvalidParams { node: String, reason: String },
    #[error("unknown layer kind `{0}`")]
    UnknownKind(String),
    #[error("non-finite activation in node `{0}`")]
    NonFiniteActivation(String),
    #[error("backward called without a preceding forward on the same image")]
    NoForward,
    #[error("tap gradient count {actual} does not match tap count {expected}")]
    TapCount { expected: usize, actual: usize },
    #[error("bundle manifest: {0}")]
    Manifest(String),
    #[error("checksum mismatch for blob `{0}`")]
    Checksum(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Activations of one tapped layer: `channels × samples` values where
/// `samples = height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer_name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(layer_name: impl Into<String>, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, EngineError> {
        if channels == 0 || height * width == 0 || data.len() != channels * height * width {
            return Err(EngineError::ShapeMismatch {
                context: "feature map".into(),
                expected: vec![channels, height * width],
                actual: vec![data.len()],
            });
        }
        Ok(Self {
            layer_name: layer_name.into(),
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_tensor(layer_name: impl Into<String>, t: Tensor) -> Result<Self, EngineError> {
        let (c, h, w) = t.chw().ok_or_else(|| EngineError::ShapeMismatch {
            context: "feature map from tensor".into(),
            expected: vec![],
            actual: t.shape().to_vec(),
        })?;
        Self::new(layer_name, c, h, w, t.into_data())
    }

    /// Number of spatial samples `M`.
    pub fn samples(&self) -> usize {
        self.height * self.width
    }

    /// Row `i` (one channel across all spatial samples).
    pub fn channel(&self, i: usize) -> &[f32] {
        let m = self.samples();
        &self.data[i * m..(i + 1) * m]
    }

    /// A zero-valued map with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self {
            layer_name: self.layer_name.clone(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: vec![0.0; self.data.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d {
        weight: Tensor,
        bias: Option<Vec<f32>>,
        stride: [usize; 2],
        padding: [usize; 2],
    },
    Relu,
    MaxPool(Window),
    AvgPool {
        window: Window,
        count_include_pad: bool,
    },
    /// Batch norm with frozen running statistics.
    BatchNorm {
        mean: Vec<f32>,
        var: Vec<f32>,
        weight: Vec<f32>,
        bias: Vec<f32>,
        eps: f64,
    },
    Add,
    Concat,
}

impl LayerKind {
    /// Manifest spelling of the kind.
    pub fn tag(&self) -> &'static str {
        match self {
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool(_) => "maxpool",
            LayerKind::AvgPool { .. } => "avgpool",
            LayerKind::BatchNorm { .. } => "batchnorm-inference",
            LayerKind::Add => "add",
            LayerKind::Concat => "concat",
        }
    }

    /// `(scale, shift)` of the inference batch norm as a per-channel affine map.
    fn bn_affine(mean: &[f32], var: &[f32], weight: &[f32], bias: &[f32], eps: f64) -> (Vec<f64>, Vec<f64>) {
        let scale: Vec<f64> = var
            .iter()
            .zip(weight)
            .map(|(&v, &g)| g as f64 / (v as f64 + eps).sqrt())
            .collect();
        let shift = mean
            .iter()
            .zip(bias)
            .zip(&scale)
            .map(|((&m, &b), &s)| b as f64 - m as f64 * s)
            .collect();
        (scale, shift)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
}

impl LayerNode {
    pub fn new(name: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Expected input shape and the per-channel normalization applied during preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub shape: [usize; 3],
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl InputSpec {
    pub fn new(shape: [usize; 3]) -> Self {
        Self {
            shape,
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// ImageNet statistics at 224×224.
    pub fn imagenet() -> Self {
        Self {
            shape: [3, 224, 224],
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Source {
    Input,
    Node(usize),
}

/// A validated, immutable network.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    model_name: String,
    input_spec: InputSpec,
    nodes: Vec<LayerNode>,
    taps: Vec<String>,
    // derived
    sources: Vec<Vec<Source>>,
    shapes: Vec<[usize; 3]>,
    tap_index: Vec<usize>,
    needed: Vec<bool>,
    bn: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl NetworkGraph {
    /// Validates the graph: unique names, nodes listed in topological order,
    /// complete parameters, consistent channel counts and existing taps.
    pub fn new(
        model_name: impl Into<String>,
        input_spec: InputSpec,
        nodes: Vec<LayerNode>,
        taps: Vec<String>,
    ) -> Result<Self, EngineError> {
        if taps.is_empty() {
            return Err(EngineError::NoTaps);
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut sources = Vec::with_capacity(nodes.len());
        let mut shapes: Vec<[usize; 3]> = Vec::with_capacity(nodes.len());
        let mut bn = Vec::with_capacity(nodes.len());
        if input_spec.shape.iter().any(|&e| e == 0) {
            return Err(EngineError::Manifest("input shape has a zero extent".into()));
        }
        if input_spec.std.iter().any(|&s| !(s > 0.0)) {
            return Err(EngineError::Manifest("input std must be positive".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.name == INPUT_NAME || index.contains_key(node.name.as_str()) {
                return Err(EngineError::DuplicateNode(node.name.clone()));
            }
            let mut srcs = Vec::with_capacity(node.inputs.len());
            for inp in &node.inputs {
                let s = if inp == INPUT_NAME {
                    Source::Input
                } else {
                    Source::Node(*index.get(inp.as_str()).ok_or_else(|| EngineError::DanglingInput {
                        node: node.name.clone(),
                        input: inp.clone(),
                    })?)
                };
                srcs.push(s);
            }
            let in_shapes: Vec<[usize; 3]> = srcs
                .iter()
                .map(|s| match s {
                    Source::Input => input_spec.shape,
                    Source::Node(j) => shapes[*j],
                })
                .collect();
            let shape = infer_shape(node, &in_shapes)?;
            bn.push(match &node.kind {
                LayerKind::BatchNorm { mean, var, weight, bias, eps } => {
                    Some(LayerKind::bn_affine(mean, var, weight, bias, *eps))
                }
                _ => None,
            });
            shapes.push(shape);
            sources.push(srcs);
            index.insert(&node.name, i);
        }
        let tap_index = taps
            .iter()
            .map(|t| index.get(t.as_str()).copied().ok_or_else(|| EngineError::UnknownTap(t.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut needed = vec![false; nodes.len()];
        for &t in &tap_index {
            needed[t] = true;
        }
        for i in (0..nodes.len()).rev() {
            if needed[i] {
                for s in &sources[i] {
                    if let Source::Node(j) = s {
                        needed[*j] = true;
                    }
                }
            }
        }
        Ok(Self {
            model_name: model_name.into(),
            input_spec,
            nodes,
            taps,
            sources,
            shapes,
            tap_index,
            needed,
            bn,
        })
    }

    /// Same network with a different tap list.
    pub fn with_taps(self, taps: Vec<String>) -> Result<Self, EngineError> {
        NetworkGraph::new(self.model_name, self.input_spec, self.nodes, taps)
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn input_spec(&self) -> &InputSpec {
        &self.input_spec
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn taps(&self) -> &[String] {
        &self.taps
    }

    /// Output shape of the named node for an input of `input_spec.shape`.
    pub fn node_shape(&self, name: &str) -> Option<[usize; 3]> {
        self.nodes.iter().position(|n| n.name == name).map(|i| self.shapes[i])
    }

    /// `(channels, samples)` of each tap, in tap order.
    pub fn tap_dims(&self) -> Vec<(usize, usize)> {
        self.tap_index
            .iter()
            .map(|&i| {
                let [c, h, w] = self.shapes[i];
                (c, h * w)
            })
            .collect()
    }
}

fn check_window(node: &str, win: &Window, pool: bool) -> Result<(), EngineError> {
    let bad = |reason: &str| EngineError::InvalidParams {
        node: node.to_string(),
        reason: reason.to_string(),
    };
    if win.kernel.iter().any(|&k| k == 0) {
        return Err(bad("kernel extent must be positive"));
    }
    if win.stride.iter().any(|&s| s == 0) {
        return Err(bad("stride must be positive"));
    }
    if pool && (win.padding[0] * 2 > win.kernel[0] || win.padding[1] * 2 > win.kernel[1]) {
        return Err(bad("pool padding must be at most half the kernel"));
    }
    Ok(())
}

fn infer_shape(node: &LayerNode, inputs: &[[usize; 3]]) -> Result<[usize; 3], EngineError> {
    let arity = |expected: &'static str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(EngineError::Arity {
                node: node.name.clone(),
                expected,
                actual: inputs.len(),
            })
        }
    };
    let invalid = |reason: String| EngineError::InvalidParams {
        node: node.name.clone(),
        reason,
    };
    match &node.kind {
        LayerKind::Conv2d { weight, bias, stride, padding } => {
            arity("exactly 1", inputs.len() == 1)?;
            let [c, h, w] = inputs[0];
            let &[k, kc, kh, kw] = weight.shape() else {
                return Err(invalid(format!("conv weight must be 4-D, got {:?}", weight.shape())));
            };
            if kc != c {
                return Err(EngineError::ChannelMismatch { expected: kc, actual: c });
            }
            if let Some(b) = bias {
                if b.len() != k {
                    return Err(invalid(format!("bias length {} != {k}", b.len())));
                }
            }
            let win = Window { kernel: [kh, kw], stride: *stride, padding: *padding };
            check_window(&node.name, &win, false)?;
            let (oh, ow) = win.output_extent(h, w).ok_or(EngineError::NonPositiveExtent)?;
            Ok([k, oh, ow])
        }
        LayerKind::Relu => {
            arity("exactly 1", inputs.len() == 1)?;
            Ok(inputs[0])
        }
        LayerKind::MaxPool(win) | LayerKind::AvgPool { window: win, .. } => {
            arity("exactly 1", inputs.len() == 1)?;
            check_window(&node.name, win, true)?;
            let [c, h, w] = inputs[0];
            let (oh, ow) = win.output_extent(h, w).ok_or(EngineError::NonPositiveExtent)?;
            Ok([c, oh, ow])
        }
        LayerKind::BatchNorm { mean, var, weight, bias, eps } => {
            arity("exactly 1", inputs.len() == 1)?;
            let c = inputs[0][0];
            if [mean.len(), var.len(), weight.len(), bias.len()].iter().any(|&l| l != c) {
                return Err(EngineError::ChannelMismatch { expected: c, actual: mean.len() });
            }
            if !(*eps >= 0.0) || var.iter().any(|&v| !(v as f64 + eps > 0.0)) {
                return Err(invalid("variance plus eps must be positive".into()));
            }
            Ok(inputs[0])
        }
        LayerKind::Add => {
            arity("at least 2", inputs.len() >= 2)?;
            if inputs.iter().any(|s| *s != inputs[0]) {
                return Err(EngineError::ShapeMismatch {
                    context: format!("add operands of `{}`", node.name),
                    expected: inputs[0].to_vec(),
                    actual: inputs.iter().flatten().copied().collect(),
                });
            }
            Ok(inputs[0])
        }
        LayerKind::Concat => {
            arity("at least 1", !inputs.is_empty())?;
            let [_, h, w] = inputs[0];
            if inputs.iter().any(|s| s[1] != h || s[2] != w) {
                return Err(EngineError::ShapeMismatch {
                    context: format!("concat operands of `{}`", node.name),
                    expected: vec![h, w],
                    actual: inputs.iter().flat_map(|s| [s[1], s[2]]).collect(),
                });
            }
            Ok([inputs.iter().map(|s| s[0]).sum(), h, w])
        }
    }
}
