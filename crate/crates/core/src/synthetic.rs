//! Seeded random-weight networks for tests, demos and desk-scale runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::engine::{EngineError, InputSpec, LayerKind, LayerNode, NetworkGraph, Window};
use crate::tensor::Tensor;

fn he_conv(rng: &mut ChaCha8Rng, k: usize, c: usize, ks: usize, stride: usize, pad: usize, bias: bool) -> LayerKind {
    let scale = (2.0 / (c * ks * ks) as f64).sqrt();
    let weight: Vec<f32> = (0..k * c * ks * ks)
        .map(|_| (rng.sample::<f64, _>(StandardNormal) * scale) as f32)
        .collect();
    LayerKind::Conv2d {
        weight: Tensor::new(vec![k, c, ks, ks], weight).expect("finite weights"),
        bias: bias.then(|| (0..k).map(|_| (rng.sample::<f64, _>(StandardNormal) * 0.1) as f32).collect()),
        stride: [stride, stride],
        padding: [pad, pad],
    }
}

/// `conv3×3 → relu` repeated once per entry of `channels`. Nodes are named
/// `conv{i}` and `relu{i}` (1-based). With `taps = None`, taps default to
/// the relu outputs.
pub fn conv_relu_stack(
    seed: u64,
    model_name: &str,
    input_spec: InputSpec,
    channels: &[usize],
    taps: Option<Vec<String>>,
) -> Result<NetworkGraph, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let mut prev = "input".to_string();
    let mut c = input_spec.shape[0];
    for (i, &k) in channels.iter().enumerate() {
        let conv = format!("conv{}", i + 1);
        let relu = format!("relu{}", i + 1);
        nodes.push(LayerNode::new(&conv, he_conv(&mut rng, k, c, 3, 1, 1, true), &[&prev]));
        nodes.push(LayerNode::new(&relu, LayerKind::Relu, &[&conv]));
        prev = relu;
        c = k;
    }
    let taps = taps.unwrap_or_else(|| (1..=channels.len()).map(|i| format!("relu{i}")).collect());
    NetworkGraph::new(model_name, input_spec, nodes, taps)
}

/// Random-weight network with the topology of torchvision's AlexNet
/// `features` block (nodes named `features.0` … `features.12`), tapped at the
/// convolutions 0, 3, 6, 8 and 10.
pub fn alexnet_features(seed: u64) -> Result<NetworkGraph, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = || LayerKind::MaxPool(Window { kernel: [3, 3], stride: [2, 2], padding: [0, 0] });
    let kinds = vec![
        he_conv(&mut rng, 64, 3, 11, 4, 2, true),
        LayerKind::Relu,
        pool(),
        he_conv(&mut rng, 192, 64, 5, 1, 2, true),
        LayerKind::Relu,
        pool(),
        he_conv(&mut rng, 384, 192, 3, 1, 1, true),
        LayerKind::Relu,
        he_conv(&mut rng, 256, 384, 3, 1, 1, true),
        LayerKind::Relu,
        he_conv(&mut rng, 256, 256, 3, 1, 1, true),
        LayerKind::Relu,
        pool(),
    ];
    let mut nodes = Vec::new();
    for (i, kind) in kinds.into_iter().enumerate() {
        let input = if i == 0 { "input".to_string() } else { format!("features.{}", i - 1) };
        nodes.push(LayerNode::new(format!("features.{i}"), kind, &[&input]));
    }
    let taps = [0, 3, 6, 8, 10].iter().map(|i| format!("features.{i}")).collect();
    NetworkGraph::new("alexnet", InputSpec::imagenet(), nodes, taps)
}

/// A small network exercising every layer kind: conv, batch norm, relu,
/// max pool, a residual add, a dense-style concat and avg pool.
pub fn mixed_kinds(seed: u64, input_spec: InputSpec) -> Result<NetworkGraph, EngineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c0 = input_spec.shape[0];
    let bn = |rng: &mut ChaCha8Rng, c: usize| LayerKind::BatchNorm {
        mean: (0..c).map(|_| rng.random_range(-0.5f32..0.5)).collect(),
        var: (0..c).map(|_| rng.random_range(0.5f32..2.0)).collect(),
        weight: (0..c).map(|_| rng.random_range(0.5f32..1.5)).collect(),
        bias: (0..c).map(|_| rng.random_range(-0.2f32..0.2)).collect(),
        eps: 1e-5,
    };
    let nodes = vec![
        LayerNode::new("conv1", he_conv(&mut rng, 6, c0, 3, 1, 1, false), &["input"]),
        LayerNode::new("bn1", bn(&mut rng, 6), &["conv1"]),
        LayerNode::new("relu1", LayerKind::Relu, &["bn1"]),
        LayerNode::new(
            "pool1",
            LayerKind::MaxPool(Window { kernel: [3, 3], stride: [2, 2], padding: [1, 1] }),
            &["relu1"],
        ),
        LayerNode::new("conv2", he_conv(&mut rng, 6, 6, 3, 1, 1, true), &["pool1"]),
        LayerNode::new("res", LayerKind::Add, &["conv2", "pool1"]),
        LayerNode::new("relu2", LayerKind::Relu, &["res"]),
        LayerNode::new("conv3", he_conv(&mut rng, 4, 6, 1, 1, 0, true), &["relu2"]),
        LayerNode::new("cat", LayerKind::Concat, &["relu2", "conv3"]),
        LayerNode::new(
            "avg",
            LayerKind::AvgPool {
                window: Window { kernel: [3, 3], stride: [1, 1], padding: [1, 1] },
                count_include_pad: true,
            },
            &["cat"],
        ),
        LayerNode::new("conv4", he_conv(&mut rng, 5, 10, 3, 2, 1, true), &["avg"]),
    ];
    let taps = ["relu1", "res", "cat", "avg", "conv4"].iter().map(|s| s.to_string()).collect();
    NetworkGraph::new("mixed", input_spec, nodes, taps)
}

/// Standard-normal image of the given shape.
pub fn gaussian_image(seed: u64, shape: [usize; 3]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite samples")
}
