use super::ops;
use super::{EngineError, FeatureMap, LayerKind, NetworkGraph, Source};
use crate::tensor::Tensor;

/// Per-call state of a forward/backward pair on one image.
///
/// Only what the adjoints need is kept: ReLU outputs and max-pool routes on
/// tap-to-input paths. Everything else is freed as soon as its last consumer
/// has run.
pub struct Session<'a> {
    net: &'a NetworkGraph,
    retained: Option<Retained>,
}

struct Retained {
    input: Tensor,
    relu_out: Vec<Option<Vec<f32>>>,
    routes: Vec<Option<Vec<u32>>>,
}

/// Forward pass returning one feature map per tap, without retaining state.
pub fn forward_with_taps(net: &NetworkGraph, image: &Tensor) -> Result<Vec<FeatureMap>, EngineError> {
    run(net, image, false).map(|(taps, _)| taps)
}

impl<'a> Session<'a> {
    pub fn new(net: &'a NetworkGraph) -> Self {
        Self { net, retained: None }
    }

    pub fn network(&self) -> &NetworkGraph {
        self.net
    }

    /// Runs the network and keeps what [`Session::backward_to_input`] needs.
    pub fn forward(&mut self, image: &Tensor) -> Result<Vec<FeatureMap>, EngineError> {
        self.retained = None;
        let (taps, retained) = run(self.net, image, true)?;
        self.retained = retained;
        Ok(taps)
    }

    /// Gradient of `Σ_taps ⟨tap_grad, tap_activation⟩` with respect to the
    /// input pixels, for the image of the most recent [`Session::forward`].
    pub fn backward_to_input(&self, image: &Tensor, tap_grads: &[FeatureMap]) -> Result<Tensor, EngineError> {
        let net = self.net;
        let state = self.retained.as_ref().ok_or(EngineError::NoForward)?;
        if state.input.shape() != image.shape()
            || state.input.data().iter().zip(image.data()).any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Err(EngineError::NoForward);
        }
        if tap_grads.len() != net.tap_index.len() {
            return Err(EngineError::TapCount {
                expected: net.tap_index.len(),
                actual: tap_grads.len(),
            });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; net.nodes.len()];
        for (g, &node) in tap_grads.iter().zip(&net.tap_index) {
            let [c, h, w] = net.shapes[node];
            if g.channels != c || g.samples() != h * w || g.data.len() != c * h * w {
                return Err(EngineError::ShapeMismatch {
                    context: format!("gradient for tap `{}`", net.nodes[node].name),
                    expected: vec![c, h * w],
                    actual: vec![g.channels, g.samples()],
                });
            }
            accumulate(&mut grads[node], &g.data);
        }

        let [ic, ih, iw] = net.input_spec.shape;
        let mut input_grad: Option<Vec<f32>> = None;
        for i in (0..net.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let srcs = &net.sources[i];
            let src_shape = |s: &Source| match s {
                Source::Input => [ic, ih, iw],
                Source::Node(j) => net.shapes[*j],
            };
            let mut push = |s: &Source, v: &[f32]| match s {
                Source::Input => accumulate(&mut input_grad, v),
                Source::Node(j) => accumulate(&mut grads[*j], v),
            };
            match &net.nodes[i].kind {
                LayerKind::Conv2d { weight, stride, padding, .. } => {
                    let [c, h, w] = src_shape(&srcs[0]);
                    let dx = ops::conv2d_backward_input((c, h, w), weight, &g, *stride, *padding)?;
                    push(&srcs[0], &dx);
                }
                LayerKind::Relu => {
                    let out = state.relu_out[i].as_ref().expect("relu output retained");
                    push(&srcs[0], &ops::relu_backward(out, &g));
                }
                LayerKind::MaxPool(_) => {
                    let [c, h, w] = src_shape(&srcs[0]);
                    let route = state.routes[i].as_ref().expect("pool route retained");
                    push(&srcs[0], &ops::maxpool_backward(c * h * w, route, &g));
                }
                LayerKind::AvgPool { window, count_include_pad } => {
                    let [c, h, w] = src_shape(&srcs[0]);
                    let dx = ops::avgpool_backward((c, h, w), window, *count_include_pad, &g)?;
                    push(&srcs[0], &dx);
                }
                LayerKind::BatchNorm { .. } => {
                    let (scale, _) = net.bn[i].as_ref().expect("batch norm affine");
                    let [c, h, w] = net.shapes[i];
                    push(&srcs[0], &ops::channel_affine_backward((c, h, w), scale, &g));
                }
                LayerKind::Add => {
                    for s in srcs {
                        push(s, &g);
                    }
                }
                LayerKind::Concat => {
                    let mut offset = 0;
                    for s in srcs {
                        let [c, h, w] = src_shape(s);
                        let len = c * h * w;
                        push(s, &g[offset..offset + len]);
                        offset += len;
                    }
                }
            }
        }
        let data = input_grad.unwrap_or_else(|| vec![0.0; ic * ih * iw]);
        Ok(Tensor::from_parts_unchecked(vec![ic, ih, iw], data))
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, v: &[f32]) {
    match slot {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(v) {
                *a += b;
            }
        }
        None => *slot = Some(v.to_vec()),
    }
}

fn run(net: &NetworkGraph, image: &Tensor, retain: bool) -> Result<(Vec<FeatureMap>, Option<Retained>), EngineError> {
    if image.shape() != net.input_spec.shape {
        return Err(EngineError::ShapeMismatch {
            context: "network input".into(),
            expected: net.input_spec.shape.to_vec(),
            actual: image.shape().to_vec(),
        });
    }
    let n = net.nodes.len();
    // Index of the last node consuming each node's output.
    let mut last_use = vec![0usize; n];
    for i in 0..n {
        if net.needed[i] {
            for s in &net.sources[i] {
                if let Source::Node(j) = s {
                    last_use[*j] = last_use[*j].max(i);
                }
            }
        }
    }
    let mut is_tap = vec![false; n];
    for &t in &net.tap_index {
        is_tap[t] = true;
    }

    let mut acts: Vec<Option<Tensor>> = vec![None; n];
    let mut relu_out: Vec<Option<Vec<f32>>> = vec![None; n];
    let mut routes: Vec<Option<Vec<u32>>> = vec![None; n];

    for i in 0..n {
        if !net.needed[i] {
            continue;
        }
        let node = &net.nodes[i];
        let inputs: Vec<&Tensor> = net.sources[i]
            .iter()
            .map(|s| match s {
                Source::Input => image,
                Source::Node(j) => acts[*j].as_ref().expect("upstream activation available"),
            })
            .collect();
        let out = match &node.kind {
            LayerKind::Conv2d { weight, bias, stride, padding } => {
                ops::conv2d(inputs[0], weight, bias.as_deref(), *stride, *padding)?
            }
            LayerKind::Relu => {
                let y = ops::relu(inputs[0]);
                if retain {
                    relu_out[i] = Some(y.data().to_vec());
                }
                y
            }
            LayerKind::MaxPool(win) => {
                let (y, route) = ops::maxpool(inputs[0], win)?;
                if retain {
                    routes[i] = Some(route);
                }
                y
            }
            LayerKind::AvgPool { window, count_include_pad } => ops::avgpool(inputs[0], window, *count_include_pad)?,
            LayerKind::BatchNorm { .. } => {
                let (scale, shift) = net.bn[i].as_ref().expect("batch norm affine");
                ops::channel_affine(inputs[0], scale, shift)?
            }
            LayerKind::Add => ops::add(&inputs)?,
            LayerKind::Concat => ops::concat(&inputs)?,
        };
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFiniteActivation(node.name.clone()));
        }
        acts[i] = Some(out);
        for s in &net.sources[i] {
            if let Source::Node(j) = s {
                if last_use[*j] == i && !is_tap[*j] {
                    acts[*j] = None;
                }
            }
        }
    }

    let taps = net
        .tap_index
        .iter()
        .zip(&net.taps)
        .map(|(&i, name)| {
            let t = acts[i].clone().expect("tap activation computed");
            FeatureMap::from_tensor(name.clone(), t)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let retained = retain.then(|| Retained {
        input: image.clone(),
        relu_out,
        routes,
    });
    Ok((taps, retained))
}
