//! Dot-product tests of the input adjoint: `⟨w, J v⟩ = ⟨Jᵀ w, v⟩`.

use texgram_core::engine::{FeatureMap, InputSpec, LayerKind, LayerNode, Session, Window};
use texgram_core::synthetic::{conv_relu_stack, gaussian_image, mixed_kinds};
use texgram_core::{NetworkGraph, Tensor};
use texgram_oracle::reference_forward;

fn conv(k: usize, c: usize, ks: usize, stride: usize, pad: usize, seed: u64) -> LayerKind {
    let w = gaussian_image(seed, [k * c, ks, ks]);
    LayerKind::Conv2d {
        weight: Tensor::new(vec![k, c, ks, ks], w.into_data()).unwrap(),
        bias: Some(vec![0.3; k]),
        stride: [stride, stride],
        padding: [pad, pad],
    }
}

fn single(kind: LayerKind) -> NetworkGraph {
    NetworkGraph::new("t", InputSpec::new([3, 9, 10]), vec![LayerNode::new("y", kind, &["input"])], vec!["y".into()]).unwrap()
}

fn adjoint_gap(net: &NetworkGraph, seed: u64) -> (f64, f64) {
    let shape = net.input_spec().shape;
    let x = gaussian_image(seed, shape);
    let v = gaussian_image(seed + 1, shape);
    let mut session = Session::new(net);
    let taps = session.forward(&x).unwrap();
    let w: Vec<FeatureMap> = taps
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let g = gaussian_image(seed + 10 + i as u64, [f.channels, f.height, f.width]);
            FeatureMap::new(f.layer_name.clone(), f.channels, f.height, f.width, g.into_data()).unwrap()
        })
        .collect();
    let jt_w = session.backward_to_input(&x, &w).unwrap();
    let rhs: f64 = jt_w.data().iter().zip(v.data()).map(|(a, b)| *a as f64 * *b as f64).sum();

    let eps = 1e-7;
    let shifted = |s: f64| -> Vec<f64> { x.data().iter().zip(v.data()).map(|(a, b)| *a as f64 + s * *b as f64).collect() };
    let plus = reference_forward(net, &shifted(eps));
    let minus = reference_forward(net, &shifted(-eps));
    assert!(plus.signature == minus.signature, "perturbation crosses a kink");
    let mut lhs = 0.0;
    for ((p, m), wf) in plus.taps.iter().zip(&minus.taps).zip(&w) {
        for ((a, b), c) in p.data.iter().zip(&m.data).zip(&wf.data) {
            lhs += (a - b) / (2.0 * eps) * *c as f64;
        }
    }
    (lhs, rhs)
}

fn assert_adjoint(net: &NetworkGraph, seed: u64) {
    let (lhs, rhs) = adjoint_gap(net, seed);
    assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()), "{lhs} vs {rhs}");
}

#[test]
fn conv2d() {
    assert_adjoint(&single(conv(4, 3, 3, 1, 1, 1)), 100);
    assert_adjoint(&single(conv(5, 3, 4, 2, 2, 2)), 101);
    assert_adjoint(&single(conv(2, 3, 1, 3, 0, 3)), 102);
}

#[test]
fn relu() {
    assert_adjoint(&single(LayerKind::Relu), 200);
}

#[test]
fn maxpool() {
    let w = Window { kernel: [3, 3], stride: [2, 2], padding: [1, 1] };
    assert_adjoint(&single(LayerKind::MaxPool(w)), 300);
    let w = Window { kernel: [2, 2], stride: [2, 2], padding: [0, 0] };
    assert_adjoint(&single(LayerKind::MaxPool(w)), 301);
}

#[test]
fn avgpool() {
    for include in [true, false] {
        let window = Window { kernel: [3, 2], stride: [2, 1], padding: [1, 1] };
        assert_adjoint(&single(LayerKind::AvgPool { window, count_include_pad: include }), 400);
    }
}

#[test]
fn batchnorm() {
    let kind = LayerKind::BatchNorm {
        mean: vec![0.1, -0.2, 0.3],
        var: vec![0.5, 2.0, 1.5],
        weight: vec![1.2, 0.7, -0.4],
        bias: vec![0.0, 0.1, 0.2],
        eps: 1e-5,
    };
    assert_adjoint(&single(kind), 500);
}

#[test]
fn add_and_concat() {
    for (kind, name) in [(LayerKind::Add, "add"), (LayerKind::Concat, "cat")] {
        let nodes = vec![
            LayerNode::new("a", conv(4, 3, 3, 1, 1, 7), &["input"]),
            LayerNode::new("b", conv(4, 3, 1, 1, 0, 8), &["input"]),
            LayerNode::new(name, kind, &["a", "b", "input"][..if name == "add" { 2 } else { 3 }]),
        ];
        let net = NetworkGraph::new("t", InputSpec::new([3, 9, 10]), nodes, vec![name.into()]);
        // concat of a 4-channel and a 3-channel input is fine; add needs equal channels
        let net = net.unwrap();
        assert_adjoint(&net, 600);
    }
}

#[test]
fn whole_networks_with_several_taps() {
    assert_adjoint(&mixed_kinds(5, InputSpec::new([3, 14, 13])).unwrap(), 700);
    assert_adjoint(&conv_relu_stack(6, "s", InputSpec::new([3, 10, 10]), &[4, 6, 3], None).unwrap(), 701);
}

#[test]
fn backward_requires_matching_forward() {
    let net = single(LayerKind::Relu);
    let x = gaussian_image(1, [3, 9, 10]);
    let mut s = Session::new(&net);
    let g = FeatureMap::new("y", 3, 9, 10, vec![1.0; 270]).unwrap();
    assert!(s.backward_to_input(&x, std::slice::from_ref(&g)).is_err());
    s.forward(&x).unwrap();
    let y = gaussian_image(2, [3, 9, 10]);
    assert!(s.backward_to_input(&y, std::slice::from_ref(&g)).is_err());
    assert!(s.backward_to_input(&x, &[g]).is_ok());
}
