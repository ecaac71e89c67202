use texgram_core::engine::{InputSpec, Session};
use texgram_core::synthesis::{gram_loss_and_gradient, gram_targets};
use texgram_core::synthetic::{conv_relu_stack, gaussian_image, mixed_kinds};
use texgram_core::NetworkGraph;
use texgram_oracle::{gradient_check, reference_forward, reference_gram};

fn check(net: &NetworkGraph, seed: u64) -> Vec<texgram_oracle::PixelCheck> {
    let shape = net.input_spec().shape;
    let exemplar = gaussian_image(seed, shape);
    let image = gaussian_image(seed + 1, shape);
    let targets = gram_targets(net, &exemplar).unwrap();
    let weights = vec![1.0; net.taps().len()];
    let (_, grad) = gram_loss_and_gradient(net, &image, &targets, &weights).unwrap();
    let analytic: Vec<f64> = grad.data().iter().map(|&v| v as f64).collect();
    let img64: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let t64: Vec<Vec<f64>> = targets.iter().map(|g| g.values().to_vec()).collect();
    gradient_check(net, &img64, &t64, &weights, &analytic, 1e-3, 24)
}

#[test]
fn gradient_matches_finite_differences_on_conv_stack() {
    let net = conv_relu_stack(4, "stack", InputSpec::new([3, 12, 12]), &[8, 8, 12], None).unwrap();
    let checks = check(&net, 10);
    assert!(checks.len() >= 20, "only {} usable pixels", checks.len());
    for c in &checks {
        assert!(c.rel_error < 1e-4, "{c:?}");
    }
}

#[test]
fn gradient_matches_finite_differences_on_every_layer_kind() {
    let net = mixed_kinds(8, InputSpec::new([3, 12, 12])).unwrap();
    let checks = check(&net, 20);
    assert!(checks.len() >= 20, "only {} usable pixels", checks.len());
    for c in &checks {
        assert!(c.rel_error < 1e-4, "{c:?}");
    }
}

#[test]
fn engine_forward_matches_reference() {
    let net = mixed_kinds(3, InputSpec::new([3, 11, 9])).unwrap();
    let image = gaussian_image(2, [3, 11, 9]);
    let taps = Session::new(&net).forward(&image).unwrap();
    let img64: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let reference = reference_forward(&net, &img64);
    for (f, r) in taps.iter().zip(&reference.taps) {
        assert_eq!((f.channels, f.height, f.width), (r.c, r.h, r.w), "{}", f.layer_name);
        for (a, b) in f.data.iter().zip(&r.data) {
            assert!((*a as f64 - b).abs() < 1e-4 * (1.0 + b.abs()), "{}: {a} vs {b}", f.layer_name);
        }
        let g = texgram_core::gram::gram_matrix(f).unwrap();
        for (a, b) in g.values().iter().zip(reference_gram(r)) {
            assert!((a - b).abs() < 1e-3 * (1.0 + b.abs()));
        }
    }
}
