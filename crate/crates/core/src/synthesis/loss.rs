//! Size-normalized multi-layer Gram loss.

use crate::engine::{FeatureMap, NetworkGraph, Session};
use crate::gram::{gram_matrix, GramMatrix};
use crate::tensor::Tensor;

use super::SynthesisError;

/// Loss of one layer: `‖Ĝ − G‖²_F / (4 M N²)` for `N` channels and `M`
/// spatial samples.
pub fn layer_gram_loss(g_hat: &GramMatrix, target: &GramMatrix, samples: usize) -> Result<f64, SynthesisError> {
    if g_hat.n() != target.n() {
        return Err(SynthesisError::TargetShape { layer: 0, expected: target.n(), actual: g_hat.n() });
    }
    let n = g_hat.n() as f64;
    Ok(g_hat.frobenius_sq_diff(target) / (4.0 * samples as f64 * n * n))
}

/// Weighted layer losses at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    /// Unweighted per-layer losses in tap order.
    pub per_layer: Vec<f64>,
    /// `Σ w_l E_l`.
    pub total: f64,
}

/// Total weighted Gram loss of `image` against `targets` (one per tap) and
/// its gradient with respect to the input pixels.
pub fn gram_loss_and_gradient(
    net: &NetworkGraph,
    image: &Tensor,
    targets: &[GramMatrix],
    weights: &[f64],
) -> Result<(LossTerms, Tensor), SynthesisError> {
    let mut session = Session::new(net);
    evaluate(&mut session, image, targets, weights)
}

pub(crate) fn evaluate(
    session: &mut Session<'_>,
    image: &Tensor,
    targets: &[GramMatrix],
    weights: &[f64],
) -> Result<(LossTerms, Tensor), SynthesisError> {
    let taps = session.forward(image)?;
    check_targets(&taps, targets, weights)?;
    let mut per_layer = Vec::with_capacity(taps.len());
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(taps.len());
    for ((f, target), &w) in taps.iter().zip(targets).zip(weights) {
        let g_hat = gram_matrix(f)?;
        let e = layer_gram_loss(&g_hat, target, f.samples())?;
        per_layer.push(e);
        total += w * e;
        grads.push(tap_gradient(f, &g_hat, target, w));
    }
    let grad = session.backward_to_input(image, &grads)?;
    Ok((LossTerms { per_layer, total }, grad))
}

fn check_targets(taps: &[FeatureMap], targets: &[GramMatrix], weights: &[f64]) -> Result<(), SynthesisError> {
    if targets.len() != taps.len() || weights.len() != taps.len() {
        return Err(SynthesisError::TargetCount {
            taps: taps.len(),
            targets: targets.len(),
            weights: weights.len(),
        });
    }
    for (l, (f, t)) in taps.iter().zip(targets).enumerate() {
        if f.channels != t.n() {
            return Err(SynthesisError::TargetShape { layer: l, expected: f.channels, actual: t.n() });
        }
    }
    Ok(())
}

/// `∂(w E)/∂F = w (Ĝ − G) F / (M N²)`.
fn tap_gradient(f: &FeatureMap, g_hat: &GramMatrix, target: &GramMatrix, w: f64) -> FeatureMap {
    let n = f.channels;
    let m = f.samples();
    let scale = w / (m as f64 * (n * n) as f64);
    let mut out = f.zeros_like();
    let mut row = vec![0f64; m];
    for i in 0..n {
        row.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let d = g_hat.get(i, j) - target.get(i, j);
            if d == 0.0 {
                continue;
            }
            for (r, &x) in row.iter_mut().zip(f.channel(j)) {
                *r += d * x as f64;
            }
        }
        for (o, r) in out.data[i * m..(i + 1) * m].iter_mut().zip(&row) {
            *o = (r * scale) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::InputSpec;
    use crate::synthetic::{conv_relu_stack, gaussian_image};

    #[test]
    fn identical_grams_have_zero_loss() {
        let g = GramMatrix::from_rows(2, vec![1.0, 2.0, 2.0, 5.0]).unwrap();
        assert_eq!(layer_gram_loss(&g, &g, 10).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_layer_loss() {
        // diff has squared norm 1 + 4 + 4 + 0 = 9; 4·M·N² = 4·3·4 = 48
        let a = GramMatrix::from_rows(2, vec![1.0, 2.0, 2.0, 5.0]).unwrap();
        let b = GramMatrix::from_rows(2, vec![0.0, 0.0, 0.0, 5.0]).unwrap();
        assert!((layer_gram_loss(&a, &b, 3).unwrap() - 9.0 / 48.0).abs() < 1e-15);
    }

    #[test]
    fn loss_at_exemplar_is_zero_with_zero_gradient() {
        let net = conv_relu_stack(3, "t", InputSpec::new([3, 8, 8]), &[4, 5], None).unwrap();
        let img = gaussian_image(1, [3, 8, 8]);
        let targets: Vec<_> = crate::engine::forward_with_taps(&net, &img)
            .unwrap()
            .iter()
            .map(|f| gram_matrix(f).unwrap())
            .collect();
        let (terms, grad) = gram_loss_and_gradient(&net, &img, &targets, &[1.0, 1.0]).unwrap();
        assert_eq!(terms.total, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_target_count_is_rejected() {
        let net = conv_relu_stack(3, "t", InputSpec::new([3, 6, 6]), &[4, 5], None).unwrap();
        let img = gaussian_image(1, [3, 6, 6]);
        let g = GramMatrix::from_rows(4, vec![0.0; 16]).unwrap();
        assert!(matches!(
            gram_loss_and_gradient(&net, &img, &[g], &[1.0]),
            Err(SynthesisError::TargetCount { .. })
        ));
    }
}
