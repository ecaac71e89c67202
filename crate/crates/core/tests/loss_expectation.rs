//! Monte Carlo check of the Gram loss under independent standard-normal
//! activations.
//!
//! Off-diagonal entries `G_ij = Σ F_i F_j` have variance `M` and diagonal
//! entries `Σ F_i²` have variance `2M`, so for two independent feature maps
//! `E‖Ĝ − G‖² = 2M·N(N−1) + 4M·N = 2MN(N+1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use texgram_core::engine::FeatureMap;
use texgram_core::gram::gram_matrix;
use texgram_core::synthesis::layer_gram_loss;

fn gaussian_map(rng: &mut ChaCha8Rng, n: usize, m: usize) -> FeatureMap {
    let data = (0..n * m).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
    FeatureMap::new("f", n, 1, m, data).unwrap()
}

fn mean_unweighted_loss(n: usize, m: usize, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let a = gram_matrix(&gaussian_map(&mut rng, n, m)).unwrap();
        let b = gram_matrix(&gaussian_map(&mut rng, n, m)).unwrap();
        total += a.frobenius_sq_diff(&b);
    }
    total / trials as f64
}

#[test]
fn unweighted_loss_matches_exact_expectation() {
    for (n, m) in [(8, 256), (16, 128), (32, 1024)] {
        let trials = if n == 32 { 100 } else { 400 };
        let mean = mean_unweighted_loss(n, m, trials, n as u64);
        let exact = 2.0 * (m * n * (n + 1)) as f64;
        assert!((mean / exact - 1.0).abs() < 0.03, "N={n} M={m}: {mean} vs {exact}");
    }
}

#[test]
fn normalized_loss_tends_to_one_half() {
    // 2MN(N+1) / 4MN² = (N+1)/(2N)
    let (n, m) = (24, 512);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 200;
    let mut sum = 0.0;
    for _ in 0..trials {
        let a = gram_matrix(&gaussian_map(&mut rng, n, m)).unwrap();
        let b = gram_matrix(&gaussian_map(&mut rng, n, m)).unwrap();
        sum += layer_gram_loss(&a, &b, m).unwrap();
    }
    let mean = sum / trials as f64;
    let exact = (n + 1) as f64 / (2 * n) as f64;
    assert!((mean - exact).abs() < 0.02, "{mean} vs {exact}");
}
