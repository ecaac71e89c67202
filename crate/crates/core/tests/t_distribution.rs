//! The p-value of Pearson's r checked against simulated null correlations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use texgram_core::stats::{pearson_p, pearson_r};

#[test]
fn p_value_matches_null_distribution_of_r() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 12;
    let trials = 200_000;
    let probes = [0.029f64, 0.13, 0.3, 0.5, 0.7];
    let mut exceed = [0usize; 5];
    for _ in 0..trials {
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = pearson_r(&x, &y).unwrap().unwrap().abs();
        for (e, &p) in exceed.iter_mut().zip(&probes) {
            if r >= p {
                *e += 1;
            }
        }
    }
    for (e, &p) in exceed.iter().zip(&probes) {
        let empirical = *e as f64 / trials as f64;
        let exact = pearson_p(p, n).unwrap();
        assert!((empirical - exact).abs() < 4e-3, "r={p}: {empirical} vs {exact}");
    }
}

#[test]
fn tabulated_correlations() {
    let p = pearson_p(-0.130, 12).unwrap();
    assert!((0.67..=0.70).contains(&p), "{p}");
    let p = pearson_p(-0.029, 12).unwrap();
    assert!((0.91..=0.93).contains(&p), "{p}");
}
