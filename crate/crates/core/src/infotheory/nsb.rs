//! Nemenman–Shafee–Bialek entropy estimator.
//!
//! A mixture of symmetric Dirichlet priors with concentration `β`, weighted
//! so that the prior mean entropy `ξ(β) = ψ(Kβ+1) − ψ(β+1)` is uniform on
//! `(0, ln K)`. The posterior mean and variance of the entropy are obtained
//! by Gauss–Legendre quadrature over `ξ`.

use crate::special::{digamma, gauss_legendre, trigamma};

use super::InfoError;

const PANELS: usize = 64;
const NODES_PER_PANEL: usize = 8;
const MAX_REFINEMENTS: usize = 12;
/// Nodes whose log-weight is this far below the peak are treated as empty.
const LOG_CUTOFF: f64 = 40.0;

/// Counts grouped as `(count, multiplicity)`, zero bins included.
pub(crate) struct Histogram {
    groups: Vec<(u64, f64)>,
    k: f64,
    n: f64,
}

impl Histogram {
    pub(crate) fn new(counts: &[u64], k: usize) -> Self {
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let mut groups: Vec<(u64, f64)> = Vec::new();
        let zeros = k - counts.len();
        if zeros > 0 {
            groups.push((0, zeros as f64));
        }
        for c in sorted {
            match groups.last_mut() {
                Some((v, m)) if *v == c => *m += 1.0,
                _ => groups.push((c, 1.0)),
            }
        }
        let n = counts.iter().sum::<u64>() as f64;
        Self { groups, k: k as f64, n }
    }

    /// `ln P(n | β)` up to a β-independent constant.
    fn log_evidence(&self, beta: f64) -> f64 {
        let kb = self.k * beta;
        let mut acc = 0.0;
        for j in 0..self.n as u64 {
            acc -= (kb + j as f64).ln();
        }
        for &(c, m) in &self.groups {
            let mut s = 0.0;
            for j in 0..c {
                s += (beta + j as f64).ln();
            }
            acc += m * s;
        }
        acc
    }

    /// Posterior mean and second moment of the entropy (nats) for fixed `β`.
    fn moments(&self, beta: f64) -> (f64, f64) {
        let a_tot = self.n + self.k * beta;
        let psi_a2 = digamma(a_tot + 2.0);
        let tri_a2 = trigamma(a_tot + 2.0);
        let mut mean_sum = 0.0;
        let mut s1 = 0.0; // Σ a_i u_i
        let mut s2 = 0.0; // Σ a_i² u_i²
        let mut diag = 0.0;
        let mut sum_a2 = 0.0;
        for &(c, m) in &self.groups {
            let a = c as f64 + beta;
            mean_sum += m * a * digamma(a + 1.0);
            let u = digamma(a + 1.0) - psi_a2;
            s1 += m * a * u;
            s2 += m * a * a * u * u;
            sum_a2 += m * a * a;
            let v = digamma(a + 2.0) - psi_a2;
            diag += m * a * (a + 1.0) * (v * v + trigamma(a + 2.0) - tri_a2);
        }
        let mean = digamma(a_tot + 1.0) - mean_sum / a_tot;
        let cross = s1 * s1 - s2 - (a_tot * a_tot - sum_a2) * tri_a2;
        let second = (cross + diag) / (a_tot * (a_tot + 1.0));
        (mean, second)
    }
}

/// Posterior mean and variance (nats) of the entropy under a symmetric
/// Dirichlet(β) prior, bins not listed in `counts` being empty.
pub fn dirichlet_entropy_moments(counts: &[u64], k: usize, beta: f64) -> (f64, f64) {
    let (mean, second) = Histogram::new(counts, k).moments(beta);
    (mean, second - mean * mean)
}

/// Prior mean entropy `ξ(β)` in nats.
pub fn prior_mean_entropy(k: usize, beta: f64) -> f64 {
    let k = k as f64;
    digamma(k * beta + 1.0) - digamma(beta + 1.0)
}

/// `β` with `ξ(β) = xi`, for `0 < xi < ln K`.
pub fn beta_for_xi(k: usize, xi: f64) -> f64 {
    let kf = k as f64;
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    let mut t = 0.0f64;
    for _ in 0..200 {
        let beta = t.exp();
        let f = prior_mean_entropy(k, beta) - xi;
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        // Newton step in ln β, kept inside the bracket
        let dxi = beta * (kf * trigamma(kf * beta + 1.0) - trigamma(beta + 1.0));
        let mut next = t - f / dxi;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-14 * (1.0 + t.abs()) || hi - lo < 1e-14 {
            t = next;
            break;
        }
        t = next;
    }
    t.exp()
}

struct Quadrature {
    log_w: Vec<f64>,
    xi: Vec<f64>,
    beta: Vec<f64>,
}

fn quadrature(h: &Histogram, k: usize, lo: f64, hi: f64) -> Quadrature {
    let (nodes, weights) = gauss_legendre(NODES_PER_PANEL);
    let width = (hi - lo) / PANELS as f64;
    let mut q = Quadrature { log_w: Vec::new(), xi: Vec::new(), beta: Vec::new() };
    for p in 0..PANELS {
        let a = lo + p as f64 * width;
        for (x, w) in nodes.iter().zip(&weights) {
            let xi = a + 0.5 * width * (x + 1.0);
            let beta = beta_for_xi(k, xi);
            q.log_w.push((0.5 * width * w).ln() + h.log_evidence(beta));
            q.xi.push(xi);
            q.beta.push(beta);
        }
    }
    q
}

/// NSB estimate in nats: posterior mean and standard deviation.
pub(crate) fn nsb_nats(counts: &[u64], k: usize) -> Result<(f64, f64), InfoError> {
    let h = Histogram::new(counts, k);
    let ln_k = (k as f64).ln();
    let (mut lo, mut hi) = (0.0, ln_k);
    let mut q = quadrature(&h, k, lo, hi);
    let mut resolved = false;
    for _ in 0..MAX_REFINEMENTS {
        let peak = q.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(InfoError::Quadrature("posterior weights are not finite".into()));
        }
        let live: Vec<usize> = (0..q.log_w.len()).filter(|&i| q.log_w[i] > peak - LOG_CUTOFF).collect();
        let (first, last) = (live[0], *live.last().expect("peak is live"));
        // enough nodes across the bulk of the posterior
        if last - first + 1 >= 4 * NODES_PER_PANEL {
            resolved = true;
            break;
        }
        let new_lo = if first == 0 { lo } else { q.xi[first - 1] };
        let new_hi = if last + 1 == q.xi.len() { hi } else { q.xi[last + 1] };
        lo = new_lo;
        hi = new_hi;
        q = quadrature(&h, k, lo, hi);
    }
    if !resolved {
        return Err(InfoError::Quadrature(format!(
            "posterior over the prior entropy not resolved on [{lo:.3e}, {hi:.3e}]"
        )));
    }
    let peak = q.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (lw, &beta) in q.log_w.iter().zip(&q.beta) {
        let w = (lw - peak).exp();
        if w == 0.0 {
            continue;
        }
        let (mean, second) = h.moments(beta);
        z += w;
        m1 += w * mean;
        m2 += w * second;
    }
    let mean = m1 / z;
    let var = (m2 / z - mean * mean).max(0.0);
    Ok((mean, var.sqrt()))
}
