//! Entropy and mutual information of discrete labelings, in bits.

mod nsb;

use std::fmt;

use thiserror::Error;

pub use nsb::{beta_for_xi, dirichlet_entropy_moments, prior_mean_entropy};

#[derive(Debug, Error)]
pub enum InfoError {
    #[error("alphabet size must be at least 1")]
    EmptyAlphabet,
    #[error("{counts} counts exceed the alphabet size {k}")]
    TooManyBins { counts: usize, k: usize },
    #[error("label {label} is out of range for {k} symbols")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("label sequences differ in length ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("no observations")]
    NoData,
    #[error("NSB quadrature failed: {0}")]
    Quadrature(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropyMethod {
    PlugIn,
    #[default]
    Nsb,
}

impl fmt::Display for EntropyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropyMethod::PlugIn => "plugin",
            EntropyMethod::Nsb => "nsb",
        })
    }
}

impl std::str::FromStr for EntropyMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plugin" | "plug-in" => Ok(Self::PlugIn),
            "nsb" => Ok(Self::Nsb),
            other => Err(format!("unknown entropy method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    /// Bits.
    pub value: f64,
    pub method: EntropyMethod,
    /// Posterior standard deviation in bits (NSB only).
    pub posterior_sd: Option<f64>,
}

/// Joint counts of two labelings, row-major `kx × ky`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    kx: usize,
    ky: usize,
    counts: Vec<u64>,
}

impl ContingencyTable {
    pub fn new(kx: usize, ky: usize, counts: Vec<u64>) -> Option<Self> {
        (kx > 0 && ky > 0 && counts.len() == kx * ky).then_some(Self { kx, ky, counts })
    }

    /// Counts of `(x[i], y[i])` pairs with `x < kx` and `y < ky`.
    pub fn from_labels(kx: usize, ky: usize, x: &[usize], y: &[usize]) -> Result<Self, InfoError> {
        if kx == 0 || ky == 0 {
            return Err(InfoError::EmptyAlphabet);
        }
        if x.len() != y.len() {
            return Err(InfoError::LengthMismatch { x: x.len(), y: y.len() });
        }
        let mut counts = vec![0u64; kx * ky];
        for (&a, &b) in x.iter().zip(y) {
            if a >= kx {
                return Err(InfoError::LabelOutOfRange { label: a, k: kx });
            }
            if b >= ky {
                return Err(InfoError::LabelOutOfRange { label: b, k: ky });
            }
            counts[a * ky + b] += 1;
        }
        Ok(Self { kx, ky, counts })
    }

    pub fn kx(&self) -> usize {
        self.kx
    }

    pub fn ky(&self) -> usize {
        self.ky
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, x: usize, y: usize) -> u64 {
        self.counts[x * self.ky + y]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_marginals(&self) -> Vec<u64> {
        self.counts.chunks(self.ky).map(|r| r.iter().sum()).collect()
    }

    pub fn col_marginals(&self) -> Vec<u64> {
        let mut m = vec![0u64; self.ky];
        for row in self.counts.chunks(self.ky) {
            for (a, &c) in m.iter_mut().zip(row) {
                *a += c;
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0u64; self.counts.len()];
        for x in 0..self.kx {
            for y in 0..self.ky {
                counts[y * self.kx + x] = self.get(x, y);
            }
        }
        Self { kx: self.ky, ky: self.kx, counts }
    }
}

/// Maximum-likelihood entropy in bits. Counts are sorted first, so the result
/// is exactly invariant to their order.
pub fn plugin_entropy(counts: &[u64]) -> Result<f64, InfoError> {
    let mut sorted: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    if sorted.is_empty() {
        return Err(InfoError::NoData);
    }
    sorted.sort_unstable();
    let n = sorted.iter().sum::<u64>() as f64;
    let s: f64 = sorted.iter().map(|&c| c as f64 * (c as f64).log2()).sum();
    Ok((n.log2() - s / n).max(0.0))
}

/// NSB entropy in bits for `counts` over an alphabet of `k` symbols; bins not
/// listed in `counts` are empty.
pub fn nsb_entropy(counts: &[u64], k: usize) -> Result<EntropyEstimate, InfoError> {
    if k == 0 {
        return Err(InfoError::EmptyAlphabet);
    }
    if counts.len() > k {
        return Err(InfoError::TooManyBins { counts: counts.len(), k });
    }
    if k == 1 {
        return Ok(EntropyEstimate { value: 0.0, method: EntropyMethod::Nsb, posterior_sd: Some(0.0) });
    }
    let (mean, sd) = nsb::nsb_nats(counts, k)?;
    let ln2 = std::f64::consts::LN_2;
    Ok(EntropyEstimate { value: mean / ln2, method: EntropyMethod::Nsb, posterior_sd: Some(sd / ln2) })
}

pub fn entropy(counts: &[u64], k: usize, method: EntropyMethod) -> Result<EntropyEstimate, InfoError> {
    match method {
        EntropyMethod::PlugIn => {
            if counts.len() > k {
                return Err(InfoError::TooManyBins { counts: counts.len(), k });
            }
            Ok(EntropyEstimate { value: plugin_entropy(counts)?, method, posterior_sd: None })
        }
        EntropyMethod::Nsb => nsb_entropy(counts, k),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutualInformation {
    /// `H(X) + H(Y) − H(X, Y)` in bits, unclamped.
    pub value: f64,
    pub h_x: EntropyEstimate,
    pub h_y: EntropyEstimate,
    pub h_xy: EntropyEstimate,
    pub method: EntropyMethod,
}

impl MutualInformation {
    /// `value` clipped to `[0, min(H(X), H(Y))]`.
    pub fn clamped(&self) -> f64 {
        self.value.max(0.0).min(self.h_x.value.min(self.h_y.value).max(0.0))
    }

    pub fn was_clamped(&self) -> bool {
        self.clamped() != self.value
    }
}

/// Mutual information between the row and column variables of `table`.
/// NSB uses alphabets `kx`, `ky` and `kx·ky` for the three entropies.
pub fn mutual_information(table: &ContingencyTable, method: EntropyMethod) -> Result<MutualInformation, InfoError> {
    if table.total() == 0 {
        return Err(InfoError::NoData);
    }
    let h_x = entropy(&table.row_marginals(), table.kx, method)?;
    let h_y = entropy(&table.col_marginals(), table.ky, method)?;
    let h_xy = entropy(&table.counts, table.kx * table.ky, method)?;
    Ok(MutualInformation { value: h_x.value + h_y.value - h_xy.value, h_x, h_y, h_xy, method })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plugin_uniform_and_point_mass() {
        assert!((plugin_entropy(&[5, 5, 5, 5]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(plugin_entropy(&[7, 0, 0]).unwrap(), 0.0);
        assert!(matches!(plugin_entropy(&[0, 0]), Err(InfoError::NoData)));
    }

    #[test]
    fn perfect_labeling_has_mi_log2_k() {
        let x: Vec<usize> = (0..47 * 120).map(|i| i / 120).collect();
        let t = ContingencyTable::from_labels(47, 47, &x, &x).unwrap();
        let mi = mutual_information(&t, EntropyMethod::PlugIn).unwrap();
        assert!((mi.value - 47f64.log2()).abs() < 1e-12);
        assert!(!mi.was_clamped());
    }

    #[test]
    fn independent_labels_have_zero_plugin_mi() {
        let x: Vec<usize> = (0..36).map(|i| i % 3).collect();
        let y: Vec<usize> = (0..36).map(|i| (i / 3) % 4).collect();
        let t = ContingencyTable::from_labels(3, 4, &x, &y).unwrap();
        assert!(mutual_information(&t, EntropyMethod::PlugIn).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn transpose_gives_identical_mi() {
        let t = ContingencyTable::new(2, 3, vec![4, 0, 1, 2, 7, 3]).unwrap();
        for m in [EntropyMethod::PlugIn, EntropyMethod::Nsb] {
            let a = mutual_information(&t, m).unwrap().value;
            let b = mutual_information(&t.transpose(), m).unwrap().value;
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn nsb_single_symbol_is_zero() {
        let e = nsb_entropy(&[12], 1).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn nsb_approaches_true_entropy_with_many_samples() {
        let e = nsb_entropy(&[2500, 2500, 2500, 2500], 4).unwrap();
        assert!((e.value - 2.0).abs() < 1e-3, "{e:?}");
        assert!(e.posterior_sd.unwrap() < 0.01);
    }

    #[test]
    fn nsb_without_data_is_prior_centre() {
        let k = 10;
        let e = nsb_entropy(&[], k).unwrap();
        // uniform prior on ξ ∈ (0, ln K): mean ln K / 2
        assert!((e.value - (k as f64).ln() / 2.0 / std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn label_range_is_checked() {
        assert!(matches!(
            ContingencyTable::from_labels(2, 2, &[0, 2], &[0, 1]),
            Err(InfoError::LabelOutOfRange { label: 2, k: 2 })
        ));
    }
}
