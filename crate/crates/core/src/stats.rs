//! Pearson correlation with two-sided t-distribution p-values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::beta_inc_reg;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("samples differ in length ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("model `{0}` has no Brain-Score record")]
    MissingRecord(String),
    #[error("unknown Brain-Score metric `{0}`")]
    UnknownMetric(String),
}

/// One row of the Brain-Score leaderboard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainScoreRecord {
    pub model: String,
    pub average_vision: f64,
    pub neural_vision: f64,
    pub behavior_vision: f64,
    #[serde(rename = "V1")]
    pub v1: f64,
    #[serde(rename = "V2")]
    pub v2: f64,
    #[serde(rename = "V4")]
    pub v4: f64,
    #[serde(rename = "IT")]
    pub it: f64,
}

impl BrainScoreRecord {
    pub const METRICS: [&'static str; 7] =
        ["average_vision", "neural_vision", "behavior_vision", "V1", "V2", "V4", "IT"];

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "average_vision" => self.average_vision,
            "neural_vision" => self.neural_vision,
            "behavior_vision" => self.behavior_vision,
            "V1" => self.v1,
            "V2" => self.v2,
            "V4" => self.v4,
            "IT" => self.it,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub n: usize,
    /// `None` when either sample has zero variance.
    pub r: Option<f64>,
    /// `None` when `r` is undefined or `n < 3`.
    pub p: Option<f64>,
}

impl CorrelationResult {
    /// `p < 0.05`.
    pub fn significant(&self) -> bool {
        self.p.is_some_and(|p| p < 0.05)
    }
}

/// Pearson's `r` on mean-centred data.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Option<f64>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if let Some(i) = x.iter().zip(y).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    if x.len() < 2 {
        return Ok(None);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Two-sided p-value of `r` under the null of zero correlation, from the
/// t distribution with `n − 2` degrees of freedom.
pub fn pearson_p(r: f64, n: usize) -> Option<f64> {
    if n < 3 || !r.is_finite() || r.abs() > 1.0 {
        return None;
    }
    if r.abs() == 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t2 = r * r * df / (1.0 - r * r);
    Some(beta_inc_reg(df / 2.0, 0.5, df / (df + t2)))
}

pub fn correlate(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    let r = pearson_r(x, y)?;
    Ok(CorrelationResult { n: x.len(), r, p: r.and_then(|r| pearson_p(r, x.len())) })
}

/// Correlates per-model values with one Brain-Score metric. Every model in
/// `values` must have a record; extra records are ignored.
pub fn correlate_mi_brainscore(
    values: &[(String, f64)],
    records: &[BrainScoreRecord],
    metric: &str,
) -> Result<CorrelationResult, StatsError> {
    if !BrainScoreRecord::METRICS.contains(&metric) {
        return Err(StatsError::UnknownMetric(metric.to_string()));
    }
    let mut x = Vec::with_capacity(values.len());
    let mut y = Vec::with_capacity(values.len());
    for (model, v) in values {
        let rec = records
            .iter()
            .find(|r| &r.model == model)
            .ok_or_else(|| StatsError::MissingRecord(model.clone()))?;
        x.push(*v);
        y.push(rec.metric(metric).expect("metric name checked"));
    }
    correlate(&x, &y)
}
