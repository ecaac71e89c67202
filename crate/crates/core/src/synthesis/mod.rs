//! Gradient-based texture synthesis by Gram matching.

mod lbfgs;
mod loss;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::engine::{forward_with_taps, EngineError, NetworkGraph, Session};
use crate::gram::{gram_matrix, GramError, GramMatrix};
use crate::tensor::Tensor;

pub use lbfgs::{lbfgs_minimize, FnObjective, LbfgsConfig, LbfgsError, Minimization, Objective, Termination};
pub use loss::{gram_loss_and_gradient, layer_gram_loss, LossTerms};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Gram(#[from] GramError),
    #[error("network has {taps} taps but {targets} targets and {weights} weights were given")]
    TargetCount { taps: usize, targets: usize, weights: usize },
    #[error("target {layer} is {actual}x{actual}, expected {expected}x{expected}")]
    TargetShape { layer: usize, expected: usize, actual: usize },
    #[error("image shape {actual:?} does not match network input {expected:?}")]
    ImageShape { expected: [usize; 3], actual: Vec<usize> },
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
    #[error("loss is not finite at the initial image")]
    NonFiniteStart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub seed: u64,
    pub max_iterations: usize,
    pub history_size: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub grad_tolerance: f64,
    /// One weight per tap; `None` weights every tap by 1.
    pub layer_weights: Option<Vec<f64>>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        let l = LbfgsConfig::default();
        Self {
            seed: 0,
            max_iterations: l.max_iterations,
            history_size: l.history_size,
            wolfe_c1: l.wolfe_c1,
            wolfe_c2: l.wolfe_c2,
            grad_tolerance: l.grad_tolerance,
            layer_weights: None,
        }
    }
}

impl SynthesisConfig {
    pub fn lbfgs(&self) -> LbfgsConfig {
        LbfgsConfig {
            history_size: self.history_size,
            max_iterations: self.max_iterations,
            wolfe_c1: self.wolfe_c1,
            wolfe_c2: self.wolfe_c2,
            grad_tolerance: self.grad_tolerance,
            ..LbfgsConfig::default()
        }
    }

    fn weights(&self, taps: usize) -> Result<Vec<f64>, SynthesisError> {
        match &self.layer_weights {
            None => Ok(vec![1.0; taps]),
            Some(w) if w.len() != taps => Err(SynthesisError::InvalidConfig(format!(
                "{} layer weights for {taps} taps",
                w.len()
            ))),
            Some(w) if w.iter().any(|v| !v.is_finite() || *v < 0.0) => {
                Err(SynthesisError::InvalidConfig("layer weights must be finite and nonnegative".into()))
            }
            Some(w) => Ok(w.clone()),
        }
    }

    pub fn validate(&self, taps: usize) -> Result<(), SynthesisError> {
        self.lbfgs().validate().map_err(SynthesisError::InvalidConfig)?;
        self.weights(taps).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub total: f64,
    pub per_layer: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub layer_names: Vec<String>,
    /// Unweighted per-layer losses of the returned image.
    pub per_layer: Vec<f64>,
    pub total: f64,
    /// One row per accepted iterate, starting with the initial image.
    pub trace: Vec<TraceRow>,
    pub termination: Termination,
    pub evaluations: usize,
}

impl LossReport {
    /// Writes `iteration,total,<layer>...` rows.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "iteration,total")?;
        for name in &self.layer_names {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for row in &self.trace {
            write!(out, "{},{:e}", row.iteration, row.total)?;
            for v in &row.per_layer {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

struct GramObjective<'a> {
    session: Session<'a>,
    shape: Vec<usize>,
    targets: &'a [GramMatrix],
    weights: Vec<f64>,
    last: Option<LossTerms>,
    trace: Vec<TraceRow>,
}

impl Objective for GramObjective<'_> {
    type Error = SynthesisError;

    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), SynthesisError> {
        let data: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        if data.iter().any(|v| !v.is_finite()) {
            self.last = None;
            return Ok((f64::INFINITY, vec![0.0; x.len()]));
        }
        let image = Tensor::new(self.shape.clone(), data).expect("finite pixels");
        let (terms, grad) = match loss::evaluate(&mut self.session, &image, self.targets, &self.weights) {
            Ok(r) => r,
            Err(SynthesisError::Engine(EngineError::NonFiniteActivation { .. })) => {
                self.last = None;
                return Ok((f64::INFINITY, vec![0.0; x.len()]));
            }
            Err(e) => return Err(e),
        };
        let total = terms.total;
        self.last = Some(terms);
        Ok((total, grad.data().iter().map(|&v| v as f64).collect()))
    }

    fn accepted(&mut self, iteration: usize, _x: &[f64], value: f64) {
        let per_layer = self.last.as_ref().map(|t| t.per_layer.clone()).unwrap_or_default();
        self.trace.push(TraceRow { iteration, total: value, per_layer });
    }
}

/// Gram targets of `exemplar` at every tap of `net`.
pub fn gram_targets(net: &NetworkGraph, exemplar: &Tensor) -> Result<Vec<GramMatrix>, SynthesisError> {
    forward_with_taps(net, exemplar)?
        .iter()
        .map(|f| gram_matrix(f).map_err(SynthesisError::from))
        .collect()
}

/// Seeded standard-normal start image in normalized pixel space.
pub fn initial_image(seed: u64, shape: [usize; 3]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("finite samples")
}

/// Synthesizes a texture matching the Gram statistics of `exemplar`,
/// starting from seeded noise. Both images are in normalized pixel space.
pub fn synthesize_texture(
    net: &NetworkGraph,
    exemplar: &Tensor,
    config: &SynthesisConfig,
) -> Result<(Tensor, LossReport), SynthesisError> {
    let init = initial_image(config.seed, net.input_spec().shape);
    synthesize_from(net, exemplar, &init, config)
}

/// As [`synthesize_texture`], starting from `init`.
pub fn synthesize_from(
    net: &NetworkGraph,
    exemplar: &Tensor,
    init: &Tensor,
    config: &SynthesisConfig,
) -> Result<(Tensor, LossReport), SynthesisError> {
    let expected = net.input_spec().shape;
    for img in [exemplar, init] {
        if img.shape() != expected {
            return Err(SynthesisError::ImageShape { expected, actual: img.shape().to_vec() });
        }
    }
    let weights = config.weights(net.taps().len())?;
    config.validate(net.taps().len())?;
    let targets = gram_targets(net, exemplar)?;
    let mut objective = GramObjective {
        session: Session::new(net),
        shape: init.shape().to_vec(),
        targets: &targets,
        weights,
        last: None,
        trace: Vec::new(),
    };
    let x0: Vec<f64> = init.data().iter().map(|&v| v as f64).collect();
    let result = match lbfgs_minimize(&mut objective, &x0, &config.lbfgs()) {
        Ok(r) => r,
        Err(LbfgsError::NonFiniteStart) => return Err(SynthesisError::NonFiniteStart),
        Err(LbfgsError::InvalidConfig(m)) => return Err(SynthesisError::InvalidConfig(m)),
        Err(LbfgsError::Objective(e)) => return Err(e),
    };
    let image = Tensor::new(expected.to_vec(), result.x.iter().map(|&v| v as f32).collect())
        .expect("accepted iterates are finite");
    let last = objective.trace.last().cloned().expect("start point is always traced");
    let report = LossReport {
        layer_names: net.taps().to_vec(),
        per_layer: last.per_layer,
        total: last.total,
        trace: objective.trace,
        termination: result.termination,
        evaluations: result.evaluations,
    };
    Ok((image, report))
}
