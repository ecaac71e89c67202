//! Limited-memory BFGS with a strong Wolfe line search.
//!
//! The line search follows the bracketing/zoom scheme of Nocedal & Wright
//! (Algorithms 3.5 and 3.6) with safeguarded cubic interpolation.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub history_size: usize,
    pub max_iterations: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    /// Converged once `‖∇f‖∞` drops below this.
    pub grad_tolerance: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history_size: 10,
            max_iterations: 1000,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            grad_tolerance: 1e-7,
            max_line_search_evals: 25,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(format!(
                "need 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.wolfe_c1, self.wolfe_c2
            ));
        }
        if self.history_size == 0 {
            return Err("history_size must be at least 1".into());
        }
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.max_line_search_evals == 0 {
            return Err("max_line_search_evals must be at least 1".into());
        }
        if !(self.grad_tolerance >= 0.0) {
            return Err("grad_tolerance must be nonnegative".into());
        }
        Ok(())
    }
}

/// A differentiable objective.
pub trait Objective {
    type Error;

    /// Value and gradient at `x`.
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), Self::Error>;

    /// Called once per accepted iterate (iteration 0 is the start point),
    /// always immediately after that iterate was evaluated.
    fn accepted(&mut self, _iteration: usize, _x: &[f64], _value: f64) {}
}

/// Adapts an infallible closure into an [`Objective`].
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    type Error = std::convert::Infallible;

    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), Self::Error> {
        Ok((self.0)(x))
    }
}

#[derive(Debug, Error)]
pub enum LbfgsError<E> {
    #[error("objective is not finite at the start point")]
    NonFiniteStart,
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("objective failed: {0}")]
    Objective(E),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found; the result is the best point seen.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct Minimization {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective value at the start point and after every accepted step.
    pub trace: Vec<f64>,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Evaluator<'a, O: Objective> {
    objective: &'a mut O,
    evaluations: usize,
}

impl<O: Objective> Evaluator<'_, O> {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>), LbfgsError<O::Error>> {
        self.evaluations += 1;
        self.objective.evaluate(x).map_err(LbfgsError::Objective)
    }
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

enum Search {
    Accepted(Point),
    Failed(Option<Point>),
}

/// Minimizer of the cubic matching values and slopes at `x1` and `x2`,
/// clamped to `bounds`; falls back to the midpoint of `bounds`.
fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: (f64, f64)) -> f64 {
    let (lo, hi) = if bounds.0 <= bounds.1 { bounds } else { (bounds.1, bounds.0) };
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 && (x1 - x2).abs() > 0.0 {
        let d2 = d2_sq.sqrt();
        let pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if pos.is_finite() {
            return pos.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

struct Sample {
    alpha: f64,
    f: f64,
    dphi: f64,
}

fn strong_wolfe<O: Objective>(
    ev: &mut Evaluator<'_, O>,
    cfg: &LbfgsConfig,
    start: &Point,
    dir: &[f64],
    alpha0: f64,
) -> Result<Search, LbfgsError<O::Error>> {
    let f0 = start.f;
    let dphi0 = dot(&start.g, dir);
    let step = |alpha: f64| -> Vec<f64> { start.x.iter().zip(dir).map(|(x, d)| x + alpha * d).collect() };
    let sufficient = |alpha: f64, f: f64| f <= f0 + cfg.wolfe_c1 * alpha * dphi0;
    let curvature = |dphi: f64| dphi.abs() <= -cfg.wolfe_c2 * dphi0;

    let mut evals = 0usize;
    let mut best: Option<Point> = None;
    let mut last_was_best = false;
    let consider = |p: Point, best: &mut Option<Point>| {
        let better = p.f.is_finite() && p.f < best.as_ref().map_or(f0, |b| b.f);
        if better {
            *best = Some(p);
        }
        better
    };

    let mut prev = Sample { alpha: 0.0, f: f0, dphi: dphi0 };
    let mut alpha = alpha0;
    // bracket phase: find an interval containing acceptable steps
    let mut bracket = loop {
        if evals >= cfg.max_line_search_evals {
            break None;
        }
        let x = step(alpha);
        let (f, g) = ev.eval(&x)?;
        evals += 1;
        let dphi = dot(&g, dir);
        let cur = Sample { alpha, f: if f.is_finite() { f } else { f64::INFINITY }, dphi: if dphi.is_finite() { dphi } else { 0.0 } };
        if !f.is_finite() {
            // step too long: bracket with the last finite point
            break Some((prev, cur));
        }
        if !sufficient(alpha, f) || (evals > 1 && f >= prev.f) {
            last_was_best = consider(Point { x, f, g }, &mut best);
            break Some((prev, cur));
        }
        if curvature(dphi) {
            return Ok(Search::Accepted(Point { x, f, g }));
        }
        last_was_best = consider(Point { x, f, g }, &mut best);
        if dphi >= 0.0 {
            break Some((cur, prev));
        }
        let next = cubic_interpolate(
            prev.alpha, prev.f, prev.dphi, alpha, f, dphi,
            (alpha + 0.01 * (alpha - prev.alpha), alpha * 10.0),
        );
        prev = cur;
        alpha = next;
    };

    // zoom phase: `lo` satisfies sufficient decrease and has the lower value
    while let Some((lo, hi)) = bracket.as_mut() {
        if evals >= cfg.max_line_search_evals {
            break;
        }
        let width = (hi.alpha - lo.alpha).abs();
        if width * inf_norm(dir) < 1e-14 * (1.0 + inf_norm(&start.x)) {
            break;
        }
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let margin = 0.1 * (b - a);
        let trial = if hi.f.is_finite() {
            cubic_interpolate(lo.alpha, lo.f, lo.dphi, hi.alpha, hi.f, hi.dphi, (a + margin, b - margin))
        } else {
            0.5 * (a + b)
        };
        let x = step(trial);
        let (f, g) = ev.eval(&x)?;
        evals += 1;
        let dphi = dot(&g, dir);
        if !f.is_finite() {
            *hi = Sample { alpha: trial, f: f64::INFINITY, dphi: 0.0 };
            last_was_best = false;
            continue;
        }
        let cur = Sample { alpha: trial, f, dphi };
        if !sufficient(trial, f) || f >= lo.f {
            last_was_best = consider(Point { x, f, g }, &mut best);
            *hi = cur;
        } else {
            if curvature(dphi) {
                return Ok(Search::Accepted(Point { x, f, g }));
            }
            last_was_best = consider(Point { x, f, g }, &mut best);
            if dphi * (hi.alpha - lo.alpha) >= 0.0 {
                *hi = std::mem::replace(lo, cur);
            } else {
                *lo = cur;
            }
        }
    }
    if let (Some(b), false) = (&best, last_was_best) {
        // re-evaluate so the objective's side state matches the returned point
        let (f, g) = ev.eval(&b.x)?;
        return Ok(Search::Failed(Some(Point { x: b.x.clone(), f, g })));
    }
    Ok(Search::Failed(best))
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += si * (a - b);
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `objective` from `x0`.
///
/// Stops when `‖∇f‖∞ < grad_tolerance`, after `max_iterations` accepted
/// steps, or when the line search fails (returning the best point found).
pub fn lbfgs_minimize<O: Objective>(
    objective: &mut O,
    x0: &[f64],
    config: &LbfgsConfig,
) -> Result<Minimization, LbfgsError<O::Error>> {
    config.validate().map_err(LbfgsError::InvalidConfig)?;
    let mut ev = Evaluator { objective, evaluations: 0 };
    let (f, g) = ev.eval(x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(LbfgsError::NonFiniteStart);
    }
    ev.objective.accepted(0, x0, f);
    let mut cur = Point { x: x0.to_vec(), f, g };
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.history_size);
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    if inf_norm(&cur.g) < config.grad_tolerance {
        termination = Termination::Converged;
    } else {
        while iterations < config.max_iterations {
            let mut dir = two_loop(&cur.g, &history);
            if !(dot(&dir, &cur.g) < 0.0) || dir.iter().any(|v| !v.is_finite()) {
                history.clear();
                dir = cur.g.iter().map(|v| -v).collect();
            }
            let alpha0 = if history.is_empty() {
                let l1: f64 = cur.g.iter().map(|v| v.abs()).sum();
                (1.0 / l1).min(1.0)
            } else {
                1.0
            };
            let next = match strong_wolfe(&mut ev, config, &cur, &dir, alpha0)? {
                Search::Accepted(p) => p,
                Search::Failed(best) => {
                    termination = Termination::LineSearchFailed;
                    match best {
                        Some(p) => {
                            iterations += 1;
                            ev.objective.accepted(iterations, &p.x, p.f);
                            trace.push(p.f);
                            cur = p;
                        }
                        None => {}
                    }
                    break;
                }
            };
            iterations += 1;
            let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-10 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
                if history.len() == config.history_size {
                    history.pop_front();
                }
                history.push_back((s, y, 1.0 / sy));
            }
            ev.objective.accepted(iterations, &next.x, next.f);
            trace.push(next.f);
            cur = next;
            if inf_norm(&cur.g) < config.grad_tolerance {
                termination = Termination::Converged;
                break;
            }
        }
    }
    Ok(Minimization {
        x: cur.x,
        value: cur.f,
        gradient: cur.g,
        iterations,
        evaluations: ev.evaluations,
        trace,
        termination,
    })
}
