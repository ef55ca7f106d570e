//! Conjugate-gradient ascent of the distorted-pulse fidelity.

mod ensemble;
mod study;

pub use ensemble::{
    average_gradient, average_utility, normalize_weights, ringdown_penalty, Ensemble,
    HypothesisSample, Member, PenaltyConfig, Point,
};
pub use study::{
    contiguous_window, landscape_study, robustness_scan, trial_seed, LandscapeRow, ScanRow,
    TrialOutcome,
};

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distortion::JacobianKind;
use crate::error::{validation, Error, Result};
use crate::pulse::{Pulse, Unit};
use crate::quantum::{average_gate_fidelity, GradientMethod};
use ensemble::{Evaluator, JacobianRequest};

/// Which Jacobian the gradient uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    /// Pulse-independent Jacobian at the zero pulse.
    #[default]
    ZeroOrder,
    Exact,
    /// Exact Jacobian refreshed every `k` iterations and reused in between.
    ExactEvery(usize),
}

/// How the ringdown tail is handled; recorded with each run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RingdownMode {
    #[default]
    None,
    /// Compensation steps appended inside the distortion operator.
    InDistortion,
    /// Tail energy subtracted from the objective.
    Penalty(PenaltyConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSearch {
    pub max_evaluations: usize,
    /// Bracket expansion ratio.
    pub growth: f64,
    /// First trial step as a fraction of the amplitude bound.
    pub initial_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            max_evaluations: 20,
            growth: GOLDEN,
            initial_step: 0.1,
        }
    }
}

const GOLDEN: f64 = 1.618_033_988_749_895;

fn default_initial_scale() -> f64 {
    0.1
}

fn default_stall_threshold() -> f64 {
    1e-10
}

fn default_stall_iterations() -> usize {
    3
}

fn default_fd_step() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Objective `Φ` at which the run stops.
    pub target: f64,
    pub max_iterations: usize,
    /// Amplitude bound, in the pulse unit.
    pub bound: f64,
    #[serde(default)]
    pub seed: u64,
    /// Initial entries are uniform in `±initial_scale · bound`.
    #[serde(default = "default_initial_scale")]
    pub initial_scale: f64,
    #[serde(default)]
    pub line_search: LineSearch,
    #[serde(default)]
    pub jacobian: JacobianMode,
    #[serde(default)]
    pub gradient: GradientMethod,
    #[serde(default)]
    pub ringdown: RingdownMode,
    /// Step below `stall_threshold · bound` counts towards a stall.
    #[serde(default = "default_stall_threshold")]
    pub stall_threshold: f64,
    #[serde(default = "default_stall_iterations")]
    pub stall_iterations: usize,
    /// When set, the initial gradient must match central differences to
    /// this relative error.
    #[serde(default)]
    pub gradient_check: Option<f64>,
    /// Central-difference step of the gradient check, relative to the bound.
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

impl OptimizerConfig {
    pub fn new(target: f64, max_iterations: usize, bound: f64) -> Self {
        Self {
            target,
            max_iterations,
            bound,
            seed: 0,
            initial_scale: default_initial_scale(),
            line_search: LineSearch::default(),
            jacobian: JacobianMode::default(),
            gradient: GradientMethod::default(),
            ringdown: RingdownMode::default(),
            stall_threshold: default_stall_threshold(),
            stall_iterations: default_stall_iterations(),
            gradient_check: None,
            fd_step: default_fd_step(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_jacobian(mut self, mode: JacobianMode) -> Self {
        self.jacobian = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target <= 1.0) {
            return Err(validation(format!(
                "target must lie in (0, 1], got {}",
                self.target
            )));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(validation(format!(
                "bound must be positive, got {}",
                self.bound
            )));
        }
        if !(self.initial_scale >= 0.0 && self.initial_scale <= 1.0) {
            return Err(validation("initial_scale must lie in [0, 1]"));
        }
        let ls = &self.line_search;
        if ls.max_evaluations < 2 || !(ls.growth > 1.0) || !(ls.initial_step > 0.0) {
            return Err(validation(
                "line search needs >= 2 evaluations, growth > 1 and a positive initial step",
            ));
        }
        if let JacobianMode::ExactEvery(0) = self.jacobian {
            return Err(validation("exact-every interval must be positive"));
        }
        if self.stall_iterations == 0 {
            return Err(validation("stall_iterations must be positive"));
        }
        Ok(())
    }

    fn penalty(&self) -> Option<PenaltyConfig> {
        match self.ringdown {
            RingdownMode::Penalty(p) => Some(p),
            _ => None,
        }
    }

    fn request(&self, iteration: usize) -> JacobianRequest {
        match self.jacobian {
            JacobianMode::ZeroOrder => JacobianRequest::Fresh(JacobianKind::ZeroOrder),
            JacobianMode::Exact => JacobianRequest::Fresh(JacobianKind::Exact),
            JacobianMode::ExactEvery(k) if iteration % k == 0 => {
                JacobianRequest::Fresh(JacobianKind::Exact)
            }
            JacobianMode::ExactEvery(_) => JacobianRequest::Cached,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    ReachedTarget,
    Stalled,
    MaxIterations,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Weighted average of `Φ` over the samples.
    pub fidelity: f64,
    pub utility: f64,
    /// Largest entry change of the accepted update.
    pub step: f64,
    pub beta: f64,
    /// Cumulative distortion evaluations.
    pub calls: u64,
}

/// Pulse values as rows, for records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub dt: f64,
    pub unit: Unit,
    pub bound: Option<f64>,
    pub values: Vec<Vec<f64>>,
}

impl From<&Pulse> for PulseRecord {
    fn from(p: &Pulse) -> Self {
        Self {
            dt: p.dt(),
            unit: p.unit(),
            bound: p.bound(),
            values: p.values().rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl PulseRecord {
    pub fn to_pulse(&self) -> Result<Pulse> {
        let n = self.values.len();
        let k = self.values.first().map_or(0, Vec::len);
        if self.values.iter().any(|r| r.len() != k) {
            return Err(validation("ragged pulse rows"));
        }
        let flat: Vec<f64> = self.values.iter().flatten().copied().collect();
        let v = Array2::from_shape_vec((n, k), flat).map_err(|e| validation(e.to_string()))?;
        let p = Pulse::new(v, self.dt, self.unit)?;
        match self.bound {
            Some(b) => p.with_bound(b),
            None => Ok(p),
        }
    }
}

/// Everything needed to audit and reproduce one optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub status: RunStatus,
    pub message: Option<String>,
    pub config: OptimizerConfig,
    pub samples: usize,
    pub dimension: usize,
    pub iterations: Vec<IterationRecord>,
    pub final_fidelity: f64,
    pub final_average_fidelity: f64,
    pub distortion_calls: u64,
    pub gradient_check_error: Option<f64>,
    pub final_pulse: PulseRecord,
}

impl RunRecord {
    pub fn reached_target(&self) -> bool {
        self.status == RunStatus::ReachedTarget
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Iteration trace as CSV.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "fidelity", "utility", "step", "beta", "calls"])?;
        for it in &self.iterations {
            wr.write_record([
                it.iteration.to_string(),
                format!("{:e}", it.fidelity),
                format!("{:e}", it.utility),
                format!("{:e}", it.step),
                format!("{:e}", it.beta),
                it.calls.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Seeded initial guess, uniform in `±scale · bound`.
pub fn random_pulse(ens: &Ensemble, cfg: &OptimizerConfig) -> Result<Pulse> {
    let shape = ens.domain();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = cfg.initial_scale * cfg.bound;
    let v = Array2::from_shape_simple_fn((shape.steps, shape.channels), || {
        if a > 0.0 {
            rng.random_range(-a..=a)
        } else {
            0.0
        }
    });
    Pulse::new(v, shape.dt, ens.unit())?.with_bound(cfg.bound)
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Relative error `‖∇ − ∇_fd‖ / ‖∇_fd‖` of the objective gradient at `p`
/// against central differences with step `h`.
pub fn gradient_check(p: &Pulse, ens: &Ensemble, cfg: &OptimizerConfig, h: f64) -> Result<f64> {
    let ev = Evaluator::new(ens, cfg.penalty(), cfg.gradient);
    let req = match cfg.jacobian {
        JacobianMode::ZeroOrder => JacobianRequest::Fresh(JacobianKind::ZeroOrder),
        _ => JacobianRequest::Fresh(JacobianKind::Exact),
    };
    let (_, g) = ev.gradient(p, None, req)?;
    let unbounded = Pulse::new(p.values().clone(), p.dt(), p.unit())?;
    let mut fd = Array2::zeros(g.dim());
    for idx in ndarray::indices(g.dim()) {
        let shifted = |s: f64| -> Result<f64> {
            let mut v = unbounded.values().clone();
            v[idx] += s;
            Ok(ev.value(&Pulse::new(v, p.dt(), p.unit())?)?.utility)
        };
        fd[idx] = (shifted(h)? - shifted(-h)?) / (2.0 * h);
    }
    let num = (&g - &fd).iter().map(|v| v * v).sum::<f64>().sqrt();
    let den = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(if den > 0.0 { num / den } else { num })
}

struct Trial {
    pulse: Pulse,
    point: Point,
}

fn line_search(
    ev: &Evaluator,
    ls: &LineSearch,
    p: &Pulse,
    s: &Array2<f64>,
    alpha0: f64,
    u0: f64,
    iteration: usize,
) -> Result<Option<Trial>> {
    let mut evals = 0usize;
    let mut best: Option<Trial> = None;
    let f = |alpha: f64, evals: &mut usize, best: &mut Option<Trial>| -> Result<f64> {
        *evals += 1;
        let pulse = p.with_values(p.values() + &(s * alpha))?;
        let point = ev.value(&pulse)?;
        if !point.utility.is_finite() {
            return Err(Error::NonFiniteUtility { iteration });
        }
        let u = point.utility;
        if best.as_ref().is_none_or(|b| u > b.point.utility) {
            *best = Some(Trial { pulse, point });
        }
        Ok(u)
    };
    let max = ls.max_evaluations;
    let mut a = 0.0;
    let mut b = alpha0;
    let mut fb = f(b, &mut evals, &mut best)?;
    let mut c;
    if fb > u0 {
        c = b + ls.growth * (b - a);
        let mut fc = f(c, &mut evals, &mut best)?;
        while fc > fb && evals < max {
            a = b;
            (b, fb) = (c, fc);
            c = b + ls.growth * (b - a);
            fc = f(c, &mut evals, &mut best)?;
        }
        if fc > fb {
            return Ok(best.filter(|t| t.point.utility > u0));
        }
    } else {
        c = b;
        loop {
            if evals >= max {
                return Ok(best.filter(|t| t.point.utility > u0));
            }
            b = c / (1.0 + ls.growth);
            fb = f(b, &mut evals, &mut best)?;
            if fb > u0 {
                break;
            }
            c = b;
        }
    }
    // Golden-section refinement of the bracket a < b < c around the best point.
    const R: f64 = 0.381_966_011_250_105;
    while evals < max && (c - a) > 1e-12 * b.abs().max(f64::MIN_POSITIVE) {
        let x = if c - b > b - a {
            b + R * (c - b)
        } else {
            b - R * (b - a)
        };
        let fx = f(x, &mut evals, &mut best)?;
        if fx > fb {
            if x > b {
                a = b;
            } else {
                c = b;
            }
            (b, fb) = (x, fx);
        } else if x > b {
            c = x;
        } else {
            a = x;
        }
    }
    Ok(best.filter(|t| t.point.utility > u0))
}

/// Runs conjugate-gradient ascent from a seeded random pulse, or from
/// `initial` when given.
pub fn grape_optimize(
    ens: &Ensemble,
    cfg: &OptimizerConfig,
    initial: Option<Pulse>,
) -> Result<RunRecord> {
    cfg.validate()?;
    let mut p = match initial {
        Some(p) => {
            ens.domain().check(p.values(), p.dt(), "initial pulse")?;
            let clipped = p.values().mapv(|v| v.clamp(-cfg.bound, cfg.bound));
            Pulse::new(clipped, p.dt(), p.unit())?.with_bound(cfg.bound)?
        }
        None => random_pulse(ens, cfg)?,
    };
    let ev = Evaluator::new(ens, cfg.penalty(), cfg.gradient);
    let mut check_error = None;
    if let Some(tol) = cfg.gradient_check {
        let e = gradient_check(&p, ens, cfg, cfg.fd_step * cfg.bound)?;
        check_error = Some(e);
        if e > tol {
            return Err(Error::GradientCheck {
                relative_error: e,
                tolerance: tol,
            });
        }
    }

    let mut trace = Vec::new();
    let record = |status: RunStatus,
                  message: Option<String>,
                  trace: Vec<IterationRecord>,
                  p: &Pulse,
                  fid: f64| RunRecord {
        status,
        message,
        config: cfg.clone(),
        samples: ens.len(),
        dimension: ens.dim(),
        iterations: trace,
        final_fidelity: fid,
        final_average_fidelity: average_gate_fidelity(fid, ens.dim()),
        distortion_calls: ev.calls(),
        gradient_check_error: check_error,
        final_pulse: PulseRecord::from(p),
    };

    let (mut point, mut grad) = ev.gradient(&p, None, cfg.request(0))?;
    if !point.utility.is_finite() {
        let msg = "non-finite utility at the initial pulse".to_string();
        return Ok(record(
            RunStatus::Aborted,
            Some(msg),
            trace,
            &p,
            point.fidelity,
        ));
    }
    trace.push(IterationRecord {
        iteration: 0,
        fidelity: point.fidelity,
        utility: point.utility,
        step: 0.0,
        beta: 0.0,
        calls: ev.calls(),
    });
    if point.fidelity >= cfg.target {
        return Ok(record(
            RunStatus::ReachedTarget,
            None,
            trace,
            &p,
            point.fidelity,
        ));
    }

    let mut prev: Option<(Array2<f64>, Array2<f64>)> = None;
    let mut last_step = cfg.line_search.initial_step * cfg.bound;
    let mut quiet = 0usize;
    for it in 1..=cfg.max_iterations {
        let d = grad.clone();
        let d = &d;
        let (mut s, mut beta) = match &prev {
            Some((d_prev, s_prev)) => {
                let denom = dot(d_prev, d_prev);
                let beta = if denom > 0.0 {
                    (dot(d, &(d - d_prev)) / denom).max(0.0)
                } else {
                    0.0
                };
                (d + &(s_prev * beta), beta)
            }
            None => (d.clone(), 0.0),
        };
        if dot(&s, d) <= 0.0 {
            s = d.clone();
            beta = 0.0;
        }
        let smax = max_abs(&s);
        let mut step = 0.0;
        let mut accepted = false;
        if smax > 0.0 {
            let alpha0 = last_step.max(cfg.stall_threshold * cfg.bound) / smax;
            match line_search(&ev, &cfg.line_search, &p, &s, alpha0, point.utility, it) {
                Ok(Some(trial)) => {
                    step = max_abs(&(trial.pulse.values() - p.values()));
                    p = trial.pulse;
                    let known = trial.point;
                    let (pt, g) = ev.gradient(&p, Some(&known), cfg.request(it))?;
                    point = pt;
                    grad = g;
                    accepted = true;
                    if step > 0.0 {
                        last_step = step;
                    }
                }
                Ok(None) => {}
                Err(Error::NonFiniteUtility { iteration }) => {
                    let msg =
                        format!("non-finite utility during line search at iteration {iteration}");
                    return Ok(record(
                        RunStatus::Aborted,
                        Some(msg),
                        trace,
                        &p,
                        point.fidelity,
                    ));
                }
                Err(e) => return Err(e),
            }
        }
        trace.push(IterationRecord {
            iteration: it,
            fidelity: point.fidelity,
            utility: point.utility,
            step,
            beta,
            calls: ev.calls(),
        });
        if point.fidelity >= cfg.target {
            return Ok(record(
                RunStatus::ReachedTarget,
                None,
                trace,
                &p,
                point.fidelity,
            ));
        }
        quiet = if step < cfg.stall_threshold * cfg.bound {
            quiet + 1
        } else {
            0
        };
        if quiet >= cfg.stall_iterations {
            return Ok(record(RunStatus::Stalled, None, trace, &p, point.fidelity));
        }
        prev = if accepted { Some((d.clone(), s)) } else { None };
        if !accepted {
            last_step = (last_step / 10.0).max(cfg.stall_threshold * cfg.bound);
        }
    }
    Ok(record(
        RunStatus::MaxIterations,
        None,
        trace,
        &p,
        point.fidelity,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distortion::{Distortion, Resample};
    use crate::linalg::{identity, matrix_exp_skew_hermitian, pauli_x, pauli_y};
    use crate::pulse::Shape;
    use crate::ControlProblem;
    use num_complex::Complex64;
    use std::sync::Arc;

    fn qubit(target: crate::CMatrix) -> ControlProblem {
        let half = |m: crate::CMatrix| m * Complex64::new(0.5, 0.0);
        ControlProblem::new(
            crate::CMatrix::zeros(2, 2),
            vec![half(pauli_x()), half(pauli_y())],
            target,
        )
        .unwrap()
    }

    fn ensemble(target: crate::CMatrix, n: usize) -> Ensemble {
        let g: Arc<dyn Distortion> = Arc::new(Resample::identity(Shape::new(n, 2, 0.1)));
        Ensemble::single(qubit(target), g, Unit::RadPerSec).unwrap()
    }

    #[test]
    fn identity_target_from_zero_stops_immediately() {
        let ens = ensemble(identity(2), 4);
        let cfg = OptimizerConfig::new(0.999, 50, 5.0);
        let zero = Pulse::zeros(ens.domain(), Unit::RadPerSec);
        let r = grape_optimize(&ens, &cfg, Some(zero)).unwrap();
        assert_eq!(r.status, RunStatus::ReachedTarget);
        assert_eq!(r.iterations.len(), 1);
        assert!((r.final_fidelity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_converges_and_is_deterministic() {
        let half_x = pauli_x() * Complex64::new(0.5, 0.0);
        let target = matrix_exp_skew_hermitian(&half_x, std::f64::consts::FRAC_PI_2).unwrap();
        let ens = ensemble(target, 10);
        let cfg = OptimizerConfig::new(0.999, 200, 5.0)
            .with_seed(7)
            .with_jacobian(JacobianMode::Exact);
        let a = grape_optimize(&ens, &cfg, None).unwrap();
        let b = grape_optimize(&ens, &cfg, None).unwrap();
        assert_eq!(a.status, RunStatus::ReachedTarget);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        for w in a.iterations.windows(2) {
            assert!(w[1].utility >= w[0].utility - 1e-12);
            assert!(w[1].calls >= w[0].calls);
        }
    }

    #[test]
    fn record_pulse_round_trip() {
        let ens = ensemble(identity(2), 3);
        let cfg = OptimizerConfig::new(0.5, 1, 2.0).with_seed(3);
        let p = random_pulse(&ens, &cfg).unwrap();
        assert!(p.peak() <= 0.2 + 1e-15);
        assert_eq!(PulseRecord::from(&p).to_pulse().unwrap(), p);
    }
}
