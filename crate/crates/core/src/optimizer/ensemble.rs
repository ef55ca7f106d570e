//! Parameter hypotheses, averaged objectives and their gradients.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::{Distortion, DistortionJacobian, JacobianKind};
use crate::error::{dimension, validation, Result};
use crate::pulse::{DistortedPulse, Pulse, Shape, Unit};
use crate::quantum::{fidelity, fidelity_and_gradient, ControlProblem, GradientMethod};

/// One static hypothesis about the uncertain parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSample {
    /// Detuning, rad/s.
    #[serde(default)]
    pub detuning: f64,
    /// Relative control-power error.
    #[serde(default)]
    pub power_error: f64,
    /// Distortion parameters replaced under this hypothesis, by name.
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for HypothesisSample {
    fn default() -> Self {
        Self::nominal()
    }
}

impl HypothesisSample {
    pub fn nominal() -> Self {
        Self {
            detuning: 0.0,
            power_error: 0.0,
            overrides: BTreeMap::new(),
            weight: 1.0,
        }
    }

    pub fn with_detuning(mut self, v: f64) -> Self {
        self.detuning = v;
        self
    }

    pub fn with_power_error(mut self, v: f64) -> Self {
        self.power_error = v;
        self
    }

    pub fn with_override(mut self, name: &str, v: f64) -> Self {
        self.overrides.insert(name.to_string(), v);
        self
    }

    pub fn with_weight(mut self, w: f64) -> Self {
        self.weight = w;
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.overrides.get(name).copied()
    }
}

/// Rescales weights to sum to one.
pub fn normalize_weights(samples: &mut [HypothesisSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(validation("at least one hypothesis sample is required"));
    }
    if samples
        .iter()
        .any(|s| !(s.weight >= 0.0 && s.weight.is_finite()))
    {
        return Err(validation("sample weights must be finite and non-negative"));
    }
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if total <= 0.0 {
        return Err(validation("sample weights sum to zero"));
    }
    for s in samples.iter_mut() {
        s.weight /= total;
    }
    Ok(())
}

/// A hypothesis with its conditional problem and distortion.
#[derive(Clone, Debug)]
pub struct Member {
    pub sample: HypothesisSample,
    pub problem: ControlProblem,
    pub distortion: Arc<dyn Distortion>,
}

/// Weighted set of conditional problems sharing one pulse domain.
#[derive(Clone, Debug)]
pub struct Ensemble {
    members: Vec<Member>,
    unit: Unit,
}

impl Ensemble {
    /// A single nominal member.
    pub fn single(
        problem: ControlProblem,
        distortion: Arc<dyn Distortion>,
        unit: Unit,
    ) -> Result<Self> {
        Self::new(
            vec![Member {
                sample: HypothesisSample::nominal(),
                problem,
                distortion,
            }],
            unit,
        )
    }

    pub fn new(members: Vec<Member>, unit: Unit) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(validation("at least one hypothesis sample is required"));
        };
        let domain = first.distortion.domain();
        let total: f64 = members.iter().map(|m| m.sample.weight).sum();
        if members.iter().any(|m| !(m.sample.weight >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(validation(format!(
                "sample weights must be non-negative and sum to 1, got {total}"
            )));
        }
        for m in &members {
            if !m.distortion.domain().matches(&domain) {
                return Err(dimension(
                    "all distortions in an ensemble must share one input shape",
                ));
            }
            if m.distortion.range().channels != m.problem.n_controls() {
                return Err(dimension(format!(
                    "distortion emits {} channels but the problem has {} controls",
                    m.distortion.range().channels,
                    m.problem.n_controls()
                )));
            }
        }
        Ok(Self { members, unit })
    }

    /// Builds members from samples: the problem receives each sample's
    /// detuning and power error, and `distortion` maps the sample to its
    /// operator. Weights are normalized.
    pub fn from_samples<F>(
        base: &ControlProblem,
        mut samples: Vec<HypothesisSample>,
        unit: Unit,
        distortion: F,
    ) -> Result<Self>
    where
        F: Fn(&HypothesisSample) -> Result<Arc<dyn Distortion>>,
    {
        normalize_weights(&mut samples)?;
        let members = samples
            .into_iter()
            .map(|s| {
                Ok(Member {
                    problem: base.with_errors(s.detuning, s.power_error)?,
                    distortion: distortion(&s)?,
                    sample: s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, unit)
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn domain(&self) -> Shape {
        self.members[0].distortion.domain()
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    /// Hilbert-space dimension of the first member.
    pub fn dim(&self) -> usize {
        self.members[0].problem.dim()
    }
}

/// `Φ̄ = Σ w_i Φ(g_i(p) | H_i)` and the per-sample values.
pub fn average_utility(p: &Pulse, ens: &Ensemble) -> Result<(f64, Vec<f64>)> {
    let values: Vec<f64> = ens
        .members
        .par_iter()
        .map(|m| fidelity(&m.distortion.apply(p)?, &m.problem))
        .collect::<Result<_>>()?;
    let avg = ens
        .members
        .iter()
        .zip(&values)
        .map(|(m, v)| m.sample.weight * v)
        .sum();
    Ok((avg, values))
}

/// `∇p Φ̄ = Σ w_i ∇q Φ(·|x_i) · J_p(g_i)`.
pub fn average_gradient(
    p: &Pulse,
    ens: &Ensemble,
    kind: JacobianKind,
    method: GradientMethod,
) -> Result<Array2<f64>> {
    let ev = Evaluator::new(ens, None, method);
    Ok(ev.gradient(p, None, JacobianRequest::Fresh(kind))?.1)
}

/// Tail-energy penalty `Ω = scale Σ_{m ≥ first_step} Σ_l q[m,l]²` and its
/// gradient with respect to `q`. `first_step` is 0-based and may equal `M`.
pub fn ringdown_penalty(
    q: &DistortedPulse,
    first_step: usize,
    scale: f64,
) -> Result<(f64, Array2<f64>)> {
    let m = q.steps();
    if first_step > m {
        return Err(validation(format!(
            "penalty start {first_step} beyond the {m} output steps"
        )));
    }
    let v = q.values();
    let mut grad = Array2::zeros(v.dim());
    let mut omega = 0.0;
    for i in first_step..m {
        for l in 0..v.ncols() {
            omega += v[[i, l]] * v[[i, l]];
            grad[[i, l]] = 2.0 * scale * v[[i, l]];
        }
    }
    Ok((scale * omega, grad))
}

/// Penalty on the distorted-pulse tail, weighted per squared rotation angle
/// `(q δt)²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    /// First penalized output step, 0-based.
    pub first_step: usize,
    pub weight: f64,
}

impl PenaltyConfig {
    fn evaluate(&self, q: &DistortedPulse) -> Result<(f64, Array2<f64>)> {
        ringdown_penalty(q, self.first_step, self.weight * q.dt() * q.dt())
    }
}

/// Objective values at one pulse.
#[derive(Clone, Debug)]
pub struct Point {
    pub fidelity: f64,
    pub per_sample: Vec<f64>,
    pub penalty: f64,
    pub utility: f64,
    pub(crate) outputs: Vec<DistortedPulse>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum JacobianRequest {
    Fresh(JacobianKind),
    /// Reuse the last exact Jacobians, computing them if absent.
    Cached,
}

/// Evaluates objectives and gradients over an ensemble, counting distortion calls.
pub(crate) struct Evaluator<'a> {
    ens: &'a Ensemble,
    penalty: Option<PenaltyConfig>,
    method: GradientMethod,
    calls: AtomicU64,
    cache: Mutex<Vec<Option<DistortionJacobian>>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(ens: &'a Ensemble, penalty: Option<PenaltyConfig>, method: GradientMethod) -> Self {
        Self {
            ens,
            penalty,
            method,
            calls: AtomicU64::new(0),
            cache: Mutex::new(vec![None; ens.len()]),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn combine(&self, outputs: Vec<DistortedPulse>, fids: Vec<f64>, pens: Vec<f64>) -> Point {
        let w = self.ens.members.iter().map(|m| m.sample.weight);
        let fidelity = w.clone().zip(&fids).map(|(w, f)| w * f).sum();
        let penalty = w.zip(&pens).map(|(w, p)| w * p).sum::<f64>();
        Point {
            fidelity,
            per_sample: fids,
            penalty,
            utility: fidelity - penalty,
            outputs,
        }
    }

    pub fn value(&self, p: &Pulse) -> Result<Point> {
        let res: Vec<(DistortedPulse, f64, f64)> = self
            .ens
            .members
            .par_iter()
            .map(|m| {
                self.calls.fetch_add(1, Ordering::SeqCst);
                let q = m.distortion.apply(p)?;
                let f = fidelity(&q, &m.problem)?;
                let pen = match &self.penalty {
                    Some(c) => c.evaluate(&q)?.0,
                    None => 0.0,
                };
                Ok((q, f, pen))
            })
            .collect::<Result<_>>()?;
        let (mut qs, mut fs, mut ps) = (Vec::new(), Vec::new(), Vec::new());
        for (q, f, pen) in res {
            qs.push(q);
            fs.push(f);
            ps.push(pen);
        }
        Ok(self.combine(qs, fs, ps))
    }

    /// Objective and gradient of the utility at `p`. `known` supplies the
    /// outputs at `p` when they are already available.
    pub fn gradient(
        &self,
        p: &Pulse,
        known: Option<&Point>,
        req: JacobianRequest,
    ) -> Result<(Point, Array2<f64>)> {
        let cached: Vec<Option<DistortionJacobian>> =
            self.cache.lock().expect("cache lock").clone();
        let res: Vec<(
            DistortedPulse,
            f64,
            f64,
            Array2<f64>,
            Option<DistortionJacobian>,
        )> = self
            .ens
            .members
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let g = &m.distortion;
                let reuse = known.map(|pt| pt.outputs[i].clone());
                let (q, j, fresh_exact) = match req {
                    JacobianRequest::Fresh(JacobianKind::Exact) => {
                        self.calls.fetch_add(1, Ordering::SeqCst);
                        let (q, j) = g.apply_with_jacobian(p, JacobianKind::Exact)?;
                        (q, j.clone(), Some(j))
                    }
                    JacobianRequest::Cached if cached[i].is_none() => {
                        self.calls.fetch_add(1, Ordering::SeqCst);
                        let (q, j) = g.apply_with_jacobian(p, JacobianKind::Exact)?;
                        (q, j.clone(), Some(j))
                    }
                    _ => {
                        let j = match req {
                            JacobianRequest::Cached => cached[i].clone().expect("checked above"),
                            _ => g.jacobian_zero_order()?,
                        };
                        let q = match reuse {
                            Some(q) => q,
                            None => {
                                self.calls.fetch_add(1, Ordering::SeqCst);
                                g.apply(p)?
                            }
                        };
                        (q, j, None)
                    }
                };
                let (f, mut gq) = fidelity_and_gradient(&q, &m.problem, self.method)?;
                let mut pen = 0.0;
                if let Some(c) = &self.penalty {
                    let (o, go) = c.evaluate(&q)?;
                    pen = o;
                    gq -= &go;
                }
                let (jm, jl, _, _) = j.dims();
                if (jm, jl) != gq.dim() {
                    return Err(dimension(
                        "Jacobian range does not match the distorted pulse",
                    ));
                }
                Ok((q, f, pen, j.pullback(&gq), fresh_exact))
            })
            .collect::<Result<_>>()?;

        let mut grad = Array2::zeros((p.steps(), p.channels()));
        let (mut qs, mut fs, mut ps) = (Vec::new(), Vec::new(), Vec::new());
        let mut cache = self.cache.lock().expect("cache lock");
        for (i, (q, f, pen, g, fresh)) in res.into_iter().enumerate() {
            grad.scaled_add(self.ens.members[i].sample.weight, &g);
            if let Some(j) = fresh {
                cache[i] = Some(j);
            }
            qs.push(q);
            fs.push(f);
            ps.push(pen);
        }
        Ok((self.combine(qs, fs, ps), grad))
    }
}
