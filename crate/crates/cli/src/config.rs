//! Experiment configuration files.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use hwgrape::distortion::{
    ConvolutionOperator, CrosstalkOperator, CrosstalkTensor, Distortion, Resample,
};
use hwgrape::linalg::{identity, CMatrix};
use hwgrape::optimizer::{Ensemble, HypothesisSample, JacobianMode, OptimizerConfig};
use hwgrape::presets::{self, cnot, crosstalk};
use hwgrape::resonator::{ResonatorDistortion, ResonatorModel, ResonatorOptions, RingdownConfig};
use hwgrape::{ControlProblem, Shape, Unit};

/// Dense complex matrix as rows of `[re, im]` pairs.
pub type MatrixSpec = Vec<Vec<[f64; 2]>>;

fn matrix(spec: &MatrixSpec) -> Result<CMatrix> {
    let d = spec.len();
    if spec.iter().any(|r| r.len() != d) {
        bail!("matrices must be square, got {d} rows of unequal length");
    }
    Ok(CMatrix::from_fn(d, d, |i, j| {
        num_complex::Complex64::new(spec[i][j][0], spec[i][j][1])
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Single qubit, controls `σ_x/2`, `σ_y/2`, target `exp(−i θ σ_x/2)`.
    QubitRotation {
        angle: f64,
    },
    /// Identity target on `qubits` qubits with `σ_x/2`, `σ_y/2` controls on each.
    Identity {
        qubits: usize,
    },
    Cnot,
    #[serde(rename = "crosstalk-4q")]
    Crosstalk4q,
    Matrices {
        h0: MatrixSpec,
        controls: Vec<MatrixSpec>,
        target: MatrixSpec,
        #[serde(default)]
        detuning: Option<MatrixSpec>,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<ControlProblem> {
        Ok(match self {
            Self::QubitRotation { angle } => presets::qubit_problem(presets::x_rotation(*angle))?,
            Self::Identity { qubits } => {
                let n = *qubits;
                if n == 0 || n > 6 {
                    bail!("identity problem needs 1 to 6 qubits, got {n}");
                }
                let half = |m: CMatrix| m * num_complex::Complex64::new(0.5, 0.0);
                let controls = (0..n)
                    .flat_map(|q| {
                        [
                            half(hwgrape::linalg::embed(&hwgrape::linalg::pauli_x(), q, n)),
                            half(hwgrape::linalg::embed(&hwgrape::linalg::pauli_y(), q, n)),
                        ]
                    })
                    .collect();
                ControlProblem::new(CMatrix::zeros(1 << n, 1 << n), controls, identity(1 << n))?
            }
            Self::Cnot => cnot::problem()?,
            Self::Crosstalk4q => crosstalk::problem()?,
            Self::Matrices {
                h0,
                controls,
                target,
                detuning,
            } => {
                let p = ControlProblem::new(
                    matrix(h0)?,
                    controls.iter().map(matrix).collect::<Result<_>>()?,
                    matrix(target)?,
                )?;
                match detuning {
                    Some(d) => p.with_detuning_operator(matrix(d)?)?,
                    None => p,
                }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Named(String),
    Inline(ResonatorModel),
}

impl ModelSpec {
    pub fn build(&self) -> Result<ResonatorModel> {
        match self {
            Self::Named(n) if n == "reference" => Ok(ResonatorModel::reference()),
            Self::Named(n) => {
                bail!("unknown resonator model {n:?}; use \"reference\" or inline parameters")
            }
            Self::Inline(m) => {
                m.validate()?;
                Ok(m.clone())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CrosstalkSpec {
    /// `"reference"`, `"nearest-neighbour"` or `"ideal"`.
    Named(String),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistortionSpec {
    Identity {
        steps: usize,
        channels: usize,
        dt: f64,
    },
    /// Exponential rise time per channel.
    Risetime {
        taus: Vec<f64>,
        steps: usize,
        dt: f64,
        #[serde(default)]
        output_dt: Option<f64>,
        #[serde(default)]
        output_steps: Option<usize>,
    },
    Crosstalk {
        matrix: CrosstalkSpec,
        subsystems: usize,
        channels: usize,
        steps: usize,
        dt: f64,
    },
    Resonator {
        model: ModelSpec,
        steps: usize,
        dt: f64,
        #[serde(default)]
        options: ResonatorOptions,
    },
}

/// Applies a sample's named overrides to a resonator model through its
/// serialized field names.
fn override_model(m: &ResonatorModel, s: &HypothesisSample) -> Result<ResonatorModel> {
    if s.overrides.is_empty() {
        return Ok(m.clone());
    }
    let mut v = serde_json::to_value(m)?;
    for (k, x) in &s.overrides {
        let slot = v
            .get_mut(k)
            .ok_or_else(|| anyhow!("resonator model has no parameter {k:?} to override"))?;
        *slot = serde_json::json!(x);
    }
    let out: ResonatorModel = serde_json::from_value(v)?;
    out.validate()?;
    Ok(out)
}

impl DistortionSpec {
    pub fn domain(&self) -> Shape {
        match *self {
            Self::Identity {
                steps,
                channels,
                dt,
            } => Shape::new(steps, channels, dt),
            Self::Risetime {
                ref taus,
                steps,
                dt,
                ..
            } => Shape::new(steps, taus.len(), dt),
            Self::Crosstalk {
                subsystems,
                channels,
                steps,
                dt,
                ..
            } => Shape::new(steps, subsystems * channels, dt),
            Self::Resonator { steps, dt, .. } => Shape::new(steps, 2, dt),
        }
    }

    pub fn unit(&self) -> Unit {
        match self {
            Self::Resonator { .. } => Unit::Volts,
            _ => Unit::RadPerSec,
        }
    }

    pub fn resonator_model(&self) -> Result<ResonatorModel> {
        match self {
            Self::Resonator { model, .. } => model.build(),
            _ => bail!("this command needs a resonator distortion"),
        }
    }

    pub fn build_resonator(&self, sample: &HypothesisSample) -> Result<ResonatorDistortion> {
        match self {
            Self::Resonator { model, options, .. } => {
                let m = override_model(&model.build()?, sample)?;
                Ok(ResonatorDistortion::new(m, self.domain(), options.clone())?)
            }
            _ => bail!("this command needs a resonator distortion"),
        }
    }

    fn check_overrides(&self, s: &HypothesisSample, allowed: &[&str]) -> Result<()> {
        if let Some(k) = s.overrides.keys().find(|k| !allowed.contains(&k.as_str())) {
            bail!("parameter {k:?} cannot be varied for this distortion (allowed: {allowed:?})");
        }
        Ok(())
    }

    pub fn build(&self, sample: &HypothesisSample) -> Result<Arc<dyn Distortion>> {
        let domain = self.domain();
        Ok(match self {
            Self::Identity { .. } => {
                self.check_overrides(sample, &[])?;
                Arc::new(Resample::identity(domain))
            }
            Self::Risetime {
                taus,
                dt,
                output_dt,
                output_steps,
                ..
            } => {
                self.check_overrides(sample, &["tau"])?;
                let taus = match sample.get("tau") {
                    Some(t) => vec![t; taus.len()],
                    None => taus.clone(),
                };
                Arc::new(ConvolutionOperator::risetime(
                    &taus,
                    domain,
                    output_dt.unwrap_or(*dt),
                    *output_steps,
                )?)
            }
            Self::Crosstalk {
                matrix,
                subsystems,
                channels,
                steps,
                dt,
            } => {
                self.check_overrides(sample, &[])?;
                let chi = match matrix {
                    CrosstalkSpec::Named(n) => match n.as_str() {
                        "reference" => crosstalk::tensor(&crosstalk::CHI)?,
                        "nearest-neighbour" => crosstalk::tensor(&crosstalk::NEAREST_NEIGHBOUR)?,
                        "ideal" => CrosstalkTensor::ideal(*subsystems, *channels),
                        other => bail!("unknown crosstalk matrix {other:?}"),
                    },
                    CrosstalkSpec::Matrix(rows) => {
                        let size = rows.len();
                        if rows.iter().any(|r| r.len() != size) {
                            bail!("crosstalk matrix must be square");
                        }
                        let m = Array2::from_shape_fn((size, size), |(i, j)| rows[i][j]);
                        CrosstalkTensor::new(m, *subsystems, *channels)?
                    }
                };
                Arc::new(CrosstalkOperator::new(chi, *steps, *dt)?)
            }
            Self::Resonator { .. } => Arc::new(self.build_resonator(sample)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSpec {
    /// `detuning`, `power_error`, or a distortion parameter name.
    pub parameter: String,
    pub values: Vec<f64>,
    /// Centre of the reported high-fidelity window.
    #[serde(default)]
    pub nominal: Option<f64>,
    /// Average-fidelity threshold of the reported window.
    #[serde(default)]
    pub threshold: Option<f64>,
}

impl ScanSpec {
    pub fn sample(&self, value: f64) -> HypothesisSample {
        let s = HypothesisSample::nominal();
        match self.parameter.as_str() {
            "detuning" => s.with_detuning(value),
            "power_error" => s.with_power_error(value),
            name => s.with_override(name, value),
        }
    }
}

fn default_trials() -> usize {
    16
}

fn default_study_steps() -> usize {
    16
}

fn default_study_fidelity() -> f64 {
    0.99
}

fn default_study_scale() -> f64 {
    0.05
}

fn default_study_iterations() -> usize {
    300
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeSpec {
    /// Voltage bounds.
    pub bounds: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_study_steps")]
    pub steps: usize,
    /// Rotation angle of the target about x.
    #[serde(default = "default_angle")]
    pub angle: f64,
    #[serde(default = "default_study_fidelity")]
    pub target_average_fidelity: f64,
    #[serde(default = "default_study_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_study_scale")]
    pub initial_scale: f64,
    #[serde(default)]
    pub jacobian: JacobianMode,
    #[serde(default)]
    pub ringdown: Option<RingdownConfig>,
    #[serde(default)]
    pub tail: f64,
    /// Gradient check at the first trial's initial pulse for each bound.
    #[serde(default)]
    pub gradient_check: Option<f64>,
}

fn default_angle() -> f64 {
    PI / 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyStateSpec {
    pub volts: Vec<f64>,
}

/// Constant-amplitude inputs for `distort`, one output file per amplitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareInput {
    pub amplitudes: Vec<f64>,
    #[serde(default)]
    pub channel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub problem: ProblemSpec,
    pub distortion: DistortionSpec,
    /// Robustness distribution; a single nominal sample when empty.
    #[serde(default)]
    pub samples: Vec<HypothesisSample>,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub scan: Option<ScanSpec>,
    #[serde(default)]
    pub landscape: Option<LandscapeSpec>,
    #[serde(default)]
    pub steady_state: Option<SteadyStateSpec>,
    #[serde(default)]
    pub square: Option<SquareInput>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Builds everything that can be built without running a simulation,
    /// so shape and parameter errors surface before any computation.
    pub fn validate(&self) -> Result<()> {
        let problem = self.problem.build().context("problem")?;
        let ens = self.ensemble().context("distortion")?;
        if ens.dim() != problem.dim() {
            bail!("ensemble dimension mismatch");
        }
        if let Some(o) = &self.optimizer {
            o.validate().context("optimizer")?;
        }
        if let Some(s) = &self.scan {
            if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite()) {
                bail!("scan: values must be a non-empty list of finite numbers");
            }
            self.distortion
                .build(&s.sample(s.values[0]))
                .context("scan")?;
        }
        if let Some(l) = &self.landscape {
            self.distortion.resonator_model().context("landscape")?;
            if l.bounds.is_empty()
                || l.bounds.iter().any(|b| !(*b > 0.0))
                || l.trials == 0
                || l.steps == 0
            {
                bail!("landscape: needs positive bounds, trials and steps");
            }
            if let Some(rd) = &l.ringdown {
                rd.validate().context("landscape.ringdown")?;
            }
        }
        if let Some(s) = &self.steady_state {
            self.distortion.resonator_model().context("steady_state")?;
            if s.volts.iter().any(|v| !(*v > 0.0)) {
                bail!("steady_state: drive amplitudes must be positive");
            }
        }
        if let Some(sq) = &self.square {
            if sq.channel >= self.distortion.domain().channels {
                bail!("square: channel {} out of range", sq.channel);
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<ControlProblem> {
        self.problem.build()
    }

    pub fn ensemble(&self) -> Result<Ensemble> {
        let problem = self.problem.build()?;
        let samples = if self.samples.is_empty() {
            vec![HypothesisSample::nominal()]
        } else {
            self.samples.clone()
        };
        let spec = &self.distortion;
        Ok(Ensemble::from_samples(
            &problem,
            samples,
            spec.unit(),
            |s| {
                spec.build(s)
                    .map_err(|e| hwgrape::Error::Validation(format!("{e:#}")))
            },
        )?)
    }
}
