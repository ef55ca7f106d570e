//! Piecewise-constant control programs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, validation, Result};

/// Physical unit attached to pulse amplitudes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unit {
    /// Source voltage driving a circuit.
    Volts,
    /// Angular-frequency control amplitude seen by the quantum system.
    RadPerSec,
}

/// Discretization of a pulse: `steps` uniform steps of width `dt` on
/// `channels` channels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub steps: usize,
    pub channels: usize,
    pub dt: f64,
}

impl Shape {
    pub fn new(steps: usize, channels: usize, dt: f64) -> Self {
        Self {
            steps,
            channels,
            dt,
        }
    }

    pub fn duration(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Equal step counts and channel counts, step widths equal to 1e-9 relative.
    pub fn matches(&self, other: &Shape) -> bool {
        self.steps == other.steps
            && self.channels == other.channels
            && (self.dt - other.dt).abs() <= 1e-9 * self.dt.abs().max(other.dt.abs())
    }

    pub fn check(&self, values: &Array2<f64>, dt: f64, what: &str) -> Result<()> {
        let got = Shape::new(values.nrows(), values.ncols(), dt);
        if !self.matches(&got) {
            return Err(dimension(format!(
                "{what}: expected {}x{} steps of {:e} s, got {}x{} steps of {:e} s",
                self.steps, self.channels, self.dt, got.steps, got.channels, got.dt
            )));
        }
        Ok(())
    }
}

/// The program generated by the experimenter's hardware: an `N x K` array
/// of step amplitudes with uniform step width `dt` (seconds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    values: Array2<f64>,
    dt: f64,
    unit: Unit,
    bound: Option<f64>,
}

impl Pulse {
    pub fn new(values: Array2<f64>, dt: f64, unit: Unit) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(validation("pulse needs at least one step and one channel"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(validation(format!(
                "pulse step width must be positive, got {dt}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(validation("pulse contains non-finite amplitudes"));
        }
        Ok(Self {
            values,
            dt,
            unit,
            bound: None,
        })
    }

    pub fn zeros(shape: Shape, unit: Unit) -> Self {
        Self::new(Array2::zeros((shape.steps, shape.channels)), shape.dt, unit)
            .expect("zero pulse of a valid shape")
    }

    /// Attaches an amplitude bound; fails if the current values exceed it.
    pub fn with_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(validation(format!(
                "amplitude bound must be positive, got {bound}"
            )));
        }
        let peak = self.peak();
        if peak > bound * (1.0 + 1e-12) {
            return Err(validation(format!(
                "pulse peak {peak} exceeds bound {bound}"
            )));
        }
        self.bound = Some(bound);
        Ok(self)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.steps(), self.channels(), self.dt)
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// New pulse with the same discretization and different amplitudes.
    /// Amplitudes are clipped to the bound when one is attached.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        self.shape().check(&values, self.dt, "pulse update")?;
        let mut out = Self::new(values, self.dt, self.unit)?;
        out.bound = self.bound;
        out.clip_to_bound();
        Ok(out)
    }

    /// Projects onto the box `|p| <= bound`.
    pub fn clip_to_bound(&mut self) {
        if let Some(b) = self.bound {
            self.values.mapv_inplace(|v| v.clamp(-b, b));
        }
    }
}

/// The control program seen by the quantum system: `M x L` amplitudes in
/// rad/s with step width `dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortedPulse {
    values: Array2<f64>,
    dt: f64,
}

impl DistortedPulse {
    pub fn new(values: Array2<f64>, dt: f64) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(validation(
                "distorted pulse needs at least one step and one channel",
            ));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(validation(format!("step width must be positive, got {dt}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(validation("distorted pulse contains non-finite amplitudes"));
        }
        Ok(Self { values, dt })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.steps(), self.channels(), self.dt)
    }

    /// Reinterprets the output as the input of a downstream operator.
    pub fn into_pulse(self, unit: Unit) -> Pulse {
        Pulse {
            values: self.values,
            dt: self.dt,
            unit,
            bound: None,
        }
    }
}

impl From<&Pulse> for DistortedPulse {
    fn from(p: &Pulse) -> Self {
        Self {
            values: p.values.clone(),
            dt: p.dt,
        }
    }
}
