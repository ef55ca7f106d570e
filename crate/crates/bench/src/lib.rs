//! Shared fixtures for the benchmarks.

use ndarray::Array2;

use hwgrape::{Pulse, Shape, Unit};

/// Deterministic pulse with entries in `±scale`.
pub fn wavy_pulse(shape: Shape, scale: f64, unit: Unit) -> Pulse {
    let v = Array2::from_shape_fn((shape.steps, shape.channels), |(n, k)| {
        scale * ((n as f64 * 0.7 + k as f64 * 1.3).sin())
    });
    Pulse::new(v, shape.dt, unit).expect("finite pulse")
}
