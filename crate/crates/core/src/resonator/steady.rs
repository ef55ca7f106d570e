use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;

use super::{integrate_segment, CircuitState, ResonatorModel, Segment};
use crate::error::{validation, Error, Result};
use crate::ode::Solver;

type C = Complex64;

/// Settled response to a constant drive.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyState {
    pub volts: f64,
    pub state: CircuitState,
    /// `κ|I_L|/2π`, Hz.
    pub frequency_hz: f64,
    pub settle_time: f64,
}

/// `x = −A0⁻¹ b α` for the zero-amplitude circuit matrix.
pub fn linear_steady_state(model: &ResonatorModel, amp: C) -> Result<CircuitState> {
    let a = model.linear_matrix();
    let rhs = -(model.input_vector() * amp);
    let x: DVector<C> = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| validation("circuit matrix is singular"))?;
    Ok([x[0], x[1], x[2]])
}

/// Number of consecutive quiet windows required before declaring settlement.
const QUIET_WINDOWS: usize = 20;

/// Drives the circuit at constant amplitude `volts` until `|I_L|` changes by
/// less than `rel_tol` per carrier period for several consecutive periods.
pub fn steady_state_response(
    volts: f64,
    model: &ResonatorModel,
    solver: &Solver,
) -> Result<SteadyState> {
    steady_state_response_with(volts, model, solver, 1e-6, 2e-6)
}

pub fn steady_state_response_with(
    volts: f64,
    model: &ResonatorModel,
    solver: &Solver,
    rel_tol: f64,
    max_time: f64,
) -> Result<SteadyState> {
    model.validate()?;
    if !(volts > 0.0 && volts.is_finite()) {
        return Err(validation(format!(
            "drive amplitude must be positive, got {volts}"
        )));
    }
    let window = 2.0 * PI / model.omega_r;
    let block = 200.0 * window;
    let seg = Segment {
        start: 0.0,
        prev: C::new(0.0, 0.0),
        amp: C::new(volts, 0.0),
    };
    let mut x = [C::new(0.0, 0.0); 3];
    let mut hint = None;
    let mut t = 0.0;
    let mut next_sample = window;
    let mut last_amp = 0.0;
    let mut quiet = 0usize;
    let mut last_change = f64::INFINITY;
    while t < max_time {
        let stop = (t + block).min(max_time);
        let mut settled_at = None;
        (x, hint) = integrate_segment(model, solver, seg, t, stop, &x, hint, |st| {
            while settled_at.is_none() && next_sample <= st.end() {
                let amp = st
                    .component(next_sample, 0)
                    .hypot(st.component(next_sample, 3));
                last_change = (amp - last_amp).abs() / amp.max(f64::MIN_POSITIVE);
                quiet = if last_change < rel_tol { quiet + 1 } else { 0 };
                if quiet >= QUIET_WINDOWS {
                    settled_at = Some(next_sample);
                }
                last_amp = amp;
                next_sample += window;
            }
        })?;
        t = stop;
        if let Some(ts) = settled_at {
            return Ok(SteadyState {
                volts,
                state: x,
                frequency_hz: model.kappa * x[0].norm() / (2.0 * PI),
                settle_time: ts,
            });
        }
    }
    Err(Error::Convergence(format!(
        "|I_L| still varying after {max_time:e} s at {volts} V: last amplitude {last_amp:e} A, \
         relative change per period {last_change:e} (tolerance {rel_tol:e}); possible limit cycle"
    )))
}
