//! Tuned-and-matched resonator with kinetic-inductance nonlinearity.
//!
//! The circuit is a source of impedance `R_L` driving a matching capacitor
//! `C_m` into a tank made of `C_t` in parallel with a series `L`–`R` branch.
//! The state is the rotating-frame envelope `x = (I_L, V_Cm, V_Ct)`.

mod distortion;
mod ringdown;
mod steady;

pub use distortion::{ResonatorDistortion, ResonatorOptions, ResonatorRun};
pub use ringdown::{compensation_amplitude, ringdown_steps, RingdownConfig};
pub use steady::{linear_steady_state, steady_state_response, SteadyState};

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::ode::{OdeSystem, Solver, Trajectory};
use crate::pulse::Pulse;
use crate::tol;

type C = Complex64;

/// Circuit state `(I_L, V_Cm, V_Ct)` as complex envelopes.
pub type CircuitState = [Complex64; 3];

/// Sign convention of the capacitor-coupling entries of the circuit matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CircuitForm {
    /// Kirchhoff equations of the passive network.
    #[default]
    Passive,
    /// `+1/(R_L C)` in the third column of rows two and three. Not passive:
    /// matched high-Q designs grow without bound.
    AsPublished,
}

/// Component values of the resonator. SI units throughout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorModel {
    pub r0: f64,
    pub l0: f64,
    pub alpha_l: f64,
    pub alpha_r: f64,
    pub eta: f64,
    pub c_m: f64,
    pub c_t: f64,
    pub r_l: f64,
    /// Rotating-frame frequency, rad/s.
    pub omega_r: f64,
    /// Rabi frequency per ampere of inductor current, rad/s/A.
    pub kappa: f64,
    /// Rise time of the forcing between steps, seconds.
    pub tau_r: f64,
    #[serde(default)]
    pub circuit: CircuitForm,
}

const REFERENCE: &str = include_str!("../../data/reference_resonator.json");

impl ResonatorModel {
    /// The shipped reference design: about 10 GHz, loaded Q about 100,
    /// linear near 1 V and strongly compressed at 10 V.
    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE).expect("bundled reference resonator is valid")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r0", self.r0),
            ("l0", self.l0),
            ("eta", self.eta),
            ("c_m", self.c_m),
            ("c_t", self.c_t),
            ("r_l", self.r_l),
            ("omega_r", self.omega_r),
            ("kappa", self.kappa),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(validation(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("alpha_l", self.alpha_l),
            ("alpha_r", self.alpha_r),
            ("tau_r", self.tau_r),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(validation(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Checks the rise time against the shortest forcing step.
    pub fn check_step(&self, dt: f64) -> Result<()> {
        if self.tau_r >= dt / 10.0 {
            return Err(validation(format!(
                "tau_r = {:e} s must be below dt/10 = {:e} s",
                self.tau_r,
                dt / 10.0
            )));
        }
        Ok(())
    }

    pub fn is_linear(&self) -> bool {
        self.alpha_l == 0.0 && self.alpha_r == 0.0
    }

    /// Same circuit with both nonlinear coefficients set to zero.
    pub fn linearized(&self) -> Self {
        Self {
            alpha_l: 0.0,
            alpha_r: 0.0,
            ..self.clone()
        }
    }

    pub fn inductance(&self, current: f64) -> f64 {
        self.l0 * (1.0 + self.alpha_l * current * current)
    }

    pub fn resistance(&self, current: f64) -> f64 {
        self.r0 * (1.0 + self.alpha_r * current.abs().powf(self.eta))
    }

    fn coupling_sign(&self) -> f64 {
        match self.circuit {
            CircuitForm::Passive => -1.0,
            CircuitForm::AsPublished => 1.0,
        }
    }

    /// Row-one coefficients `(-R/L, 1/L)` as functions of `u = |I_L|²`.
    fn branch(&self, u: f64) -> (f64, f64) {
        let l = self.l0 * (1.0 + self.alpha_l * u);
        let r = self.r0 * (1.0 + self.alpha_r * u.powf(self.eta / 2.0));
        (-r / l, 1.0 / l)
    }

    /// Derivatives of [`Self::branch`] with respect to `u`.
    fn branch_derivative(&self, u: f64) -> (f64, f64) {
        if u <= 0.0 {
            return (0.0, 0.0);
        }
        let l = self.l0 * (1.0 + self.alpha_l * u);
        let r = self.r0 * (1.0 + self.alpha_r * u.powf(self.eta / 2.0));
        let dl = self.l0 * self.alpha_l;
        let dr = self.r0 * self.alpha_r * (self.eta / 2.0) * u.powf(self.eta / 2.0 - 1.0);
        (-(dr * l - r * dl) / (l * l), -dl / (l * l))
    }

    /// Input vector `b`.
    pub fn input_vector(&self) -> DVector<C> {
        DVector::from_vec(vec![
            C::new(0.0, 0.0),
            C::new(1.0 / (self.r_l * self.c_m), 0.0),
            C::new(1.0 / (self.r_l * self.c_t), 0.0),
        ])
    }

    /// Rotating-frame circuit matrix `A(x)`.
    pub fn matrix(&self, x: &CircuitState) -> DMatrix<C> {
        let (g, h) = self.branch(x[0].norm_sqr());
        let s = self.coupling_sign();
        let rm = 1.0 / (self.r_l * self.c_m);
        let rt = 1.0 / (self.r_l * self.c_t);
        let w = C::new(0.0, self.omega_r);
        let re = |v: f64| C::new(v, 0.0);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                re(g) - w,
                re(0.0),
                re(h),
                re(0.0),
                re(-rm) - w,
                re(s * rm),
                re(-1.0 / self.c_t),
                re(-rt),
                re(s * rt) - w,
            ],
        )
    }

    /// Circuit matrix at the zero state.
    pub fn linear_matrix(&self) -> DMatrix<C> {
        self.matrix(&[C::new(0.0, 0.0); 3])
    }

    /// `A(x) x + α b`.
    pub fn rhs(&self, x: &CircuitState, alpha: C) -> CircuitState {
        let (g, h) = self.branch(x[0].norm_sqr());
        let s = self.coupling_sign();
        let rm = 1.0 / (self.r_l * self.c_m);
        let rt = 1.0 / (self.r_l * self.c_t);
        let w = C::new(0.0, self.omega_r);
        [
            (g - w) * x[0] + h * x[2],
            (-rm - w) * x[1] + s * rm * x[2] + alpha * rm,
            -x[0] / self.c_t - rt * x[1] + (s * rt - w) * x[2] + alpha * rt,
        ]
    }

    /// Linearized response `A'(x)·δx` of `A(x)x` about `x`, split into real parts.
    fn tangent(&self, x: &CircuitState, dx: &CircuitState) -> CircuitState {
        let u = x[0].norm_sqr();
        let (g, h) = self.branch(u);
        let (dg, dh) = self.branch_derivative(u);
        let s = self.coupling_sign();
        let rm = 1.0 / (self.r_l * self.c_m);
        let rt = 1.0 / (self.r_l * self.c_t);
        let w = C::new(0.0, self.omega_r);
        let du = 2.0 * (x[0].conj() * dx[0]).re;
        [
            (g - w) * dx[0] + h * dx[2] + (dg * x[0] + dh * x[2]) * du,
            (-rm - w) * dx[1] + s * rm * dx[2],
            -dx[0] / self.c_t - rt * dx[1] + (s * rt - w) * dx[2],
        ]
    }

    /// Relative change of the circuit matrix at the state driven by a
    /// constant amplitude `volts` in the linear steady state.
    pub fn nonlinearity_metric(&self, volts: f64) -> f64 {
        let a0 = self.linear_matrix();
        let x = linear_steady_state(self, C::new(volts, 0.0)).unwrap_or([C::new(0.0, 0.0); 3]);
        (self.matrix(&x) - &a0).norm() / a0.norm()
    }

    /// Default solver: relative 1e-8, absolute 1e-10 A and 1e-8 V.
    pub fn default_solver(&self) -> Solver {
        let (ai, av) = (tol::ODE_ATOL_CURRENT, tol::ODE_ATOL_VOLTAGE);
        Solver::with_tolerances(tol::ODE_RTOL, vec![ai, av, av, ai, av, av])
    }
}

/// Forcing on one interval: relaxes from `prev` towards `amp` after `start`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub prev: C,
    pub amp: C,
}

impl Segment {
    pub fn eval(&self, t: f64, tau_r: f64) -> C {
        if tau_r == 0.0 {
            return self.amp;
        }
        let s = (t - self.start).max(0.0);
        self.prev + (self.amp - self.prev) * (-(-s / tau_r).exp_m1())
    }
}

/// Piecewise forcing `α(t)` with exponential transitions at step edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Forcing {
    segments: Vec<Segment>,
    tau_r: f64,
}

impl Forcing {
    /// Steps of arbitrary widths starting at `t = 0`, returning to zero after the last.
    pub fn from_steps(amps: &[C], widths: &[f64], tau_r: f64) -> Result<Self> {
        if amps.len() != widths.len() {
            return Err(validation("one width per forcing step is required"));
        }
        if !(tau_r >= 0.0 && tau_r.is_finite()) {
            return Err(validation(format!(
                "tau_r must be non-negative, got {tau_r}"
            )));
        }
        let mut segments = Vec::with_capacity(amps.len() + 1);
        let mut start = 0.0;
        let mut prev = C::new(0.0, 0.0);
        for (&a, &w) in amps.iter().zip(widths) {
            if !(w > 0.0 && w.is_finite()) {
                return Err(validation(format!(
                    "forcing step widths must be positive, got {w}"
                )));
            }
            segments.push(Segment {
                start,
                prev,
                amp: a,
            });
            prev = a;
            start += w;
        }
        segments.push(Segment {
            start,
            prev,
            amp: C::new(0.0, 0.0),
        });
        Ok(Self { segments, tau_r })
    }

    pub fn constant(amp: C, tau_r: f64) -> Self {
        Self {
            segments: vec![Segment {
                start: 0.0,
                prev: C::new(0.0, 0.0),
                amp,
            }],
            tau_r,
        }
    }

    pub fn tau_r(&self) -> f64 {
        self.tau_r
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Forcing value; zero before `t = 0`.
    pub fn eval(&self, t: f64) -> C {
        let j = self.segments.partition_point(|s| s.start <= t);
        if j == 0 {
            return C::new(0.0, 0.0);
        }
        self.segments[j - 1].eval(t, self.tau_r)
    }
}

/// Complex forcing `p_n,1 + i p_n,2` from a two-channel voltage pulse.
pub fn forcing_from_pulse(p: &Pulse, tau_r: f64) -> Result<Forcing> {
    if p.channels() != 2 {
        return Err(crate::error::dimension(format!(
            "resonator forcing needs 2 channels (in-phase, quadrature), got {}",
            p.channels()
        )));
    }
    let v = p.values();
    let amps: Vec<C> = (0..p.steps())
        .map(|n| C::new(v[[n, 0]], v[[n, 1]]))
        .collect();
    Forcing::from_steps(&amps, &vec![p.dt(); amps.len()], tau_r)
}

pub(crate) fn pack(x: &CircuitState, out: &mut [f64]) {
    for i in 0..3 {
        out[i] = x[i].re;
        out[3 + i] = x[i].im;
    }
}

pub(crate) fn unpack(y: &[f64]) -> CircuitState {
    [C::new(y[0], y[3]), C::new(y[1], y[4]), C::new(y[2], y[5])]
}

pub(crate) struct SegmentSystem<'a> {
    pub model: &'a ResonatorModel,
    pub seg: Segment,
}

impl OdeSystem for SegmentSystem<'_> {
    fn dim(&self) -> usize {
        6
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let x = unpack(y);
        let f = self.model.rhs(&x, self.seg.eval(t, self.model.tau_r));
        pack(&f, dy);
    }
}

/// Circuit state together with its derivative along one pulse direction.
pub(crate) struct SensitivitySystem<'a> {
    pub model: &'a ResonatorModel,
    pub seg: Segment,
    pub dseg: Segment,
}

impl OdeSystem for SensitivitySystem<'_> {
    fn dim(&self) -> usize {
        12
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let tau = self.model.tau_r;
        let x = unpack(&y[..6]);
        let dx = unpack(&y[6..]);
        pack(&self.model.rhs(&x, self.seg.eval(t, tau)), &mut dy[..6]);
        let mut f = self.model.tangent(&x, &dx);
        let da = self.dseg.eval(t, tau);
        f[1] += da / (self.model.r_l * self.model.c_m);
        f[2] += da / (self.model.r_l * self.model.c_t);
        pack(&f, &mut dy[6..]);
    }
}

/// Dense solution of the circuit equation.
#[derive(Clone, Debug)]
pub struct CircuitSolution {
    trajectory: Trajectory,
    end: f64,
    final_state: CircuitState,
}

impl CircuitSolution {
    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn final_state(&self) -> CircuitState {
        self.final_state
    }

    pub fn state(&self, t: f64) -> CircuitState {
        if self.trajectory.is_empty() {
            return self.final_state;
        }
        unpack(&self.trajectory.eval(t))
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    /// Writes `t, Re I_L, Im I_L, Re V_Cm, Im V_Cm, Re V_Ct, Im V_Ct` rows.
    pub fn write_csv<W: Write>(&self, w: W, times: &[f64]) -> Result<()> {
        write_trajectory_csv(w, times.iter().map(|&t| (t, self.state(t))))
    }
}

pub(crate) fn write_trajectory_csv<W: Write>(
    w: W,
    rows: impl Iterator<Item = (f64, CircuitState)>,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "time_s", "re_i_l", "im_i_l", "re_v_cm", "im_v_cm", "re_v_ct", "im_v_ct",
    ])?;
    for (t, x) in rows {
        let mut rec = vec![format!("{t:e}")];
        for v in x {
            rec.push(format!("{:e}", v.re));
            rec.push(format!("{:e}", v.im));
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Integrates one forcing segment over `[t0, t1]`, returning the end state
/// and the last accepted step.
pub(crate) fn integrate_segment(
    model: &ResonatorModel,
    solver: &Solver,
    seg: Segment,
    t0: f64,
    t1: f64,
    x: &CircuitState,
    hint: Option<f64>,
    mut observer: impl FnMut(&crate::ode::DenseStep),
) -> Result<(CircuitState, Option<f64>)> {
    let mut y = [0.0; 6];
    pack(x, &mut y);
    let hint = restart_hint(model, &seg, hint);
    let r = solver.integrate(
        &SegmentSystem { model, seg },
        t0,
        t1,
        &y,
        hint,
        &mut observer,
    )?;
    Ok((unpack(&r.y), Some(r.last_step)))
}

/// Caps the carried-over step near a forcing transition.
pub(crate) fn restart_hint(
    model: &ResonatorModel,
    seg: &Segment,
    hint: Option<f64>,
) -> Option<f64> {
    if model.tau_r > 0.0 && seg.amp != seg.prev {
        hint.map(|h| h.min(model.tau_r / 4.0))
    } else {
        hint
    }
}

/// Solves `ẋ = A(x)x + α(t)b` on `[0, t_end]` from `x0`.
pub fn solve_circuit(
    forcing: &Forcing,
    model: &ResonatorModel,
    t_end: f64,
    x0: &CircuitState,
    solver: &Solver,
) -> Result<CircuitSolution> {
    model.validate()?;
    if model.tau_r != forcing.tau_r() {
        return Err(validation(
            "forcing rise time differs from the model's tau_r",
        ));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(validation(format!(
            "t_end must be non-negative, got {t_end}"
        )));
    }
    if x0.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(validation("initial circuit state must be finite"));
    }
    let mut trajectory = Trajectory::new(6);
    let mut x = *x0;
    let mut hint = None;
    let segs = forcing.segments();
    let mut t = 0.0;
    // Before the first segment the forcing is zero.
    let first = segs.first().map_or(t_end, |s| s.start.min(t_end));
    if first > 0.0 {
        let zero = Segment {
            start: 0.0,
            prev: C::new(0.0, 0.0),
            amp: C::new(0.0, 0.0),
        };
        (x, hint) = integrate_segment(model, solver, zero, 0.0, first, &x, hint, |s| {
            trajectory.push(s)
        })?;
        t = first;
    }
    for (j, seg) in segs.iter().enumerate() {
        let stop = segs.get(j + 1).map_or(t_end, |n| n.start.min(t_end));
        if stop <= t {
            continue;
        }
        (x, hint) = integrate_segment(model, solver, *seg, t, stop, &x, hint, |s| {
            trajectory.push(s)
        })?;
        t = stop;
    }
    if x.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::Integration {
            last_good_time: t,
            reason: "non-finite state".into(),
        });
    }
    Ok(CircuitSolution {
        trajectory,
        end: t_end,
        final_state: x,
    })
}
