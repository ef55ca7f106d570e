//! The resonator as a distortion operator from drive voltages to Rabi fields.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use ndarray::{Array2, Array4};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ringdown::{amplitude_jacobian, resonator_amplitude};
use super::{
    integrate_segment, pack, restart_hint, unpack, write_trajectory_csv, CircuitState,
    ResonatorModel, RingdownConfig, Segment, SensitivitySystem,
};
use crate::distortion::{check_domain, Distortion, DistortionJacobian, JacobianKind};
use crate::error::{dimension, validation, Result};
use crate::ode::{DenseStep, Solver, Trajectory};
use crate::pulse::{DistortedPulse, Pulse, Shape, Unit};
use crate::tol;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

fn default_epsilon() -> f64 {
    1e-3
}

fn default_rtol() -> f64 {
    tol::ODE_RTOL
}

fn default_atol_current() -> f64 {
    tol::ODE_ATOL_CURRENT
}

fn default_atol_voltage() -> f64 {
    tol::ODE_ATOL_VOLTAGE
}

/// Discretization and solver settings of a [`ResonatorDistortion`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorOptions {
    /// Output step width; a quarter of the input step when absent.
    #[serde(default)]
    pub output_dt: Option<f64>,
    /// Simulated time after the pulse and any compensation steps, seconds.
    #[serde(default)]
    pub tail: f64,
    #[serde(default)]
    pub ringdown: Option<RingdownConfig>,
    /// Probe amplitude of the zero-order Jacobian, volts.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol_current")]
    pub atol_current: f64,
    #[serde(default = "default_atol_voltage")]
    pub atol_voltage: f64,
}

impl Default for ResonatorOptions {
    fn default() -> Self {
        Self {
            output_dt: None,
            tail: 0.0,
            ringdown: None,
            epsilon: default_epsilon(),
            rtol: default_rtol(),
            atol_current: default_atol_current(),
            atol_voltage: default_atol_voltage(),
        }
    }
}

impl ResonatorOptions {
    pub fn with_ringdown(mut self, cfg: RingdownConfig) -> Self {
        self.ringdown = Some(cfg);
        self
    }

    pub fn with_tolerances(mut self, rtol: f64, atol_current: f64, atol_voltage: f64) -> Self {
        self.rtol = rtol;
        self.atol_current = atol_current;
        self.atol_voltage = atol_voltage;
        self
    }

    fn solver(&self, dim: usize) -> Solver {
        let one = [
            self.atol_current,
            self.atol_voltage,
            self.atol_voltage,
            self.atol_current,
            self.atol_voltage,
            self.atol_voltage,
        ];
        Solver::with_tolerances(self.rtol, one.iter().copied().cycle().take(dim).collect())
    }
}

/// Result of one simulation of the resonator under a pulse.
#[derive(Clone, Debug)]
pub struct ResonatorRun {
    pub q: DistortedPulse,
    /// Complex compensation amplitudes, volts.
    pub compensation: Vec<C>,
    /// State at the start of each pulse step.
    pub step_states: Vec<CircuitState>,
    /// State at the start of each compensation step.
    pub compensation_states: Vec<CircuitState>,
    /// State at the end of the last compensation step (or the pulse).
    pub terminal_state: CircuitState,
    /// Largest `|I_L|` while the pulse is applied.
    pub pulse_peak_current: f64,
    amplitude_jacobians: Vec<[[f64; 8]; 2]>,
    trajectory: Option<Trajectory>,
}

impl ResonatorRun {
    pub fn terminal_current(&self) -> f64 {
        self.terminal_state[0].norm()
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.trajectory.as_ref()
    }

    /// Writes the stored trajectory sampled at `times`.
    pub fn write_trajectory_csv<W: Write>(&self, w: W, times: &[f64]) -> Result<()> {
        let traj = self.trajectory.as_ref().ok_or_else(|| {
            crate::Error::Precondition("run was made without storing the trajectory".into())
        })?;
        write_trajectory_csv(w, times.iter().map(|&t| (t, unpack(&traj.eval(t)))))
    }
}

/// Forcing step of the schedule: pulse step, compensation step, or free tail.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Phase {
    Pulse(usize),
    Compensation(usize),
    Tail,
}

/// `q[m] = κ (Re I_L, Im I_L)` at `(m + 1/2) δt` of a nonlinear resonator
/// driven by a two-channel voltage pulse.
#[derive(Debug)]
pub struct ResonatorDistortion {
    model: ResonatorModel,
    domain: Shape,
    range: Shape,
    opts: ResonatorOptions,
    schedule: Vec<(f64, f64, Phase)>,
    sample_times: Vec<f64>,
    zero_order: OnceLock<DistortionJacobian>,
    solves: AtomicU64,
}

impl ResonatorDistortion {
    pub fn new(model: ResonatorModel, domain: Shape, opts: ResonatorOptions) -> Result<Self> {
        model.validate()?;
        if domain.channels != 2 {
            return Err(dimension(format!(
                "resonator input needs 2 channels (in-phase, quadrature), got {}",
                domain.channels
            )));
        }
        model.check_step(domain.dt)?;
        if let Some(rd) = &opts.ringdown {
            rd.validate()?;
            for &w in &rd.steps {
                model.check_step(w)?;
            }
        }
        let output_dt = opts.output_dt.unwrap_or(domain.dt / 4.0);
        if !(output_dt > 0.0 && output_dt.is_finite()) {
            return Err(validation(format!(
                "output_dt must be positive, got {output_dt}"
            )));
        }
        if !(opts.tail >= 0.0 && opts.tail.is_finite()) {
            return Err(validation(format!(
                "tail must be non-negative, got {}",
                opts.tail
            )));
        }
        if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
            return Err(validation(format!(
                "epsilon must be positive, got {}",
                opts.epsilon
            )));
        }
        if !(opts.rtol > 0.0 && opts.atol_current > 0.0 && opts.atol_voltage > 0.0) {
            return Err(validation("solver tolerances must be positive"));
        }

        let mut schedule = Vec::new();
        for n in 0..domain.steps {
            schedule.push((n as f64 * domain.dt, domain.dt, Phase::Pulse(n)));
        }
        let mut t = domain.duration();
        if let Some(rd) = &opts.ringdown {
            for (j, &w) in rd.steps.iter().enumerate() {
                schedule.push((t, w, Phase::Compensation(j)));
                t += w;
            }
        }
        let steps = ((t + opts.tail) / output_dt - 1e-9).ceil().max(1.0) as usize;
        let end = steps as f64 * output_dt;
        if end > t {
            schedule.push((t, end - t, Phase::Tail));
        }
        let sample_times = (0..steps).map(|m| (m as f64 + 0.5) * output_dt).collect();
        Ok(Self {
            model,
            domain,
            range: Shape::new(steps, 2, output_dt),
            opts,
            schedule,
            sample_times,
            zero_order: OnceLock::new(),
            solves: AtomicU64::new(0),
        })
    }

    pub fn model(&self) -> &ResonatorModel {
        &self.model
    }

    pub fn options(&self) -> &ResonatorOptions {
        &self.opts
    }

    pub fn sample_times(&self) -> &[f64] {
        &self.sample_times
    }

    /// Number of base circuit simulations performed so far.
    pub fn solves(&self) -> u64 {
        self.solves.load(Ordering::SeqCst)
    }

    /// Start, width and complex amplitude of every applied forcing step,
    /// compensation steps included.
    pub fn input_steps(&self, p: &Pulse, run: &ResonatorRun) -> Vec<(f64, f64, C)> {
        let amps = amplitudes(p);
        self.schedule
            .iter()
            .filter_map(|&(start, width, phase)| match phase {
                Phase::Pulse(n) => Some((start, width, amps[n])),
                Phase::Compensation(j) => Some((start, width, run.compensation[j])),
                Phase::Tail => None,
            })
            .collect()
    }

    /// Simulates the circuit under `p`.
    pub fn run(&self, p: &Pulse) -> Result<ResonatorRun> {
        self.simulate(p, false, false)
    }

    /// Simulates the circuit and keeps the dense trajectory for export.
    pub fn run_with_trajectory(&self, p: &Pulse) -> Result<ResonatorRun> {
        self.simulate(p, true, false)
    }

    fn simulate(&self, p: &Pulse, store: bool, sensitivities: bool) -> Result<ResonatorRun> {
        check_domain(self, p)?;
        self.solves.fetch_add(1, Ordering::SeqCst);
        let solver = self.opts.solver(6);
        let model = &self.model;
        let amps = amplitudes(p);
        let mut q = Array2::zeros((self.range.steps, 2));
        let mut next = 0usize;
        let mut traj = store.then(|| Trajectory::new(6));
        let mut peak = 0.0f64;

        let mut x = [ZERO; 3];
        let mut hint = None;
        let mut prev = ZERO;
        let mut step_states = Vec::with_capacity(self.domain.steps);
        let mut comp = Vec::new();
        let mut comp_states = Vec::new();
        let mut comp_jacs = Vec::new();
        let mut terminal = x;

        for &(start, width, phase) in &self.schedule {
            let amp = match phase {
                Phase::Pulse(n) => {
                    step_states.push(x);
                    amps[n]
                }
                Phase::Compensation(j) => {
                    let rd = self
                        .opts
                        .ringdown
                        .as_ref()
                        .expect("compensation phase implies ringdown");
                    let c = resonator_amplitude(model, rd, &x, prev, rd.steps[j])?;
                    if sensitivities {
                        comp_jacs.push(amplitude_jacobian(model, rd, &x, prev, rd.steps[j])?);
                    }
                    comp_states.push(x);
                    comp.push(c);
                    c
                }
                Phase::Tail => {
                    terminal = x;
                    ZERO
                }
            };
            let seg = Segment { start, prev, amp };
            let in_pulse = matches!(phase, Phase::Pulse(_));
            (x, hint) =
                integrate_segment(model, &solver, seg, start, start + width, &x, hint, |st| {
                    sample_state(
                        st,
                        &self.sample_times,
                        &mut next,
                        0,
                        self.model.kappa,
                        &mut q,
                    );
                    if in_pulse {
                        peak = peak.max(st.component(st.end(), 0).hypot(st.component(st.end(), 3)));
                    }
                    if let Some(t) = traj.as_mut() {
                        t.push(st);
                    }
                })?;
            prev = amp;
        }
        if !matches!(self.schedule.last(), Some((_, _, Phase::Tail))) {
            terminal = x;
        }
        fill_remaining(&mut q, &mut next, x[0], self.model.kappa);
        Ok(ResonatorRun {
            q: DistortedPulse::new(q, self.range.dt)?,
            compensation: comp,
            step_states,
            compensation_states: comp_states,
            terminal_state: terminal,
            pulse_peak_current: peak,
            amplitude_jacobians: comp_jacs,
            trajectory: traj,
        })
    }

    /// Jacobian from the sensitivity equations along the trajectory of `p`.
    pub fn jacobian_exact(&self, p: &Pulse) -> Result<DistortionJacobian> {
        Ok(self.output_and_jacobian(p)?.1)
    }

    fn output_and_jacobian(&self, p: &Pulse) -> Result<(DistortedPulse, DistortionJacobian)> {
        let base = self.simulate(p, false, true)?;
        let n = self.domain.steps;
        let columns: Vec<Array2<f64>> = (0..2 * n)
            .into_par_iter()
            .map(|col| self.sensitivity_column(p, &base, col / 2, col % 2))
            .collect::<Result<_>>()?;
        let mut tensor = Array4::zeros((self.range.steps, 2, n, 2));
        for (col, c) in columns.into_iter().enumerate() {
            tensor
                .slice_mut(ndarray::s![.., .., col / 2, col % 2])
                .assign(&c);
        }
        Ok((
            base.q,
            DistortionJacobian::new(tensor, JacobianKind::Exact)?,
        ))
    }

    /// Derivative of the output with respect to `p[n, k]`.
    fn sensitivity_column(
        &self,
        p: &Pulse,
        base: &ResonatorRun,
        n: usize,
        k: usize,
    ) -> Result<Array2<f64>> {
        let model = &self.model;
        let solver = self.opts.solver(12);
        let amps = amplitudes(p);
        let unit = if k == 0 {
            C::new(1.0, 0.0)
        } else {
            C::new(0.0, 1.0)
        };
        let mut out = Array2::zeros((self.range.steps, 2));
        let t0 = n as f64 * self.domain.dt;
        let mut next = self.sample_times.partition_point(|&t| t < t0);

        let mut y = [0.0; 12];
        pack(&base.step_states[n], &mut y[..6]);
        let mut hint = None;
        let mut prev = if n > 0 { amps[n - 1] } else { ZERO };
        let mut dprev = ZERO;

        for &(start, width, phase) in &self.schedule[n..] {
            let (amp, damp) = match phase {
                Phase::Pulse(s) => (amps[s], if s == n { unit } else { ZERO }),
                Phase::Compensation(j) => {
                    let jac = &base.amplitude_jacobians[j];
                    let mut z = [0.0; 8];
                    z[..6].copy_from_slice(&y[6..]);
                    z[6] = dprev.re;
                    z[7] = dprev.im;
                    let dot = |row: &[f64; 8]| row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
                    (base.compensation[j], C::new(dot(&jac[0]), dot(&jac[1])))
                }
                Phase::Tail => (ZERO, ZERO),
            };
            let sys = SensitivitySystem {
                model,
                seg: Segment { start, prev, amp },
                dseg: Segment {
                    start,
                    prev: dprev,
                    amp: damp,
                },
            };
            let h = if damp != dprev {
                restart_hint(model, &sys.dseg, hint)
            } else {
                restart_hint(model, &sys.seg, hint)
            };
            let r = solver.integrate(&sys, start, start + width, &y, h, |st| {
                sample_state(st, &self.sample_times, &mut next, 6, model.kappa, &mut out);
            })?;
            y.copy_from_slice(&r.y);
            hint = Some(r.last_step);
            prev = amp;
            dprev = damp;
        }
        fill_remaining(&mut out, &mut next, C::new(y[6], y[9]), model.kappa);
        Ok(out)
    }

    /// Columns `g(ε e[n,k]) / ε`.
    fn compute_zero_order(&self) -> Result<DistortionJacobian> {
        let eps = self.opts.epsilon;
        let metric = self.model.nonlinearity_metric(eps);
        if metric > 1e-3 {
            log::warn!(
                "zero-order probe {eps:e} V is outside the linear regime (relative change of A = {metric:e})"
            );
        } else {
            log::debug!("zero-order probe {eps:e} V, relative change of A = {metric:e}");
        }
        let n = self.domain.steps;
        let columns: Vec<Array2<f64>> = (0..2 * n)
            .into_par_iter()
            .map(|col| {
                let mut v = Array2::zeros((n, 2));
                v[[col / 2, col % 2]] = eps;
                let p = Pulse::new(v, self.domain.dt, Unit::Volts)?;
                Ok(self.simulate(&p, false, false)?.q.into_values() / eps)
            })
            .collect::<Result<_>>()?;
        let mut tensor = Array4::zeros((self.range.steps, 2, n, 2));
        for (col, c) in columns.into_iter().enumerate() {
            tensor
                .slice_mut(ndarray::s![.., .., col / 2, col % 2])
                .assign(&c);
        }
        DistortionJacobian::new(tensor, JacobianKind::ZeroOrder)
    }
}

fn amplitudes(p: &Pulse) -> Vec<C> {
    let v = p.values();
    (0..p.steps())
        .map(|n| C::new(v[[n, 0]], v[[n, 1]]))
        .collect()
}

/// Records `κ (Re, Im)` of the current component at offset `base` for every
/// sample time covered by `st`.
fn sample_state(
    st: &DenseStep,
    times: &[f64],
    next: &mut usize,
    base: usize,
    kappa: f64,
    q: &mut Array2<f64>,
) {
    let end = st.end();
    while *next < times.len() && times[*next] <= end {
        let t = times[*next];
        q[[*next, 0]] = kappa * st.component(t, base);
        q[[*next, 1]] = kappa * st.component(t, base + 3);
        *next += 1;
    }
}

fn fill_remaining(q: &mut Array2<f64>, next: &mut usize, current: C, kappa: f64) {
    while *next < q.nrows() {
        q[[*next, 0]] = kappa * current.re;
        q[[*next, 1]] = kappa * current.im;
        *next += 1;
    }
}

impl Distortion for ResonatorDistortion {
    fn domain(&self) -> Shape {
        self.domain
    }

    fn range(&self) -> Shape {
        self.range
    }

    fn apply(&self, p: &Pulse) -> Result<DistortedPulse> {
        Ok(self.simulate(p, false, false)?.q)
    }

    fn jacobian(&self, p: &Pulse) -> Result<DistortionJacobian> {
        self.jacobian_exact(p)
    }

    fn jacobian_zero_order(&self) -> Result<DistortionJacobian> {
        if let Some(j) = self.zero_order.get() {
            return Ok(j.clone());
        }
        let j = self.compute_zero_order()?;
        Ok(self.zero_order.get_or_init(|| j).clone())
    }

    fn apply_with_jacobian(
        &self,
        p: &Pulse,
        kind: JacobianKind,
    ) -> Result<(DistortedPulse, DistortionJacobian)> {
        match kind {
            JacobianKind::Exact => self.output_and_jacobian(p),
            JacobianKind::ZeroOrder => {
                let j = self.jacobian_zero_order()?;
                Ok((self.apply(p)?, j))
            }
        }
    }
}
