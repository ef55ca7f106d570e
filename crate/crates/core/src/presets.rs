//! Ready-made problems: single-qubit rotations through the resonator, the
//! two-spin CNOT with rise-time distortion and the four-qubit crosstalk gate.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use ndarray::Array2;

use crate::distortion::{ConvolutionOperator, CrosstalkOperator, CrosstalkTensor, Distortion};
use crate::error::Result;
use crate::linalg::{
    c, embed, identity, kron, matrix_exp_skew_hermitian, pauli_x, pauli_y, pauli_z, CMatrix,
};
use crate::ode::Solver;
use crate::optimizer::{Ensemble, HypothesisSample};
use crate::pulse::{Shape, Unit};
use crate::quantum::ControlProblem;
use crate::resonator::{
    steady_state_response, ResonatorDistortion, ResonatorModel, ResonatorOptions,
};

fn half(m: CMatrix) -> CMatrix {
    m * c(0.5, 0.0)
}

/// `exp(−i θ σ_x / 2)`.
pub fn x_rotation(theta: f64) -> CMatrix {
    matrix_exp_skew_hermitian(&half(pauli_x()), theta).expect("Pauli matrices are Hermitian")
}

/// Qubit in the frame of its drive: controls `σ_x/2`, `σ_y/2`, detuning `σ_z/2`.
pub fn qubit_problem(target: CMatrix) -> Result<ControlProblem> {
    ControlProblem::new(
        CMatrix::zeros(2, 2),
        vec![half(pauli_x()), half(pauli_y())],
        target,
    )?
    .with_detuning_operator(half(pauli_z()))
}

pub fn qubit_pi2_x() -> Result<ControlProblem> {
    qubit_problem(x_rotation(FRAC_PI_2))
}

/// Single-member ensemble driving a qubit through the resonator.
pub fn resonator_ensemble(
    model: ResonatorModel,
    domain: Shape,
    opts: ResonatorOptions,
    problem: ControlProblem,
) -> Result<(Arc<ResonatorDistortion>, Ensemble)> {
    let g = Arc::new(ResonatorDistortion::new(model, domain, opts)?);
    let dyn_g: Arc<dyn Distortion> = g.clone();
    Ok((g, Ensemble::single(problem, dyn_g, Unit::Volts)?))
}

/// Pulse length `0.25 / f_ss` at a drive of `volts`: a quarter turn at the
/// steady-state Rabi frequency.
pub fn quarter_turn_time(model: &ResonatorModel, volts: f64, solver: &Solver) -> Result<f64> {
    Ok(0.25 / steady_state_response(volts, model, solver)?.frequency_hz)
}

pub mod cnot {
    use super::*;

    pub const OMEGA_1: f64 = -2.0 * PI * 15.0;
    pub const OMEGA_2: f64 = 2.0 * PI * 15.0;
    pub const J: f64 = 2.0 * PI * 50.0;
    pub const BOUND: f64 = 2.0 * PI * 50.0;
    pub const STEPS: usize = 30;
    pub const DT: f64 = 0.005;
    pub const TAU: f64 = 0.005;

    /// CNOT with the first spin as control.
    pub fn target() -> CMatrix {
        let mut u = CMatrix::zeros(4, 4);
        for (r, col) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            u[(r, col)] = c(1.0, 0.0);
        }
        u
    }

    pub fn problem() -> Result<ControlProblem> {
        let (x, y, z) = (pauli_x(), pauli_y(), pauli_z());
        let h0 = embed(&z, 0, 2) * c(OMEGA_1 / 2.0, 0.0)
            + embed(&z, 1, 2) * c(OMEGA_2 / 2.0, 0.0)
            + (kron(&x, &x) + kron(&y, &y) + kron(&z, &z)) * c(J / 4.0, 0.0);
        let hx = embed(&x, 0, 2) + embed(&x, 1, 2);
        let hy = embed(&y, 0, 2) + embed(&y, 1, 2);
        let det = (embed(&z, 0, 2) + embed(&z, 1, 2)) * c(0.5, 0.0);
        ControlProblem::new(h0, vec![hx, hy], target())?.with_detuning_operator(det)
    }

    pub fn domain() -> Shape {
        Shape::new(STEPS, 2, DT)
    }

    /// `M = 2N + ⌈10 τ_nominal / dt⌉` output steps of `dt/2`.
    pub fn output_steps() -> usize {
        2 * STEPS + (10.0 * TAU / DT - 1e-9).ceil() as usize
    }

    /// Both channels rising with time constant `tau` on the nominal window.
    pub fn risetime(tau: f64) -> Result<ConvolutionOperator> {
        ConvolutionOperator::risetime(&[tau, tau], domain(), DT / 2.0, Some(output_steps()))
    }

    /// Equal-weight ensemble over the given rise times.
    pub fn ensemble(taus: &[f64]) -> Result<Ensemble> {
        let samples = taus
            .iter()
            .map(|&t| HypothesisSample::nominal().with_override("tau", t))
            .collect();
        Ensemble::from_samples(&problem()?, samples, Unit::RadPerSec, |s| {
            let g: Arc<dyn Distortion> = Arc::new(risetime(s.get("tau").unwrap_or(TAU))?);
            Ok(g)
        })
    }
}

pub mod crosstalk {
    use super::*;

    pub const QUBITS: usize = 4;
    pub const COUPLING: f64 = 2.0 * PI * 20e6;
    pub const BOUND: f64 = 2.0 * PI * 40e6;
    pub const STEPS: usize = 20;
    pub const DT: f64 = 2.5e-9;

    /// Mixing matrix in `(qubit, channel)` block layout, rows seen, columns sent.
    #[rustfmt::skip]
    pub const CHI: [[f64; 8]; 8] = [
        [1.0,   0.0,   0.3,  0.001, 0.05,  0.0,   0.001, 0.0],
        [0.0,   1.0,   0.0,  0.1,   0.0,   0.01,  0.0,   0.001],
        [0.25,  0.0,   1.0,  0.0,   0.3,  -0.005, 0.04,  0.0],
        [0.0,   0.2,   0.0,  1.0,   0.0,   0.4,   0.0,   0.0],
        [0.0,   0.0,   0.2,  0.0,   1.0,   0.0,  -0.2,   0.0],
        [0.0,  -0.04,  0.0,  0.2,   0.0,   1.0,   0.0,   0.3],
        [0.001, 0.0,   0.04, 0.0,   0.3,   0.0,   1.0,   0.0],
        [0.0,   0.0,   0.0,  0.07,  0.0,  -0.3,   0.0,   1.0],
    ];

    #[rustfmt::skip]
    pub const NEAREST_NEIGHBOUR: [[f64; 8]; 8] = [
        [1.0,  0.0,  0.2,  0.0,  0.0,  0.0, 0.0, 0.0],
        [0.0,  1.0,  0.0,  0.3,  0.0,  0.0, 0.0, 0.0],
        [-0.1, 0.0,  1.0,  0.0,  0.5,  0.0, 0.0, 0.0],
        [0.0,  0.15, 0.0,  1.0,  0.0,  0.4, 0.0, 0.0],
        [0.0,  0.0, -0.2,  0.0,  1.0,  0.0, 0.2, 0.0],
        [0.0,  0.0,  0.0, -0.2,  0.0,  1.0, 0.0, 0.3],
        [0.0,  0.0,  0.0,  0.0,  0.23, 0.0, 1.0, 0.0],
        [0.0,  0.0,  0.0,  0.0,  0.0,  0.7, 0.0, 1.0],
    ];

    pub fn tensor(rows: &[[f64; 8]; 8]) -> Result<CrosstalkTensor> {
        CrosstalkTensor::new(
            Array2::from_shape_fn((8, 8), |(i, j)| rows[i][j]),
            QUBITS,
            2,
        )
    }

    /// `π/2` about x on the third qubit, identity on the others.
    pub fn target() -> CMatrix {
        let mut u = identity(1);
        for q in 0..QUBITS {
            u = kron(
                &u,
                &if q == 2 {
                    x_rotation(FRAC_PI_2)
                } else {
                    identity(2)
                },
            );
        }
        u
    }

    pub fn problem() -> Result<ControlProblem> {
        let z = pauli_z();
        let d = 1 << QUBITS;
        let mut h0 = CMatrix::zeros(d, d);
        for i in 0..QUBITS - 1 {
            h0 += embed(&z, i, QUBITS) * embed(&z, i + 1, QUBITS) * c(COUPLING, 0.0);
        }
        let controls = (0..QUBITS)
            .flat_map(|q| [embed(&pauli_x(), q, QUBITS), embed(&pauli_y(), q, QUBITS)])
            .collect();
        ControlProblem::new(h0, controls, target())
    }

    pub fn ensemble() -> Result<Ensemble> {
        let g: Arc<dyn Distortion> = Arc::new(CrosstalkOperator::new(tensor(&CHI)?, STEPS, DT)?);
        Ensemble::single(problem()?, g, Unit::RadPerSec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::is_unitary;

    #[test]
    fn targets_are_unitary() {
        assert!(is_unitary(&cnot::target()));
        assert!(is_unitary(&crosstalk::target()));
        assert!(is_unitary(&x_rotation(0.3)));
    }

    #[test]
    fn cnot_window() {
        assert_eq!(cnot::output_steps(), 70);
        let g = cnot::risetime(cnot::TAU).unwrap();
        assert_eq!(g.range().steps, 70);
        assert!((g.range().dt - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn second_qubit_x_column() {
        let t = crosstalk::tensor(&crosstalk::CHI).unwrap();
        assert_eq!(t.get(0, 0, 1, 0), 0.3);
        assert_eq!(t.get(1, 0, 1, 0), 1.0);
        assert_eq!(t.get(2, 0, 1, 0), 0.2);
        let nn = crosstalk::tensor(&crosstalk::NEAREST_NEIGHBOUR).unwrap();
        assert_eq!(nn.get(0, 0, 1, 0), 0.2);
        assert_eq!(nn.get(2, 0, 1, 0), -0.2);
    }
}
