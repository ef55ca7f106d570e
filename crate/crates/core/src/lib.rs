//! Quantum gate synthesis through classical control-hardware models.
//!
//! Pulses written by the experimenter pass through a distortion operator
//! (linear kernels, crosstalk, or a nonlinear resonator circuit) before
//! reaching the quantum system. The optimizer ascends the gate fidelity of
//! the distorted pulse using the chain rule through the operator's Jacobian.

pub mod distortion;
pub mod error;
pub mod io;
pub mod linalg;
pub mod ode;
pub mod optimizer;
pub mod presets;
pub mod pulse;
pub mod quantum;
pub mod resonator;
pub mod tol;

pub use distortion::{Distortion, DistortionJacobian, JacobianKind};
pub use error::{Error, Result};
pub use linalg::CMatrix;
pub use pulse::{DistortedPulse, Pulse, Shape, Unit};
pub use quantum::{fidelity, fidelity_gradient, propagators, ControlProblem};
