//! Numerical tolerances shared across the crate.

/// Entrywise tolerance for `A = A†`.
pub const HERMITIAN: f64 = 1e-12;

/// Entrywise tolerance for `U†U = 1`.
pub const UNITARY: f64 = 1e-10;

/// Slack allowed above 1 for the normalized fidelity.
pub const FIDELITY_SLACK: f64 = 1e-12;

/// Default relative tolerance of the circuit integrator.
pub const ODE_RTOL: f64 = 1e-8;

/// Default absolute tolerance on currents (amperes).
pub const ODE_ATOL_CURRENT: f64 = 1e-10;

/// Default absolute tolerance on voltages (volts).
pub const ODE_ATOL_VOLTAGE: f64 = 1e-8;

/// Absolute tolerance for each convolution-tensor quadrature.
pub const QUADRATURE: f64 = 1e-10;
