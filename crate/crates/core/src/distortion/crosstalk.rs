//! Time-independent crosstalk between control lines.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use super::{check_domain, Distortion, DistortionJacobian, JacobianKind};
use crate::error::{validation, Result};
use crate::pulse::{DistortedPulse, Pulse, Shape};

/// `χ[(i,l),(j,k)]`: the fraction of control line `(j,k)` seen on control
/// `(i,l)`. Rows and columns are flattened subsystem-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkTensor {
    matrix: Array2<f64>,
    subsystems: usize,
    channels: usize,
}

impl CrosstalkTensor {
    pub fn new(matrix: Array2<f64>, subsystems: usize, channels: usize) -> Result<Self> {
        let size = subsystems * channels;
        if size == 0 {
            return Err(validation(
                "crosstalk needs at least one subsystem and channel",
            ));
        }
        if matrix.nrows() != matrix.ncols() {
            return Err(validation(format!(
                "crosstalk matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.nrows() != size {
            return Err(validation(format!(
                "crosstalk matrix is {}x{} but {subsystems} subsystems x {channels} channels needs {size}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(validation("crosstalk matrix has non-finite entries"));
        }
        Ok(Self {
            matrix,
            subsystems,
            channels,
        })
    }

    pub fn ideal(subsystems: usize, channels: usize) -> Self {
        let n = subsystems * channels;
        Self {
            matrix: Array2::eye(n),
            subsystems,
            channels,
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn subsystems(&self) -> usize {
        self.subsystems
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `χ[(i,l),(j,k)]` with 0-based indices.
    pub fn get(&self, i: usize, l: usize, j: usize, k: usize) -> f64 {
        self.matrix[(i * self.channels + l, j * self.channels + k)]
    }
}

/// `q[n,(i,l)] = Σ_{j,k} χ[(i,l),(j,k)] p[n,(j,k)]` with `δt = dt`, `M = N`.
#[derive(Clone, Debug)]
pub struct CrosstalkOperator {
    chi: CrosstalkTensor,
    domain: Shape,
}

impl CrosstalkOperator {
    pub fn new(chi: CrosstalkTensor, steps: usize, dt: f64) -> Result<Self> {
        if steps == 0 || !(dt > 0.0) {
            return Err(validation("crosstalk operator needs a non-empty time grid"));
        }
        let domain = Shape::new(steps, chi.size(), dt);
        Ok(Self { chi, domain })
    }

    pub fn chi(&self) -> &CrosstalkTensor {
        &self.chi
    }
}

impl Distortion for CrosstalkOperator {
    fn domain(&self) -> Shape {
        self.domain
    }

    fn range(&self) -> Shape {
        self.domain
    }

    fn apply(&self, p: &Pulse) -> Result<DistortedPulse> {
        check_domain(self, p)?;
        let q = p.values().dot(&self.chi.matrix.t());
        DistortedPulse::new(q, p.dt())
    }

    fn jacobian(&self, p: &Pulse) -> Result<DistortionJacobian> {
        check_domain(self, p)?;
        let (n, c) = (self.domain.steps, self.domain.channels);
        let mut t = Array4::zeros((n, c, n, c));
        for m in 0..n {
            for l in 0..c {
                for k in 0..c {
                    t[(m, l, m, k)] = self.chi.matrix[(l, k)];
                }
            }
        }
        DistortionJacobian::new(t, JacobianKind::Exact)
    }

    fn is_linear(&self) -> bool {
        true
    }
}
