//! Small dense complex linear algebra used by the propagator code.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{validation, Result};
use crate::tol;

pub type CMatrix = DMatrix<Complex64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Places `op` on qubit `site` (0-based, most significant first) of an
/// `n`-qubit register.
pub fn embed(op: &CMatrix, site: usize, n: usize) -> CMatrix {
    let mut out = CMatrix::identity(1, 1);
    for q in 0..n {
        out = if q == site {
            kron(&out, op)
        } else {
            kron(&out, &identity(op.nrows()))
        };
    }
    out
}

pub fn trace(a: &CMatrix) -> Complex64 {
    a.diagonal().iter().sum()
}

/// Hilbert–Schmidt inner product `Tr(A†B)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn hermiticity_error(a: &CMatrix) -> f64 {
    max_abs(&(a - a.adjoint()))
}

pub fn unitarity_error(u: &CMatrix) -> f64 {
    max_abs(&(u.adjoint() * u - identity(u.nrows())))
}

pub fn is_hermitian(a: &CMatrix) -> bool {
    a.is_square() && hermiticity_error(a) <= tol::HERMITIAN
}

pub fn is_unitary(u: &CMatrix) -> bool {
    u.is_square() && unitarity_error(u) <= tol::UNITARY
}

/// Spectral decomposition `A = V diag(λ) V†` of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn new(a: &CMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(validation("eigendecomposition of a non-square matrix"));
        }
        let err = hermiticity_error(a);
        if err > tol::HERMITIAN * (1.0 + max_abs(a)) {
            return Err(validation(format!(
                "matrix is not Hermitian (max |A - A†| = {err:e})"
            )));
        }
        // symmetrize so the solver sees an exactly Hermitian input
        let sym = (a + a.adjoint()).scale(0.5);
        let eig = sym.symmetric_eigen();
        Ok(Self {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        })
    }

    /// `exp(-i t A)` from the stored decomposition.
    pub fn exp_neg_i(&self, t: f64) -> CMatrix {
        let phases: Vec<Complex64> = self.values.iter().map(|&l| (-I * (t * l)).exp()).collect();
        let mut scaled = self.vectors.clone();
        for (j, ph) in phases.iter().enumerate() {
            let mut col = scaled.column_mut(j);
            col *= *ph;
        }
        &scaled * self.vectors.adjoint()
    }
}

/// `exp(-i t A)` for Hermitian `A`, via eigendecomposition.
pub fn matrix_exp_skew_hermitian(a: &CMatrix, t: f64) -> Result<CMatrix> {
    if !t.is_finite() {
        return Err(validation("non-finite evolution time"));
    }
    Ok(HermitianEigen::new(a)?.exp_neg_i(t))
}

/// Dense matrix exponential for general (non-Hermitian) complex matrices.
pub fn expm(a: &CMatrix) -> CMatrix {
    a.clone().exp()
}
