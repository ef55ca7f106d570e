//! Discretized distortion operators `g: R^N ⊗ R^K → R^M ⊗ R^L` and their
//! Jacobians.
//!
//! Index order is `(m, l, n, k)` everywhere: output step, output channel,
//! input step, input channel. Input steps span `[(n-1) dt, n dt)` and output
//! samples sit at the midpoints `(m - 1/2) δt`.

mod convolution;
mod crosstalk;
mod quadrature;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{dimension, Error, Result};
use crate::pulse::{DistortedPulse, Pulse, Shape, Unit};

pub use convolution::{
    convolution_tensor, convolution_tensor_quadrature, default_output_steps, risetime_tensor,
    ConvolutionOperator, ConvolutionTensor, ExponentialKernel, FnKernel, Kernel, TopHatKernel,
};
pub use crosstalk::{CrosstalkOperator, CrosstalkTensor};
pub use quadrature::integrate_adaptive;

/// Whether a Jacobian is exact or the pulse-independent zero-pulse estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianKind {
    Exact,
    ZeroOrder,
}

/// Rank-4 sensitivity tensor `∂q[m,l] / ∂p[n,k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistortionJacobian {
    tensor: Array4<f64>,
    kind: JacobianKind,
}

impl DistortionJacobian {
    pub fn new(tensor: Array4<f64>, kind: JacobianKind) -> Result<Self> {
        if tensor.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("Jacobian has non-finite entries".into()));
        }
        Ok(Self { tensor, kind })
    }

    pub fn tensor(&self) -> &Array4<f64> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Array4<f64> {
        self.tensor
    }

    pub fn kind(&self) -> JacobianKind {
        self.kind
    }

    /// `(M, L, N, K)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.tensor.dim()
    }

    /// `J · δp`, contracting over `(n, k)`.
    pub fn apply(&self, dp: &Array2<f64>) -> Array2<f64> {
        contract_nk(&self.tensor, dp)
    }

    /// `∇q · J`, contracting over `(m, l)`: pulls an output-space gradient back
    /// to the input space.
    pub fn pullback(&self, grad_q: &Array2<f64>) -> Array2<f64> {
        let (m, l, n, k) = self.tensor.dim();
        assert_eq!(
            grad_q.dim(),
            (m, l),
            "gradient shape does not match Jacobian range"
        );
        let flat = self
            .tensor
            .view()
            .into_shape_with_order((m * l, n * k))
            .expect("contiguous");
        let g = grad_q
            .view()
            .into_shape_with_order(m * l)
            .expect("contiguous");
        g.dot(&flat).into_shape_with_order((n, k)).expect("shape")
    }

    /// Chain rule `J_{g1(p)}(g2) · J_p(g1)`, contracting the intermediate indices.
    pub fn chain(outer: &DistortionJacobian, inner: &DistortionJacobian) -> Result<Self> {
        let (m, l, n2, k2) = outer.dims();
        let (n2b, k2b, n, k) = inner.dims();
        if (n2, k2) != (n2b, k2b) {
            return Err(dimension(format!(
                "cannot chain Jacobians: outer domain {n2}x{k2}, inner range {n2b}x{k2b}"
            )));
        }
        let a = outer
            .tensor
            .view()
            .into_shape_with_order((m * l, n2 * k2))
            .expect("contiguous");
        let b = inner
            .tensor
            .view()
            .into_shape_with_order((n2 * k2, n * k))
            .expect("contiguous");
        let kind = if outer.kind == JacobianKind::Exact && inner.kind == JacobianKind::Exact {
            JacobianKind::Exact
        } else {
            JacobianKind::ZeroOrder
        };
        let t = a
            .dot(&b)
            .into_shape_with_order((m, l, n, k))
            .expect("shape");
        Ok(Self { tensor: t, kind })
    }
}

pub(crate) fn contract_nk(t: &Array4<f64>, p: &Array2<f64>) -> Array2<f64> {
    let (m, l, n, k) = t.dim();
    assert_eq!(p.dim(), (n, k), "pulse shape does not match tensor domain");
    let flat = t
        .view()
        .into_shape_with_order((m * l, n * k))
        .expect("contiguous");
    let v = p.view().into_shape_with_order(n * k).expect("contiguous");
    flat.dot(&v).into_shape_with_order((m, l)).expect("shape")
}

/// A discretized distortion operator.
pub trait Distortion: Send + Sync + fmt::Debug {
    fn domain(&self) -> Shape;
    fn range(&self) -> Shape;
    fn apply(&self, p: &Pulse) -> Result<DistortedPulse>;
    fn jacobian(&self, p: &Pulse) -> Result<DistortionJacobian>;

    /// Linear operators have pulse-independent, exact Jacobians.
    fn is_linear(&self) -> bool {
        false
    }

    /// The pulse-independent Jacobian used by zero-order gradient mode.
    /// Linear operators return their exact Jacobian.
    fn jacobian_zero_order(&self) -> Result<DistortionJacobian> {
        self.jacobian(&Pulse::zeros(self.domain(), Unit::RadPerSec))
    }

    /// Output and Jacobian of the requested kind at `p`. Operators that can
    /// share work between the two override this.
    fn apply_with_jacobian(
        &self,
        p: &Pulse,
        kind: JacobianKind,
    ) -> Result<(DistortedPulse, DistortionJacobian)> {
        let q = self.apply(p)?;
        let j = match kind {
            JacobianKind::Exact => self.jacobian(p)?,
            JacobianKind::ZeroOrder => self.jacobian_zero_order()?,
        };
        Ok((q, j))
    }
}

pub(crate) fn check_domain(g: &dyn Distortion, p: &Pulse) -> Result<()> {
    g.domain().check(p.values(), p.dt(), "distortion input")
}

/// Resampling identity: each input step is repeated `factor` times.
#[derive(Clone, Debug)]
pub struct Resample {
    domain: Shape,
    factor: usize,
}

impl Resample {
    pub fn new(domain: Shape, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Validation(
                "resampling factor must be at least 1".into(),
            ));
        }
        Ok(Self { domain, factor })
    }

    pub fn identity(domain: Shape) -> Self {
        Self { domain, factor: 1 }
    }
}

impl Distortion for Resample {
    fn domain(&self) -> Shape {
        self.domain
    }

    fn range(&self) -> Shape {
        Shape::new(
            self.domain.steps * self.factor,
            self.domain.channels,
            self.domain.dt / self.factor as f64,
        )
    }

    fn apply(&self, p: &Pulse) -> Result<DistortedPulse> {
        check_domain(self, p)?;
        let r = self.range();
        let v = p.values();
        let out = Array2::from_shape_fn((r.steps, r.channels), |(m, l)| v[(m / self.factor, l)]);
        DistortedPulse::new(out, r.dt)
    }

    fn jacobian(&self, p: &Pulse) -> Result<DistortionJacobian> {
        check_domain(self, p)?;
        let r = self.range();
        let d = self.domain;
        let mut t = Array4::zeros((r.steps, r.channels, d.steps, d.channels));
        for m in 0..r.steps {
            for l in 0..r.channels {
                t[(m, l, m / self.factor, l)] = 1.0;
            }
        }
        DistortionJacobian::new(t, JacobianKind::Exact)
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// A linear operator given by an explicit dense tensor.
#[derive(Clone, Debug)]
pub struct DenseLinear {
    tensor: Array4<f64>,
    domain: Shape,
    range: Shape,
}

impl DenseLinear {
    pub fn new(tensor: Array4<f64>, domain_dt: f64, range_dt: f64) -> Result<Self> {
        let (m, l, n, k) = tensor.dim();
        if m == 0 || l == 0 || n == 0 || k == 0 {
            return Err(Error::Validation("linear operator tensor is empty".into()));
        }
        if tensor.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "linear operator tensor has non-finite entries".into(),
            ));
        }
        Ok(Self {
            tensor,
            domain: Shape::new(n, k, domain_dt),
            range: Shape::new(m, l, range_dt),
        })
    }

    pub fn tensor(&self) -> &Array4<f64> {
        &self.tensor
    }
}

impl Distortion for DenseLinear {
    fn domain(&self) -> Shape {
        self.domain
    }

    fn range(&self) -> Shape {
        self.range
    }

    fn apply(&self, p: &Pulse) -> Result<DistortedPulse> {
        check_domain(self, p)?;
        DistortedPulse::new(contract_nk(&self.tensor, p.values()), self.range.dt)
    }

    fn jacobian(&self, p: &Pulse) -> Result<DistortionJacobian> {
        check_domain(self, p)?;
        DistortionJacobian::new(self.tensor.clone(), JacobianKind::Exact)
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// `outer ∘ inner`.
#[derive(Clone, Debug)]
pub struct Composed {
    outer: Arc<dyn Distortion>,
    inner: Arc<dyn Distortion>,
}

/// Composes two operators; the range of `inner` must equal the domain of `outer`.
pub fn compose(outer: Arc<dyn Distortion>, inner: Arc<dyn Distortion>) -> Result<Composed> {
    let (r, d) = (inner.range(), outer.domain());
    if !r.matches(&d) {
        return Err(Error::Composition(format!(
            "inner range {}x{} @ {:e} s does not match outer domain {}x{} @ {:e} s",
            r.steps, r.channels, r.dt, d.steps, d.channels, d.dt
        )));
    }
    Ok(Composed { outer, inner })
}

impl Composed {
    fn intermediate(&self, p: &Pulse) -> Result<Pulse> {
        Ok(self.inner.apply(p)?.into_pulse(p.unit()))
    }
}

impl Distortion for Composed {
    fn domain(&self) -> Shape {
        self.inner.domain()
    }

    fn range(&self) -> Shape {
        self.outer.range()
    }

    fn apply(&self, p: &Pulse) -> Result<DistortedPulse> {
        self.outer.apply(&self.intermediate(p)?)
    }

    fn jacobian(&self, p: &Pulse) -> Result<DistortionJacobian> {
        let j_inner = self.inner.jacobian(p)?;
        let j_outer = self.outer.jacobian(&self.intermediate(p)?)?;
        DistortionJacobian::chain(&j_outer, &j_inner)
    }

    fn is_linear(&self) -> bool {
        self.outer.is_linear() && self.inner.is_linear()
    }

    fn jacobian_zero_order(&self) -> Result<DistortionJacobian> {
        DistortionJacobian::chain(
            &self.outer.jacobian_zero_order()?,
            &self.inner.jacobian_zero_order()?,
        )
    }

    fn apply_with_jacobian(
        &self,
        p: &Pulse,
        kind: JacobianKind,
    ) -> Result<(DistortedPulse, DistortionJacobian)> {
        let (mid, j_inner) = self.inner.apply_with_jacobian(p, kind)?;
        let (q, j_outer) = self
            .outer
            .apply_with_jacobian(&mid.into_pulse(p.unit()), kind)?;
        Ok((q, DistortionJacobian::chain(&j_outer, &j_inner)?))
    }
}

/// Wraps an operator and counts evaluations: each `apply` or
/// `apply_with_jacobian` is one call.
#[derive(Debug)]
pub struct Counting<G> {
    inner: G,
    calls: AtomicU64,
}

impl<G: Distortion> Counting<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }
}

impl<G: Distortion> Distortion for Counting<G> {
    fn domain(&self) -> Shape {
        self.inner.domain()
    }

    fn range(&self) -> Shape {
        self.inner.range()
    }

    fn apply(&self, p: &Pulse) -> Result<DistortedPulse> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.apply(p)
    }

    fn jacobian(&self, p: &Pulse) -> Result<DistortionJacobian> {
        self.inner.jacobian(p)
    }

    fn is_linear(&self) -> bool {
        self.inner.is_linear()
    }

    fn jacobian_zero_order(&self) -> Result<DistortionJacobian> {
        self.inner.jacobian_zero_order()
    }

    fn apply_with_jacobian(
        &self,
        p: &Pulse,
        kind: JacobianKind,
    ) -> Result<(DistortedPulse, DistortionJacobian)> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.apply_with_jacobian(p, kind)
    }
}

impl Distortion for Arc<dyn Distortion> {
    fn domain(&self) -> Shape {
        (**self).domain()
    }
    fn range(&self) -> Shape {
        (**self).range()
    }
    fn apply(&self, p: &Pulse) -> Result<DistortedPulse> {
        (**self).apply(p)
    }
    fn jacobian(&self, p: &Pulse) -> Result<DistortionJacobian> {
        (**self).jacobian(p)
    }
    fn is_linear(&self) -> bool {
        (**self).is_linear()
    }
    fn jacobian_zero_order(&self) -> Result<DistortionJacobian> {
        (**self).jacobian_zero_order()
    }
    fn apply_with_jacobian(
        &self,
        p: &Pulse,
        kind: JacobianKind,
    ) -> Result<(DistortedPulse, DistortionJacobian)> {
        (**self).apply_with_jacobian(p, kind)
    }
}

/// Sum over the output-step axis; handy for steady-state checks.
pub fn row_sums(t: &Array4<f64>) -> Array2<f64> {
    t.sum_axis(Axis(3)).sum_axis(Axis(2))
}
