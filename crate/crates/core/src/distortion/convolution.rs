//! Convolution kernels and their discretized tensors.

use std::fmt;
use std::sync::Arc;

use ndarray::Array4;
use rayon::prelude::*;

use super::quadrature::integrate_adaptive;
use super::{DenseLinear, Distortion, DistortionJacobian};
use crate::error::{validation, Result};
use crate::pulse::{DistortedPulse, Pulse, Shape};
use crate::tol;

/// A time-domain `L x K` matrix-valued transfer function `φ(t)`.
pub trait Kernel: Send + Sync + fmt::Debug {
    fn outputs(&self) -> usize;
    fn inputs(&self) -> usize;
    fn eval(&self, t: f64, l: usize, k: usize) -> f64;

    /// Points where `φ` or its derivatives jump.
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0]
    }

    /// Interval outside of which `φ` vanishes.
    fn support(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    /// `∫_a^b φ_{l,k}(s) ds` when a closed form is available.
    fn integral(&self, _l: usize, _k: usize, _a: f64, _b: f64) -> Option<f64> {
        None
    }
}

/// Per-channel exponential rise: `φ_{l,k}(t) = δ_{l,k} e^{-t/τ_k} / τ_k` for `t >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentialKernel {
    taus: Vec<f64>,
}

impl ExponentialKernel {
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        validate_taus(&taus)?;
        Ok(Self { taus })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
}

fn validate_taus(taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(validation("at least one rise time is required"));
    }
    if let Some(t) = taus.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(validation(format!("rise times must be positive, got {t}")));
    }
    Ok(())
}

impl Kernel for ExponentialKernel {
    fn outputs(&self) -> usize {
        self.taus.len()
    }

    fn inputs(&self) -> usize {
        self.taus.len()
    }

    fn eval(&self, t: f64, l: usize, k: usize) -> f64 {
        if l != k || t < 0.0 {
            return 0.0;
        }
        let tau = self.taus[k];
        (-t / tau).exp() / tau
    }

    fn support(&self) -> (f64, f64) {
        (0.0, f64::INFINITY)
    }

    fn integral(&self, l: usize, k: usize, a: f64, b: f64) -> Option<f64> {
        if l != k || b <= 0.0 {
            return Some(0.0);
        }
        let tau = self.taus[k];
        let a = a.max(0.0);
        Some((-a / tau).exp() - (-b / tau).exp())
    }
}

/// Diagonal unit-area box: `φ(t) = 1/w` on `[0, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TopHatKernel {
    pub width: f64,
    pub channels: usize,
}

impl Kernel for TopHatKernel {
    fn outputs(&self) -> usize {
        self.channels
    }

    fn inputs(&self) -> usize {
        self.channels
    }

    fn eval(&self, t: f64, l: usize, k: usize) -> f64 {
        if l == k && (0.0..self.width).contains(&t) {
            1.0 / self.width
        } else {
            0.0
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, self.width]
    }

    fn support(&self) -> (f64, f64) {
        (0.0, self.width)
    }
}

type KernelFn = dyn Fn(f64, usize, usize) -> f64 + Send + Sync;

/// A kernel given by an arbitrary function of `(t, l, k)`.
#[derive(Clone)]
pub struct FnKernel {
    outputs: usize,
    inputs: usize,
    f: Arc<KernelFn>,
    breakpoints: Vec<f64>,
    support: (f64, f64),
}

impl FnKernel {
    pub fn new<F>(outputs: usize, inputs: usize, f: F) -> Self
    where
        F: Fn(f64, usize, usize) -> f64 + Send + Sync + 'static,
    {
        Self {
            outputs,
            inputs,
            f: Arc::new(f),
            breakpoints: vec![0.0],
            support: (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn with_breakpoints(mut self, b: Vec<f64>) -> Self {
        self.breakpoints = b;
        self
    }

    pub fn with_support(mut self, lo: f64, hi: f64) -> Self {
        self.support = (lo, hi);
        self
    }
}

impl fmt::Debug for FnKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnKernel")
            .field("outputs", &self.outputs)
            .field("inputs", &self.inputs)
            .field("support", &self.support)
            .finish()
    }
}

impl Kernel for FnKernel {
    fn outputs(&self) -> usize {
        self.outputs
    }
    fn inputs(&self) -> usize {
        self.inputs
    }
    fn eval(&self, t: f64, l: usize, k: usize) -> f64 {
        (self.f)(t, l, k)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
    fn support(&self) -> (f64, f64) {
        self.support
    }
}

/// Discretized convolution tensor `φ̃[m,l,n,k]` with its time grids.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionTensor {
    tensor: Array4<f64>,
    input_dt: f64,
    output_dt: f64,
}

impl ConvolutionTensor {
    pub fn tensor(&self) -> &Array4<f64> {
        &self.tensor
    }

    pub fn input_dt(&self) -> f64 {
        self.input_dt
    }

    pub fn output_dt(&self) -> f64 {
        self.output_dt
    }
}

/// `ceil((N dt + tail) / δt)`, ignoring round-off just above an integer.
pub fn default_output_steps(n: usize, dt: f64, output_dt: f64, tail: f64) -> usize {
    let x = (n as f64 * dt + tail) / output_dt;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

fn check_grid(n: usize, dt: f64, m: usize, output_dt: f64) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(validation("convolution grids need at least one step"));
    }
    if !(dt > 0.0 && output_dt > 0.0 && dt.is_finite() && output_dt.is_finite()) {
        return Err(validation("step widths must be positive"));
    }
    Ok(())
}

fn entry(
    kernel: &dyn Kernel,
    use_closed_form: bool,
    idx: (usize, usize, usize, usize),
    dt: f64,
    output_dt: f64,
) -> Result<f64> {
    let (m, l, n, k) = idx;
    let t_out = (m as f64 + 0.5) * output_dt;
    // kernel argument s = t' - τ for τ in [n dt, (n + 1) dt)  (0-based n)
    let a = t_out - (n + 1) as f64 * dt;
    let b = t_out - n as f64 * dt;
    if use_closed_form {
        if let Some(v) = kernel.integral(l, k, a, b) {
            return Ok(v);
        }
    }
    let (lo, hi) = kernel.support();
    let (a, b) = (a.max(lo), b.min(hi));
    if a >= b {
        return Ok(0.0);
    }
    let v = integrate_adaptive(
        |s| kernel.eval(s, l, k),
        a,
        b,
        &kernel.breakpoints(),
        tol::QUADRATURE,
    )?;
    if !v.is_finite() {
        return Err(validation("kernel integral is not finite"));
    }
    Ok(v)
}

fn build(
    kernel: &dyn Kernel,
    n: usize,
    dt: f64,
    m: usize,
    output_dt: f64,
    closed: bool,
) -> Result<ConvolutionTensor> {
    check_grid(n, dt, m, output_dt)?;
    let (l_out, k_in) = (kernel.outputs(), kernel.inputs());
    let dims = (m, l_out, n, k_in);
    let total = m * l_out * n * k_in;
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let k = flat % k_in;
            let n_ = (flat / k_in) % n;
            let l = (flat / (k_in * n)) % l_out;
            let m_ = flat / (k_in * n * l_out);
            entry(kernel, closed, (m_, l, n_, k), dt, output_dt)
        })
        .collect::<Result<_>>()?;
    let tensor = Array4::from_shape_vec(dims, values).expect("tensor size");
    Ok(ConvolutionTensor {
        tensor,
        input_dt: dt,
        output_dt,
    })
}

/// `φ̃[m,l,n,k] = ∫_{(n-1)dt}^{n dt} φ_{l,k}((m - 1/2) δt - τ) dτ`, using the
/// kernel's closed form when it has one and adaptive quadrature otherwise.
pub fn convolution_tensor(
    kernel: &dyn Kernel,
    n: usize,
    dt: f64,
    m: usize,
    output_dt: f64,
) -> Result<ConvolutionTensor> {
    build(kernel, n, dt, m, output_dt, true)
}

/// As [`convolution_tensor`] but always by quadrature.
pub fn convolution_tensor_quadrature(
    kernel: &dyn Kernel,
    n: usize,
    dt: f64,
    m: usize,
    output_dt: f64,
) -> Result<ConvolutionTensor> {
    build(kernel, n, dt, m, output_dt, false)
}

/// Closed-form tensor for independent exponential rise times `τ_k` per channel.
pub fn risetime_tensor(
    taus: &[f64],
    n: usize,
    dt: f64,
    m: usize,
    output_dt: f64,
) -> Result<ConvolutionTensor> {
    validate_taus(taus)?;
    check_grid(n, dt, m, output_dt)?;
    let k_in = taus.len();
    let mut tensor = Array4::zeros((m, k_in, n, k_in));
    for mi in 0..m {
        let t_out = (mi as f64 + 0.5) * output_dt;
        for ni in 0..n {
            let t_start = ni as f64 * dt;
            let t_end = (ni + 1) as f64 * dt;
            for (k, &tau) in taus.iter().enumerate() {
                let v = if t_end <= t_out {
                    // (e^{dt/τ} - 1) e^{(t_{n-1} - t')/τ}, written without overflow
                    ((t_end - t_out) / tau).exp() * -(-dt / tau).exp_m1()
                } else if t_start < t_out {
                    -((t_start - t_out) / tau).exp_m1()
                } else {
                    0.0
                };
                tensor[(mi, k, ni, k)] = v;
            }
        }
    }
    Ok(ConvolutionTensor {
        tensor,
        input_dt: dt,
        output_dt,
    })
}

/// Linear distortion given by a convolution tensor.
#[derive(Clone, Debug)]
pub struct ConvolutionOperator {
    inner: DenseLinear,
}

impl ConvolutionOperator {
    pub fn new(t: ConvolutionTensor) -> Result<Self> {
        Ok(Self {
            inner: DenseLinear::new(t.tensor, t.input_dt, t.output_dt)?,
        })
    }

    /// Rise-time operator with the default output window
    /// `ceil((N dt + 10 max τ) / δt)` unless `output_steps` is given.
    pub fn risetime(
        taus: &[f64],
        domain: Shape,
        output_dt: f64,
        output_steps: Option<usize>,
    ) -> Result<Self> {
        validate_taus(taus)?;
        if taus.len() != domain.channels {
            return Err(validation(format!(
                "{} rise times given for {} channels",
                taus.len(),
                domain.channels
            )));
        }
        let tail = 10.0 * taus.iter().cloned().fold(0.0, f64::max);
        let m = output_steps
            .unwrap_or_else(|| default_output_steps(domain.steps, domain.dt, output_dt, tail));
        Self::new(risetime_tensor(
            taus,
            domain.steps,
            domain.dt,
            m,
            output_dt,
        )?)
    }

    pub fn tensor(&self) -> &Array4<f64> {
        self.inner.tensor()
    }
}

impl Distortion for ConvolutionOperator {
    fn domain(&self) -> Shape {
        self.inner.domain()
    }
    fn range(&self) -> Shape {
        self.inner.range()
    }
    fn apply(&self, p: &Pulse) -> Result<DistortedPulse> {
        self.inner.apply(p)
    }
    fn jacobian(&self, p: &Pulse) -> Result<DistortionJacobian> {
        self.inner.jacobian(p)
    }
    fn is_linear(&self) -> bool {
        true
    }
}
