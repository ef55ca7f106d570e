#![allow(dead_code)]

use hwgrape::linalg::{c, matrix_exp_skew_hermitian, CMatrix};
use hwgrape::{ControlProblem, DistortedPulse, Pulse, Unit};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn hermitian(r: &mut ChaCha8Rng, d: usize, scale: f64) -> CMatrix {
    let x = CMatrix::from_fn(d, d, |_, _| {
        c(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
    });
    (&x + x.adjoint()) * c(0.5 * scale, 0.0)
}

pub fn unitary(r: &mut ChaCha8Rng, d: usize) -> CMatrix {
    matrix_exp_skew_hermitian(&hermitian(r, d, 1.0), 2.0).unwrap()
}

pub fn problem(r: &mut ChaCha8Rng, d: usize, controls: usize) -> ControlProblem {
    let h0 = hermitian(r, d, 0.5);
    let hs = (0..controls).map(|_| hermitian(r, d, 1.0)).collect();
    let target = unitary(r, d);
    let det = hermitian(r, d, 1.0);
    ControlProblem::new(h0, hs, target)
        .unwrap()
        .with_detuning_operator(det)
        .unwrap()
}

pub fn array(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-scale..scale))
}

pub fn distorted(r: &mut ChaCha8Rng, steps: usize, channels: usize, dt: f64) -> DistortedPulse {
    DistortedPulse::new(array(r, steps, channels, 1.0), dt).unwrap()
}

pub fn pulse(r: &mut ChaCha8Rng, steps: usize, channels: usize, dt: f64, unit: Unit) -> Pulse {
    Pulse::new(array(r, steps, channels, 1.0), dt, unit).unwrap()
}

pub fn tensor(r: &mut ChaCha8Rng, dims: (usize, usize, usize, usize), scale: f64) -> Array4<f64> {
    Array4::from_shape_simple_fn(dims, || r.random_range(-scale..scale))
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn central_difference(
    x: &Array2<f64>,
    h: f64,
    mut f: impl FnMut(&Array2<f64>) -> f64,
) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for idx in ndarray::indices(x.dim()) {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[idx] += h;
        xm[idx] -= h;
        out[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    out
}

pub fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn relative_error(got: &Array2<f64>, want: &Array2<f64>) -> f64 {
    norm(&(got - want)) / norm(want).max(f64::MIN_POSITIVE)
}

/// Dense contraction `Σ_{n,k} J[m,l,n,k] p[n,k]`.
pub fn contract(j: &Array4<f64>, p: &Array2<f64>) -> Array2<f64> {
    let (m, l, n, k) = j.dim();
    Array2::from_shape_fn((m, l), |(a, b)| {
        (0..n)
            .flat_map(|c| (0..k).map(move |d| (c, d)))
            .map(|(c, d)| j[[a, b, c, d]] * p[[c, d]])
            .sum()
    })
}

/// `Σ_{n,k} A[m,l,n,k] B[n,k,i,j]`.
pub fn chain(a: &Array4<f64>, b: &Array4<f64>) -> Array4<f64> {
    let (m, l, n, k) = a.dim();
    let (_, _, i, j) = b.dim();
    Array4::from_shape_fn((m, l, i, j), |(w, x, y, z)| {
        let mut s = 0.0;
        for c in 0..n {
            for d in 0..k {
                s += a[[w, x, c, d]] * b[[c, d, y, z]];
            }
        }
        s
    })
}

pub fn max_abs4(a: &Array4<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
