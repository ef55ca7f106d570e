mod common;

use std::sync::Arc;

use common::*;
use hwgrape::distortion::{
    compose, convolution_tensor, convolution_tensor_quadrature, risetime_tensor,
    ConvolutionOperator, CrosstalkOperator, CrosstalkTensor, DenseLinear, Distortion,
    ExponentialKernel, Resample, TopHatKernel,
};
use hwgrape::{Pulse, Shape, Unit};
use ndarray::Array2;
use proptest::prelude::*;

/// `∫ φ(t' − τ) dτ` over `[t_start, t_end)` for `φ(s) = e^{-s/τ_c}/τ_c`, `s ≥ 0`.
fn exponential_step_integral(t_out: f64, t_start: f64, t_end: f64, tau: f64) -> f64 {
    let lo = (t_out - t_end).max(0.0);
    let hi = (t_out - t_start).max(0.0);
    (-lo / tau).exp() - (-hi / tau).exp()
}

fn random_linear(
    seed: u64,
    m: usize,
    l: usize,
    n: usize,
    k: usize,
    dt_in: f64,
    dt_out: f64,
) -> Arc<dyn Distortion> {
    Arc::new(DenseLinear::new(tensor(&mut rng(seed), (m, l, n, k), 1.0), dt_in, dt_out).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn risetime_entries_match_direct_integration(
        n in 1usize..=12, ratio in 1usize..=4, tau_frac in 0.05f64..3.0, extra in 0usize..=20,
    ) {
        let dt = 0.01;
        let output_dt = dt / ratio as f64;
        let tau = tau_frac * dt;
        let m = n * ratio + extra;
        let t = risetime_tensor(&[tau, 2.0 * tau], n, dt, m, output_dt).unwrap();
        for ((mi, l, ni, k), v) in t.tensor().indexed_iter() {
            let t_out = (mi as f64 + 0.5) * output_dt;
            let want = if l == k {
                exponential_step_integral(t_out, ni as f64 * dt, (ni + 1) as f64 * dt, [tau, 2.0 * tau][k])
            } else {
                0.0
            };
            prop_assert!((v - want).abs() <= 1e-12, "({mi},{l},{ni},{k}): {v} vs {want}");
        }
    }

    #[test]
    fn risetime_is_causal(n in 1usize..=12, ratio in 1usize..=4, tau_frac in 0.05f64..3.0) {
        let dt = 0.005;
        let output_dt = dt / ratio as f64;
        let t = risetime_tensor(&[tau_frac * dt], n, dt, n * ratio + 5, output_dt).unwrap();
        for ((mi, _, ni, _), v) in t.tensor().indexed_iter() {
            if (mi as f64 + 0.5) * output_dt < ni as f64 * dt {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn linear_jacobian_is_pulse_independent_and_reproduces_apply(seed in any::<u64>(), n in 1usize..=8, tau_frac in 0.1f64..2.0) {
        let op = ConvolutionOperator::risetime(&[tau_frac * 0.01, 0.5 * tau_frac * 0.01], Shape::new(n, 2, 0.01), 0.005, None).unwrap();
        let mut r = rng(seed);
        let p1 = pulse(&mut r, n, 2, 0.01, Unit::RadPerSec);
        let p2 = pulse(&mut r, n, 2, 0.01, Unit::RadPerSec);
        let j1 = op.jacobian(&p1).unwrap();
        let j2 = op.jacobian(&p2).unwrap();
        prop_assert_eq!(j1.tensor(), j2.tensor());
        prop_assert_eq!(j1.tensor(), op.tensor());
        let q = op.apply(&p1).unwrap();
        let want = contract(j1.tensor(), p1.values());
        prop_assert!(q.values().iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0)));
    }

    #[test]
    fn composition_is_associative(seed in any::<u64>(), n in 1usize..=5) {
        let g1 = random_linear(seed, 4, 2, n, 2, 0.1, 0.2);
        let g2 = random_linear(seed.wrapping_add(1), 3, 3, 4, 2, 0.2, 0.3);
        let g3 = random_linear(seed.wrapping_add(2), 5, 2, 3, 3, 0.3, 0.4);
        let left = compose(Arc::new(compose(g3.clone(), g2.clone()).unwrap()), g1.clone()).unwrap();
        let right = compose(g3, Arc::new(compose(g2, g1).unwrap())).unwrap();
        let p = pulse(&mut rng(seed ^ 1), n, 2, 0.1, Unit::RadPerSec);
        let (a, b) = (left.apply(&p).unwrap(), right.apply(&p).unwrap());
        let scale = b.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() <= 1e-12 * scale));
    }

    #[test]
    fn composed_jacobian_is_the_contracted_product(seed in any::<u64>(), n in 1usize..=6) {
        let inner = random_linear(seed, 5, 2, n, 2, 0.1, 0.05);
        let outer = random_linear(seed.wrapping_add(7), 4, 3, 5, 2, 0.05, 0.02);
        let g = compose(outer.clone(), inner.clone()).unwrap();
        let p = pulse(&mut rng(seed ^ 3), n, 2, 0.1, Unit::RadPerSec);
        let j = g.jacobian(&p).unwrap();
        let q1 = inner.apply(&p).unwrap().into_pulse(Unit::RadPerSec);
        let want = chain(outer.jacobian(&q1).unwrap().tensor(), inner.jacobian(&p).unwrap().tensor());
        let diff = max_abs4(&(j.tensor() - &want));
        prop_assert!(diff <= 1e-12 * max_abs4(&want).max(1.0), "{diff:e}");
    }

    #[test]
    fn crosstalk_mixes_each_step_independently(seed in any::<u64>(), n in 1usize..=6) {
        let mut r = rng(seed);
        let chi = CrosstalkTensor::new(array(&mut r, 4, 4, 1.0), 2, 2).unwrap();
        let op = CrosstalkOperator::new(chi.clone(), n, 0.1).unwrap();
        let p = pulse(&mut r, n, 4, 0.1, Unit::RadPerSec);
        let q = op.apply(&p).unwrap();
        let want = p.values().dot(&chi.matrix().t());
        prop_assert!(q.values().iter().zip(&want).all(|(a, b)| (a - b).abs() <= 1e-12));
    }
}

#[test]
fn top_hat_gives_halves_on_diagonal_and_next() {
    let k = TopHatKernel {
        width: 0.2,
        channels: 1,
    };
    for t in [
        convolution_tensor(&k, 5, 0.2, 7, 0.2).unwrap(),
        convolution_tensor_quadrature(&k, 5, 0.2, 7, 0.2).unwrap(),
    ] {
        for ((m, _, n, _), v) in t.tensor().indexed_iter() {
            let want = if m == n || m == n + 1 { 0.5 } else { 0.0 };
            assert!((v - want).abs() <= 1e-10, "({m},{n}) {v}");
        }
    }
}

#[test]
fn quadrature_agrees_with_closed_form() {
    let taus = [0.004, 0.0065];
    let k = ExponentialKernel::new(taus.to_vec()).unwrap();
    let closed = risetime_tensor(&taus, 10, 0.005, 40, 0.0025).unwrap();
    let quad = convolution_tensor_quadrature(&k, 10, 0.005, 40, 0.0025).unwrap();
    let diff = max_abs4(&(closed.tensor() - quad.tensor()));
    assert!(diff <= 1e-9, "{diff:e}");
}

#[test]
fn unit_area_kernel_passes_constant_input() {
    let k = TopHatKernel {
        width: 0.03,
        channels: 1,
    };
    let t = convolution_tensor(&k, 40, 0.01, 40, 0.01).unwrap();
    let out = contract(t.tensor(), &Array2::ones((40, 1)));
    for m in 3..40 {
        assert!((out[[m, 0]] - 1.0).abs() <= 1e-9, "{m}: {}", out[[m, 0]]);
    }
}

#[test]
fn long_constant_input_settles_to_its_amplitude() {
    let (tau, dt, n, a) = (0.005, 0.005, 60, 0.7);
    let op = ConvolutionOperator::risetime(&[tau], Shape::new(n, 1, dt), dt, Some(n)).unwrap();
    let q = op
        .apply(&Pulse::new(Array2::from_elem((n, 1), a), dt, Unit::RadPerSec).unwrap())
        .unwrap();
    let t_last = (n as f64 - 0.5) * dt;
    assert!((q.values()[[n - 1, 0]] - a).abs() <= a * (-t_last / tau).exp() + 1e-15);
}

#[test]
fn vanishing_rise_time_approaches_resampling() {
    let dt = 0.01;
    let n = 6;
    let op = ConvolutionOperator::risetime(
        &[1e-6 * dt, 1e-6 * dt],
        Shape::new(n, 2, dt),
        dt / 2.0,
        Some(2 * n),
    )
    .unwrap();
    let p = pulse(&mut rng(11), n, 2, dt, Unit::RadPerSec);
    let q = op.apply(&p).unwrap();
    let r = Resample::new(p.shape(), 2).unwrap().apply(&p).unwrap();
    for (a, b) in q.values().iter().zip(r.values()) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
}
