//! Acceptance criteria 1 to 10. Each criterion prints one PASS or FAIL line;
//! the process exits non-zero when any criterion fails.

use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array4};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hwgrape::distortion::{compose, risetime_tensor, ConvolutionOperator, DenseLinear, Distortion};
use hwgrape::linalg::{c, expm, matrix_exp_skew_hermitian, CMatrix};
use hwgrape::optimizer::{
    average_gradient, average_utility, contiguous_window, grape_optimize, landscape_study,
    ringdown_penalty, robustness_scan, Ensemble, HypothesisSample,
};
use hwgrape::quantum::GradientMethod;
use hwgrape::resonator::{
    compensation_amplitude, solve_circuit, steady_state_response, Forcing, ResonatorDistortion,
    ResonatorModel, ResonatorOptions, RingdownConfig,
};
use hwgrape::{
    fidelity, fidelity_gradient, ControlProblem, DistortedPulse, JacobianKind, Pulse, Shape, Unit,
};
use hwgrape_cli::commands::landscape_problems;
use hwgrape_cli::{preset, ExperimentConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(preset(name).expect("preset exists")).expect("preset parses")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn hermitian(r: &mut ChaCha8Rng, d: usize, scale: f64) -> CMatrix {
    let x = CMatrix::from_fn(d, d, |_, _| {
        c(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
    });
    (&x + x.adjoint()) * c(0.5 * scale, 0.0)
}

fn random_problem(r: &mut ChaCha8Rng, d: usize, controls: usize) -> ControlProblem {
    let h0 = hermitian(r, d, 0.5);
    let hs = (0..controls).map(|_| hermitian(r, d, 1.0)).collect();
    let target = matrix_exp_skew_hermitian(&hermitian(r, d, 1.0), 2.0).unwrap();
    ControlProblem::new(h0, hs, target)
        .unwrap()
        .with_detuning_operator(hermitian(r, d, 1.0))
        .unwrap()
}

fn random_array(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-scale..scale))
}

fn central_difference(
    x: &Array2<f64>,
    h: f64,
    mut f: impl FnMut(&Array2<f64>) -> f64,
) -> Array2<f64> {
    let mut out = Array2::zeros(x.dim());
    for idx in ndarray::indices(x.dim()) {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[idx] += h;
        xm[idx] -= h;
        out[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    out
}

fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn relative_error(got: &Array2<f64>, want: &Array2<f64>) -> f64 {
    norm(&(got - want)) / norm(want).max(f64::MIN_POSITIVE)
}

fn max_abs4(a: &Array4<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn contract(j: &Array4<f64>, p: &Array2<f64>) -> Array2<f64> {
    let (m, l, n, k) = j.dim();
    Array2::from_shape_fn((m, l), |(a, b)| {
        let mut s = 0.0;
        for x in 0..n {
            for y in 0..k {
                s += j[[a, b, x, y]] * p[[x, y]];
            }
        }
        s
    })
}

// 1. Single-qubit π/2 through the nonlinear resonator with compensation steps.
fn criterion_1() -> Result<Verdict> {
    let base = config("pi2-resonator");
    let mut hits = Vec::new();
    let mut worst_ratio = 0.0f64;
    for seed in 0..10u64 {
        let mut cfg = base.clone();
        cfg.optimizer.as_mut().unwrap().seed = seed;
        let ens = cfg.ensemble()?;
        let rec = grape_optimize(&ens, cfg.optimizer.as_ref().unwrap(), None)?;
        if rec.final_fidelity >= 0.99 {
            let g = cfg
                .distortion
                .build_resonator(&HypothesisSample::nominal())?;
            let run = g.run(&rec.final_pulse.to_pulse()?)?;
            let ratio = run.terminal_current() / run.pulse_peak_current;
            worst_ratio = worst_ratio.max(ratio);
            if ratio <= 0.01 {
                hits.push(seed);
            }
        }
    }
    verdict(
        !hits.is_empty(),
        format!("{}/10 seeds reach Phi >= 0.99 with terminal/peak current <= 1% (worst ratio {worst_ratio:.1e})", hits.len()),
    )
}

// 2. CNOT through rise-time distortion, optimized over a τ ensemble.
fn criterion_2() -> Result<Verdict> {
    let cfg = config("cnot-risetime");
    let ens = cfg.ensemble()?;
    let rec = grape_optimize(&ens, cfg.optimizer.as_ref().unwrap(), None)?;
    let p = rec.final_pulse.to_pulse()?;
    let scan = cfg.scan.as_ref().unwrap();
    ensure!(scan.values.len() == 21, "scan grid must have 21 points");
    let problem = cfg.problem()?;
    let rows = robustness_scan(&p, &scan.values, |v| {
        Ensemble::from_samples(&problem, vec![scan.sample(v)], cfg.distortion.unit(), |s| {
            cfg.distortion
                .build(s)
                .map_err(|e| hwgrape::Error::Validation(format!("{e:#}")))
        })
    })?;
    let nominal = 0.005;
    let Some((lo, hi)) = contiguous_window(&rows, nominal, 0.99) else {
        return verdict(
            false,
            format!(
                "no F > 0.99 window around tau = {nominal}; run {:?}",
                rec.status
            ),
        );
    };
    let width = (hi - lo) / nominal;
    verdict(
        width >= 0.10 && lo <= nominal && nominal <= hi,
        format!(
            "window [{lo:.4}, {hi:.4}] = {:.0}% of tau after {} iterations ({:?}, ensemble F {:.5})",
            100.0 * width,
            rec.iterations.len() - 1,
            rec.status,
            rec.final_average_fidelity
        ),
    )
}

// 3. Four-qubit π/2 gate under crosstalk, best of 10 seeds.
fn criterion_3() -> Result<Verdict> {
    let base = config("crosstalk-4q");
    let ens = base.ensemble()?;
    let mut best = 0.0f64;
    for seed in 0..10u64 {
        let opt = base.optimizer.clone().unwrap().with_seed(seed);
        best = best.max(grape_optimize(&ens, &opt, None)?.final_average_fidelity);
    }
    verdict(best >= 0.999, format!("best average fidelity {best:.6}"))
}

// 4. Landscape at desk scale with a distortion-call audit.
fn criterion_4() -> Result<Verdict> {
    let cfg = config("landscape-desk");
    let spec = cfg.landscape.as_ref().unwrap();
    ensure!(
        spec.bounds.len() == 4 && spec.trials == 16 && spec.steps == 16,
        "preset must be 16 trials x 4 bounds, N = 16"
    );
    let problems = landscape_problems(&cfg)?;
    for lb in &problems {
        lb.distortion.jacobian_zero_order()?;
        ensure!(
            lb.distortion.solves() == 2 * spec.steps as u64,
            "zero-order warm-up should take 2N solves"
        );
    }
    let rows = landscape_study(&spec.bounds, spec.trials, spec.base_seed, |bound, seed| {
        let lb = problems.iter().find(|p| p.bound == bound).unwrap();
        grape_optimize(&lb.ensemble, &lb.config.clone().with_seed(seed), None)
    })?;
    for (row, lb) in rows.iter().zip(&problems) {
        let recorded: u64 = row.outcomes.iter().map(|o| o.calls).sum();
        ensure!(
            lb.distortion.solves() == recorded + 2 * spec.steps as u64,
            "bound {}: {} solves vs {} recorded calls + warm-up",
            lb.bound,
            lb.distortion.solves(),
            recorded
        );
    }
    let medians: Vec<Option<f64>> = rows.iter().map(|r| r.calls_median).collect();
    let summary = rows
        .iter()
        .map(|r| {
            format!(
                "{} V: fail {:.2}, median {}",
                r.bound,
                r.failure_fraction,
                r.calls_median.map_or("-".into(), |m| m.to_string())
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    let (first, last) = (medians[0], medians[medians.len() - 1]);
    let pass = matches!((first, last), (Some(a), Some(b)) if b <= 2.0 * a);
    verdict(pass, format!("{summary}; calls audited"))
}

// 5. Steady-state frequency versus drive on the reference model.
fn criterion_5() -> Result<Verdict> {
    let cfg = config("steady-state");
    let volts = &cfg.steady_state.as_ref().unwrap().volts;
    let model = ResonatorModel::reference();
    let solver = model.default_solver();
    let f: Vec<f64> = volts
        .iter()
        .map(|&v| steady_state_response(v, &model, &solver).map(|s| s.frequency_hz))
        .collect::<hwgrape::Result<_>>()?;
    let increases: Vec<String> = f
        .windows(2)
        .zip(volts.windows(2))
        .filter(|(w, _)| w[1] > w[0])
        .map(|(w, v)| {
            format!(
                "{}->{} V: {:.3}->{:.3} MHz",
                v[0],
                v[1],
                w[0] / 1e6,
                w[1] / 1e6
            )
        })
        .collect();
    let lin = model.linearized();
    let f1 = steady_state_response(1.0, &lin, &solver)?.frequency_hz;
    let mut lin_err = 0.0f64;
    for &v in volts {
        let fv = steady_state_response(v, &lin, &solver)?.frequency_hz;
        lin_err = lin_err.max((fv / (v * f1) - 1.0).abs());
    }
    let monotone = increases.is_empty();
    verdict(
        monotone && lin_err <= 1e-6,
        format!(
            "f_ss non-increasing: {} ({} of {} steps increase, e.g. {}); linear circuit proportionality error {lin_err:.1e}",
            monotone,
            increases.len(),
            volts.len() - 1,
            increases.first().map_or("none", String::as_str)
        ),
    )
}

// 6. Gradient oracles against symmetric finite differences.
fn criterion_6() -> Result<Verdict> {
    let mut r = rng(6);
    let (mut e_fid, mut e_avg, mut e_pen) = (0.0f64, 0.0f64, 0.0f64);
    let instances = 60;
    for _ in 0..instances {
        let d = r.random_range(2..=8);
        let m = r.random_range(1..=10);
        let l = r.random_range(1..=3);
        let prob = random_problem(&mut r, d, l);
        let q = DistortedPulse::new(random_array(&mut r, m, l, 1.0), 0.3)?;
        let g = fidelity_gradient(&q, &prob)?;
        let fd = central_difference(q.values(), 1e-5, |v| {
            fidelity(&DistortedPulse::new(v.clone(), 0.3).unwrap(), &prob).unwrap()
        });
        e_fid = e_fid.max(relative_error(&g, &fd));

        let n = r.random_range(1..=6);
        let base = random_problem(&mut r, d.min(4), 2);
        let samples = vec![
            HypothesisSample::nominal(),
            HypothesisSample::nominal()
                .with_detuning(0.2)
                .with_weight(0.5),
            HypothesisSample::nominal()
                .with_power_error(-0.1)
                .with_weight(0.25),
        ];
        let t1 = Array4::from_shape_simple_fn((m, 2, n, 2), || r.random_range(-0.6..0.6));
        let t2 = Array4::from_shape_simple_fn((m, 2, n, 2), || r.random_range(-0.6..0.6));
        let which = std::sync::atomic::AtomicUsize::new(0);
        let ens = Ensemble::from_samples(&base, samples, Unit::RadPerSec, |_| {
            let t = if which.fetch_add(1, std::sync::atomic::Ordering::Relaxed) % 2 == 0 {
                t1.clone()
            } else {
                t2.clone()
            };
            let g: Arc<dyn Distortion> = Arc::new(DenseLinear::new(t, 0.2, 0.3)?);
            Ok(g)
        })?;
        let p = Pulse::new(random_array(&mut r, n, 2, 1.0), 0.2, Unit::RadPerSec)?;
        let g = average_gradient(&p, &ens, JacobianKind::Exact, GradientMethod::Exact)?;
        let fd = central_difference(p.values(), 1e-5, |v| {
            average_utility(&p.with_values(v.clone()).unwrap(), &ens)
                .unwrap()
                .0
        });
        e_avg = e_avg.max(relative_error(&g, &fd));

        let first = r.random_range(0..m);
        let scale = r.random_range(0.1..10.0);
        let (_, g) = ringdown_penalty(&q, first, scale)?;
        let fd = central_difference(q.values(), 1e-5, |v| {
            ringdown_penalty(&DistortedPulse::new(v.clone(), 0.3).unwrap(), first, scale)
                .unwrap()
                .0
        });
        e_pen = e_pen.max(relative_error(&g, &fd));
    }
    let worst = e_fid.max(e_avg).max(e_pen);
    verdict(
        worst <= 1e-5,
        format!("{instances} instances each; max relative error: fidelity {e_fid:.1e}, ensemble {e_avg:.1e}, penalty {e_pen:.1e}"),
    )
}

fn exponential_step_integral(t_out: f64, t_start: f64, t_end: f64, tau: f64) -> f64 {
    let lo = (t_out - t_end).max(0.0);
    let hi = (t_out - t_start).max(0.0);
    (-lo / tau).exp() - (-hi / tau).exp()
}

// 7. Jacobians of convolution, composition and the resonator.
fn criterion_7() -> Result<Verdict> {
    // (a) The operator's Jacobian is φ̃, and φ̃ matches direct integration.
    let (n, dt, odt, m) = (30, 0.005, 0.0025, 70);
    let taus = [0.0045, 0.0055];
    let op = ConvolutionOperator::risetime(&taus, Shape::new(n, 2, dt), odt, Some(m))?;
    let phi = risetime_tensor(&taus, n, dt, m, odt)?;
    let p = Pulse::new(random_array(&mut rng(71), n, 2, 100.0), dt, Unit::RadPerSec)?;
    let a_exact = op.jacobian(&p)?.tensor() == phi.tensor();
    let mut a_oracle = 0.0f64;
    for ((mi, l, ni, k), v) in phi.tensor().indexed_iter() {
        let want = if l == k {
            exponential_step_integral(
                (mi as f64 + 0.5) * odt,
                ni as f64 * dt,
                (ni + 1) as f64 * dt,
                taus[k],
            )
        } else {
            0.0
        };
        a_oracle = a_oracle.max((v - want).abs());
    }

    // (b) Composition against the dense contraction.
    let mut r = rng(72);
    let inner: Arc<dyn Distortion> = Arc::new(DenseLinear::new(
        Array4::from_shape_simple_fn((6, 3, 4, 2), || r.random_range(-1.0..1.0)),
        0.1,
        0.05,
    )?);
    let outer: Arc<dyn Distortion> = Arc::new(DenseLinear::new(
        Array4::from_shape_simple_fn((5, 2, 6, 3), || r.random_range(-1.0..1.0)),
        0.05,
        0.02,
    )?);
    let g = compose(outer.clone(), inner.clone())?;
    let p = Pulse::new(random_array(&mut r, 4, 2, 1.0), 0.1, Unit::RadPerSec)?;
    let jo = outer.jacobian(&inner.apply(&p)?.into_pulse(Unit::RadPerSec))?;
    let ji = inner.jacobian(&p)?;
    let (mo, lo, no, ko) = jo.dims();
    let (_, _, ni, ki) = ji.dims();
    let dense = Array4::from_shape_fn((mo, lo, ni, ki), |(a, b, x, y)| {
        let mut s = 0.0;
        for u in 0..no {
            for w in 0..ko {
                s += jo.tensor()[[a, b, u, w]] * ji.tensor()[[u, w, x, y]];
            }
        }
        s
    });
    let b_err = max_abs4(&(g.jacobian(&p)?.tensor() - &dense)) / max_abs4(&dense);

    // (c) Exact against zero-order on the linearized circuit.
    let opts = ResonatorOptions::default()
        .with_tolerances(1e-11, 1e-14, 1e-12)
        .with_ringdown(RingdownConfig::new(vec![4e-9, 2e-9, 1e-9])?);
    let lin = ResonatorDistortion::new(
        ResonatorModel::reference().linearized(),
        Shape::new(8, 2, 0.5e-9),
        opts,
    )?;
    let pv = Pulse::new(random_array(&mut rng(73), 8, 2, 5.0), 0.5e-9, Unit::Volts)?;
    let jz = lin.jacobian_zero_order()?;
    let c_err = max_abs4(&(lin.jacobian(&pv)?.tensor() - jz.tensor())) / max_abs4(jz.tensor());

    // (d) Directional derivatives on the nonlinear circuit.
    let mut d_err = 0.0f64;
    for seed in 0..8u64 {
        let opts = if seed % 2 == 0 {
            ResonatorOptions::default()
        } else {
            ResonatorOptions::default().with_ringdown(RingdownConfig::new(vec![4e-9, 2e-9, 1e-9])?)
        };
        let g =
            ResonatorDistortion::new(ResonatorModel::reference(), Shape::new(8, 2, 0.5e-9), opts)?;
        let mut r = rng(740 + seed);
        let p = Pulse::new(random_array(&mut r, 8, 2, 10.0), 0.5e-9, Unit::Volts)?;
        let dir = random_array(&mut r, 8, 2, 1.0);
        let jv = contract(g.jacobian(&p)?.tensor(), &dir);
        let h = 1e-3;
        let plus = g.apply(&Pulse::new(p.values() + &(&dir * h), p.dt(), Unit::Volts)?)?;
        let minus = g.apply(&Pulse::new(p.values() - &(&dir * h), p.dt(), Unit::Volts)?)?;
        d_err = d_err.max(relative_error(
            &jv,
            &((plus.values() - minus.values()) / (2.0 * h)),
        ));
    }
    verdict(
        a_exact && a_oracle <= 1e-12 && b_err <= 1e-12 && c_err <= 1e-8 && d_err <= 1e-3,
        format!("(a) J == phi {a_exact}, phi vs integral {a_oracle:.1e}; (b) {b_err:.1e}; (c) {c_err:.1e}; (d) {d_err:.1e}"),
    )
}

/// Closed-form linear-circuit state under piecewise forcing with rise time.
fn linear_state(model: &ResonatorModel, amps: &[C], width: f64, t: f64) -> DVector<C> {
    let a = model.linear_matrix();
    let b = model.input_vector();
    let id = DMatrix::<C>::identity(3, 3);
    let inv = a.clone().try_inverse().unwrap();
    let tau = model.tau_r;
    let mut x = DVector::<C>::zeros(3);
    let mut prev = C::new(0.0, 0.0);
    for j in 0..=amps.len() {
        let start = j as f64 * width;
        if t <= start {
            break;
        }
        let amp = amps.get(j).copied().unwrap_or_default();
        let s = if j < amps.len() {
            (start + width).min(t) - start
        } else {
            t - start
        };
        let e = expm(&(&a * C::new(s, 0.0)));
        let mut next = &e * &x + &inv * ((&e - &id) * &b) * amp;
        if tau > 0.0 {
            let shifted = (&a + &id * C::new(1.0 / tau, 0.0)).try_inverse().unwrap();
            next += shifted * ((&e - &id * C::new((-s / tau).exp(), 0.0)) * &b) * (prev - amp);
            prev = amp + (prev - amp) * (-s / tau).exp();
        } else {
            prev = amp;
        }
        x = next;
    }
    x
}

// 8. Circuit integration: closed form, self-convergence, rest, causality.
fn criterion_8() -> Result<Verdict> {
    let dt = 0.5e-9;
    let model = ResonatorModel::reference().linearized();
    let amps = [
        C::new(1.0, 0.3),
        C::new(-0.4, 0.8),
        C::new(0.0, -1.2),
        C::new(0.6, 0.0),
    ];
    let sol = solve_circuit(
        &Forcing::from_steps(&amps, &[dt; 4], model.tau_r)?,
        &model,
        6.0 * dt,
        &[C::default(); 3],
        &model.default_solver(),
    )?;
    let mut closed = 0.0f64;
    for k in 1..=24 {
        let t = k as f64 * 0.25 * dt;
        let want = linear_state(&model, &amps, dt, t);
        let got = DVector::from_column_slice(&sol.state(t));
        closed = closed.max((got - &want).norm() / want.norm());
    }

    let nonlinear = ResonatorModel::reference();
    let p = Pulse::new(random_array(&mut rng(81), 8, 2, 10.0), dt, Unit::Volts)?;
    let out = |rtol: f64| -> Result<Array2<f64>> {
        let g = ResonatorDistortion::new(
            nonlinear.clone(),
            Shape::new(8, 2, dt),
            ResonatorOptions::default().with_tolerances(rtol, rtol * 1e-2, rtol),
        )?;
        Ok(g.apply(&p)?.into_values())
    };
    let reference = out(1e-12)?;
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let errs: Vec<f64> = [1e-5, 5e-6, 2.5e-6]
        .iter()
        .map(|&t| {
            out(t).map(|o| (o - &reference).iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale)
        })
        .collect::<Result<_>>()?;
    let converges = errs.windows(2).all(|w| w[1] < w[0]);

    let opts =
        ResonatorOptions::default().with_ringdown(RingdownConfig::new(vec![4e-9, 2e-9, 1e-9])?);
    let g = ResonatorDistortion::new(nonlinear, Shape::new(8, 2, dt), opts)?;
    let rest = g
        .apply(&Pulse::zeros(g.domain(), Unit::Volts))?
        .values()
        .iter()
        .all(|v| *v == 0.0);
    let mut late = p.values().clone();
    for n in 5..8 {
        late[[n, 0]] += 2.0;
    }
    let (a, b) = (g.apply(&p)?, g.apply(&p.with_values(late)?)?);
    let cut = 5.0 * dt;
    let causal = g
        .sample_times()
        .iter()
        .enumerate()
        .filter(|(_, t)| **t < cut)
        .all(|(m, _)| {
            (0..2).all(|l| {
                (a.values()[[m, l]] - b.values()[[m, l]]).abs()
                    <= 1e-12 * a.values()[[m, l]].abs().max(1.0)
            })
        });
    verdict(
        closed <= 1e-8 && converges && rest && causal,
        format!("closed form {closed:.1e}; tolerance halving errors {}; zero in/out {rest}; causal {causal}", errs.iter().map(|e| format!("{e:.1e}")).collect::<Vec<_>>().join(" > ")),
    )
}

// 9. Ringdown compensation: first-order closed form and replayed contraction.
fn criterion_9() -> Result<Verdict> {
    let mut r = rng(9);
    let mut closed = 0.0f64;
    for _ in 0..50 {
        let tau = r.random_range(0.5e-9..5e-9);
        let gain = r.random_range(0.2..3.0);
        let width = r.random_range(0.2e-9..4e-9);
        let y0 = C::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
        let got = compensation_amplitude(
            &DMatrix::from_element(1, 1, C::new(-1.0 / tau, 0.0)),
            &DVector::from_element(1, C::new(gain / tau, 0.0)),
            &DMatrix::identity(1, 1),
            &DVector::from_element(1, y0),
            C::default(),
            width,
            0.0,
            0.0,
        )?;
        let want = -y0 / (gain * ((width / tau).exp() - 1.0));
        closed = closed.max((got - want).norm() / want.norm());
    }
    let floor = 1e3 * ResonatorOptions::default().atol_current;
    let mut excess = f64::NEG_INFINITY;
    let mut ok = true;
    for rr in [0.0, 0.25, 0.5] {
        let cfg = RingdownConfig {
            r: rr,
            ..RingdownConfig::new(vec![4e-9, 2e-9, 1e-9])?
        };
        let g = ResonatorDistortion::new(
            ResonatorModel::reference(),
            Shape::new(8, 2, 0.5e-9),
            ResonatorOptions::default().with_ringdown(cfg),
        )?;
        for seed in 0..8u64 {
            let run = g.run(&Pulse::new(
                random_array(&mut rng(90 + seed), 8, 2, 5.0),
                0.5e-9,
                Unit::Volts,
            )?)?;
            let mut states = run.compensation_states.clone();
            states.push(run.terminal_state);
            for w in states.windows(2) {
                let (before, after) = (w[0][0].norm(), w[1][0].norm());
                if before > floor {
                    excess = excess.max(after / before - rr);
                    ok &= after <= (rr + 0.05) * before;
                } else {
                    ok &= after <= floor;
                }
            }
        }
    }
    verdict(
        closed <= 1e-6 && ok,
        format!("closed form {closed:.1e}; worst contraction excess over r {excess:.3} (limit 0.05, drive <= 5 V)"),
    )
}

fn run_cli(args: &[&str], threads: usize, out: &Path) -> Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_hwgrape"))
        .args(args)
        .args(["--threads", &threads.to_string(), "--out"])
        .arg(out)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .status()?;
    ensure!(
        status.code() == Some(0),
        "hwgrape {args:?} exited with {status}"
    );
    Ok(())
}

fn files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)?
        .map(|e| {
            let e = e?;
            Ok((
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path())?,
            ))
        })
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

// 10. Byte-identical outputs across repeated runs and thread counts.
fn criterion_10() -> Result<Verdict> {
    let tmp = tempfile::tempdir()?;
    let mut landscape = config("landscape-desk");
    let spec = landscape.landscape.as_mut().unwrap();
    spec.bounds = vec![1.0, 10.0];
    spec.trials = 3;
    let small = tmp.path().join("landscape.json");
    std::fs::write(&small, serde_json::to_string(&landscape)?)?;
    let small = small.to_string_lossy().into_owned();
    let jobs: Vec<Vec<&str>> = vec![
        vec![
            "optimize",
            "--config",
            "preset:pi2-resonator",
            "--seed",
            "3",
        ],
        vec!["optimize", "--config", "preset:crosstalk-4q", "--seed", "5"],
        vec!["landscape", "--config", &small],
    ];
    let mut compared = 0;
    for (j, args) in jobs.iter().enumerate() {
        let mut sets = Vec::new();
        for (i, threads) in [1usize, 4, 4].into_iter().enumerate() {
            let dir = tmp.path().join(format!("job{j}_{i}"));
            run_cli(args, threads, &dir).with_context(|| format!("job {j}"))?;
            sets.push(files(&dir)?);
        }
        if sets.windows(2).any(|w| w[0] != w[1]) {
            return verdict(false, format!("{args:?}: outputs differ between runs"));
        }
        compared += sets[0].len();
    }
    verdict(
        true,
        format!("{compared} output files identical over 3 runs each (1 and 4 threads)"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Result<Verdict>, Duration); 10] = [
        (
            "pi/2 gate through nonlinear resonator",
            criterion_1,
            Duration::from_secs(30 * 60),
        ),
        (
            "CNOT rise-time robustness window",
            criterion_2,
            Duration::from_secs(10 * 60),
        ),
        (
            "4-qubit crosstalk gate",
            criterion_3,
            Duration::from_secs(20 * 60),
        ),
        (
            "landscape call counts",
            criterion_4,
            Duration::from_secs(2 * 3600),
        ),
        ("steady-state frequency trend", criterion_5, Duration::MAX),
        ("gradient oracle suite", criterion_6, Duration::MAX),
        ("Jacobian suite", criterion_7, Duration::MAX),
        ("ODE suite", criterion_8, Duration::MAX),
        ("ringdown suite", criterion_9, Duration::MAX),
        ("determinism suite", criterion_10, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(v) => (v.pass && elapsed <= *budget, v.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {name}: {detail} [{:.1} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
