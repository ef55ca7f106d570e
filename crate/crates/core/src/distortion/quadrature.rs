//! Adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{validation, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 40;

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

fn refine<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
    let (val, err) = kronrod(f, a, b);
    if !val.is_finite() {
        return Err(validation("integrand produced non-finite values"));
    }
    if err <= tol || depth >= MAX_DEPTH || (b - a).abs() <= f64::EPSILON * a.abs().max(b.abs()) {
        return Ok(val);
    }
    let m = 0.5 * (a + b);
    Ok(refine(f, a, m, 0.5 * tol, depth + 1)? + refine(f, m, b, 0.5 * tol, depth + 1)?)
}

/// `∫_a^b f`, to absolute tolerance `tol`, split first at the given
/// breakpoints (discontinuities of `f` or its derivatives).
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    tol: f64,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(validation("integration limits must be finite"));
    }
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x > lo && x < hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(lo);
    edges.extend(cuts);
    edges.push(hi);
    let share = tol / (edges.len() - 1) as f64;
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += refine(&f, w[0], w[1], share, 0)?;
    }
    Ok(sign * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_exponential() {
        let v = integrate_adaptive(|x| x * x, 0.0, 3.0, &[], 1e-12).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
        let v = integrate_adaptive(|x: f64| (-x).exp(), 0.0, 5.0, &[], 1e-12).unwrap();
        assert!((v - (1.0 - (-5.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn step_function_with_breakpoint() {
        let f = |x: f64| if x >= 0.3 { 1.0 } else { 0.0 };
        let v = integrate_adaptive(f, 0.0, 1.0, &[0.3], 1e-12).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
        // reversed limits
        let v = integrate_adaptive(f, 1.0, 0.0, &[0.3], 1e-12).unwrap();
        assert!((v + 0.7).abs() < 1e-12);
    }

    #[test]
    fn non_finite_integrand_is_an_error() {
        assert!(integrate_adaptive(|_| f64::NAN, 0.0, 1.0, &[], 1e-10).is_err());
    }
}
