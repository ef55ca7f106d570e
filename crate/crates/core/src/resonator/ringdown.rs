//! Active ringdown suppression by appended compensation steps.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{integrate_segment, CircuitState, ResonatorModel, Segment};
use crate::error::{validation, Error, Result};
use crate::linalg::expm;
use crate::ode::Solver;

type C = Complex64;

fn default_weights() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
}

/// Compensation steps appended after a pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingdownConfig {
    /// Step widths, seconds.
    pub steps: Vec<f64>,
    /// Target fraction of the weighted state left after each step.
    #[serde(default)]
    pub r: f64,
    /// Positive semi-definite weighting of `(I_L, V_Cm, V_Ct)`.
    #[serde(default = "default_weights")]
    pub weights: [[f64; 3]; 3],
}

impl RingdownConfig {
    pub fn new(steps: Vec<f64>) -> Result<Self> {
        let c = Self {
            steps,
            r: 0.0,
            weights: default_weights(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(validation("ringdown needs at least one compensation step"));
        }
        if let Some(w) = self.steps.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(validation(format!(
                "compensation step widths must be positive, got {w}"
            )));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(validation(format!("r must lie in [0, 1], got {}", self.r)));
        }
        let p = DMatrix::from_fn(3, 3, |i, j| self.weights[i][j]);
        let scale = p.amax().max(1.0);
        let asym = (&p - p.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(validation("ringdown weighting matrix must be symmetric"));
        }
        let eig = p.symmetric_eigen();
        if eig.eigenvalues.iter().any(|&e| e < -1e-12 * scale) {
            return Err(validation(
                "ringdown weighting matrix must be positive semi-definite",
            ));
        }
        Ok(())
    }

    pub fn n_rd(&self) -> usize {
        self.steps.len()
    }

    pub fn duration(&self) -> f64 {
        self.steps.iter().sum()
    }

    pub fn weight_matrix(&self) -> DMatrix<C> {
        DMatrix::from_fn(3, 3, |i, j| C::new(self.weights[i][j], 0.0))
    }
}

fn inverse_or_pinv(m: &DMatrix<C>) -> DMatrix<C> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-13 * smax {
        log::warn!(
            "singular matrix in ringdown projection (rcond {:e}); using pseudo-inverse",
            smin / smax
        );
        return svd
            .pseudo_inverse(1e-13 * smax)
            .expect("svd computed with both factors");
    }
    m.clone()
        .try_inverse()
        .unwrap_or_else(|| svd.pseudo_inverse(1e-13 * smax).expect("svd factors"))
}

/// Amplitude of one compensation step of width `t` minimizing
/// `‖P(x(t) − r x0)‖` for the linear system `ẋ = A x + α(s) b`, where the
/// forcing relaxes from `p_prev` with rise time `tau_r`.
#[allow(clippy::too_many_arguments)]
pub fn compensation_amplitude(
    a: &DMatrix<C>,
    b: &DVector<C>,
    p: &DMatrix<C>,
    x0: &DVector<C>,
    p_prev: C,
    t: f64,
    tau_r: f64,
    r: f64,
) -> Result<C> {
    let n = a.nrows();
    let id = DMatrix::<C>::identity(n, n);
    let e = expm(&(a * C::new(t, 0.0)));
    let drive = inverse_or_pinv(a) * ((&e - &id) * b);
    let relax = if tau_r > 0.0 {
        let shifted = a + &id * C::new(1.0 / tau_r, 0.0);
        inverse_or_pinv(&shifted) * ((&e - &id * C::new((-t / tau_r).exp(), 0.0)) * b)
    } else {
        DVector::zeros(n)
    };
    let w = p * ((&e - &id * C::new(r, 0.0)) * x0 + &relax * p_prev);
    let v = p * (relax - drive);
    let vv = v.dotc(&v).re;
    if !(vv > 0.0 && vv.is_finite()) {
        return Err(Error::DegenerateDirection(vv));
    }
    Ok(v.dotc(&w) / vv)
}

/// Compensation amplitude for the resonator with `A` frozen at `x0`.
pub(crate) fn resonator_amplitude(
    model: &ResonatorModel,
    cfg: &RingdownConfig,
    x0: &CircuitState,
    p_prev: C,
    t: f64,
) -> Result<C> {
    compensation_amplitude(
        &model.matrix(x0),
        &model.input_vector(),
        &cfg.weight_matrix(),
        &DVector::from_column_slice(x0),
        p_prev,
        t,
        model.tau_r,
        cfg.r,
    )
}

/// Real Jacobian of the compensation amplitude `(Re c, Im c)` with respect
/// to `(Re x0, Im x0, Re p_prev, Im p_prev)`, by central differences.
pub(crate) fn amplitude_jacobian(
    model: &ResonatorModel,
    cfg: &RingdownConfig,
    x0: &CircuitState,
    p_prev: C,
    t: f64,
) -> Result<[[f64; 8]; 2]> {
    let mut base = [0.0; 8];
    super::pack(x0, &mut base[..6]);
    base[6] = p_prev.re;
    base[7] = p_prev.im;
    let eval = |z: &[f64; 8]| {
        resonator_amplitude(model, cfg, &super::unpack(&z[..6]), C::new(z[6], z[7]), t)
    };
    let mut jac = [[0.0; 8]; 2];
    for j in 0..8 {
        let floor = if j % 3 == 0 && j < 6 { 1e-3 } else { 1e-2 };
        let h = 1e-6 * base[j].abs().max(floor);
        let mut zp = base;
        let mut zm = base;
        zp[j] += h;
        zm[j] -= h;
        let d = (eval(&zp)? - eval(&zm)?) / (2.0 * h);
        jac[0][j] = d.re;
        jac[1][j] = d.im;
    }
    Ok(jac)
}

/// Compensation amplitudes for the steps of `cfg`, replaying the circuit
/// through each step before projecting the next.
pub fn ringdown_steps(
    x0: &CircuitState,
    p_prev: C,
    cfg: &RingdownConfig,
    model: &ResonatorModel,
    solver: &Solver,
) -> Result<Vec<C>> {
    cfg.validate()?;
    let mut x = *x0;
    let mut prev = p_prev;
    let mut hint = None;
    let mut out = Vec::with_capacity(cfg.n_rd());
    for &w in &cfg.steps {
        let c = resonator_amplitude(model, cfg, &x, prev, w)?;
        (x, hint) = integrate_segment(
            model,
            solver,
            Segment {
                start: 0.0,
                prev,
                amp: c,
            },
            0.0,
            w,
            &x,
            hint,
            |_| {},
        )?;
        out.push(c);
        prev = c;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_needs_no_compensation() {
        let m = ResonatorModel::reference();
        let cfg = RingdownConfig::new(vec![4e-9, 2e-9, 1e-9]).unwrap();
        let zero = [C::new(0.0, 0.0); 3];
        let c = ringdown_steps(&zero, C::new(0.0, 0.0), &cfg, &m, &m.default_solver()).unwrap();
        assert!(c.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn scalar_decay_closed_form() {
        let tau = 3e-9;
        let beta = 2.0;
        let t = 1.5e-9;
        let x0 = 0.7;
        let a = DMatrix::from_element(1, 1, C::new(-1.0 / tau, 0.0));
        let b = DVector::from_element(1, C::new(beta, 0.0));
        let p = DMatrix::identity(1, 1);
        let x = DVector::from_element(1, C::new(x0, 0.0));
        let c = compensation_amplitude(&a, &b, &p, &x, C::new(0.0, 0.0), t, 0.0, 0.0).unwrap();
        let want = -x0 / (beta * tau * ((t / tau).exp() - 1.0));
        assert!((c.re - want).abs() < 1e-12 * want.abs() && c.im.abs() < 1e-12);
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let a = DMatrix::from_element(1, 1, C::new(-1.0, 0.0));
        let b = DVector::from_element(1, C::new(1.0, 0.0));
        let p = DMatrix::zeros(1, 1);
        let x = DVector::from_element(1, C::new(1.0, 0.0));
        let r = compensation_amplitude(&a, &b, &p, &x, C::new(0.0, 0.0), 1.0, 0.0, 0.0);
        assert!(matches!(r, Err(Error::DegenerateDirection(_))));
    }

    #[test]
    fn config_validation() {
        assert!(RingdownConfig::new(vec![]).is_err());
        let mut c = RingdownConfig::new(vec![1e-9]).unwrap();
        c.r = 1.5;
        assert!(c.validate().is_err());
        c.r = 0.5;
        c.weights = [[-1.0, 0.0, 0.0], [0.0; 3], [0.0; 3]];
        assert!(c.validate().is_err());
    }
}
