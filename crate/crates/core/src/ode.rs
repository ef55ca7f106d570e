//! Adaptive Dormand–Prince 5(4) integrator with continuous output.

use crate::error::{Error, Result};

/// `dy/dt = f(t, y)` on real state vectors.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Local error targets are this fraction of the configured tolerances so
/// that the accumulated global error stays within them.
const LOCAL_FRACTION: f64 = 0.01;

/// Error-control settings. `rtol` and `atol` bound the global error.
#[derive(Clone, Debug, PartialEq)]
pub struct Solver {
    pub rtol: f64,
    /// Per-component absolute tolerance; a single entry applies to all.
    pub atol: Vec<f64>,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: vec![1e-10],
            max_step: f64::INFINITY,
            max_steps: 5_000_000,
        }
    }
}

/// Continuous extension over one accepted step `[t, t + h]`.
pub struct DenseStep<'a> {
    pub t: f64,
    pub h: f64,
    rcont: &'a [f64],
}

impl DenseStep<'_> {
    pub fn dim(&self) -> usize {
        self.rcont.len() / 5
    }

    pub fn end(&self) -> f64 {
        self.t + self.h
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        interpolate(self.rcont, self.t, self.h, t, out);
    }

    /// Evaluates a single component at `t`.
    pub fn component(&self, t: f64, i: usize) -> f64 {
        let n = self.dim();
        let th = (t - self.t) / self.h;
        let th1 = 1.0 - th;
        let r = |j: usize| self.rcont[j * n + i];
        r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))))
    }
}

fn interpolate(rcont: &[f64], t0: f64, h: f64, t: f64, out: &mut [f64]) {
    let n = rcont.len() / 5;
    let th = (t - t0) / h;
    let th1 = 1.0 - th;
    for i in 0..n {
        let r = |j: usize| rcont[j * n + i];
        out[i] = r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))));
    }
}

/// Outcome of one integration call.
#[derive(Clone, Debug)]
pub struct Integration {
    pub y: Vec<f64>,
    pub last_step: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl Solver {
    pub fn with_tolerances(rtol: f64, atol: Vec<f64>) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    fn atol(&self, i: usize) -> f64 {
        LOCAL_FRACTION
            * if self.atol.len() == 1 {
                self.atol[0]
            } else {
                self.atol[i]
            }
    }

    fn local_rtol(&self) -> f64 {
        LOCAL_FRACTION * self.rtol
    }

    fn initial_step<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        t0: f64,
        y0: &[f64],
        f0: &[f64],
        span: f64,
    ) -> f64 {
        let n = y0.len();
        let sc = |i: usize| self.atol(i) + self.local_rtol() * y0[i].abs();
        let rms = |v: &dyn Fn(usize) -> f64| {
            ((0..n).map(|i| v(i).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        let d0 = rms(&|i| y0[i] / sc(i));
        let d1 = rms(&|i| f0[i] / sc(i));
        let mut h = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6 * span
        } else {
            0.01 * d0 / d1
        };
        h = h.min(self.max_step).min(span);
        let y1: Vec<f64> = (0..n).map(|i| y0[i] + h * f0[i]).collect();
        let mut f1 = vec![0.0; n];
        sys.rhs(t0 + h, &y1, &mut f1);
        let d2 = rms(&|i| (f1[i] - f0[i]) / sc(i)) / h;
        let h1 = if d1.max(d2) <= 1e-15 {
            (1e-6f64).max(h * 1e-3)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h).min(h1).min(self.max_step).min(span)
    }

    /// Integrates from `t0` to `t1` (> `t0`), calling `observer` with the
    /// continuous extension of every accepted step.
    pub fn integrate<S, F>(
        &self,
        sys: &S,
        t0: f64,
        t1: f64,
        y0: &[f64],
        step_hint: Option<f64>,
        mut observer: F,
    ) -> Result<Integration>
    where
        S: OdeSystem + ?Sized,
        F: FnMut(&DenseStep),
    {
        let n = sys.dim();
        assert_eq!(y0.len(), n, "state dimension");
        let span = t1 - t0;
        if span <= 0.0 {
            return Ok(Integration {
                y: y0.to_vec(),
                last_step: step_hint.unwrap_or(0.0),
                accepted: 0,
                rejected: 0,
            });
        }
        let mut y = y0.to_vec();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let mut ynew = vec![0.0; n];
        let mut rcont = vec![0.0; 5 * n];
        sys.rhs(t0, &y, &mut k1);

        let mut h = match step_hint {
            Some(h) if h > 0.0 => h.min(self.max_step).min(span),
            _ => self.initial_step(sys, t0, &y, &k1, span),
        };
        let mut t = t0;
        let mut accepted = 0usize;
        let mut rejected = 0usize;
        let mut last_reject = false;
        let mut last_step: f64;
        let min_step = |t: f64| 16.0 * f64::EPSILON * t.abs().max(span);

        loop {
            if accepted + rejected >= self.max_steps {
                return Err(Error::Integration {
                    last_good_time: t,
                    reason: format!("exceeded {} steps", self.max_steps),
                });
            }
            let remaining = t1 - t;
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if h < min_step(t) {
                return Err(Error::Integration {
                    last_good_time: t,
                    reason: format!("step size underflow (h = {h:e}); the system may be stiff"),
                });
            }

            for i in 0..n {
                tmp[i] = y[i] + h * A21 * k1[i];
            }
            sys.rhs(t + C2 * h, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            sys.rhs(t + C3 * h, &tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            sys.rhs(t + C4 * h, &tmp, &mut k4);
            for i in 0..n {
                tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            sys.rhs(t + C5 * h, &tmp, &mut k5);
            for i in 0..n {
                tmp[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_end = if last { t1 } else { t + h };
            sys.rhs(t_end, &tmp, &mut k6);
            for i in 0..n {
                ynew[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            sys.rhs(t_end, &ynew, &mut k7);

            let mut err = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.atol(i) + self.local_rtol() * y[i].abs().max(ynew[i].abs());
                err += (e / sc).powi(2);
            }
            err = (err / n as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Integration {
                    last_good_time: t,
                    reason: "non-finite state".into(),
                });
            }

            if err <= 1.0 {
                for i in 0..n {
                    let ydiff = ynew[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    rcont[i] = y[i];
                    rcont[n + i] = ydiff;
                    rcont[2 * n + i] = bspl;
                    rcont[3 * n + i] = ydiff - h * k7[i] - bspl;
                    rcont[4 * n + i] = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                observer(&DenseStep {
                    t,
                    h,
                    rcont: &rcont,
                });
                accepted += 1;
                last_step = h;
                t = t_end;
                std::mem::swap(&mut y, &mut ynew);
                std::mem::swap(&mut k1, &mut k7);
                if last {
                    break;
                }
                let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, if last_reject { 1.0 } else { 10.0 });
                h = (h * fac).min(self.max_step);
                last_reject = false;
            } else {
                rejected += 1;
                last_reject = true;
                h *= (0.9 * err.powf(-0.2)).max(0.2);
            }
        }
        Ok(Integration {
            y,
            last_step,
            accepted,
            rejected,
        })
    }
}

/// Stored continuous solution assembled from accepted steps.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    dim: usize,
    starts: Vec<f64>,
    widths: Vec<f64>,
    rcont: Vec<f64>,
}

impl Trajectory {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn push(&mut self, step: &DenseStep) {
        debug_assert_eq!(step.dim(), self.dim);
        self.starts.push(step.t);
        self.widths.push(step.h);
        self.rcont.extend_from_slice(step.rcont);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.starts.first().copied().unwrap_or(0.0)
    }

    pub fn end(&self) -> f64 {
        match (self.starts.last(), self.widths.last()) {
            (Some(t), Some(h)) => t + h,
            _ => 0.0,
        }
    }

    /// Step start times; the solution at these points is exact step data.
    pub fn knots(&self) -> &[f64] {
        &self.starts
    }

    /// Evaluates the solution at `t`, clamped to the covered interval.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        assert!(!self.is_empty(), "empty trajectory");
        let idx = match self.starts.binary_search_by(|s| s.total_cmp(&t)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let w = 5 * self.dim;
        let t = t.clamp(self.start(), self.end());
        interpolate(
            &self.rcont[idx * w..(idx + 1) * w],
            self.starts[idx],
            self.widths[idx],
            t,
            out,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(f64);
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -self.0 * y[0];
        }
    }

    struct Oscillator;
    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn exponential_decay() {
        let s = Solver::with_tolerances(1e-10, vec![1e-12]);
        let r = s
            .integrate(&Decay(2.0), 0.0, 3.0, &[1.0], None, |_| {})
            .unwrap();
        assert!((r.y[0] - (-6.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn dense_output_tracks_solution() {
        let s = Solver::with_tolerances(1e-10, vec![1e-12]);
        let mut traj = Trajectory::new(2);
        s.integrate(&Oscillator, 0.0, 10.0, &[0.0, 1.0], None, |st| {
            traj.push(st)
        })
        .unwrap();
        for i in 0..=100 {
            let t = 0.1 * i as f64;
            let y = traj.eval(t);
            assert!((y[0] - t.sin()).abs() < 1e-8, "t={t}");
            assert!((y[1] - t.cos()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn stiff_problem_with_tiny_step_budget_fails() {
        let s = Solver {
            max_steps: 50,
            ..Solver::default()
        };
        let err = s
            .integrate(&Decay(1e9), 0.0, 1.0, &[1.0], None, |_| {})
            .unwrap_err();
        match err {
            Error::Integration { last_good_time, .. } => assert!(last_good_time < 1.0),
            e => panic!("unexpected {e}"),
        }
    }
}
