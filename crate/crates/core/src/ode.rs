//! Adaptive Dormand-Prince 5(4) integrator with step-size carry-over.

use crate::error::{Error, Result};
use crate::liegeom::VectorField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    /// Abort once `max |y_i|` exceeds this.
    pub max_norm: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_steps: 1_000_000,
            max_norm: f64::INFINITY,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerances(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth-order minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Statistics accumulated by a [`Dopri5`] stepper.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Stateful integrator: the last accepted step size is reused by the next
/// call to [`Dopri5::advance`], so a trajectory can be integrated piecewise
/// between output times without restarting the step-size controller.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    opts: OdeOptions,
    h: Option<f64>,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    pub stats: OdeStats,
}

impl Dopri5 {
    pub fn new(dim: usize, opts: OdeOptions) -> Self {
        Self {
            opts,
            h: None,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            y_new: vec![0.0; dim],
            stats: OdeStats::default(),
        }
    }

    fn error_norm(&self, y: &[f64], h: f64) -> f64 {
        let o = &self.opts;
        let mut acc = 0.0;
        for i in 0..y.len() {
            let err = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
            let sc = o.abs_tol + o.rel_tol * y[i].abs().max(self.y_new[i].abs());
            acc += (err / sc).powi(2);
        }
        (acc / y.len().max(1) as f64).sqrt()
    }

    fn initial_step<F>(&mut self, rhs: &mut F, t: f64, y: &[f64], dir: f64) -> Result<f64>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let o = self.opts;
        let n = y.len().max(1) as f64;
        rhs(t, y, &mut self.k[0])?;
        self.stats.evaluations += 1;
        let sc: Vec<f64> = y.iter().map(|v| o.abs_tol + o.rel_tol * v.abs()).collect();
        let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
        let d1 = (self.k[0].iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        for i in 0..y.len() {
            self.tmp[i] = y[i] + dir * h0 * self.k[0][i];
        }
        let mut f1 = vec![0.0; y.len()];
        rhs(t + dir * h0, &self.tmp, &mut f1)?;
        self.stats.evaluations += 1;
        let d2 = (f1
            .iter()
            .zip(&self.k[0])
            .zip(&sc)
            .map(|((a, b), s)| ((a - b) / s).powi(2))
            .sum::<f64>()
            / n)
            .sqrt()
            / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 5.0)
        };
        Ok((100.0 * h0).min(h1))
    }

    /// Integrates `y` in place from `t0` to `t1` (either direction).
    pub fn advance<F>(&mut self, rhs: &mut F, t0: f64, y: &mut [f64], t1: f64) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        if t1 == t0 {
            return Ok(());
        }
        let dir = (t1 - t0).signum();
        let mut t = t0;
        let mut h = match self.h {
            Some(h) => h.abs(),
            None => self.initial_step(rhs, t, y, dir)?,
        };
        let mut fsal = false;
        let mut steps = 0usize;
        let n = y.len();
        loop {
            let remaining = (t1 - t).abs();
            if remaining <= 0.0 {
                break;
            }
            let last = h >= remaining;
            let hs = if last { remaining } else { h };
            let min_step = 16.0 * f64::EPSILON * t.abs().max(1.0);
            if hs < min_step && !last {
                return Err(Error::IntegratorBlowup(format!(
                    "step size underflow at t = {t:e}"
                )));
            }
            if steps >= self.opts.max_steps {
                return Err(Error::IntegratorBlowup(format!(
                    "maximum of {} steps exceeded at t = {t:e}",
                    self.opts.max_steps
                )));
            }
            steps += 1;
            let hd = dir * hs;

            if !fsal {
                rhs(t, y, &mut self.k[0])?;
                self.stats.evaluations += 1;
            }
            let stages: [(f64, &[f64]); 5] = [
                (C2, &[A21]),
                (C3, &[A31, A32]),
                (C4, &[A41, A42, A43]),
                (C5, &[A51, A52, A53, A54]),
                (1.0, &[A61, A62, A63, A64, A65]),
            ];
            for (s, (c, a)) in stages.iter().enumerate() {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, aj) in a.iter().enumerate() {
                        acc += aj * self.k[j][i];
                    }
                    self.tmp[i] = y[i] + hd * acc;
                }
                rhs(t + c * hd, &self.tmp, &mut self.k[s + 1])?;
            }
            for i in 0..n {
                self.y_new[i] = y[i]
                    + hd * (B1 * self.k[0][i]
                        + B3 * self.k[2][i]
                        + B4 * self.k[3][i]
                        + B5 * self.k[4][i]
                        + B6 * self.k[5][i]);
            }
            let y_new = std::mem::take(&mut self.y_new);
            let res = rhs(t + hd, &y_new, &mut self.k[6]);
            self.y_new = y_new;
            res?;
            self.stats.evaluations += 6;

            let err = self.error_norm(y, hd);
            if !err.is_finite() {
                self.stats.rejected += 1;
                fsal = true;
                h *= FAC_MIN;
                continue;
            }
            let fac = if err == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            if err <= 1.0 {
                self.stats.accepted += 1;
                t = if last { t1 } else { t + hd };
                y.copy_from_slice(&self.y_new);
                self.k.swap(0, 6);
                fsal = true;
                if y.iter().any(|v| !v.is_finite() || v.abs() > self.opts.max_norm) {
                    return Err(Error::IntegratorBlowup(format!(
                        "state norm exceeded {:e} at t = {t:e}",
                        self.opts.max_norm
                    )));
                }
                // Keep the controller's proposal, not the clipped final step.
                let proposal = hs * fac;
                if !last || proposal > h {
                    h = proposal;
                }
                if last {
                    break;
                }
            } else {
                self.stats.rejected += 1;
                // k[0] is still f(t, y).
                fsal = true;
                h = hs * fac.min(1.0);
            }
        }
        self.h = Some(h);
        Ok(())
    }
}

/// One-shot integration from `t0` to `t1`.
pub fn integrate<F>(mut rhs: F, t0: f64, y0: &[f64], t1: f64, opts: OdeOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut y = y0.to_vec();
    Dopri5::new(y.len(), opts).advance(&mut rhs, t0, &mut y, t1)?;
    Ok(y)
}

/// `phi^v_t(x)`; `t = 0` returns `x` without evaluating `v`.
pub fn flow(v: &VectorField, x: &[f64], t: f64, opts: OdeOptions) -> Result<Vec<f64>> {
    if t == 0.0 {
        return Ok(x.to_vec());
    }
    integrate(|_, y, out| v.eval_into(y, out), 0.0, x, t, opts)
}
