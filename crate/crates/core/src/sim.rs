//! Output-feedback stabilization of the target set with a high-gain
//! observer on the transversal chain.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{parse, Expr, VarTable};
use crate::ode::{Dopri5, OdeOptions};
use crate::sysmodel::{ControlSystem, TargetSet};

/// Real parts of the observer polynomial roots must lie below this.
const HURWITZ_MARGIN: f64 = -1e-9;
/// States beyond this norm end the run.
pub const BLOWUP_NORM: f64 = 1e6;

/// Gains and model of the observer/controller pair.
#[derive(Debug, Clone, Serialize)]
pub struct ObserverConfig {
    pub r: usize,
    pub eps: f64,
    /// `s^r + alpha_1 s^{r-1} + ... + alpha_r`.
    pub alpha: Vec<f64>,
    pub k: Vec<f64>,
    /// Nominal `L_g L_f^{r-1} lambda` as a function of `xi1..xir`.
    #[serde(skip)]
    pub phi0: Expr,
    pub phi0_text: String,
    pub sat: f64,
}

/// Coefficients of `(s + 1)(s + 2)...(s + r)` without the leading 1.
pub fn default_gains(r: usize) -> Vec<f64> {
    let mut c = vec![1.0];
    for root in 1..=r {
        let mut next = vec![0.0; c.len() + 1];
        for (i, ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] += ci * root as f64;
        }
        c = next;
    }
    c.remove(0);
    c
}

/// Roots of the monic polynomial with the given trailing coefficients.
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<(f64, f64)> {
    let r = coeffs.len();
    if r == 0 {
        return Vec::new();
    }
    let mut m = DMatrix::zeros(r, r);
    for (j, c) in coeffs.iter().enumerate() {
        m[(0, j)] = -c;
    }
    for i in 1..r {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect()
}

pub fn is_hurwitz(coeffs: &[f64]) -> bool {
    polynomial_roots(coeffs)
        .iter()
        .all(|&(re, im)| re < HURWITZ_MARGIN && re.is_finite() && im.is_finite())
}

pub fn xi_vars(r: usize) -> VarTable {
    VarTable::numbered("xi", r).expect("r >= 1")
}

impl ObserverConfig {
    pub fn new(
        r: usize,
        eps: f64,
        alpha: Vec<f64>,
        k: Vec<f64>,
        phi0_text: &str,
        sat: f64,
    ) -> Result<Self> {
        let phi0 = parse(phi0_text, &xi_vars(r)).map_err(|source| Error::Parse {
            context: "observer model phi0".into(),
            source,
        })?;
        let cfg = Self {
            r,
            eps,
            alpha,
            k,
            phi0,
            phi0_text: phi0_text.to_string(),
            sat,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.r == 0 {
            return bad("observer order must be positive".into());
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if self.alpha.len() != self.r || self.k.len() != self.r {
            return bad(format!(
                "alpha and k need {} entries (got {} and {})",
                self.r,
                self.alpha.len(),
                self.k.len()
            ));
        }
        if !is_hurwitz(&self.alpha) {
            return bad(format!("observer polynomial {:?} is not Hurwitz", self.alpha));
        }
        if self.k.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
            return bad(format!("controller gains must be positive, got {:?}", self.k));
        }
        if !(self.sat > 0.0) {
            return bad(format!("saturation bound must be positive, got {}", self.sat));
        }
        Ok(())
    }

    /// `sat_M(-(sum k_i xihat_i) / phi0(xihat))` and whether the bound is active.
    pub fn control(&self, xihat: &[f64]) -> Result<(f64, bool)> {
        let num: f64 = -self.k.iter().zip(xihat).map(|(k, x)| k * x).sum::<f64>();
        let phi = self
            .phi0
            .eval(xihat)
            .map_err(|e| Error::eval("observer model phi0", e))?;
        let raw = if phi == 0.0 {
            if num == 0.0 {
                0.0
            } else {
                num.signum() * f64::INFINITY
            }
        } else {
            num / phi
        };
        if raw.abs() > self.sat {
            Ok((raw.signum() * self.sat, true))
        } else {
            Ok((raw, false))
        }
    }
}

/// Why a run ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Blowup(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub xihat: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    /// `|(xi_1, ..., xi_r)(x(t))|`.
    pub xnorm_transverse: Vec<f64>,
    /// `max_i |gamma_i(x(t))|`.
    pub gamma_resid: Vec<f64>,
    pub saturated_samples: usize,
    /// Right-hand-side evaluations with the saturation active.
    pub saturated_evaluations: usize,
    pub termination: Termination,
}

impl Trajectory {
    pub fn terminal_transverse_norm(&self) -> f64 {
        *self.xnorm_transverse.last().unwrap_or(&f64::NAN)
    }

    pub fn max_transverse_norm(&self) -> f64 {
        self.xnorm_transverse.iter().fold(0.0, |m, v| m.max(*v))
    }

    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.x.first().map_or(0, Vec::len);
        let r = self.xihat.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=r).map(|i| format!("xihat_{i}")));
        header.extend(["u", "xnorm_transverse", "gamma_resid"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.t.len() {
            let mut row = vec![self.t[i]];
            row.extend(&self.x[i]);
            row.extend(&self.xihat[i]);
            row.extend([self.u[i], self.xnorm_transverse[i], self.gamma_resid[i]]);
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Time grid of a run: `T`, interval between integrator restarts `dt`, and
/// how many intervals between recorded samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimTiming {
    pub t_final: f64,
    pub dt: f64,
    pub stride: usize,
}

impl Default for SimTiming {
    fn default() -> Self {
        Self {
            t_final: 20.0,
            dt: 0.01,
            stride: 10,
        }
    }
}

/// Integrates plant and observer. The measured output is `xi_chain[0](x)`.
pub fn simulate_closed_loop(
    sys: &ControlSystem,
    tset: &TargetSet,
    xi_chain: &[Expr],
    obs: &ObserverConfig,
    x_init: &[f64],
    xihat_init: &[f64],
    timing: SimTiming,
    ode: OdeOptions,
) -> Result<Trajectory> {
    obs.validate()?;
    let n = sys.n();
    let r = obs.r;
    if xi_chain.len() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: xi_chain.len(),
        });
    }
    if x_init.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x_init.len(),
        });
    }
    if xihat_init.len() != r {
        return Err(Error::DimensionMismatch {
            expected: r,
            found: xihat_init.len(),
        });
    }
    if !(timing.t_final > 0.0 && timing.dt > 0.0 && timing.stride > 0) {
        return Err(Error::InvalidConfig(
            "T and dt must be positive and the stride at least 1".into(),
        ));
    }
    let gains: Vec<f64> = (0..r)
        .map(|i| obs.alpha[i] / obs.eps.powi(i as i32 + 1))
        .collect();
    let sat_count = Cell::new(0usize);
    let xi1 = &xi_chain[0];

    let mut rhs = |_t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        let (x, xh) = y.split_at(n);
        let (u, saturated) = obs.control(xh)?;
        if saturated {
            sat_count.set(sat_count.get() + 1);
        }
        let (dx, dxh) = out.split_at_mut(n);
        sys.f().eval_into(x, dx)?;
        for (i, gi) in sys.g().components().iter().enumerate() {
            dx[i] += gi.eval(x).map_err(|e| Error::eval("input field g", e))? * u;
        }
        let innov = xi1.eval(x).map_err(|e| Error::eval("measured output", e))? - xh[0];
        let phi = obs
            .phi0
            .eval(xh)
            .map_err(|e| Error::eval("observer model phi0", e))?;
        for i in 0..r {
            let chain = if i + 1 < r { xh[i + 1] } else { phi * u };
            dxh[i] = chain + gains[i] * innov;
        }
        Ok(())
    };

    let mut traj = Trajectory {
        t: Vec::new(),
        x: Vec::new(),
        xihat: Vec::new(),
        u: Vec::new(),
        xnorm_transverse: Vec::new(),
        gamma_resid: Vec::new(),
        saturated_samples: 0,
        saturated_evaluations: 0,
        termination: Termination::Completed,
    };
    let record = |traj: &mut Trajectory, t: f64, y: &[f64]| -> Result<()> {
        let (x, xh) = y.split_at(n);
        let (u, saturated) = obs.control(xh)?;
        let mut sq = 0.0;
        for e in xi_chain {
            let v = e.eval(x).map_err(|err| Error::eval("transversal chain", err))?;
            sq += v * v;
        }
        traj.t.push(t);
        traj.x.push(x.to_vec());
        traj.xihat.push(xh.to_vec());
        traj.u.push(u);
        traj.xnorm_transverse.push(sq.sqrt());
        traj.gamma_resid.push(tset.residual(x)?);
        if saturated {
            traj.saturated_samples += 1;
        }
        Ok(())
    };

    let mut y: Vec<f64> = x_init.iter().chain(xihat_init).copied().collect();
    record(&mut traj, 0.0, &y)?;
    let opts = OdeOptions {
        max_norm: BLOWUP_NORM,
        ..ode
    };
    let mut stepper = Dopri5::new(n + r, opts);
    let segments = (timing.t_final / timing.dt).round().max(1.0) as usize;
    for k in 0..segments {
        let t0 = k as f64 * timing.dt;
        let t1 = if k + 1 == segments {
            timing.t_final
        } else {
            (k + 1) as f64 * timing.dt
        };
        match stepper.advance(&mut rhs, t0, &mut y, t1) {
            Ok(()) => {}
            Err(Error::IntegratorBlowup(reason)) => {
                traj.termination = Termination::Blowup(reason);
                break;
            }
            Err(e) => return Err(e),
        }
        if (k + 1) % timing.stride == 0 || k + 1 == segments {
            record(&mut traj, t1, &y)?;
        }
    }
    traj.saturated_evaluations = sat_count.get();
    Ok(traj)
}

/// Simulation inputs collected from a system file's key/value sections,
/// with command-line overrides applied on top.
#[derive(Debug, Clone, Serialize)]
pub struct SimSetup {
    pub observer: ObserverConfig,
    pub x_init: Vec<f64>,
    pub xihat_init: Vec<f64>,
    pub timing: SimTiming,
}

pub const DEFAULT_SAT: f64 = 20.0;
pub const DEFAULT_EPS: f64 = 0.01;

fn numbers(key: &str, line: usize, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Format {
                line,
                message: format!("`{key}` expects numbers, found `{t}`"),
            })
        })
        .collect()
}

fn scalar(key: &str, line: usize, text: &str) -> Result<f64> {
    match numbers(key, line, text)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(Error::Format {
            line,
            message: format!("`{key}` expects a single number"),
        }),
    }
}

const KNOWN_KEYS: [&str; 10] = [
    "eps", "alpha", "k", "phi0", "sat", "x_init", "xihat_init", "T", "stride", "dt",
];

impl SimSetup {
    /// Reads `eps`, `alpha`, `k`, `phi0`, `sat`, `x_init`, `xihat_init`, `T`,
    /// `stride` and `dt`; `overrides` wins over the file.
    pub fn from_params(
        n: usize,
        r: usize,
        params: &BTreeMap<String, (usize, String)>,
        overrides: &BTreeMap<String, String>,
    ) -> Result<Self> {
        for (key, (line, _)) in params {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Format {
                    line: *line,
                    message: format!("unknown simulation key `{key}`"),
                });
            }
        }
        let get = |key: &str| -> Option<(usize, String)> {
            overrides
                .get(key)
                .map(|v| (0, v.clone()))
                .or_else(|| params.get(key).cloned())
        };
        let eps = match get("eps") {
            Some((l, v)) => scalar("eps", l, &v)?,
            None => DEFAULT_EPS,
        };
        let sat = match get("sat") {
            Some((l, v)) => scalar("sat", l, &v)?,
            None => DEFAULT_SAT,
        };
        let alpha = match get("alpha") {
            Some((l, v)) => numbers("alpha", l, &v)?,
            None => default_gains(r),
        };
        let k = match get("k") {
            Some((l, v)) => numbers("k", l, &v)?,
            None => default_gains(r),
        };
        let phi0 = get("phi0").map(|(_, v)| v).unwrap_or_else(|| "1".into());
        let x_init = match get("x_init") {
            Some((l, v)) => numbers("x_init", l, &v)?,
            None => vec![0.0; n],
        };
        let xihat_init = match get("xihat_init") {
            Some((l, v)) => numbers("xihat_init", l, &v)?,
            None => vec![0.0; r],
        };
        let mut timing = SimTiming::default();
        if let Some((l, v)) = get("T") {
            timing.t_final = scalar("T", l, &v)?;
        }
        if let Some((l, v)) = get("dt") {
            timing.dt = scalar("dt", l, &v)?;
        }
        if let Some((l, v)) = get("stride") {
            let s = scalar("stride", l, &v)?;
            if s < 1.0 || s.fract() != 0.0 {
                return Err(Error::Format {
                    line: l,
                    message: "`stride` must be a positive integer".into(),
                });
            }
            timing.stride = s as usize;
        }
        if x_init.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x_init.len(),
            });
        }
        if xihat_init.len() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: xihat_init.len(),
            });
        }
        Ok(Self {
            observer: ObserverConfig::new(r, eps, alpha, k, &phi0, sat)?,
            x_init,
            xihat_init,
            timing,
        })
    }
}
