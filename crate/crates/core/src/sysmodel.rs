//! Control system, output and target set; the system-definition file format;
//! regularity checks; tangent spaces, invariance and projection onto the set.
//!
//! # File format
//!
//! Line-oriented sections, `#` starts a comment:
//!
//! ```text
//! [vars] x1 x2 x3 x4 x5
//! [f]            # n drift components
//! [g]            # n input components
//! [h]            # p output components
//! [gamma]        # n - nstar constraints, target set = gamma^-1(0)
//! [nstar] 2
//! [x0] 0 0 0 0 0
//! [lambda]       # optional, over x-vars or y1..yp
//! [observer]     # optional key = value lines (also [controller], [simulation])
//! [grid]         # optional, one point of the target set per line
//! ```
//!
//! Section content may start on the header line itself.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::expr::{parse, Expr, VarTable};
use crate::liegeom::subspace::{self, Frame};
use crate::liegeom::{jacobian_at, VectorField};
use crate::sampling;

#[derive(Debug, Clone)]
pub struct ControlSystem {
    vars: VarTable,
    f: VectorField,
    g: VectorField,
    h: Vec<Expr>,
    dh: Vec<Vec<Expr>>,
}

impl ControlSystem {
    pub fn new(vars: VarTable, f: VectorField, g: VectorField, h: Vec<Expr>) -> Result<Self> {
        let n = vars.len();
        for (name, len) in [("f", f.dim()), ("g", g.dim())] {
            if len != n {
                return Err(Error::Format {
                    line: 0,
                    message: format!("[{name}] has {len} components, expected n = {n}"),
                });
            }
        }
        if h.is_empty() || h.len() > n {
            return Err(Error::Format {
                line: 0,
                message: format!("[h] must have between 1 and {n} components, got {}", h.len()),
            });
        }
        let all = f
            .components()
            .iter()
            .chain(g.components())
            .chain(h.iter());
        if all.filter_map(Expr::max_var).any(|i| i >= n) {
            return Err(Error::Format {
                line: 0,
                message: "expression references an undeclared variable".into(),
            });
        }
        let dh = h
            .iter()
            .map(|e| (0..n).map(|j| e.diff(j)).collect())
            .collect();
        Ok(Self { vars, f, g, h, dh })
    }

    pub fn n(&self) -> usize {
        self.vars.len()
    }

    pub fn p(&self) -> usize {
        self.h.len()
    }

    pub fn vars(&self) -> &VarTable {
        &self.vars
    }

    pub fn f(&self) -> &VectorField {
        &self.f
    }

    pub fn g(&self) -> &VectorField {
        &self.g
    }

    pub fn h(&self) -> &[Expr] {
        &self.h
    }

    pub fn dh_exprs(&self) -> &[Vec<Expr>] {
        &self.dh
    }

    pub fn dh_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        jacobian_at(&self.dh, x)
    }

    pub fn h_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.h
            .iter()
            .map(|e| e.eval(x).map_err(|err| Error::eval("output h", err)))
            .collect()
    }

    /// Same system with drift `f + g * alpha`.
    pub fn with_feedback(&self, alpha: &Expr) -> ControlSystem {
        ControlSystem::new(
            self.vars.clone(),
            self.f.add(&self.g.scale(alpha)),
            self.g.clone(),
            self.h.clone(),
        )
        .expect("dimensions unchanged")
    }
}

#[derive(Debug, Clone)]
pub struct TargetSet {
    gamma: Vec<Expr>,
    dgamma: Vec<Vec<Expr>>,
    nstar: usize,
    x0: Vec<f64>,
}

/// Points closer than this (componentwise `|gamma|`) count as lying on the set.
pub const ON_SET_TOL: f64 = 1e-7;
pub const BASE_POINT_TOL: f64 = 1e-9;
const PROJECTION_TOL: f64 = 1e-10;
const PROJECTION_MAX_ITER: usize = 50;

impl TargetSet {
    pub fn new(n: usize, gamma: Vec<Expr>, nstar: usize, x0: Vec<f64>) -> Result<Self> {
        if nstar == 0 || nstar >= n {
            return Err(Error::Format {
                line: 0,
                message: format!("nstar must satisfy 0 < nstar < n = {n}, got {nstar}"),
            });
        }
        if gamma.len() != n - nstar {
            return Err(Error::Format {
                line: 0,
                message: format!(
                    "[gamma] has {} rows but n - nstar = {}",
                    gamma.len(),
                    n - nstar
                ),
            });
        }
        if x0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x0.len(),
            });
        }
        if gamma.iter().filter_map(Expr::max_var).any(|i| i >= n) {
            return Err(Error::Format {
                line: 0,
                message: "constraint references an undeclared variable".into(),
            });
        }
        let dgamma = gamma
            .iter()
            .map(|e| (0..n).map(|j| e.diff(j)).collect())
            .collect();
        Ok(Self {
            gamma,
            dgamma,
            nstar,
            x0,
        })
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    pub fn nstar(&self) -> usize {
        self.nstar
    }

    /// Transversal dimension `n - nstar`.
    pub fn codim(&self) -> usize {
        self.n() - self.nstar
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn gamma(&self) -> &[Expr] {
        &self.gamma
    }

    pub fn dgamma_exprs(&self) -> &[Vec<Expr>] {
        &self.dgamma
    }

    pub fn with_base_point(&self, x0: Vec<f64>) -> Result<TargetSet> {
        TargetSet::new(self.n(), self.gamma.clone(), self.nstar, x0)
    }

    pub fn gamma_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.gamma
            .iter()
            .map(|e| e.eval(x).map_err(|err| Error::eval("constraint gamma", err)))
            .collect()
    }

    pub fn residual(&self, x: &[f64]) -> Result<f64> {
        Ok(self
            .gamma_at(x)?
            .into_iter()
            .fold(0.0, |m, v| m.max(v.abs())))
    }

    pub fn dgamma_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        jacobian_at(&self.dgamma, x)
    }

    fn require_on_set(&self, x: &[f64]) -> Result<()> {
        let r = self.residual(x)?;
        if r > ON_SET_TOL || !r.is_finite() {
            return Err(Error::NotOnSet { residual: r });
        }
        Ok(())
    }
}

/// Orthonormal frame of `T_x Gamma* = ker Dgamma_x`.
pub fn tangent_space(tset: &TargetSet, x: &[f64], tol_rel: f64) -> Result<Frame> {
    tset.require_on_set(x)?;
    let dg = tset.dgamma_at(x)?;
    let rank = subspace::matrix_rank(&dg.transpose(), tol_rel);
    let null_dim = tset.n() - rank;
    if null_dim != tset.nstar() {
        return Err(Error::RankDrop {
            what: "tangent space of the target set".into(),
            expected: tset.nstar(),
            found: null_dim,
        });
    }
    let z = subspace::null_space_with_rank(&dg, rank);
    Ok(Frame::from_matrix(x.to_vec(), z, tol_rel).canonical())
}

/// `max over samples, i of |<Dgamma_i(x), v(x)>|`.
pub fn invariance_check(v: &VectorField, tset: &TargetSet, samples: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in samples {
        tset.require_on_set(x)?;
        let dg = tset.dgamma_at(x)?;
        let vx = v.eval(x)?;
        let prod = dg * vx;
        worst = prod.iter().fold(worst, |m, p| m.max(p.abs()));
    }
    Ok(worst)
}

/// Gauss-Newton with minimum-norm steps on `gamma(x) = 0`.
pub fn project_to_set(tset: &TargetSet, guess: &[f64]) -> Result<Vec<f64>> {
    let mut x = DVector::from_column_slice(guess);
    let mut residual = f64::INFINITY;
    for _ in 0..=PROJECTION_MAX_ITER {
        let gx = DVector::from_vec(tset.gamma_at(x.as_slice())?);
        residual = gx.amax();
        if !residual.is_finite() {
            break;
        }
        if residual <= PROJECTION_TOL {
            return Ok(x.iter().copied().collect());
        }
        let j = tset.dgamma_at(x.as_slice())?;
        let Ok(pinv) = j.clone().pseudo_inverse(1e-14) else {
            break;
        };
        x -= pinv * gx;
    }
    Err(Error::NoConvergence {
        what: "projection onto the target set".into(),
        iterations: PROJECTION_MAX_ITER,
        residual,
    })
}

/// `count` points of the target set near `x0`: point 0 is `x0`, the rest are
/// Halton offsets of radius `radius` along `T_{x0}Gamma*`, projected back.
pub fn sample_on_set(
    tset: &TargetSet,
    count: usize,
    radius: f64,
    tol_rel: f64,
) -> Result<Vec<Vec<f64>>> {
    let x0 = tset.x0().to_vec();
    let basis = tangent_space(tset, &x0, tol_rel)?.orthonormal_basis();
    let offsets = sampling::ball_offsets(tset.nstar(), count, radius);
    let base = DVector::from_column_slice(&x0);
    let mut out = Vec::with_capacity(count);
    for o in offsets {
        let mut scale = 1.0;
        let point = loop {
            let guess = &base + &basis * DVector::from_column_slice(&o) * scale;
            match project_to_set(tset, guess.as_slice()) {
                Ok(p) => break p,
                Err(e) if scale < 1.0 / 16.0 => return Err(e),
                Err(_) => scale *= 0.5,
            }
        };
        out.push(point);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    pub p: usize,
    pub nstar: usize,
    pub dh_rank_x0: usize,
    pub dh_rank_min: usize,
    pub dh_rank_max: usize,
    pub dh_samples: usize,
    pub dh_pass: bool,
    pub gamma_x0_residual: f64,
    pub base_point_pass: bool,
    /// Smallest `sigma_min / sigma_max` of `Dgamma` over the set samples.
    pub gamma_sigma_ratio_min: f64,
    pub regular_value_pass: bool,
    pub set_samples: usize,
    pub tol_rel: f64,
    pub pass: bool,
    pub messages: Vec<String>,
}

fn sigma_ratio(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Standing assumptions: full-rank output Jacobian near `x0`, `x0` on the
/// set, and `0` a regular value of `gamma` on the sampled part of the set.
pub fn validate(sys: &ControlSystem, tset: &TargetSet, cfg: &Config) -> ValidationReport {
    let tol = cfg.tol.rank_rel;
    let p = sys.p();
    let mut messages = Vec::new();
    let x0 = tset.x0();

    let ball = sampling::ball_samples(x0, 33, 0.1);
    let mut ranks = Vec::new();
    for x in &ball {
        match sys.dh_at(x) {
            Ok(dh) => ranks.push(subspace::matrix_rank(&dh.transpose(), tol)),
            Err(e) => {
                messages.push(format!("Dh evaluation failed: {e}"));
                ranks.push(0);
            }
        }
    }
    let dh_rank_x0 = ranks[0];
    let dh_rank_min = ranks.iter().copied().min().unwrap_or(0);
    let dh_rank_max = ranks.iter().copied().max().unwrap_or(0);
    let dh_pass = dh_rank_min == p && dh_rank_max == p;
    if !dh_pass {
        messages.push(format!("rank(Dh) ranges over [{dh_rank_min}, {dh_rank_max}], need {p}"));
    }

    let gamma_x0_residual = tset.residual(x0).unwrap_or(f64::INFINITY);
    let base_point_pass = gamma_x0_residual <= BASE_POINT_TOL;
    if !base_point_pass {
        messages.push(format!("|gamma(x0)| = {gamma_x0_residual:e} exceeds {BASE_POINT_TOL:e}"));
    }

    let mut ratio_min = tset
        .dgamma_at(x0)
        .map(|m| sigma_ratio(&m))
        .unwrap_or(0.0);
    let mut set_samples = 1;
    let mut regular_value_pass = ratio_min > tol;
    if regular_value_pass && base_point_pass {
        match sample_on_set(tset, cfg.sampling.count, cfg.sampling.radius, tol) {
            Ok(samples) => {
                set_samples = samples.len();
                for x in &samples {
                    let r = tset.dgamma_at(x).map(|m| sigma_ratio(&m)).unwrap_or(0.0);
                    ratio_min = ratio_min.min(r);
                }
                regular_value_pass = ratio_min > tol;
            }
            Err(e) => {
                messages.push(format!("sampling the target set failed: {e}"));
                regular_value_pass = false;
            }
        }
    }
    if !regular_value_pass {
        messages.push(format!(
            "Dgamma is rank deficient (sigma_min/sigma_max = {ratio_min:e})"
        ));
    }

    ValidationReport {
        n: sys.n(),
        p,
        nstar: tset.nstar(),
        dh_rank_x0,
        dh_rank_min,
        dh_rank_max,
        dh_samples: ball.len(),
        dh_pass,
        gamma_x0_residual,
        base_point_pass,
        gamma_sigma_ratio_min: ratio_min,
        regular_value_pass,
        set_samples,
        tol_rel: tol,
        pass: dh_pass && base_point_pass && regular_value_pass,
        messages,
    }
}

/// Everything a system-definition file declares.
#[derive(Debug, Clone)]
pub struct SystemFile {
    pub system: ControlSystem,
    pub target: TargetSet,
    /// Candidate transverse output over the state variables.
    pub lambda: Option<Expr>,
    pub lambda_text: Option<String>,
    /// `key -> (line, value)` from `[observer]`, `[controller]`, `[simulation]`.
    pub params: BTreeMap<String, (usize, String)>,
    pub grid: Vec<Vec<f64>>,
}

struct Section {
    line: usize,
    lines: Vec<(usize, String)>,
}

const KNOWN_SECTIONS: [&str; 12] = [
    "vars",
    "f",
    "g",
    "h",
    "gamma",
    "nstar",
    "x0",
    "lambda",
    "observer",
    "controller",
    "simulation",
    "grid",
];

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let content = if let Some(rest) = line.strip_prefix('[') {
            let Some(end) = rest.find(']') else {
                return Err(Error::Format {
                    line: line_no,
                    message: "unterminated section header".into(),
                });
            };
            let name = rest[..end].trim().to_ascii_lowercase();
            if !KNOWN_SECTIONS.contains(&name.as_str()) {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("unknown section [{name}]"),
                });
            }
            if sections.contains_key(&name) {
                return Err(Error::Format {
                    line: line_no,
                    message: format!("duplicate section [{name}]"),
                });
            }
            sections.insert(
                name.clone(),
                Section {
                    line: line_no,
                    lines: Vec::new(),
                },
            );
            current = Some(name);
            rest[end + 1..].trim()
        } else {
            line
        };
        if content.is_empty() {
            continue;
        }
        let Some(name) = &current else {
            return Err(Error::Format {
                line: line_no,
                message: "content before the first section header".into(),
            });
        };
        sections
            .get_mut(name)
            .expect("current section exists")
            .lines
            .push((line_no, content.to_string()));
    }
    Ok(sections)
}

fn required<'a>(sections: &'a BTreeMap<String, Section>, name: &str) -> Result<&'a Section> {
    sections.get(name).ok_or_else(|| Error::Format {
        line: 0,
        message: format!("missing section [{name}]"),
    })
}

fn parse_numbers(line: usize, text: &str) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| Error::Format {
                line,
                message: format!("expected a number, found `{t}`"),
            })
        })
        .collect()
}

fn parse_exprs(section: &Section, name: &str, vars: &VarTable, expected: Option<usize>) -> Result<Vec<Expr>> {
    if let Some(n) = expected {
        if section.lines.len() != n {
            return Err(Error::Format {
                line: section.line,
                message: format!(
                    "dimension mismatch: [{name}] has {} lines, expected {n}",
                    section.lines.len()
                ),
            });
        }
    }
    section
        .lines
        .iter()
        .map(|(line, text)| {
            parse(text, vars).map_err(|source| Error::Parse {
                context: format!("line {line} in [{name}]"),
                source,
            })
        })
        .collect()
}

/// Parses a system-definition file.
pub fn load_system(text: &str) -> Result<SystemFile> {
    let sections = split_sections(text)?;

    let vars_sec = required(&sections, "vars")?;
    let names: Vec<&str> = vars_sec
        .lines
        .iter()
        .flat_map(|(_, l)| l.split_whitespace())
        .collect();
    let vars = VarTable::new(&names).map_err(|e| Error::Format {
        line: vars_sec.line,
        message: e.to_string(),
    })?;
    let n = vars.len();

    let f = parse_exprs(required(&sections, "f")?, "f", &vars, Some(n))?;
    let g = parse_exprs(required(&sections, "g")?, "g", &vars, Some(n))?;
    let h_sec = required(&sections, "h")?;
    let h = parse_exprs(h_sec, "h", &vars, None)?;
    if h.is_empty() || h.len() > n {
        return Err(Error::Format {
            line: h_sec.line,
            message: format!("[h] must have between 1 and {n} lines"),
        });
    }

    let nstar_sec = required(&sections, "nstar")?;
    let nstar_text: Vec<&str> = nstar_sec
        .lines
        .iter()
        .flat_map(|(_, l)| l.split_whitespace())
        .collect();
    let nstar = match nstar_text.as_slice() {
        [one] => one.parse::<usize>().map_err(|_| Error::Format {
            line: nstar_sec.line,
            message: format!("[nstar] must be a nonnegative integer, found `{one}`"),
        })?,
        _ => {
            return Err(Error::Format {
                line: nstar_sec.line,
                message: "[nstar] must hold exactly one integer".into(),
            })
        }
    };
    if nstar == 0 || nstar >= n {
        return Err(Error::Format {
            line: nstar_sec.line,
            message: format!("nstar must satisfy 0 < nstar < {n}"),
        });
    }
    let gamma = parse_exprs(required(&sections, "gamma")?, "gamma", &vars, Some(n - nstar))?;

    let x0_sec = required(&sections, "x0")?;
    let mut x0 = Vec::new();
    for (line, text) in &x0_sec.lines {
        x0.extend(parse_numbers(*line, text)?);
    }
    if x0.len() != n {
        return Err(Error::Format {
            line: x0_sec.line,
            message: format!("dimension mismatch: [x0] has {} entries, expected {n}", x0.len()),
        });
    }

    let system = ControlSystem::new(
        vars.clone(),
        VectorField::new(f),
        VectorField::new(g),
        h,
    )?;
    let target = TargetSet::new(n, gamma, nstar, x0)?;

    let (lambda, lambda_text) = match sections.get("lambda") {
        None => (None, None),
        Some(sec) => {
            if sec.lines.len() != 1 {
                return Err(Error::Format {
                    line: sec.line,
                    message: "[lambda] must hold exactly one expression".into(),
                });
            }
            let (line, text) = &sec.lines[0];
            let e = parse_output_expr(text, &system).map_err(|e| match e {
                Error::Parse { source, .. } => Error::Parse {
                    context: format!("line {line} in [lambda]"),
                    source,
                },
                other => other,
            })?;
            (Some(e), Some(text.clone()))
        }
    };

    let mut params = BTreeMap::new();
    for name in ["observer", "controller", "simulation"] {
        if let Some(sec) = sections.get(name) {
            for (line, text) in &sec.lines {
                let Some((k, v)) = text.split_once('=') else {
                    return Err(Error::Format {
                        line: *line,
                        message: format!("expected `key = value` in [{name}]"),
                    });
                };
                let key = k.trim().to_string();
                if params.contains_key(&key) {
                    return Err(Error::Format {
                        line: *line,
                        message: format!("duplicate key `{key}`"),
                    });
                }
                params.insert(key, (*line, v.trim().to_string()));
            }
        }
    }

    let mut grid = Vec::new();
    if let Some(sec) = sections.get("grid") {
        for (line, text) in &sec.lines {
            let pt = parse_numbers(*line, text)?;
            if pt.len() != n {
                return Err(Error::Format {
                    line: *line,
                    message: format!("grid point has {} entries, expected {n}", pt.len()),
                });
            }
            grid.push(pt);
        }
    }

    Ok(SystemFile {
        system,
        target,
        lambda,
        lambda_text,
        params,
        grid,
    })
}

/// Parses an output candidate written over the state variables and/or the
/// measured outputs `y1..yp` (which are replaced by `h`).
pub fn parse_output_expr(text: &str, sys: &ControlSystem) -> Result<Expr> {
    let p = sys.p();
    let ys: Vec<String> = (1..=p).map(|i| format!("y{i}")).collect();
    let ext = match sys.vars().extended(&ys) {
        Ok(ext) => ext,
        Err(_) => sys.vars().clone(),
    };
    let e = parse(text, &ext).map_err(|source| Error::Parse {
        context: "output expression".into(),
        source,
    })?;
    if ext.len() == sys.n() {
        return Ok(e);
    }
    let mut table: Vec<Expr> = (0..sys.n()).map(Expr::var).collect();
    table.extend(sys.h().iter().cloned());
    Ok(e.substitute(&table).simplify())
}
