//! Flow-composition charts: the observable transverse output as the last
//! transversal flow time, its numeric verification, and the normal form.
//!
//! The chart uses `n` fields at `x0`:
//!
//! * `v_1..v_{nstar-mu}`, completing the tangential distribution inside
//!   `T Gamma*`;
//! * `w_1..w_mu`, spanning `T Gamma* ∩ inv(G_{r-2} + W)`;
//! * the ad-iterates `g, ad_f g, ..., ad_f^{r-1} g`.
//!
//! The `s` vector is indexed in that order, so the transverse output is the
//! last component. The map is
//!
//! ```text
//! Phi_s(x0) = w-flows ∘ (g .. ad^{r-2} flows) ∘ ad^{r-1} flow ∘ v-flows (x0)
//! ```
//!
//! with the `v` flows applied first, then `ad^{r-1}`, then `ad^{r-2}` down to
//! `g`, then `w_1..w_mu`.
//!
//! The `v` and `w` fields are not frozen at `x0`. Each is a fixed reference
//! vector projected at every point onto `ker Dgamma_x` (resp. onto
//! `ker Dgamma_x ∩ inv(G_{r-2} + W)(x)`), so their flows stay on the level
//! sets of `gamma`; constant frozen fields lose the property `lambda = 0`
//! on the set already at second order when `T Gamma*` turns.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::expr::{Expr, VarTable};
use crate::liegeom::subspace::{self, canonical_basis, leading_basis, null_space_with_rank};
use crate::liegeom::{ad_iterates, ad_label, build_g, involutive_closure, w_distribution};
use crate::liegeom::{Distribution, Frame, VectorField};
use crate::ltflpi::{
    check_ltflpi, lie_chain, observability_from_gradients, relative_degree, ObservabilityReport,
};
use crate::ode::{integrate, OdeOptions};
use crate::sampling;
use crate::sysmodel::{sample_on_set, tangent_space, ControlSystem, TargetSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    /// `v_i`: complement of the tangential distribution in `T Gamma*`.
    Complement,
    /// `w_i`: tangential part of `inv(G_{r-2} + W)`.
    Tangential,
    /// `ad_f^k g`.
    Transversal(usize),
}

#[derive(Debug, Clone)]
enum Source {
    Symbolic(VectorField),
    /// Reference vector projected onto `ker Dgamma_x`.
    TangentProjected(DVector<f64>),
    /// Reference vector projected onto `ker Dgamma_x ∩ inv(x)`.
    IntersectionProjected(DVector<f64>),
}

#[derive(Debug, Clone)]
pub struct ChartField {
    pub role: FieldRole,
    pub label: String,
    source: Source,
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldSummary {
    pub label: String,
    pub role: FieldRole,
    /// `symbolic`, `tangent_projected` or `intersection_projected`.
    pub kind: &'static str,
    /// Component expressions of a symbolic field.
    pub components: Option<Vec<String>>,
    /// Reference vector of a projected field.
    pub reference: Option<Vec<f64>>,
    pub value_at_x0: Vec<f64>,
}

/// Field list, composition order and everything needed to evaluate the
/// projected fields.
#[derive(Debug, Clone)]
pub struct FlowChart {
    x0: Vec<f64>,
    nstar: usize,
    r: usize,
    mu: usize,
    fields: Vec<ChartField>,
    order: Vec<usize>,
    tset: TargetSet,
    closure: Distribution,
    closure_rank: usize,
    intersection_null: usize,
    tol_rel: f64,
    ode: OdeOptions,
    vars: VarTable,
}

/// Chart flows stop here; anything larger is far outside a useful chart.
const FLOW_MAX_NORM: f64 = 1e8;

impl FlowChart {
    pub fn n(&self) -> usize {
        self.x0.len()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn nstar(&self) -> usize {
        self.nstar
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn mu(&self) -> usize {
        self.mu
    }

    pub fn fields(&self) -> &[ChartField] {
        &self.fields
    }

    /// Field indices in the order their flows are applied.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Index of the transverse output in `s`.
    pub fn lambda_index(&self) -> usize {
        self.n() - 1
    }

    /// Indices of the tangential coordinates (`v` then `w` slots).
    pub fn tangential_indices(&self) -> std::ops::Range<usize> {
        0..self.nstar
    }

    fn intersection_basis(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let frame = self.closure.frame_at(x, self.tol_rel)?;
        let b = leading_basis(frame.vectors(), self.closure_rank);
        let m = self.tset.dgamma_at(x)? * &b;
        let v = null_space_with_rank(&m, self.closure_rank - self.intersection_null);
        Ok(b * v)
    }

    pub fn eval_field(&self, k: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.fields[k].source {
            Source::Symbolic(v) => v.eval_into(x, out),
            Source::TangentProjected(v0) => {
                let dg = self.tset.dgamma_at(x)?;
                let p = subspace::null_projector_with_rank(&dg, self.tset.codim());
                out.copy_from_slice((p * v0).as_slice());
                Ok(())
            }
            Source::IntersectionProjected(w0) => {
                let q = self.intersection_basis(x)?;
                let v = &q * (q.transpose() * w0);
                out.copy_from_slice(v.as_slice());
                Ok(())
            }
        }
    }

    fn field_at(&self, k: usize, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n());
        self.eval_field(k, x, out.as_mut_slice())?;
        Ok(out)
    }

    /// `phi^{field k}_t(x)`.
    pub fn flow(&self, k: usize, x: &[f64], t: f64) -> Result<Vec<f64>> {
        if t == 0.0 {
            return Ok(x.to_vec());
        }
        integrate(|_, y, o| self.eval_field(k, y, o), 0.0, x, t, self.ode)
    }

    pub fn summaries(&self) -> Result<Vec<FieldSummary>> {
        (0..self.fields.len())
            .map(|k| {
                let f = &self.fields[k];
                let (kind, reference) = match &f.source {
                    Source::Symbolic(_) => ("symbolic", None),
                    Source::TangentProjected(v) => ("tangent_projected", Some(v.iter().copied().collect())),
                    Source::IntersectionProjected(v) => {
                        ("intersection_projected", Some(v.iter().copied().collect()))
                    }
                };
                Ok(FieldSummary {
                    label: f.label.clone(),
                    role: f.role,
                    kind,
                    components: match &f.source {
                        Source::Symbolic(v) => Some(v.to_text(&self.vars)),
                        _ => None,
                    },
                    reference,
                    value_at_x0: self.field_at(k, &self.x0)?.iter().copied().collect(),
                })
            })
            .collect()
    }
}

/// Assembles the chart fields at `x0`. Requires a solvable local problem.
pub fn build_frames(sys: &ControlSystem, tset: &TargetSet, cfg: &Config) -> Result<FlowChart> {
    let report = check_ltflpi(sys, tset, cfg)?;
    if !report.solvable {
        return Err(Error::Precondition(
            "the local problem is not solvable at x0; no chart is built".into(),
        ));
    }
    let tol = cfg.tol.rank_rel;
    let n = sys.n();
    let nstar = tset.nstar();
    let r = tset.codim();
    let x0 = tset.x0().to_vec();

    let samples = sample_on_set(tset, cfg.sampling.count, cfg.sampling.radius, tol)?;
    let (w, _) = w_distribution(sys, tol);
    let (closure, _) = involutive_closure(&build_g(sys, r as isize - 2).plus(&w), &samples, tol)?;
    let inv0 = closure.frame_at(&x0, tol)?;
    let closure_rank = inv0.rank();
    let b0 = leading_basis(inv0.vectors(), closure_rank);
    let m0 = tset.dgamma_at(&x0)? * &b0;
    let intersection_null = closure_rank - subspace::matrix_rank(&m0.transpose(), tol);

    let tangent = tangent_space(tset, &x0, tol)?;
    let gtang = b0.clone() * null_space_with_rank(&m0, closure_rank - intersection_null);
    let w_ref = canonical_basis(&gtang);
    let mu = w_ref.ncols();

    // Complement of the tangential part inside T Gamma*.
    let gtang_frame = Frame::from_matrix(x0.clone(), w_ref.clone(), tol);
    let comp = tangent.intersect(&gtang_frame.annihilator())?;
    let v_ref = canonical_basis(&comp.orthonormal_basis());
    if v_ref.ncols() + mu != nstar {
        return Err(Error::RankDrop {
            what: "tangential splitting of T Gamma*".into(),
            expected: nstar - mu,
            found: v_ref.ncols(),
        });
    }

    let mut fields = Vec::with_capacity(n);
    for (i, c) in v_ref.column_iter().enumerate() {
        fields.push(ChartField {
            role: FieldRole::Complement,
            label: format!("v{}", i + 1),
            source: Source::TangentProjected(c.into_owned()),
        });
    }
    for (i, c) in w_ref.column_iter().enumerate() {
        fields.push(ChartField {
            role: FieldRole::Tangential,
            label: format!("w{}", i + 1),
            source: Source::IntersectionProjected(c.into_owned()),
        });
    }
    for (k, ad) in ad_iterates(sys.f(), sys.g(), r - 1).into_iter().enumerate() {
        fields.push(ChartField {
            role: FieldRole::Transversal(k),
            label: ad_label(k),
            source: Source::Symbolic(ad),
        });
    }

    let v_count = nstar - mu;
    let mut order: Vec<usize> = (0..v_count).collect();
    order.push(n - 1);
    order.extend((nstar..n - 1).rev());
    order.extend(v_count..nstar);

    let chart = FlowChart {
        x0,
        nstar,
        r,
        mu,
        fields,
        order,
        tset: tset.clone(),
        closure,
        closure_rank,
        intersection_null,
        tol_rel: tol,
        vars: sys.vars().clone(),
        ode: OdeOptions {
            max_norm: FLOW_MAX_NORM,
            ..OdeOptions::default()
        },
    };

    let mut at_x0 = DMatrix::zeros(n, n);
    for k in 0..n {
        at_x0.set_column(k, &chart.field_at(k, &chart.x0)?);
    }
    let rank = subspace::matrix_rank(&at_x0, tol);
    if rank < n {
        return Err(Error::IndependenceFailure { rank, n });
    }
    Ok(chart)
}

/// `Phi_s(x0)`; `s = 0` returns `x0` without integrating.
pub fn forward_map(chart: &FlowChart, s: &[f64]) -> Result<Vec<f64>> {
    if s.len() != chart.n() {
        return Err(Error::DimensionMismatch {
            expected: chart.n(),
            found: s.len(),
        });
    }
    let mut x = chart.x0.clone();
    for &k in &chart.order {
        x = chart.flow(k, &x, s[k])?;
    }
    Ok(x)
}

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-9;
const NEWTON_FD_STEP: f64 = 1e-6;
const POLISH_ITER: usize = 3;
const MIN_DAMPING: f64 = 1.0 / 1024.0;

fn residual(chart: &FlowChart, s: &[f64], x: &[f64]) -> Result<DVector<f64>> {
    let y = forward_map(chart, s)?;
    Ok(DVector::from_iterator(
        x.len(),
        y.iter().zip(x).map(|(a, b)| a - b),
    ))
}

fn fd_jacobian(chart: &FlowChart, s: &[f64]) -> Result<DMatrix<f64>> {
    let n = s.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut sp = s.to_vec();
        let mut sm = s.to_vec();
        sp[j] += NEWTON_FD_STEP;
        sm[j] -= NEWTON_FD_STEP;
        let d = (DVector::from_vec(forward_map(chart, &sp)?)
            - DVector::from_vec(forward_map(chart, &sm)?))
            / (2.0 * NEWTON_FD_STEP);
        jac.set_column(j, &d);
    }
    Ok(jac)
}

fn no_convergence(iterations: usize, residual: f64) -> Error {
    Error::NoConvergence {
        what: "chart inversion".into(),
        iterations,
        residual,
    }
}

/// Damped Newton on `Phi_s(x0) = x`. With `frozen` the Jacobian is held
/// fixed (chord iteration).
fn newton(
    chart: &FlowChart,
    x: &[f64],
    start: Vec<f64>,
    frozen: Option<&DMatrix<f64>>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let mut s = start;
    let mut f = residual(chart, &s, x).map_err(|_| no_convergence(0, f64::INFINITY))?;
    let mut norm = f.amax();
    let mut polish = 0;
    let mut last_jac = None;
    for it in 0..NEWTON_MAX_ITER {
        if norm < NEWTON_TOL {
            if polish >= POLISH_ITER || norm == 0.0 {
                break;
            }
            polish += 1;
        }
        let jac = match frozen {
            Some(j) => j.clone(),
            None => fd_jacobian(chart, &s).map_err(|_| no_convergence(it, norm))?,
        };
        let Some(step) = jac.clone().lu().solve(&(-&f)) else {
            return Err(no_convergence(it, norm));
        };
        last_jac = Some(jac);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = s.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            if let Ok(ft) = residual(chart, &trial, x) {
                let nt = ft.amax();
                if nt < norm {
                    s = trial;
                    f = ft;
                    norm = nt;
                    break;
                }
            }
            t *= 0.5;
            if t < MIN_DAMPING {
                if norm < NEWTON_TOL {
                    // Converged; polishing just stalled at round-off.
                    let jac = last_jac.expect("set above");
                    return Ok((s, jac));
                }
                return Err(no_convergence(it + 1, norm));
            }
        }
    }
    if norm >= NEWTON_TOL {
        return Err(no_convergence(NEWTON_MAX_ITER, norm));
    }
    let jac = match last_jac {
        Some(j) => j,
        None => match frozen {
            Some(j) => j.clone(),
            None => fd_jacobian(chart, &s)?,
        },
    };
    Ok((s, jac))
}

/// Chart coordinates of `x`, by damped Newton from `s = 0`.
pub fn invert_chart(chart: &FlowChart, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != chart.n() {
        return Err(Error::DimensionMismatch {
            expected: chart.n(),
            found: x.len(),
        });
    }
    newton(chart, x, vec![0.0; chart.n()], None).map(|(s, _)| s)
}

/// Central-difference step for the numeric gradient of `lambda`.
pub const GRADIENT_STEP: f64 = 1e-4;
pub const VERIFY_SAMPLES: usize = 32;
pub const ORTHOGONALITY_TOL: f64 = 1e-5;
pub const TRANSVERSALITY_MIN: f64 = 1e-4;
pub const ON_SET_TOL: f64 = 1e-7;
/// Observability residual threshold for finite-difference gradients.
pub const NUMERIC_OBSERVABILITY_TOL: f64 = 1e-5;
pub const ROUNDTRIP_TOL: f64 = 1e-7;
pub const MAX_HALVINGS: usize = 6;

/// `lambda(x)` and its central-difference gradient, warm-started from the
/// chart coordinates of `x`.
pub fn lambda_and_gradient(chart: &FlowChart, x: &[f64]) -> Result<(Vec<f64>, DVector<f64>)> {
    let (s, jac) = newton(chart, x, vec![0.0; chart.n()], None)?;
    let li = chart.lambda_index();
    let n = chart.n();
    let mut grad = DVector::zeros(n);
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += GRADIENT_STEP;
        xm[j] -= GRADIENT_STEP;
        let (sp, _) = newton(chart, &xp, s.clone(), Some(&jac))?;
        let (sm, _) = newton(chart, &xm, s.clone(), Some(&jac))?;
        grad[j] = (sp[li] - sm[li]) / (2.0 * GRADIENT_STEP);
    }
    Ok((s, grad))
}

#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub radius: f64,
    pub samples: usize,
    /// `max_s |<dlambda, ad_f^k g>|` for `k <= r - 2`.
    pub orthogonality: Vec<f64>,
    pub orthogonality_pass: bool,
    /// `|<dlambda, ad_f^{r-1} g>(x0)|`.
    pub transversality: f64,
    pub transversality_pass: bool,
    pub on_set_max: f64,
    pub on_set_pass: bool,
    pub observability: ObservabilityReport,
    /// `max |Phi(invert(x)) - x|` over the ball samples.
    pub roundtrip_x: f64,
    /// `max |invert(Phi_s) - s|` over an `s`-ball of the same radius.
    pub roundtrip_s: f64,
    pub roundtrip_pass: bool,
    pub pass: bool,
    pub failure: Option<String>,
}

fn verify(chart: &FlowChart, sys: &ControlSystem, radius: f64, cfg: &Config) -> Result<Verification> {
    let n = chart.n();
    let r = chart.r;
    let ad = ad_iterates(sys.f(), sys.g(), r - 1);
    let ball = sampling::ball_samples(&chart.x0, VERIFY_SAMPLES, radius);
    let mut orthogonality = vec![0.0f64; r - 1];
    let mut transversality = 0.0;
    let mut gradients = Vec::with_capacity(ball.len());
    let mut roundtrip_x: f64 = 0.0;
    for (idx, x) in ball.iter().enumerate() {
        let (s, grad) = lambda_and_gradient(chart, x)?;
        let back = forward_map(chart, &s)?;
        roundtrip_x = back
            .iter()
            .zip(x)
            .fold(roundtrip_x, |m, (a, b)| m.max((a - b).abs()));
        for (k, field) in ad.iter().enumerate() {
            let p = grad.dot(&field.eval(x)?).abs();
            if k + 1 < r {
                orthogonality[k] = orthogonality[k].max(p);
            } else if idx == 0 {
                transversality = p;
            }
        }
        gradients.push(grad);
    }
    let observability =
        observability_from_gradients(sys, &ball, &gradients, NUMERIC_OBSERVABILITY_TOL)?;

    let set_samples = sample_on_set(&chart.tset, VERIFY_SAMPLES, radius, cfg.tol.rank_rel)?;
    let mut on_set_max: f64 = 0.0;
    for x in &set_samples {
        let s = invert_chart(chart, x)?;
        on_set_max = on_set_max.max(s[chart.lambda_index()].abs());
    }

    let mut roundtrip_s: f64 = 0.0;
    for s in sampling::ball_offsets(n, 8, radius).iter().skip(1) {
        let x = forward_map(chart, s)?;
        let back = invert_chart(chart, &x)?;
        roundtrip_s = back
            .iter()
            .zip(s)
            .fold(roundtrip_s, |m, (a, b)| m.max((a - b).abs()));
    }

    let orthogonality_pass = orthogonality.iter().all(|&v| v < ORTHOGONALITY_TOL);
    let transversality_pass = transversality > TRANSVERSALITY_MIN;
    let on_set_pass = on_set_max < ON_SET_TOL;
    let roundtrip_pass = roundtrip_x < ROUNDTRIP_TOL && roundtrip_s < ROUNDTRIP_TOL;
    let failure = if !orthogonality_pass {
        Some(format!("dlambda is not orthogonal to G_(r-2): {orthogonality:?}"))
    } else if !transversality_pass {
        Some(format!("<dlambda, ad_f^(r-1) g>(x0) = {transversality:e} is too small"))
    } else if !on_set_pass {
        Some(format!("|lambda| reaches {on_set_max:e} on the target set"))
    } else if !observability.observable {
        Some(format!(
            "observability residual {:e} exceeds {:e}",
            observability.max_residual, NUMERIC_OBSERVABILITY_TOL
        ))
    } else if !roundtrip_pass {
        Some(format!("roundtrip errors {roundtrip_x:e} / {roundtrip_s:e}"))
    } else {
        None
    };
    Ok(Verification {
        radius,
        samples: ball.len(),
        orthogonality,
        orthogonality_pass,
        transversality,
        transversality_pass,
        on_set_max,
        on_set_pass,
        pass: failure.is_none(),
        observability,
        roundtrip_x,
        roundtrip_s,
        roundtrip_pass,
        failure,
    })
}

#[derive(Debug, Clone)]
pub struct ChartResult {
    pub chart: FlowChart,
    /// Radius of the ball on which the verification passed.
    pub radius: f64,
    pub verification: Verification,
    /// Failed attempts at larger radii, with the reason.
    pub attempts: Vec<(f64, String)>,
    /// Symbolic output supplied by the user, if any; never derived.
    pub symbolic_lambda: Option<Expr>,
}

impl ChartResult {
    pub fn lambda(&self, x: &[f64]) -> Result<f64> {
        Ok(invert_chart(&self.chart, x)?[self.chart.lambda_index()])
    }

    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        forward_map(&self.chart, s)
    }

    pub fn invert(&self, x: &[f64]) -> Result<Vec<f64>> {
        invert_chart(&self.chart, x)
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        let c = &self.chart;
        Ok(serde_json::json!({
            "n": c.n(),
            "nstar": c.nstar,
            "r": c.r,
            "mu": c.mu,
            "x0": c.x0,
            "fields": c.summaries()?,
            "composition_order": c.order.iter().map(|&k| c.fields[k].label.clone()).collect::<Vec<_>>(),
            "lambda_index": c.lambda_index(),
            "radius": self.radius,
            "attempts": self.attempts.iter().map(|(r, m)| serde_json::json!({"radius": r, "failure": m})).collect::<Vec<_>>(),
            "verification": self.verification,
        }))
    }
}

/// Verifies the extracted output on a ball, halving the radius on failure.
pub fn extract_lambda(chart: FlowChart, sys: &ControlSystem, cfg: &Config) -> Result<ChartResult> {
    let mut radius = cfg.sampling.radius;
    let mut attempts = Vec::new();
    for _ in 0..=MAX_HALVINGS {
        let outcome = verify(&chart, sys, radius, cfg);
        match outcome {
            Ok(v) if v.pass => {
                return Ok(ChartResult {
                    chart,
                    radius,
                    verification: v,
                    attempts,
                    symbolic_lambda: None,
                })
            }
            Ok(v) => attempts.push((radius, v.failure.unwrap_or_default())),
            Err(e) if e.is_numerical() => attempts.push((radius, e.to_string())),
            Err(e) => return Err(e),
        }
        radius *= 0.5;
    }
    let last = attempts.last().map(|(_, m)| m.clone()).unwrap_or_default();
    Err(Error::VerificationFailure(format!(
        "no radius down to {:e} passed; last failure: {last}",
        radius * 2.0
    )))
}

/// `build_frames` followed by `extract_lambda`.
pub fn construct(sys: &ControlSystem, tset: &TargetSet, cfg: &Config) -> Result<ChartResult> {
    let chart = build_frames(sys, tset, cfg)?;
    extract_lambda(chart, sys, cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalForm {
    pub r: usize,
    /// `xi_k = L_f^{k-1} lambda`.
    pub xi: Vec<String>,
    pub a1: String,
    pub a2: String,
    pub a2_at_x0: f64,
    /// Chart slots whose coordinates serve as `eta`.
    pub eta_slots: Vec<String>,
    /// `max |L_g eta_i|` on ball samples, when a chart was supplied.
    pub lg_eta_max: Option<Vec<f64>>,
    #[serde(skip)]
    pub xi_exprs: Vec<Expr>,
    #[serde(skip)]
    pub a1_expr: Expr,
    #[serde(skip)]
    pub a2_expr: Expr,
}

/// Transversal chain and drift/input terms of the last transversal state.
pub fn normal_form(
    lambda: &Expr,
    sys: &ControlSystem,
    tset: &TargetSet,
    chart: Option<&ChartResult>,
    cfg: &Config,
) -> Result<NormalForm> {
    let r = tset.codim();
    let rel = relative_degree(lambda, sys, tset.x0(), sys.n(), cfg)?;
    if rel.r() != Some(r) {
        return Err(Error::Precondition(format!(
            "lambda must have relative degree {r} at x0 ({})",
            rel.message
        )));
    }
    let xi = lie_chain(lambda, sys.f(), r - 1);
    let last = xi.last().expect("r >= 1");
    let a1 = crate::liegeom::lie_derivative(last, sys.f());
    let a2 = crate::liegeom::lie_derivative(last, sys.g());
    let a2_at_x0 = a2.eval(tset.x0()).map_err(|e| Error::eval("a2", e))?;

    let (eta_slots, lg_eta_max) = match chart {
        None => (Vec::new(), None),
        Some(c) => {
            let idx = c.chart.tangential_indices();
            let labels = idx.clone().map(|k| c.chart.fields[k].label.clone()).collect();
            let ball = sampling::ball_samples(tset.x0(), 8, c.radius);
            let mut worst = vec![0.0f64; idx.len()];
            for x in &ball {
                let gx = sys.g().eval(x)?;
                let grads = eta_gradients(&c.chart, x)?;
                for (w, gr) in worst.iter_mut().zip(grads.iter()) {
                    *w = w.max(gr.dot(&gx).abs());
                }
            }
            (labels, Some(worst))
        }
    };

    let vars = sys.vars();
    Ok(NormalForm {
        r,
        xi: xi.iter().map(|e| e.to_text(vars)).collect(),
        a1: a1.to_text(vars),
        a2: a2.to_text(vars),
        a2_at_x0,
        eta_slots,
        lg_eta_max,
        xi_exprs: xi,
        a1_expr: a1,
        a2_expr: a2,
    })
}

fn eta_gradients(chart: &FlowChart, x: &[f64]) -> Result<Vec<DVector<f64>>> {
    let (s, jac) = newton(chart, x, vec![0.0; chart.n()], None)?;
    let idx = chart.tangential_indices();
    let n = chart.n();
    let mut grads = vec![DVector::zeros(n); idx.len()];
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += GRADIENT_STEP;
        xm[j] -= GRADIENT_STEP;
        let (sp, _) = newton(chart, &xp, s.clone(), Some(&jac))?;
        let (sm, _) = newton(chart, &xm, s.clone(), Some(&jac))?;
        for (g, k) in grads.iter_mut().zip(idx.clone()) {
            g[j] = (sp[k] - sm[k]) / (2.0 * GRADIENT_STEP);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::testing::{motivating, unicycle};

    fn motivating_chart() -> (crate::sysmodel::SystemFile, FlowChart) {
        let m = motivating();
        let c = build_frames(&m.system, &m.target, &Config::default()).unwrap();
        (m, c)
    }

    #[test]
    fn motivating_frames() {
        let (_, c) = motivating_chart();
        assert_eq!(c.mu(), 2);
        let labels: Vec<&str> = c.fields().iter().map(|f| f.label.as_str()).collect();
        assert_eq!(labels, ["w1", "w2", "g", "ad_f g", "ad_f^2 g"]);
        let order: Vec<&str> = c.order().iter().map(|&k| labels[k]).collect();
        assert_eq!(order, ["ad_f^2 g", "ad_f g", "g", "w1", "w2"]);
        let x = [0.03, -0.02, 0.01, 0.04, 0.02];
        let w1 = c.field_at(0, &x).unwrap();
        let w2 = c.field_at(1, &x).unwrap();
        let e2 = DVector::from_vec(vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((w1 - e2).norm() < 1e-14 && (w2 - e3).norm() < 1e-14);
    }

    #[test]
    fn g_flow_closed_form() {
        let (_, c) = motivating_chart();
        let x = [0.1, 0.2, -0.3, 0.05, -0.1];
        for s in [0.3, -0.2] {
            let y = c.flow(2, &x, s).unwrap();
            let e = f64::exp(s);
            let expected = [e * x[0], x[1], x[2], s + x[3], e * x[4]];
            for (a, b) in y.iter().zip(expected) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn forward_map_closed_form() {
        let (_, c) = motivating_chart();
        assert_eq!(forward_map(&c, &[0.0; 5]).unwrap(), vec![0.0; 5]);
        for s in sampling::ball_offsets(5, 12, 0.1) {
            let x = forward_map(&c, &s).unwrap();
            let e = s[2].exp();
            let expected = [-s[3] * e, s[0], s[1], s[2], s[4] * e];
            for (a, b) in x.iter().zip(expected) {
                assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn inverse_closed_form() {
        let (_, c) = motivating_chart();
        let x = [0.1, 0.3, -0.2, 0.05, 0.07];
        let s = invert_chart(&c, &x).unwrap();
        let e = (-x[3]).exp();
        let expected = [x[1], x[2], x[3], -x[0] * e, x[4] * e];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-7, "{s:?}");
        }
        assert_eq!(invert_chart(&c, &[0.0; 5]).unwrap(), vec![0.0; 5]);
        let far = [0.0, 0.0, 0.0, 1e3, 1.0];
        assert!(matches!(invert_chart(&c, &far), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn motivating_construction() {
        let m = motivating();
        let res = construct(&m.system, &m.target, &Config::default()).unwrap();
        assert_eq!(res.radius, 0.05);
        assert!(res.verification.pass);
        let lam = m.lambda.unwrap();
        for x in sampling::ball_samples(&[0.0; 5], 32, 0.05) {
            assert!((res.lambda(&x).unwrap() - lam.eval(&x).unwrap()).abs() < 1e-6);
        }
        let json = res.to_json().unwrap();
        assert_eq!(json["mu"], 2);
    }

    #[test]
    fn unicycle_construction() {
        let u = unicycle();
        let res = construct(&u.system, &u.target, &Config::default()).unwrap();
        assert_eq!(res.chart.mu(), 2);
        assert!(res.verification.pass, "{:?}", res.verification.failure);
        assert!(res.verification.on_set_max < 1e-7);
    }

    #[test]
    fn refuses_unsolvable() {
        let v = crate::expr::VarTable::numbered("x", 2).unwrap();
        let sys = ControlSystem::new(
            v.clone(),
            VectorField::constant(&[0.0, 0.0]),
            VectorField::constant(&[1.0, 0.0]),
            vec![parse("x2", &v).unwrap()],
        )
        .unwrap();
        let t = TargetSet::new(2, vec![parse("x2", &v).unwrap()], 1, vec![0.0; 2]).unwrap();
        assert!(matches!(
            build_frames(&sys, &t, &Config::default()),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn normal_forms() {
        let m = motivating();
        let v = m.system.vars().clone();
        let nf = normal_form(m.lambda.as_ref().unwrap(), &m.system, &m.target, None, &Config::default())
            .unwrap();
        let expected = ["x5*exp(-x4)", "x1*exp(-x4)", "x4*exp(-x4)"];
        for x in crate::testing::cube_points(5, 50, 1.0, 11) {
            for (e, t) in nf.xi_exprs.iter().zip(expected) {
                let o = parse(t, &v).unwrap();
                assert!((e.eval(&x).unwrap() - o.eval(&x).unwrap()).abs() < 1e-12);
            }
            let a2 = parse("(1 - x4)*exp(-x4)", &v).unwrap();
            assert!((nf.a2_expr.eval(&x).unwrap() - a2.eval(&x).unwrap()).abs() < 1e-12);
            assert!(nf.a1_expr.eval(&x).unwrap().abs() < 1e-12);
        }
        assert!((nf.a2_at_x0 - 1.0).abs() < 1e-15);

        let u = unicycle();
        let uv = u.system.vars().clone();
        let lam = parse("x1^2 + x2^2 - 1", &uv).unwrap();
        let nf = normal_form(&lam, &u.system, &u.target, None, &Config::default()).unwrap();
        let xi2 = parse("2*x1*cos(x3) + 2*x2*(sin(x3) + w1)", &uv).unwrap();
        let a2 = parse("2*(-x1*sin(x3) + x2*cos(x3))", &uv).unwrap();
        for x in crate::testing::cube_points(5, 50, 1.0, 12) {
            assert!((nf.xi_exprs[1].eval(&x).unwrap() - xi2.eval(&x).unwrap()).abs() < 1e-12);
            assert!((nf.a2_expr.eval(&x).unwrap() - a2.eval(&x).unwrap()).abs() < 1e-12);
        }

        let bad = parse("x1", &v).unwrap();
        assert!(matches!(
            normal_form(&bad, &m.system, &m.target, None, &Config::default()),
            Err(Error::Precondition(_))
        ));
    }
}
