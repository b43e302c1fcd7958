//! Strategies and checks shared by the property suite and the acceptance
//! runner. Each check returns the measured error so callers can compare it
//! against their own bound.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, FileFailurePersistence, RngSeed};
use tflpi::liegeom::{involutive_closure, lie_bracket, lie_derivative};
use tflpi::ode::{flow, OdeOptions};
use tflpi::sysmodel::{project_to_set, tangent_space};
use tflpi::{Distribution, Expr, Frame, TargetSet, VectorField};

pub const CASES: u32 = 128;

pub fn config(seed: u64) -> PtConfig {
    PtConfig {
        cases: CASES,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: Some(Box::new(FileFailurePersistence::Off)),
        ..PtConfig::default()
    }
}

/// Building blocks for random smooth fields on R^3 (indices are 0-based).
fn term(k: usize) -> Expr {
    let x = Expr::var;
    match k {
        0 => Expr::one(),
        1 => x(0),
        2 => x(1),
        3 => x(2),
        4 => Expr::mul(x(0), x(1)),
        5 => Expr::mul(x(1), x(2)),
        6 => Expr::powi(x(0), 2),
        7 => Expr::sin(x(0)),
        8 => Expr::cos(x(1)),
        9 => Expr::exp(Expr::mul(Expr::constant(0.5), x(2))),
        _ => Expr::sin(Expr::mul(x(0), x(2))),
    }
}
const TERMS: usize = 11;

fn combination(coeffs: &[f64]) -> Expr {
    coeffs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .fold(Expr::zero(), |acc, (k, c)| {
            Expr::add(acc, Expr::mul(Expr::constant(*c), term(k)))
        })
        .simplify()
}

/// Random field on R^`n` (n >= 3); components past `active` are zero and
/// the rest mix the term library.
pub fn field(n: usize, active: usize) -> impl Strategy<Value = VectorField> {
    weighted_field(n, active, 1)
}

/// Like [`field`] but each coefficient is zero with odds `zeros : 1`.
pub fn weighted_field(n: usize, active: usize, zeros: u32) -> impl Strategy<Value = VectorField> {
    prop::collection::vec(
        prop::collection::vec(prop_oneof![zeros => Just(0.0), 1 => -1.0..1.0f64], TERMS),
        active,
    )
    .prop_map(move |rows| {
        let mut comps: Vec<Expr> = rows.iter().map(|c| combination(c)).collect();
        comps.resize(n, Expr::zero());
        VectorField::new(comps)
    })
}

pub fn point(n: usize, radius: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-radius..radius, n)
}

pub fn scalar() -> impl Strategy<Value = Expr> {
    prop::collection::vec(prop_oneof![Just(0.0), -1.0..1.0f64], TERMS)
        .prop_map(|c| combination(&c))
}

/// Random expression trees over x1..x3 on a domain where every node is
/// smooth.
pub fn expr_tree() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0..3usize).prop_map(Expr::var),
        (-2.0..2.0f64).prop_map(Expr::constant),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| {
                Expr::div(a, Expr::add(Expr::constant(1.5), Expr::sin(b)))
            }),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner.clone().prop_map(|a| Expr::exp(Expr::sin(a))),
            (inner, 2..4i32).prop_map(|(a, k)| Expr::powi(a, k)),
        ]
    })
}

pub fn matrix(n: usize, k: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * k).prop_map(move |v| DMatrix::from_vec(n, k, v))
}

/// Frames of dimension 2..=6 spanned by up to n random vectors.
pub fn frame_pair() -> impl Strategy<Value = (Frame, Frame)> {
    (2..=6usize)
        .prop_flat_map(|n| (Just(n), 1..=n, 1..=n))
        .prop_flat_map(|(n, a, b)| (Just(n), matrix(n, a), matrix(n, b)))
        .prop_map(|(n, a, b)| {
            let p = vec![0.0; n];
            (
                Frame::from_matrix(p.clone(), a, 1e-10),
                Frame::from_matrix(p, b, 1e-10),
            )
        })
}

fn at(v: &VectorField, x: &[f64]) -> DVector<f64> {
    v.eval(x).unwrap()
}

/// `max(|[a,b] + [b,a]|, |[a,[b,c]] + [b,[c,a]] + [c,[a,b]]|)` at `x`.
pub fn antisymmetry_jacobi(a: &VectorField, b: &VectorField, c: &VectorField, x: &[f64]) -> f64 {
    let anti = (at(&lie_bracket(a, b), x) + at(&lie_bracket(b, a), x)).amax();
    let jac = at(&lie_bracket(a, &lie_bracket(b, c)), x)
        + at(&lie_bracket(b, &lie_bracket(c, a)), x)
        + at(&lie_bracket(c, &lie_bracket(a, b)), x);
    anti.max(jac.amax())
}

/// `|L_[a,b] l - (L_a L_b l - L_b L_a l)|` at `x`.
pub fn leibniz(a: &VectorField, b: &VectorField, l: &Expr, x: &[f64]) -> f64 {
    let lhs = lie_derivative(l, &lie_bracket(a, b)).eval(x).unwrap();
    let ab = lie_derivative(&lie_derivative(l, b), a).eval(x).unwrap();
    let ba = lie_derivative(&lie_derivative(l, a), b).eval(x).unwrap();
    (lhs - (ab - ba)).abs()
}

pub fn double_annihilator(f: &Frame) -> f64 {
    f.annihilator().annihilator().projector_distance(f).unwrap()
}

/// Distance between `ann(A + B)` and `ann(A) ∩ ann(B)`.
pub fn annihilator_of_sum(a: &Frame, b: &Frame) -> f64 {
    let lhs = a.sum(b).unwrap().annihilator();
    let rhs = a.annihilator().intersect(&b.annihilator()).unwrap();
    lhs.projector_distance(&rhs).unwrap()
}

/// Linear part plus a bounded nonlinearity keeps the flows global.
pub fn tame(v: &VectorField) -> VectorField {
    let comps = v
        .components()
        .iter()
        .enumerate()
        .map(|(i, e)| Expr::add(Expr::sin(e.clone()), Expr::var((i + 1) % v.dim())))
        .collect();
    VectorField::new(comps)
}

/// `|phi_{t+s}(x) - phi_t(phi_s(x))|_inf`.
pub fn group_law(v: &VectorField, x: &[f64], t: f64, s: f64) -> f64 {
    let o = OdeOptions::default();
    let direct = flow(v, x, t + s, o).unwrap();
    let mid = flow(v, x, s, o).unwrap();
    let composed = flow(v, &mid, t, o).unwrap();
    direct
        .iter()
        .zip(&composed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Largest relative distance of a bracket of closure generators from the
/// closure's span, evaluated independently of the closure routine.
pub fn closure_residual(fields: &[VectorField], region: &[Vec<f64>]) -> f64 {
    let n = fields[0].dim();
    let labels = (0..fields.len()).map(|i| format!("v{i}")).collect();
    let d = Distribution::from_fields(n, fields.to_vec(), labels);
    let (closed, _) = involutive_closure(&d, region, 1e-8).unwrap();
    let gens = closed.generators();
    let mut worst: f64 = 0.0;
    for x in region {
        let frame = closed.frame_at(x, 1e-8).unwrap();
        for j in 0..gens.len() {
            for i in 0..j {
                let b = lie_bracket(&gens[i], &gens[j]).eval(x).unwrap();
                worst = worst.max(frame.residual(&b));
            }
        }
    }
    worst
}

/// Worst relative gap between `d e / d x_i` and a central difference.
pub fn derivative_gap(e: &Expr, x: &[f64]) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let exact = e.diff(i).eval(x).unwrap();
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let fd = (e.eval(&xp).unwrap() - e.eval(&xm).unwrap()) / (2.0 * h);
        let scale = exact.abs().max(e.eval(x).unwrap().abs()).max(1.0);
        worst = worst.max((exact - fd).abs() / scale);
    }
    worst
}

/// `|P(P(y)) - P(y)|` for the projection onto the set, plus the
/// orthonormality defect of the tangent basis and its tangency defect.
pub fn projection_defects(tset: &TargetSet, guess: &[f64]) -> Option<(f64, f64, f64)> {
    let p = project_to_set(tset, guess).ok()?;
    let pp = project_to_set(tset, &p).ok()?;
    let idem = p.iter().zip(&pp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let t = tangent_space(tset, &p, 1e-8).ok()?;
    let q = t.vectors();
    let ortho = (q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols())).amax();
    let tangency = (tset.dgamma_at(&p).unwrap() * q).amax();
    Some((idem, ortho, tangency))
}
