//! Solvability checks for local and global transverse feedback
//! linearization with partial information, and the verification battery
//! for candidate transverse outputs.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{Config, Tolerances};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::liegeom::{
    ad_iterates, build_g, involutive_closure, jacobian_at, lie_bracket, lie_derivative,
    w_distribution, ClosureReport, Frame, KernelMode,
};
use crate::sampling;
use crate::sysmodel::{sample_on_set, tangent_space, ControlSystem, TargetSet};

/// Transversal dimension `r = n - nstar`.
pub fn transversal_dim(tset: &TargetSet) -> usize {
    tset.codim()
}

#[derive(Debug, Clone, Serialize)]
pub struct CondA {
    pub point: Vec<f64>,
    pub dim_tangent: usize,
    pub dim_g: usize,
    pub dim_sum: usize,
    pub direct_sum: bool,
    pub pass: bool,
}

/// `T_x Gamma* (+) G_{r-1}(x) = R^n` at a point of the set.
pub fn check_condition_a_at(
    sys: &ControlSystem,
    tset: &TargetSet,
    x: &[f64],
    tol_rel: f64,
) -> Result<CondA> {
    let r = transversal_dim(tset);
    let t = tangent_space(tset, x, tol_rel)?;
    let g = build_g(sys, r as isize - 1).frame_at(x, tol_rel)?;
    let sum = t.sum(&g)?;
    let direct_sum = sum.rank() == t.rank() + g.rank();
    Ok(CondA {
        point: x.to_vec(),
        dim_tangent: t.rank(),
        dim_g: g.rank(),
        dim_sum: sum.rank(),
        direct_sum,
        pass: direct_sum && sum.rank() == sys.n(),
    })
}

pub fn check_condition_a(sys: &ControlSystem, tset: &TargetSet, tol_rel: f64) -> Result<CondA> {
    check_condition_a_at(sys, tset, tset.x0(), tol_rel)
}

#[derive(Debug, Clone, Serialize)]
pub struct CondBSample {
    pub point: Vec<f64>,
    /// `dim(T_x Gamma* + G_{r-2}(x))`.
    pub dim_lhs: usize,
    /// `dim(T_x Gamma* + inv(G_{r-2} + W)(x))`.
    pub dim_rhs: usize,
    pub dim_closure: usize,
    pub equal: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CondB {
    pub samples: Vec<CondBSample>,
    pub closure: ClosureReport,
    pub kernel_mode: KernelMode,
    pub pass: bool,
}

fn closure_of_g_plus_w(
    sys: &ControlSystem,
    r: usize,
    samples: &[Vec<f64>],
    tol_rel: f64,
) -> Result<(crate::liegeom::Distribution, ClosureReport, KernelMode)> {
    let (w, mode) = w_distribution(sys, tol_rel);
    let d = build_g(sys, r as isize - 2).plus(&w);
    let (closed, report) = involutive_closure(&d, samples, tol_rel)?;
    Ok((closed, report, mode))
}

pub fn check_condition_b(
    sys: &ControlSystem,
    tset: &TargetSet,
    samples: &[Vec<f64>],
    tol_rel: f64,
) -> Result<CondB> {
    let r = transversal_dim(tset);
    let (closed, closure, kernel_mode) = closure_of_g_plus_w(sys, r, samples, tol_rel)?;
    let g = build_g(sys, r as isize - 2);
    let mut out = Vec::with_capacity(samples.len());
    for x in samples {
        let t = tangent_space(tset, x, tol_rel)?;
        let lhs = t.sum(&g.frame_at(x, tol_rel)?)?;
        let inv = closed.frame_at(x, tol_rel)?;
        let rhs = t.sum(&inv)?;
        out.push(CondBSample {
            point: x.clone(),
            dim_lhs: lhs.rank(),
            dim_rhs: rhs.rank(),
            dim_closure: inv.rank(),
            equal: lhs.rank() == rhs.rank(),
        });
    }
    let pass = out.iter().all(|s| s.equal);
    Ok(CondB {
        samples: out,
        closure,
        kernel_mode,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LtflpiReport {
    pub n: usize,
    pub nstar: usize,
    pub r: usize,
    pub x0: Vec<f64>,
    pub cond_a: CondA,
    pub cond_b: CondB,
    /// `inv(G_{r-2} + W)` has the same rank at every sample.
    pub regular: bool,
    pub solvable: bool,
    pub sample_count: usize,
    pub sample_radius: f64,
    pub tolerances: Tolerances,
}

pub fn check_ltflpi(sys: &ControlSystem, tset: &TargetSet, cfg: &Config) -> Result<LtflpiReport> {
    cfg.validate()?;
    let tol = cfg.tol.rank_rel;
    let cond_a = check_condition_a(sys, tset, tol)?;
    let samples = sample_on_set(tset, cfg.sampling.count, cfg.sampling.radius, tol)?;
    let cond_b = check_condition_b(sys, tset, &samples, tol)?;
    let regular = cond_b.closure.regular;
    Ok(LtflpiReport {
        n: sys.n(),
        nstar: tset.nstar(),
        r: transversal_dim(tset),
        x0: tset.x0().to_vec(),
        solvable: cond_a.pass && cond_b.pass && regular,
        cond_a,
        cond_b,
        regular,
        sample_count: samples.len(),
        sample_radius: cfg.sampling.radius,
        tolerances: cfg.tol,
    })
}

/// `lambda, L_f lambda, ..., L_f^k lambda`.
pub fn lie_chain(lambda: &Expr, f: &crate::liegeom::VectorField, k: usize) -> Vec<Expr> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(lambda.simplify());
    for _ in 0..k {
        let next = lie_derivative(out.last().expect("nonempty"), f);
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct RelDegReport {
    /// Smallest `k + 1` with `|L_g L_f^k lambda (x0)|` above the threshold.
    pub candidate: Option<usize>,
    pub well_defined: bool,
    /// `lg_at_x0[k] = L_g L_f^k lambda (x0)`.
    pub lg_at_x0: Vec<f64>,
    /// `lg_values[k][s]` at ball sample `s`.
    pub lg_values: Vec<Vec<f64>>,
    /// `max_s |L_g L_f^k lambda|` over the ball.
    pub lg_max_abs: Vec<f64>,
    pub rmax: usize,
    pub ball_samples: usize,
    pub ball_radius: f64,
    pub zero_tol: f64,
    pub nonzero_tol: f64,
    pub message: String,
}

impl RelDegReport {
    /// The relative degree when well defined.
    pub fn r(&self) -> Option<usize> {
        if self.well_defined {
            self.candidate
        } else {
            None
        }
    }
}

/// Relative degree of `lambda` at `x0`, with vanishing of the lower terms
/// required on a full-dimensional ball.
pub fn relative_degree(
    lambda: &Expr,
    sys: &ControlSystem,
    x0: &[f64],
    rmax: usize,
    cfg: &Config,
) -> Result<RelDegReport> {
    cfg.validate()?;
    if rmax == 0 || rmax > sys.n() {
        return Err(Error::Precondition(format!(
            "rmax must lie in 1..={}, got {rmax}",
            sys.n()
        )));
    }
    if lambda.max_var().is_some_and(|v| v >= sys.n()) {
        return Err(Error::DimensionMismatch {
            expected: sys.n(),
            found: lambda.max_var().unwrap_or(0) + 1,
        });
    }
    let ball = sampling::ball_samples(x0, cfg.sampling.count, cfg.sampling.radius);
    let chain = lie_chain(lambda, sys.f(), rmax - 1);
    let mut lg_at_x0 = Vec::new();
    let mut lg_values = Vec::new();
    let mut lg_max_abs = Vec::new();
    let mut candidate = None;
    for (k, lk) in chain.iter().enumerate() {
        let lg = lie_derivative(lk, sys.g());
        let at = lg.eval(x0).map_err(|e| Error::eval("L_g L_f^k lambda", e))?;
        let vals: Vec<f64> = ball
            .iter()
            .map(|x| lg.eval(x).map_err(|e| Error::eval("L_g L_f^k lambda", e)))
            .collect::<Result<_>>()?;
        lg_max_abs.push(vals.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        lg_at_x0.push(at);
        lg_values.push(vals);
        if at.abs() > cfg.tol.nonzero {
            candidate = Some(k + 1);
            break;
        }
    }
    let (well_defined, message) = match candidate {
        None => (
            false,
            format!("L_g L_f^k lambda (x0) vanishes for every k < {rmax}"),
        ),
        Some(r) => match (0..r - 1).find(|&k| lg_max_abs[k] >= cfg.tol.zero) {
            Some(k) => (
                false,
                format!(
                    "L_g L_f^{k} lambda vanishes at x0 but reaches {:e} on the ball",
                    lg_max_abs[k]
                ),
            ),
            None => (true, format!("relative degree {r}")),
        },
    };
    Ok(RelDegReport {
        candidate,
        well_defined,
        lg_at_x0,
        lg_values,
        lg_max_abs,
        rmax,
        ball_samples: ball.len(),
        ball_radius: cfg.sampling.radius,
        zero_tol: cfg.tol.zero,
        nonzero_tol: cfg.tol.nonzero,
        message,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroDynamicsReport {
    pub r: usize,
    /// `max |L_f^k lambda|` over set samples and `k < r`.
    pub chain_residual: f64,
    pub chain_vanishes: bool,
    /// Rank of the Jacobian of `(lambda, ..., L_f^{r-1} lambda)` at `x0`.
    pub chain_rank: usize,
    pub zero_dynamics_dim: usize,
    pub nstar: usize,
    pub dims_match: bool,
    pub coincides: bool,
    pub samples: usize,
}

pub fn zero_dynamics_coincidence(
    lambda: &Expr,
    r: usize,
    sys: &ControlSystem,
    tset: &TargetSet,
    samples: &[Vec<f64>],
    cfg: &Config,
) -> Result<ZeroDynamicsReport> {
    if r == 0 {
        return Err(Error::Precondition("relative degree must be positive".into()));
    }
    let n = sys.n();
    let chain = lie_chain(lambda, sys.f(), r - 1);
    let mut residual: f64 = 0.0;
    for x in samples {
        for e in &chain {
            let v = e.eval(x).map_err(|err| Error::eval("zero-dynamics chain", err))?;
            residual = residual.max(v.abs());
        }
    }
    let rows: Vec<Vec<Expr>> = chain
        .iter()
        .map(|e| (0..n).map(|j| e.diff(j)).collect())
        .collect();
    let jac = jacobian_at(&rows, tset.x0())?;
    let chain_rank = crate::liegeom::subspace::matrix_rank(&jac.transpose(), cfg.tol.rank_rel);
    let zero_dynamics_dim = n - chain_rank;
    let chain_vanishes = residual < cfg.tol.zero;
    let dims_match = zero_dynamics_dim == tset.nstar() && n - r == tset.nstar();
    Ok(ZeroDynamicsReport {
        r,
        chain_residual: residual,
        chain_vanishes,
        chain_rank,
        zero_dynamics_dim,
        nstar: tset.nstar(),
        dims_match,
        coincides: chain_vanishes && dims_match,
        samples: samples.len(),
    })
}

/// Residual threshold for an observable verdict on a symbolic gradient.
pub const OBSERVABILITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Serialize)]
pub struct ObservabilityReport {
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    /// `sigma[s]`: least-squares coefficients of `dlambda` on `dh_1..dh_p`.
    pub sigma: Vec<Vec<f64>>,
    pub threshold: f64,
    pub observable: bool,
}

/// Least-squares fit `d lambda = sum_i sigma_i dh_i` from given gradients.
pub fn observability_from_gradients(
    sys: &ControlSystem,
    samples: &[Vec<f64>],
    gradients: &[DVector<f64>],
    threshold: f64,
) -> Result<ObservabilityReport> {
    assert_eq!(samples.len(), gradients.len());
    let mut residuals = Vec::with_capacity(samples.len());
    let mut sigma = Vec::with_capacity(samples.len());
    for (x, dl) in samples.iter().zip(gradients) {
        let dh: DMatrix<f64> = sys.dh_at(x)?;
        let a = dh.transpose();
        let svd = a.clone().svd(true, true);
        let s = svd
            .solve(dl, 1e-14)
            .map_err(|e| Error::Precondition(e.to_string()))?;
        let fit = &a * &s;
        let res = (dl - fit).norm() / dl.norm().max(1.0);
        residuals.push(res);
        sigma.push(s.iter().copied().collect());
    }
    let max_residual = residuals.iter().fold(0.0f64, |m, v| m.max(*v));
    Ok(ObservabilityReport {
        observable: max_residual < threshold,
        residuals,
        max_residual,
        sigma,
        threshold,
    })
}

pub fn observability_factorization(
    lambda: &Expr,
    sys: &ControlSystem,
    samples: &[Vec<f64>],
) -> Result<ObservabilityReport> {
    let n = sys.n();
    let grad: Vec<Expr> = (0..n).map(|j| lambda.diff(j)).collect();
    let gradients: Vec<DVector<f64>> = samples
        .iter()
        .map(|x| {
            grad.iter()
                .map(|e| e.eval(x).map_err(|err| Error::eval("gradient of lambda", err)))
                .collect::<Result<Vec<f64>>>()
                .map(DVector::from_vec)
        })
        .collect::<Result<_>>()?;
    observability_from_gradients(sys, samples, &gradients, OBSERVABILITY_TOL)
}

/// Full battery for a candidate output: relative degree on a ball,
/// zero-dynamics coincidence and observability on set samples.
#[derive(Debug, Clone, Serialize)]
pub struct OutputReport {
    pub lambda: String,
    pub reldeg: RelDegReport,
    pub zero_dynamics: Option<ZeroDynamicsReport>,
    pub observability: ObservabilityReport,
    /// Well-defined relative degree, coincidence and observability.
    pub valid: bool,
}

pub fn check_output(
    lambda: &Expr,
    sys: &ControlSystem,
    tset: &TargetSet,
    cfg: &Config,
) -> Result<OutputReport> {
    let reldeg = relative_degree(lambda, sys, tset.x0(), sys.n(), cfg)?;
    let samples = sample_on_set(tset, cfg.sampling.count, cfg.sampling.radius, cfg.tol.rank_rel)?;
    let zero_dynamics = match reldeg.r() {
        Some(r) => Some(zero_dynamics_coincidence(lambda, r, sys, tset, &samples, cfg)?),
        None => None,
    };
    let observability = observability_factorization(lambda, sys, &samples)?;
    let valid = reldeg.well_defined
        && zero_dynamics.as_ref().is_some_and(|z| z.coincides)
        && observability.observable;
    Ok(OutputReport {
        lambda: lambda.to_text(sys.vars()),
        reldeg,
        zero_dynamics,
        observability,
        valid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GtflpiVerdict {
    #[serde(rename = "sufficient-hold")]
    SufficientHold,
    #[serde(rename = "sufficient-fail")]
    SufficientFail,
}

#[derive(Debug, Clone, Serialize)]
pub struct GtflpiReport {
    pub grid: Vec<Vec<f64>>,
    pub cond_a: Vec<CondA>,
    pub cond_a_pass: bool,
    /// Pairwise brackets of `G_{r-2}` relative to its span.
    pub g_bracket_residual: f64,
    pub g_ranks: Vec<usize>,
    pub g_involutive: bool,
    pub g_constant_rank: bool,
    pub cond_b_pass: bool,
    pub closure: ClosureReport,
    pub cond_c_dims: Vec<CondBSample>,
    pub cond_c_pass: bool,
    /// Recorded as given; the topology of the set is not checked.
    pub cylinder_attested: bool,
    pub verdict: GtflpiVerdict,
    pub bracket_tol: f64,
    pub tol_rel: f64,
}

const INVOLUTIVITY_TOL: f64 = 1e-6;
const OFF_SET_SAMPLES: usize = 4;
const OFF_SET_RADIUS: f64 = 0.05;

/// Sufficient conditions for the global problem over a grid of set points.
pub fn check_gtflpi(
    sys: &ControlSystem,
    tset: &TargetSet,
    grid: &[Vec<f64>],
    cylinder_attested: bool,
    cfg: &Config,
) -> Result<GtflpiReport> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::Precondition("the grid must not be empty".into()));
    }
    let tol = cfg.tol.rank_rel;
    let r = transversal_dim(tset);

    let cond_a: Vec<CondA> = grid
        .iter()
        .map(|x| check_condition_a_at(sys, tset, x, tol))
        .collect::<Result<_>>()?;
    let cond_a_pass = cond_a.iter().all(|c| c.pass);

    // Involutivity and constant rank of G_{r-2} on and near the grid.
    let g = build_g(sys, r as isize - 2);
    let mut near: Vec<Vec<f64>> = Vec::new();
    for x in grid {
        near.extend(sampling::ball_samples(x, OFF_SET_SAMPLES + 1, OFF_SET_RADIUS));
    }
    let frames: Vec<Frame> = near
        .iter()
        .map(|x| g.frame_at(x, tol))
        .collect::<Result<_>>()?;
    let g_ranks: Vec<usize> = frames.iter().map(Frame::rank).collect();
    let g_constant_rank = g_ranks.windows(2).all(|w| w[0] == w[1]);
    let mut g_bracket_residual: f64 = 0.0;
    let gens = g.generators();
    for j in 0..gens.len() {
        for i in 0..j {
            let b = lie_bracket(&gens[i], &gens[j]);
            if b.is_symbolically_zero() {
                continue;
            }
            for (x, fr) in near.iter().zip(&frames) {
                let v = b.eval(x)?;
                g_bracket_residual = g_bracket_residual.max(fr.residual(&v) / v.norm().max(1.0));
            }
        }
    }
    let g_involutive = g_bracket_residual < INVOLUTIVITY_TOL;
    let cond_b_pass = g_involutive && g_constant_rank;

    let cond_b = check_condition_b(sys, tset, grid, tol)?;
    let cond_c_pass = cond_b.closure.regular && cond_b.pass;

    let all = cond_a_pass && cond_b_pass && cond_c_pass;
    Ok(GtflpiReport {
        grid: grid.to_vec(),
        cond_a,
        cond_a_pass,
        g_bracket_residual,
        g_ranks,
        g_involutive,
        g_constant_rank,
        cond_b_pass,
        closure: cond_b.closure,
        cond_c_dims: cond_b.samples,
        cond_c_pass,
        cylinder_attested,
        verdict: if all {
            GtflpiVerdict::SufficientHold
        } else {
            GtflpiVerdict::SufficientFail
        },
        bracket_tol: INVOLUTIVITY_TOL,
        tol_rel: tol,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BracketPair {
    pub i: usize,
    pub j: usize,
    pub bracket: Vec<String>,
    pub max_residual: f64,
    /// Sample with the largest bracket norm and the bracket there.
    pub witness_point: Vec<f64>,
    pub witness_value: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutingReport {
    pub pairs: Vec<BracketPair>,
    pub max_residual: f64,
    pub commuting: bool,
    pub samples: usize,
    pub tol: f64,
}

const COMMUTING_TOL: f64 = 1e-8;
const COMMUTING_SAMPLES: usize = 20;
const COMMUTING_RADIUS: f64 = 1.0;

/// Pairwise brackets of `g, ad_f g, ..., ad_f^{r-1} g` at points around `x0`.
pub fn check_commuting(sys: &ControlSystem, tset: &TargetSet) -> Result<CommutingReport> {
    let r = transversal_dim(tset);
    let ad = ad_iterates(sys.f(), sys.g(), r - 1);
    let points = sampling::ball_samples(tset.x0(), COMMUTING_SAMPLES, COMMUTING_RADIUS);
    let mut pairs = Vec::new();
    let mut max_residual: f64 = 0.0;
    for j in 0..ad.len() {
        for i in 0..j {
            let b = lie_bracket(&ad[i], &ad[j]);
            let mut worst = 0.0;
            let mut wp = points[0].clone();
            let mut wv = vec![0.0; sys.n()];
            for x in &points {
                let v = b.eval(x)?;
                let nrm = v.amax();
                if nrm > worst || (worst == 0.0 && x == &points[0]) {
                    worst = nrm;
                    wp = x.clone();
                    wv = v.iter().copied().collect();
                }
            }
            max_residual = max_residual.max(worst);
            pairs.push(BracketPair {
                i,
                j,
                bracket: b.to_text(sys.vars()),
                max_residual: worst,
                witness_point: wp,
                witness_value: wv,
            });
        }
    }
    Ok(CommutingReport {
        pairs,
        max_residual,
        commuting: max_residual < COMMUTING_TOL,
        samples: points.len(),
        tol: COMMUTING_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, VarTable};
    use crate::liegeom::VectorField;
    use crate::testing::{motivating, unicycle};

    fn fields(texts: &[&str], v: &VarTable) -> VectorField {
        VectorField::new(texts.iter().map(|t| parse(t, v).unwrap()).collect())
    }

    fn cond_a_fail_fixture() -> (ControlSystem, TargetSet) {
        let v = VarTable::numbered("x", 2).unwrap();
        let sys = ControlSystem::new(
            v.clone(),
            fields(&["0", "0"], &v),
            fields(&["1", "0"], &v),
            vec![parse("x2", &v).unwrap()],
        )
        .unwrap();
        let t = TargetSet::new(2, vec![parse("x2", &v).unwrap()], 1, vec![0.0, 0.0]).unwrap();
        (sys, t)
    }

    /// W adds a direction not in `T + G_0`: `x' = (0, 0, x2) + e2 u`,
    /// `h = x1`, set = x1-axis.
    fn cond_b_fail_fixture() -> (ControlSystem, TargetSet) {
        let v = VarTable::numbered("x", 3).unwrap();
        let sys = ControlSystem::new(
            v.clone(),
            fields(&["0", "0", "x2"], &v),
            fields(&["0", "1", "0"], &v),
            vec![parse("x1", &v).unwrap()],
        )
        .unwrap();
        let t = TargetSet::new(
            3,
            vec![parse("x2", &v).unwrap(), parse("x3", &v).unwrap()],
            1,
            vec![0.0; 3],
        )
        .unwrap();
        (sys, t)
    }

    #[test]
    fn motivating_is_solvable_with_expected_dims() {
        let m = motivating();
        let rep = check_ltflpi(&m.system, &m.target, &Config::default()).unwrap();
        let a = &rep.cond_a;
        assert_eq!((a.dim_tangent, a.dim_g, a.dim_sum), (2, 3, 5));
        assert!(rep.cond_b.samples.iter().all(|s| s.dim_lhs == 4 && s.dim_rhs == 4));
        assert!(rep.regular && rep.solvable);
        assert_eq!(rep.sample_count, 64);
    }

    #[test]
    fn unicycle_is_solvable() {
        let u = unicycle();
        let rep = check_ltflpi(&u.system, &u.target, &Config::default()).unwrap();
        assert!(rep.cond_a.pass);
        assert!(rep.cond_b.samples.iter().all(|s| s.dim_lhs == 4 && s.dim_rhs == 4));
        assert!(rep.solvable);
    }

    #[test]
    fn unicycle_frame_determinant_is_nonzero() {
        // Independent oracle: det[T basis | g | ad_f g] at q0 by direct LU.
        let u = unicycle();
        let q = u.target.x0().to_vec();
        let t = tangent_space(&u.target, &q, 1e-8).unwrap().orthonormal_basis();
        let ad = ad_iterates(u.system.f(), u.system.g(), 1);
        let mut m = DMatrix::zeros(5, 5);
        m.columns_mut(0, 3).copy_from(&t);
        m.set_column(3, &ad[0].eval(&q).unwrap());
        m.set_column(4, &ad[1].eval(&q).unwrap());
        assert!(m.determinant().abs() > 0.1);
    }

    #[test]
    fn degenerate_fixtures_fail() {
        let cfg = Config::default();
        let (s, t) = cond_a_fail_fixture();
        let rep = check_ltflpi(&s, &t, &cfg).unwrap();
        assert!(!rep.cond_a.pass && !rep.solvable);
        assert!(!rep.cond_a.direct_sum);

        let (s, t) = cond_b_fail_fixture();
        let rep = check_ltflpi(&s, &t, &cfg).unwrap();
        assert!(rep.cond_a.pass);
        // Brute-force oracle: T = e1, G_0 = e2, W = span{e2, e3}.
        assert!(rep.cond_b.samples.iter().all(|s| s.dim_lhs == 2 && s.dim_rhs == 3));
        assert!(!rep.cond_b.pass && !rep.solvable);
    }

    #[test]
    fn condition_a_is_feedback_invariant() {
        let m = motivating();
        let v = m.system.vars().clone();
        let base = check_condition_a(&m.system, &m.target, 1e-8).unwrap();
        for alpha in ["x1 + x2^2", "sin(x3) - 2*x4", "exp(x5) * x2"] {
            let fb = m.system.with_feedback(&parse(alpha, &v).unwrap());
            let a = check_condition_a(&fb, &m.target, 1e-8).unwrap();
            assert_eq!(
                (a.dim_tangent, a.dim_g, a.dim_sum, a.pass),
                (base.dim_tangent, base.dim_g, base.dim_sum, base.pass)
            );
        }
    }

    #[test]
    fn looser_rank_tolerance_keeps_verdicts() {
        for file in [motivating(), unicycle()] {
            let mut cfg = Config::default();
            cfg.tol.rank_rel *= 10.0;
            assert!(check_ltflpi(&file.system, &file.target, &cfg).unwrap().solvable);
        }
    }

    #[test]
    fn relative_degrees_on_motivating() {
        let m = motivating();
        let cfg = Config::default();
        let v = m.system.vars().clone();
        let lam = parse("x5*exp(-x4)", &v).unwrap();
        let rep = relative_degree(&lam, &m.system, &[0.0; 5], 5, &cfg).unwrap();
        assert_eq!(rep.r(), Some(3));
        assert!((rep.lg_at_x0[2] - 1.0).abs() < 1e-15);

        for bad in ["x1", "x5"] {
            let rep = relative_degree(&parse(bad, &v).unwrap(), &m.system, &[0.0; 5], 5, &cfg)
                .unwrap();
            assert!(!rep.well_defined, "{bad}: {}", rep.message);
            assert_eq!(rep.r(), None);
        }

        let x4 = parse("x4", &v).unwrap();
        let rep = relative_degree(&x4, &m.system, &[0.0; 5], 5, &cfg).unwrap();
        assert_eq!(rep.r(), Some(1));
        let samples = sample_on_set(&m.target, 16, 0.05, 1e-8).unwrap();
        let z = zero_dynamics_coincidence(&x4, 1, &m.system, &m.target, &samples, &cfg).unwrap();
        assert!(z.chain_vanishes);
        assert_eq!(z.zero_dynamics_dim, 4);
        assert!(!z.coincides);
    }

    #[test]
    fn unicycle_relative_degree_two() {
        let u = unicycle();
        let lam = parse("x1^2 + x2^2 - 1", u.system.vars()).unwrap();
        let rep = relative_degree(&lam, &u.system, u.target.x0(), 5, &Config::default()).unwrap();
        assert_eq!(rep.r(), Some(2));
        let out = check_output(&lam, &u.system, &u.target, &Config::default()).unwrap();
        assert!(out.valid);
    }

    #[test]
    fn zero_dynamics_of_valid_output() {
        let m = motivating();
        let lam = m.lambda.clone().unwrap();
        let samples = sample_on_set(&m.target, 32, 0.3, 1e-8).unwrap();
        let z = zero_dynamics_coincidence(&lam, 3, &m.system, &m.target, &samples, &Config::default())
            .unwrap();
        assert!(z.chain_residual < 1e-15 && z.coincides);
        assert_eq!(z.chain_rank, 3);
    }

    #[test]
    fn observability() {
        let m = motivating();
        let v = m.system.vars().clone();
        let samples = sample_on_set(&m.target, 8, 0.05, 1e-8).unwrap();
        let ball = sampling::ball_samples(&[0.0; 5], 8, 0.05);
        let lam = m.lambda.clone().unwrap();
        let rep = observability_factorization(&lam, &m.system, &ball).unwrap();
        assert!(rep.max_residual < 1e-14 && rep.observable);
        for (x, s) in ball.iter().zip(&rep.sigma) {
            let e = (-x[3]).exp();
            assert!((s[0] + x[4] * e).abs() < 1e-14 && (s[1] - e).abs() < 1e-14);
        }
        let rep = observability_factorization(&parse("x1", &v).unwrap(), &m.system, &samples).unwrap();
        assert!((rep.max_residual - 1.0).abs() < 1e-14 && !rep.observable);
        let rep = observability_factorization(&parse("x4", &v).unwrap(), &m.system, &samples).unwrap();
        assert!(rep.max_residual < 1e-15);
        assert!((rep.sigma[0][0] - 1.0).abs() < 1e-14 && rep.sigma[0][1].abs() < 1e-14);
    }

    #[test]
    fn gtflpi_on_fixtures() {
        let cfg = Config::default();
        let u = unicycle();
        assert_eq!(u.grid.len(), 24);
        let rep = check_gtflpi(&u.system, &u.target, &u.grid, true, &cfg).unwrap();
        assert!(rep.cond_a_pass && rep.cond_b_pass && rep.cond_c_pass);
        assert_eq!(rep.verdict, GtflpiVerdict::SufficientHold);

        let m = motivating();
        let grid = sample_on_set(&m.target, 24, 0.5, 1e-8).unwrap();
        let rep = check_gtflpi(&m.system, &m.target, &grid, true, &cfg).unwrap();
        assert_eq!(rep.verdict, GtflpiVerdict::SufficientHold);
    }

    #[test]
    fn gtflpi_detects_non_involutive_g() {
        // G_1 = span{e1, (0, 1, x1, 0)} with bracket (0, 0, 1, 0).
        let v = VarTable::numbered("x", 4).unwrap();
        let sys = ControlSystem::new(
            v.clone(),
            fields(&["0", "x1", "x1^2/2", "x3"], &v),
            fields(&["1", "0", "0", "0"], &v),
            vec![parse("x4", &v).unwrap()],
        )
        .unwrap();
        let t = TargetSet::new(
            4,
            vec![parse("x1", &v).unwrap(), parse("x2", &v).unwrap(), parse("x3", &v).unwrap()],
            1,
            vec![0.0; 4],
        )
        .unwrap();
        let grid = sample_on_set(&t, 6, 0.5, 1e-8).unwrap();
        let rep = check_gtflpi(&sys, &t, &grid, false, &Config::default()).unwrap();
        assert!(!rep.g_involutive && !rep.cond_b_pass);
        assert_eq!(rep.verdict, GtflpiVerdict::SufficientFail);
    }

    #[test]
    fn commuting_brackets() {
        let u = unicycle();
        let rep = check_commuting(&u.system, &u.target).unwrap();
        assert!(!rep.commuting);
        let p = &rep.pairs[0];
        let x3 = p.witness_point[2];
        let expected = [x3.cos(), x3.sin(), 0.0, 0.0, 0.0];
        for (a, b) in p.witness_value.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }

        // Linear chain: constant ad-iterates commute.
        let t3 = VarTable::numbered("x", 3).unwrap();
        let lin3 = ControlSystem::new(
            t3.clone(),
            fields(&["x2", "x3", "0"], &t3),
            fields(&["0", "0", "1"], &t3),
            vec![parse("x1", &t3).unwrap()],
        )
        .unwrap();
        let set = TargetSet::new(
            3,
            vec![parse("x1", &t3).unwrap(), parse("x2", &t3).unwrap()],
            1,
            vec![0.0; 3],
        )
        .unwrap();
        let rep = check_commuting(&lin3, &set).unwrap();
        assert!(rep.commuting && rep.max_residual == 0.0);
    }
}
