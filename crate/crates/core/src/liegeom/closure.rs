use nalgebra::DVector;
use serde::Serialize;

use super::{lie_bracket, Distribution, Frame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct ClosureReport {
    pub samples: Vec<Vec<f64>>,
    pub sweeps: usize,
    pub generator_labels: Vec<String>,
    /// `rank_history[s][k]`: rank at sample `s` after sweep `k` (entry 0 is the input).
    pub rank_history: Vec<Vec<usize>>,
    pub final_ranks: Vec<usize>,
    /// Rank is the same at every sample.
    pub regular: bool,
    pub converged: bool,
    /// Largest relative distance of a pairwise bracket from the span,
    /// over all samples.
    pub max_bracket_residual: f64,
    /// The distribution carries a numerically evaluated part that was not
    /// bracketed.
    pub pointwise_fallback: bool,
    pub tol_rel: f64,
}

fn frames(d: &Distribution, region: &[Vec<f64>], tol: f64) -> Result<Vec<Frame>> {
    region.iter().map(|x| d.frame_at(x, tol)).collect()
}

fn extended_rank(frame: &Frame, v: &DVector<f64>) -> usize {
    let m = frame.vectors();
    let mut ext = nalgebra::DMatrix::zeros(m.nrows(), m.ncols() + 1);
    ext.columns_mut(0, m.ncols()).copy_from(m);
    ext.set_column(m.ncols(), v);
    super::subspace::matrix_rank(&ext, frame.tol())
}

/// Adjoins pairwise brackets until the pointwise rank stops growing on
/// `region` (or reaches `n` everywhere). Generators are processed in
/// insertion order; a bracket is kept only when it raises the rank at some
/// sample.
pub fn involutive_closure(
    d: &Distribution,
    region: &[Vec<f64>],
    tol_rel: f64,
) -> Result<(Distribution, ClosureReport)> {
    if region.is_empty() {
        return Err(Error::Precondition(
            "involutive closure needs at least one sample".into(),
        ));
    }
    let n = d.dim();
    let cap = 2 * (n + 1);
    let mut out = d.clone();
    let mut current = frames(&out, region, tol_rel)?;
    let mut history: Vec<Vec<usize>> = current.iter().map(|f| vec![f.rank()]).collect();
    let mut processed = 0usize;
    let mut sweeps = 0usize;
    let mut converged = false;

    while sweeps < cap {
        if current.iter().all(|f| f.rank() == n) {
            converged = true;
            break;
        }
        sweeps += 1;
        let m = out.generators().len();
        let mut added = false;
        for j in 0..m {
            for i in 0..j {
                if j < processed {
                    continue;
                }
                let b = lie_bracket(&out.generators()[i], &out.generators()[j]);
                if b.is_symbolically_zero() {
                    continue;
                }
                let values: Vec<DVector<f64>> =
                    region.iter().map(|x| b.eval(x)).collect::<Result<_>>()?;
                let raises = current
                    .iter()
                    .zip(&values)
                    .any(|(f, v)| extended_rank(f, v) > f.rank());
                if raises {
                    let label = format!("[{}, {}]", out.labels()[i], out.labels()[j]);
                    out.push(b, label);
                    current = frames(&out, region, tol_rel)?;
                    added = true;
                }
            }
        }
        processed = m;
        for (h, f) in history.iter_mut().zip(&current) {
            h.push(f.rank());
        }
        if !added {
            converged = true;
            break;
        }
    }
    if !converged && current.iter().all(|f| f.rank() == n) {
        converged = true;
    }

    let max_bracket_residual = bracket_residual(&out, region, &current)?;
    let final_ranks: Vec<usize> = current.iter().map(Frame::rank).collect();
    let regular = final_ranks.windows(2).all(|w| w[0] == w[1]);
    let report = ClosureReport {
        samples: region.to_vec(),
        sweeps,
        generator_labels: out.labels().to_vec(),
        rank_history: history,
        final_ranks,
        regular,
        converged,
        max_bracket_residual,
        pointwise_fallback: out.has_pointwise_part(),
        tol_rel,
    };
    Ok((out, report))
}

/// Max over samples and generator pairs of the relative distance of the
/// bracket from the span.
pub(crate) fn bracket_residual(
    d: &Distribution,
    region: &[Vec<f64>],
    frames_at: &[Frame],
) -> Result<f64> {
    let gens = d.generators();
    let bases: Vec<_> = frames_at.iter().map(Frame::orthonormal_basis).collect();
    let mut worst: f64 = 0.0;
    for j in 0..gens.len() {
        for i in 0..j {
            let b = lie_bracket(&gens[i], &gens[j]);
            if b.is_symbolically_zero() {
                continue;
            }
            for (x, q) in region.iter().zip(&bases) {
                let v = b.eval(x)?;
                let r = &v - q * (q.transpose() * &v);
                worst = worst.max(r.norm() / v.norm().max(1.0));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, VarTable};
    use crate::liegeom::{build_g, w_distribution, VectorField};
    use crate::testing::{cube_points, motivating, unicycle};

    #[test]
    fn motivating_g1_plus_w_is_involutive() {
        let sys = motivating().system;
        let (w, _) = w_distribution(&sys, 1e-8);
        let d = build_g(&sys, 1).plus(&w);
        let region = cube_points(5, 16, 0.05, 3);
        let (closed, report) = involutive_closure(&d, &region, 1e-8).unwrap();
        assert_eq!(closed.generators().len(), d.generators().len());
        assert!(report.final_ranks.iter().all(|&r| r == 4));
        assert!(report.regular && report.converged);
        assert!(report.max_bracket_residual < 1e-6);
    }

    #[test]
    fn unicycle_constant_distribution() {
        let sys = unicycle().system;
        let (w, _) = w_distribution(&sys, 1e-8);
        let d = build_g(&sys, 0).plus(&w);
        let region = cube_points(5, 8, 0.2, 6);
        let (_, report) = involutive_closure(&d, &region, 1e-8).unwrap();
        assert!(report.final_ranks.iter().all(|&r| r == 3));
    }

    #[test]
    fn singleton_is_closed() {
        let sys = motivating().system;
        let d = build_g(&sys, 0);
        let (closed, report) = involutive_closure(&d, &cube_points(5, 4, 0.1, 1), 1e-8).unwrap();
        assert_eq!(closed.generators().len(), 1);
        assert_eq!(report.sweeps, 1);
    }

    #[test]
    fn heisenberg_pair_gains_a_direction() {
        let v = VarTable::numbered("x", 3).unwrap();
        let a = VectorField::new(vec![Expr1::one(), Expr1::zero(), Expr1::zero()]);
        let b = VectorField::new(vec![
            Expr1::zero(),
            Expr1::one(),
            parse("x1", &v).unwrap(),
        ]);
        let d = Distribution::from_fields(3, vec![a, b], vec!["a".into(), "b".into()]);
        let region = cube_points(3, 6, 1.0, 8);
        let (closed, report) = involutive_closure(&d, &region, 1e-8).unwrap();
        assert_eq!(closed.generators().len(), 3);
        assert!(report.final_ranks.iter().all(|&r| r == 3));
        assert_eq!(report.generator_labels[2], "[a, b]");
    }

    use crate::expr::Expr as Expr1;

    #[test]
    fn empty_region_rejected() {
        let sys = motivating().system;
        assert!(involutive_closure(&build_g(&sys, 1), &[], 1e-8).is_err());
    }
}
