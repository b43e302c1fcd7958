//! Pointwise subspaces of `R^n` and the operations on them.
//!
//! The dual space is identified with `R^n` through the Euclidean pairing,
//! so annihilators are orthogonal complements. All rank decisions use
//! singular values with a relative cutoff.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Error;

/// Singular values below this are treated as zero regardless of the
/// relative cutoff.
pub const ZERO_FLOOR: f64 = 1e-12;

pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// An ordered list of vectors at a base point.
#[derive(Debug, Clone, Serialize)]
pub struct Frame {
    point: Vec<f64>,
    #[serde(serialize_with = "serialize_columns")]
    vectors: DMatrix<f64>,
    rank: usize,
    tol_rel: f64,
    singular_values: Vec<f64>,
}

fn serialize_columns<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.ncols()))?;
    for c in m.column_iter() {
        seq.serialize_element(&c.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}

/// Full SVD of the column space of `a` (n × m): left singular vectors
/// (n × n) and the descending singular values (length n, zero padded).
fn column_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = a.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), Vec::new());
    }
    let padded = if a.ncols() < n {
        let mut p = DMatrix::zeros(n, n);
        p.columns_mut(0, a.ncols()).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.resize(n, 0.0);
    (u.columns(0, n).into_owned(), sv)
}

pub fn numeric_rank(singular_values: &[f64], tol_rel: f64) -> usize {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    if smax <= ZERO_FLOOR {
        return 0;
    }
    singular_values
        .iter()
        .filter(|&&s| s > tol_rel * smax && s > ZERO_FLOOR)
        .count()
}

/// Rank of the column space of `a`.
pub fn matrix_rank(a: &DMatrix<f64>, tol_rel: f64) -> usize {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    numeric_rank(sv.as_slice(), tol_rel)
}

impl Frame {
    pub fn from_matrix(point: Vec<f64>, vectors: DMatrix<f64>, tol_rel: f64) -> Self {
        assert_eq!(point.len(), vectors.nrows(), "frame vectors must live in R^n");
        let (rank, singular_values) = if vectors.ncols() == 0 {
            (0, Vec::new())
        } else {
            let sv: Vec<f64> = vectors
                .clone()
                .svd(false, false)
                .singular_values
                .iter()
                .copied()
                .collect();
            (numeric_rank(&sv, tol_rel), sv)
        };
        Self {
            point,
            vectors,
            rank,
            tol_rel,
            singular_values,
        }
    }

    pub fn new(point: Vec<f64>, vectors: &[Vec<f64>], tol_rel: f64) -> Self {
        let n = point.len();
        let mut m = DMatrix::zeros(n, vectors.len());
        for (j, v) in vectors.iter().enumerate() {
            assert_eq!(v.len(), n, "frame vectors must live in R^n");
            for i in 0..n {
                m[(i, j)] = v[i];
            }
        }
        Self::from_matrix(point, m, tol_rel)
    }

    pub fn empty(point: Vec<f64>, tol_rel: f64) -> Self {
        let n = point.len();
        Self::from_matrix(point, DMatrix::zeros(n, 0), tol_rel)
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }

    pub fn tol(&self) -> f64 {
        self.tol_rel
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vector(&self, j: usize) -> DVector<f64> {
        self.vectors.column(j).into_owned()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Orthonormal basis (n × rank) of the span.
    pub fn orthonormal_basis(&self) -> DMatrix<f64> {
        let n = self.dim();
        if self.rank == 0 {
            return DMatrix::zeros(n, 0);
        }
        let (u, _) = column_svd(&self.vectors);
        u.columns(0, self.rank).into_owned()
    }

    /// Orthogonal projector onto the span.
    pub fn projector(&self) -> DMatrix<f64> {
        let q = self.orthonormal_basis();
        &q * q.transpose()
    }

    /// The same span with an orthonormal basis as its vectors.
    pub fn orthonormalized(&self) -> Frame {
        Frame::from_matrix(self.point.clone(), self.orthonormal_basis(), self.tol_rel)
    }

    /// Distance of `v` from the span, relative to `max(|v|, 1)`.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        let q = self.orthonormal_basis();
        let r = v - &q * (q.transpose() * v);
        r.norm() / v.norm().max(1.0)
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.residual(v) <= tol
    }

    fn check(&self, other: &Frame) -> Result<(), Error> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }

    /// Span of both frames.
    pub fn sum(&self, other: &Frame) -> Result<Frame, Error> {
        self.check(other)?;
        let n = self.dim();
        let mut m = DMatrix::zeros(n, self.len() + other.len());
        m.columns_mut(0, self.len()).copy_from(&self.vectors);
        m.columns_mut(self.len(), other.len())
            .copy_from(&other.vectors);
        let joint = Frame::from_matrix(self.point.clone(), m, self.tol_rel);
        Ok(joint.orthonormalized())
    }

    /// Orthogonal complement of the span.
    pub fn annihilator(&self) -> Frame {
        let n = self.dim();
        let (u, _) = if self.is_empty() {
            (DMatrix::identity(n, n), Vec::new())
        } else {
            column_svd(&self.vectors)
        };
        let k = n - self.rank;
        Frame::from_matrix(
            self.point.clone(),
            u.columns(self.rank, k).into_owned(),
            self.tol_rel,
        )
    }

    /// `ann(ann(F1) + ann(F2))`.
    pub fn intersect(&self, other: &Frame) -> Result<Frame, Error> {
        self.check(other)?;
        Ok(self.annihilator().sum(&other.annihilator())?.annihilator())
    }

    pub fn is_direct_sum(&self, other: &Frame) -> Result<bool, Error> {
        Ok(self.sum(other)?.rank() == self.rank + other.rank)
    }

    /// Frobenius distance between the orthogonal projectors of the spans.
    pub fn projector_distance(&self, other: &Frame) -> Result<f64, Error> {
        self.check(other)?;
        Ok((self.projector() - other.projector()).norm())
    }

    /// Same span with a basis chosen by greedy pivoting over the coordinate
    /// axes, so that axis-aligned subspaces come out as axis vectors.
    pub fn canonical(&self) -> Frame {
        Frame::from_matrix(
            self.point.clone(),
            canonical_basis(&self.orthonormal_basis()),
            self.tol_rel,
        )
    }
}

/// Greedy Gram-Schmidt over the projected coordinate axes: at each step the
/// axis with the largest remaining component wins (lowest index on ties).
pub fn canonical_basis(q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = q.nrows();
    let k = q.ncols();
    let proj = q * q.transpose();
    let mut chosen: Vec<DVector<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(f64, DVector<f64>)> = None;
        for i in 0..n {
            let mut v = proj.column(i).into_owned();
            for c in &chosen {
                let d = c.dot(&v);
                v -= c * d;
            }
            let norm = v.norm();
            if best.as_ref().is_none_or(|(b, _)| norm > b + 1e-12) {
                best = Some((norm, v));
            }
        }
        let (norm, v) = best.expect("n > 0");
        chosen.push(v / norm);
    }
    let mut out = DMatrix::zeros(n, k);
    for (j, c) in chosen.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

/// Orthonormal basis of the null space of `a` (rows are covectors), with the
/// rank fixed to `rank`.
pub fn null_space_with_rank(a: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let n = a.ncols();
    let at = a.transpose();
    let (u, _) = column_svd(&at);
    u.columns(rank, n - rank).into_owned()
}

/// Projector onto the null space of `a` with the rank of `a` fixed.
pub fn null_projector_with_rank(a: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let z = null_space_with_rank(a, rank);
    &z * z.transpose()
}

/// Left singular vectors of `a` for its `k` largest singular values.
pub fn leading_basis(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (u, _) = column_svd(a);
    u.columns(0, k).into_owned()
}
