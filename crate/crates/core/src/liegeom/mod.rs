//! Lie calculus on symbolic vector fields and pointwise distributions.

mod closure;
pub mod subspace;

pub use closure::{involutive_closure, ClosureReport};
pub use subspace::Frame;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, VarTable};
use crate::sysmodel::ControlSystem;

/// A vector field on `R^n` given by `n` component expressions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorField {
    components: Vec<Expr>,
}

impl VectorField {
    pub fn new(components: Vec<Expr>) -> Self {
        Self { components }
    }

    pub fn zero(n: usize) -> Self {
        Self::new(vec![Expr::zero(); n])
    }

    pub fn constant(v: &[f64]) -> Self {
        Self::new(v.iter().map(|&c| Expr::constant(c)).collect())
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Expr {
        &self.components[i]
    }

    pub fn is_symbolically_zero(&self) -> bool {
        self.components.iter().all(Expr::is_zero)
    }

    pub fn is_constant(&self) -> bool {
        self.components.iter().all(Expr::is_constant)
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(x, out.as_mut_slice())?;
        Ok(out)
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x).map_err(|e| Error::eval("vector field", e))?;
        }
        Ok(())
    }

    /// Symbolic Jacobian; `jac[i][j] = d v_i / d x_j`.
    pub fn jacobian(&self) -> Vec<Vec<Expr>> {
        let n = self.dim();
        self.components
            .iter()
            .map(|c| (0..n).map(|j| c.diff(j)).collect())
            .collect()
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField::new(
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| Expr::add(a.clone(), b.clone()))
                .collect(),
        )
    }

    /// Pointwise product with a scalar function.
    pub fn scale(&self, s: &Expr) -> VectorField {
        VectorField::new(
            self.components
                .iter()
                .map(|c| Expr::mul(s.clone(), c.clone()))
                .collect(),
        )
    }

    pub fn neg(&self) -> VectorField {
        VectorField::new(self.components.iter().cloned().map(Expr::neg).collect())
    }

    pub fn to_text(&self, vars: &VarTable) -> Vec<String> {
        self.components.iter().map(|c| c.to_text(vars)).collect()
    }
}

/// `L_v lambda = sum_i d(lambda)/dx_i * v_i`.
pub fn lie_derivative(lambda: &Expr, v: &VectorField) -> Expr {
    let mut acc = Expr::zero();
    for (i, vi) in v.components().iter().enumerate() {
        if vi.is_zero() {
            continue;
        }
        acc = Expr::add(acc, Expr::mul(lambda.diff(i), vi.clone()));
    }
    acc.simplify()
}

/// `[a, b] = Db a - Da b`.
pub fn lie_bracket(a: &VectorField, b: &VectorField) -> VectorField {
    assert_eq!(a.dim(), b.dim(), "bracket of fields of different dimension");
    let comps = (0..a.dim())
        .map(|i| {
            let lhs = lie_derivative(b.component(i), a);
            let rhs = lie_derivative(a.component(i), b);
            Expr::sub(lhs, rhs).simplify()
        })
        .collect();
    VectorField::new(comps)
}

/// `ad_f^0 g, ..., ad_f^k g`.
pub fn ad_iterates(f: &VectorField, g: &VectorField, k: usize) -> Vec<VectorField> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(g.clone());
    for _ in 0..k {
        let next = lie_bracket(f, out.last().expect("nonempty"));
        out.push(next);
    }
    out
}

/// Numeric Jacobian rows of scalar expressions at `x` (rows = expressions).
pub fn jacobian_at(rows: &[Vec<Expr>], x: &[f64]) -> Result<DMatrix<f64>> {
    let m = rows.len();
    let n = x.len();
    let mut out = DMatrix::zeros(m, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            out[(i, j)] = e.eval(x).map_err(|err| Error::eval("Jacobian", err))?;
        }
    }
    Ok(out)
}

pub fn gradient_exprs(e: &Expr, n: usize) -> Vec<Expr> {
    (0..n).map(|j| e.diff(j)).collect()
}

/// How the output kernel entered a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// `Dh` is constant; generators are an orthonormal constant basis.
    Constant,
    /// `Dh` has an identity block; generators solved symbolically.
    Symbolic,
    /// No symbolic basis; the kernel is recomputed numerically at each point
    /// and takes no part in bracket computations.
    Pointwise,
}

/// A distribution spanned by symbolic generators, optionally augmented by
/// the pointwise kernel of an output Jacobian.
#[derive(Debug, Clone)]
pub struct Distribution {
    n: usize,
    generators: Vec<VectorField>,
    labels: Vec<String>,
    pointwise_kernel: Option<Vec<Vec<Expr>>>,
}

impl Distribution {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            generators: Vec::new(),
            labels: Vec::new(),
            pointwise_kernel: None,
        }
    }

    pub fn from_fields(n: usize, fields: Vec<VectorField>, labels: Vec<String>) -> Self {
        assert_eq!(fields.len(), labels.len());
        assert!(fields.iter().all(|f| f.dim() == n));
        Self {
            n,
            generators: fields,
            labels,
            pointwise_kernel: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn generators(&self) -> &[VectorField] {
        &self.generators
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn has_pointwise_part(&self) -> bool {
        self.pointwise_kernel.is_some()
    }

    pub fn push(&mut self, field: VectorField, label: impl Into<String>) {
        assert_eq!(field.dim(), self.n);
        self.generators.push(field);
        self.labels.push(label.into());
    }

    /// Sum of two distributions.
    pub fn plus(&self, other: &Distribution) -> Distribution {
        let mut out = self.clone();
        out.generators.extend(other.generators.iter().cloned());
        out.labels.extend(other.labels.iter().cloned());
        if out.pointwise_kernel.is_none() {
            out.pointwise_kernel = other.pointwise_kernel.clone();
        }
        out
    }

    /// Evaluates every generator at `x` (plus the pointwise kernel).
    pub fn frame_at(&self, x: &[f64], tol_rel: f64) -> Result<Frame> {
        let mut cols: Vec<DVector<f64>> = self
            .generators
            .iter()
            .map(|g| g.eval(x))
            .collect::<Result<_>>()?;
        if let Some(rows) = &self.pointwise_kernel {
            let dh = jacobian_at(rows, x)?;
            let rank = subspace::matrix_rank(&dh.transpose(), tol_rel);
            let z = subspace::null_space_with_rank(&dh, rank);
            cols.extend(z.column_iter().map(|c| c.into_owned()));
        }
        let mut m = DMatrix::zeros(self.n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            m.set_column(j, c);
        }
        Ok(Frame::from_matrix(x.to_vec(), m, tol_rel))
    }
}

/// `G_i = span{ad_f^j g : 0 <= j <= i}`; `i = -1` gives the empty distribution.
pub fn build_g(sys: &ControlSystem, i: isize) -> Distribution {
    let n = sys.n();
    if i < 0 {
        return Distribution::new(n);
    }
    let fields = ad_iterates(sys.f(), sys.g(), i as usize);
    let labels = (0..fields.len()).map(ad_label).collect();
    Distribution::from_fields(n, fields, labels)
}

pub fn ad_label(k: usize) -> String {
    match k {
        0 => "g".to_string(),
        1 => "ad_f g".to_string(),
        k => format!("ad_f^{k} g"),
    }
}

/// Orthonormal frame of `W(x) = ker Dh_x`.
pub fn output_kernel_w(sys: &ControlSystem, x: &[f64], tol_rel: f64) -> Result<Frame> {
    let dh = sys.dh_at(x)?;
    let p = sys.p();
    let rank = subspace::matrix_rank(&dh.transpose(), tol_rel);
    if rank < p {
        return Err(Error::RankDrop {
            what: "output Jacobian Dh".into(),
            expected: p,
            found: rank,
        });
    }
    let z = subspace::null_space_with_rank(&dh, p);
    Ok(Frame::from_matrix(x.to_vec(), z, tol_rel).canonical())
}

/// Generators of `W = ann(span{dh_1..dh_p})` as a distribution.
pub fn w_distribution(sys: &ControlSystem, tol_rel: f64) -> (Distribution, KernelMode) {
    let n = sys.n();
    let p = sys.p();
    let rows = sys.dh_exprs();
    if p == n {
        return (Distribution::new(n), KernelMode::Constant);
    }
    if rows.iter().flatten().all(Expr::is_constant) {
        let dh = jacobian_at(rows, &vec![0.0; n]).expect("constant entries evaluate");
        let rank = subspace::matrix_rank(&dh.transpose(), tol_rel);
        let z = subspace::null_space_with_rank(&dh, rank);
        let z = subspace::canonical_basis(&z);
        let mut d = Distribution::new(n);
        for (k, c) in z.column_iter().enumerate() {
            let v: Vec<f64> = c.iter().copied().collect();
            d.push(VectorField::constant(&v), format!("w{}", k + 1));
        }
        return (d, KernelMode::Constant);
    }
    if let Some(pivots) = identity_block(rows) {
        let mut d = Distribution::new(n);
        let mut idx = 0;
        for c in 0..n {
            if pivots.contains(&c) {
                continue;
            }
            let mut comps = vec![Expr::zero(); n];
            comps[c] = Expr::one();
            for (k, &pc) in pivots.iter().enumerate() {
                comps[pc] = Expr::neg(rows[k][c].clone());
            }
            idx += 1;
            d.push(VectorField::new(comps), format!("w{idx}"));
        }
        return (d, KernelMode::Symbolic);
    }
    let mut d = Distribution::new(n);
    d.pointwise_kernel = Some(rows.to_vec());
    (d, KernelMode::Pointwise)
}

/// Columns `pivots[k]` with `Dh[:, pivots[k]] = e_k` symbolically.
fn identity_block(rows: &[Vec<Expr>]) -> Option<Vec<usize>> {
    let p = rows.len();
    let n = rows.first()?.len();
    let mut pivots = Vec::with_capacity(p);
    for k in 0..p {
        let col = (0..n).find(|&c| {
            !pivots.contains(&c)
                && (0..p).all(|r| {
                    let want = if r == k { 1.0 } else { 0.0 };
                    rows[r][c].as_constant() == Some(want)
                })
        })?;
        pivots.push(col);
    }
    Some(pivots)
}
