use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::liegeom::VectorField;

pub use crate::fixtures::{motivating, unicycle, MOTIVATING as MOTIVATING_TEXT};

/// Uniform points in `x0 + [-radius, radius]^n` around the origin.
pub fn cube_points(n: usize, count: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n).map(|_| rng.gen_range(-radius..=radius)).collect())
        .collect()
}

fn fd_jacobian(v: &VectorField, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(v.dim(), n);
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let d = (v.eval(&xp).unwrap() - v.eval(&xm).unwrap()) / (2.0 * h);
        jac.set_column(j, &d);
    }
    jac
}

/// `[a, b](x) = Db a - Da b` with central-difference Jacobians.
pub fn fd_bracket(a: &VectorField, b: &VectorField, x: &[f64], h: f64) -> DVector<f64> {
    let av = a.eval(x).unwrap();
    let bv = b.eval(x).unwrap();
    fd_jacobian(b, x, h) * av - fd_jacobian(a, x, h) * bv
}
