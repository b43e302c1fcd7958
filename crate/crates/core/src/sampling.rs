//! Deterministic low-discrepancy sample points.

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

pub fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

/// Halton point `index` in `[0, 1)^dim`.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    primes(dim)
        .into_iter()
        .map(|b| radical_inverse(index, b))
        .collect()
}

/// `count` points in the cube `[-r, r]^dim` scaled by `1/sqrt(dim)`, so they
/// lie in the Euclidean ball of radius `r`. Point 0 is the origin.
pub fn ball_offsets(dim: usize, count: usize, radius: f64) -> Vec<Vec<f64>> {
    if dim == 0 {
        return vec![Vec::new(); count];
    }
    let scale = radius / (dim as f64).sqrt();
    (0..count)
        .map(|k| {
            if k == 0 {
                return vec![0.0; dim];
            }
            halton(k as u64, dim)
                .into_iter()
                .map(|u| (2.0 * u - 1.0) * scale)
                .collect()
        })
        .collect()
}

/// Full-dimensional samples around `center`.
pub fn ball_samples(center: &[f64], count: usize, radius: f64) -> Vec<Vec<f64>> {
    ball_offsets(center.len(), count, radius)
        .into_iter()
        .map(|o| center.iter().zip(&o).map(|(c, d)| c + d).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_values() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - 7.0 / 9.0).abs() < 1e-15);
        assert_eq!(primes(6), vec![2, 3, 5, 7, 11, 13]);
    }

    #[test]
    fn offsets_stay_in_ball() {
        for o in ball_offsets(5, 64, 0.05) {
            let r: f64 = o.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r <= 0.05 + 1e-15);
        }
        assert_eq!(ball_offsets(3, 2, 1.0)[0], vec![0.0; 3]);
    }
}
