use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds shared by all rank and vanishing decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Singular values above `rank_rel * sigma_max` count towards the rank.
    pub rank_rel: f64,
    /// A quantity "vanishes" below this.
    pub zero: f64,
    /// A quantity is "nonzero" above this.
    pub nonzero: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank_rel: 1e-8,
            zero: 1e-7,
            nonzero: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub count: usize,
    pub radius: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            count: 64,
            radius: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Config {
    pub tol: Tolerances,
    pub sampling: Sampling,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let t = &self.tol;
        for (name, v) in [
            ("rank tolerance", t.rank_rel),
            ("zero tolerance", t.zero),
            ("nonzero threshold", t.nonzero),
            ("sample radius", self.sampling.radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sampling.count == 0 {
            return Err(Error::InvalidConfig("sample count must be positive".into()));
        }
        Ok(())
    }
}
