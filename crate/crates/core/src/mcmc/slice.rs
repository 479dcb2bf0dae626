//! Univariate slice sampling with stepping out and shrinkage.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bracket shrinkage steps before the sampler reports a numerical fault.
pub const MAX_SHRINK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub width: f64,
    pub max_steps: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            width: 1.0,
            max_steps: 20,
        }
    }
}

/// One slice-sampling transition from `x0` for the unnormalised log density
/// `log_f`. `log_f(x0)` must be finite.
pub fn slice_sample<R, F>(x0: f64, mut log_f: F, config: SliceConfig, rng: &mut R) -> Result<f64>
where
    R: Rng + ?Sized,
    F: FnMut(f64) -> f64,
{
    let f0 = log_f(x0);
    if !f0.is_finite() {
        return Err(Error::Numerical(format!(
            "slice sampler started at x = {x0} with log density {f0}"
        )));
    }
    let e: f64 = Exp1.sample(rng);
    let level = f0 - e;
    let w = config.width;
    let mut lo = x0 - w * rng.random::<f64>();
    let mut hi = lo + w;
    let mut j = (config.max_steps as f64 * rng.random::<f64>()).floor() as usize;
    let mut k = config.max_steps.saturating_sub(1) - j.min(config.max_steps.saturating_sub(1));
    while j > 0 && log_f(lo) > level {
        lo -= w;
        j -= 1;
    }
    while k > 0 && log_f(hi) > level {
        hi += w;
        k -= 1;
    }
    for _ in 0..MAX_SHRINK {
        let x = lo + (hi - lo) * rng.random::<f64>();
        if log_f(x) > level {
            return Ok(x);
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
    }
    Err(Error::Numerical(format!(
        "slice sampler exceeded {MAX_SHRINK} shrinkage steps at x = {x0}"
    )))
}
