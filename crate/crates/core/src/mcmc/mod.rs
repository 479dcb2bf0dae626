//! Posterior inference.

mod dpm;
mod sampler;
mod slice;
mod trace;

pub use dpm::{collapsed_gibbs_dpm, relabel_by_size};
pub use sampler::{
    gamma_log_pdf, run, sample_alpha, shared_partition_state, sticks_log_prior, FSchedule, Init, Layout, Sampler,
    SamplerOptions, INIT_STICK_RANGE, MAX_ESS_SHRINK,
};
pub use slice::{slice_sample, SliceConfig, MAX_SHRINK};
pub use trace::{summarize, LogPrior, Summary, Trace, TraceRecord};

use rand::Rng;

use crate::special::log_sum_exp;

/// Draws an index with probability proportional to `exp(log_weights)`.
pub(crate) fn sample_log_weights<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let total = log_sum_exp(log_weights);
    let mut u = rng.random::<f64>();
    let mut last = 0;
    for (i, &w) in log_weights.iter().enumerate() {
        if w == f64::NEG_INFINITY {
            continue;
        }
        let p = (w - total).exp();
        last = i;
        if u < p {
            return i;
        }
        u -= p;
    }
    last
}
