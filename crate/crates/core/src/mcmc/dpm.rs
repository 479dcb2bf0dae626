//! Collapsed Gibbs sampling for a Dirichlet-process mixture in which every
//! source shares one partition. Used to initialise the dependent sampler and
//! as a reference chain.

use rand::Rng;

use super::sample_log_weights;
use crate::likelihoods::SourceModel;

/// Runs `sweeps` Gibbs sweeps of the Chinese-restaurant-process mixture over
/// the pooled sources, starting from `labels`, and returns the final labels.
/// `on_sweep` sees the labels and the pooled log likelihood after each sweep.
pub fn collapsed_gibbs_dpm<R, F>(
    models: &mut [Box<dyn SourceModel>],
    mut labels: Vec<usize>,
    alpha: f64,
    sweeps: usize,
    rng: &mut R,
    mut on_sweep: F,
) -> Vec<usize>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &[usize], f64),
{
    let n = labels.len();
    let mut sizes = vec![0usize; n + 1];
    for &c in &labels {
        sizes[c] += 1;
    }
    for m in models.iter_mut() {
        m.rebuild(&labels);
    }
    let mut scores = vec![0.0; n + 1];
    for sweep in 0..sweeps {
        for i in 0..n {
            let old = labels[i];
            for m in models.iter_mut() {
                m.remove(i, &labels);
            }
            sizes[old] -= 1;
            let fresh = sizes.iter().position(|&s| s == 0).expect("n + 1 slots");
            let top = sizes.iter().rposition(|&s| s > 0).map_or(0, |t| t + 1).max(fresh + 1);
            let out = &mut scores[..top];
            out.iter_mut().for_each(|x| *x = 0.0);
            for m in models.iter() {
                m.add_predictive(i, &labels, out);
            }
            for (c, w) in out.iter_mut().enumerate() {
                *w += if sizes[c] > 0 {
                    (sizes[c] as f64).ln()
                } else if c == fresh {
                    alpha.ln()
                } else {
                    f64::NEG_INFINITY
                };
            }
            let new = sample_log_weights(out, rng);
            labels[i] = new;
            sizes[new] += 1;
            for m in models.iter_mut() {
                m.insert(i, new, &labels);
            }
        }
        let ll = models.iter().map(|m| m.log_marginal()).sum();
        on_sweep(sweep, &labels, ll);
    }
    labels
}

/// Relabels blocks 0, 1, ... by decreasing size (ties broken by first
/// appearance).
pub fn relabel_by_size(labels: &[usize]) -> Vec<usize> {
    let n_blocks = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_blocks];
    let mut first = vec![usize::MAX; n_blocks];
    for (i, &c) in labels.iter().enumerate() {
        sizes[c] += 1;
        first[c] = first[c].min(i);
    }
    let mut order: Vec<usize> = (0..n_blocks).filter(|&c| sizes[c] > 0).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(first[a].cmp(&first[b])));
    let mut rank = vec![0; n_blocks];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    labels.iter().map(|&c| rank[c]).collect()
}
