//! Diagonal Gaussian observations with a normal-gamma prior per cluster and
//! dimension, cluster parameters integrated out.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{MaskedMatrix, SourceModel};
use crate::special::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianHyper {
    pub mu0: f64,
    pub kappa0: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl Default for GaussianHyper {
    fn default() -> Self {
        GaussianHyper {
            mu0: 0.0,
            kappa0: 0.1,
            alpha0: 0.1,
            beta0: 0.1,
        }
    }
}

/// Count, sum and sum of squares of one cluster in one dimension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianSuffStats {
    pub n: usize,
    pub sum: f64,
    pub sumsq: f64,
}

/// Posterior normal-gamma parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalGamma {
    pub mu: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Student-t predictive with precomputed normaliser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentT {
    loc: f64,
    /// ν s²
    nu_scale2: f64,
    /// (ν + 1) / 2
    half_nu1: f64,
    log_norm: f64,
}

impl StudentT {
    pub fn ln_pdf(&self, y: f64) -> f64 {
        let r = y - self.loc;
        self.log_norm - self.half_nu1 * (r * r / self.nu_scale2).ln_1p()
    }
}

impl GaussianSuffStats {
    pub fn add(&mut self, y: f64) {
        self.n += 1;
        self.sum += y;
        self.sumsq += y * y;
    }

    pub fn remove(&mut self, y: f64) {
        debug_assert!(self.n > 0);
        self.n -= 1;
        if self.n == 0 {
            // drop accumulated rounding
            self.sum = 0.0;
            self.sumsq = 0.0;
        } else {
            self.sum -= y;
            self.sumsq -= y * y;
        }
    }

    pub fn posterior(&self, h: &GaussianHyper) -> NormalGamma {
        let n = self.n as f64;
        let kappa = h.kappa0 + n;
        let mu = (h.kappa0 * h.mu0 + self.sum) / kappa;
        let alpha = h.alpha0 + 0.5 * n;
        let beta = if self.n == 0 {
            h.beta0
        } else {
            let mean = self.sum / n;
            let scatter = (self.sumsq - self.sum * mean).max(0.0);
            h.beta0 + 0.5 * scatter + h.kappa0 * n * (mean - h.mu0).powi(2) / (2.0 * kappa)
        };
        NormalGamma {
            mu,
            kappa,
            alpha,
            beta,
        }
    }

    /// log ∫∫ ∏ N(y_i | μ, 1/λ) NG(μ, λ) dμ dλ
    pub fn log_marginal(&self, h: &GaussianHyper) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let post = self.posterior(h);
        ln_gamma(post.alpha) - ln_gamma(h.alpha0) + h.alpha0 * h.beta0.ln()
            - post.alpha * post.beta.ln()
            + 0.5 * (h.kappa0.ln() - post.kappa.ln())
            - 0.5 * self.n as f64 * (2.0 * PI).ln()
    }

    pub fn predictive(&self, h: &GaussianHyper) -> StudentT {
        let post = self.posterior(h);
        let nu = 2.0 * post.alpha;
        let scale2 = post.beta * (post.kappa + 1.0) / (post.alpha * post.kappa);
        StudentT {
            loc: post.mu,
            nu_scale2: nu * scale2,
            half_nu1: post.alpha + 0.5,
            log_norm: ln_gamma(post.alpha + 0.5) - ln_gamma(post.alpha) - 0.5 * (nu * PI * scale2).ln(),
        }
    }

    /// Log posterior-predictive density of one new value.
    pub fn log_predictive(&self, y: f64, h: &GaussianHyper) -> f64 {
        self.predictive(h).ln_pdf(y)
    }
}

/// Collapsed log marginal likelihood of one source under `labels`,
/// summed over clusters and dimensions; masked entries are skipped.
pub fn gaussian_marginal_loglik(source: &MaskedMatrix, labels: &[usize], hyper: &GaussianHyper) -> f64 {
    assert_eq!(source.rows(), labels.len());
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let d = source.cols();
    let mut stats = vec![GaussianSuffStats::default(); k * d];
    for (n, &c) in labels.iter().enumerate() {
        for j in 0..d {
            if let Some(y) = source.get(n, j) {
                stats[c * d + j].add(y);
            }
        }
    }
    stats.iter().map(|s| s.log_marginal(hyper)).sum()
}

/// Log predictive density of the observed entries of `y` under one cluster's
/// statistics (one entry of `stats` per dimension).
pub fn gaussian_posterior_predictive(
    y: &[f64],
    observed: &[bool],
    stats: &[GaussianSuffStats],
    hyper: &GaussianHyper,
) -> f64 {
    assert_eq!(y.len(), stats.len());
    assert_eq!(y.len(), observed.len());
    y.iter()
        .zip(observed)
        .zip(stats)
        .filter(|((_, &o), _)| o)
        .map(|((&v, _), s)| s.log_predictive(v, hyper))
        .sum()
}

#[derive(Debug, Clone)]
struct ClusterCache {
    members: usize,
    stats: Vec<GaussianSuffStats>,
    predictive: Vec<StudentT>,
    log_marginal: f64,
}

/// Incremental statistics for one Gaussian source.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    data: MaskedMatrix,
    hyper: GaussianHyper,
    clusters: Vec<ClusterCache>,
    prior_predictive: StudentT,
}

impl GaussianSource {
    pub fn new(data: MaskedMatrix, hyper: GaussianHyper) -> Self {
        GaussianSource {
            prior_predictive: GaussianSuffStats::default().predictive(&hyper),
            data,
            hyper,
            clusters: Vec::new(),
        }
    }

    pub fn data(&self) -> &MaskedMatrix {
        &self.data
    }

    fn empty_cluster(&self) -> ClusterCache {
        let d = self.data.cols();
        ClusterCache {
            members: 0,
            stats: vec![GaussianSuffStats::default(); d],
            predictive: vec![self.prior_predictive; d],
            log_marginal: 0.0,
        }
    }

    fn ensure(&mut self, k: usize) {
        while self.clusters.len() <= k {
            let c = self.empty_cluster();
            self.clusters.push(c);
        }
    }

    fn refresh(&mut self, k: usize) {
        let h = self.hyper;
        let c = &mut self.clusters[k];
        let mut lm = 0.0;
        for (s, p) in c.stats.iter().zip(c.predictive.iter_mut()) {
            *p = s.predictive(&h);
            lm += s.log_marginal(&h);
        }
        c.log_marginal = lm;
    }

    fn update(&mut self, object: usize, k: usize, add: bool) {
        self.ensure(k);
        let c = &mut self.clusters[k];
        for j in 0..self.data.cols() {
            if let Some(y) = self.data.get(object, j) {
                if add {
                    c.stats[j].add(y);
                } else {
                    c.stats[j].remove(y);
                }
            }
        }
        if add {
            c.members += 1;
        } else {
            c.members -= 1;
        }
        self.refresh(k);
    }

    /// Per-dimension statistics of cluster `k`.
    pub fn stats(&self, k: usize) -> Vec<GaussianSuffStats> {
        self.clusters
            .get(k)
            .map(|c| c.stats.clone())
            .unwrap_or_else(|| vec![GaussianSuffStats::default(); self.data.cols()])
    }
}

impl SourceModel for GaussianSource {
    fn n_objects(&self) -> usize {
        self.data.rows()
    }

    fn rebuild(&mut self, labels: &[usize]) {
        self.clusters.clear();
        if let Some(&m) = labels.iter().max() {
            self.ensure(m);
        }
        for (n, &c) in labels.iter().enumerate() {
            let cl = &mut self.clusters[c];
            cl.members += 1;
            for j in 0..self.data.cols() {
                if let Some(y) = self.data.get(n, j) {
                    cl.stats[j].add(y);
                }
            }
        }
        for c in 0..self.clusters.len() {
            self.refresh(c);
        }
    }

    fn log_marginal(&self) -> f64 {
        self.clusters.iter().map(|c| c.log_marginal).sum()
    }

    fn score(&self, labels: &[usize]) -> f64 {
        gaussian_marginal_loglik(&self.data, labels, &self.hyper)
    }

    fn remove(&mut self, object: usize, labels: &[usize]) {
        self.update(object, labels[object], false);
    }

    fn insert(&mut self, object: usize, label: usize, _labels: &[usize]) {
        self.update(object, label, true);
    }

    fn add_predictive(&self, object: usize, _labels: &[usize], out: &mut [f64]) {
        let d = self.data.cols();
        let mut prior = None;
        for (k, slot) in out.iter_mut().enumerate() {
            match self.clusters.get(k) {
                Some(c) if c.members > 0 => {
                    let mut acc = 0.0;
                    for j in 0..d {
                        if let Some(y) = self.data.get(object, j) {
                            acc += c.predictive[j].ln_pdf(y);
                        }
                    }
                    *slot += acc;
                }
                _ => {
                    *slot += *prior.get_or_insert_with(|| {
                        (0..d)
                            .filter_map(|j| self.data.get(object, j))
                            .map(|y| self.prior_predictive.ln_pdf(y))
                            .sum::<f64>()
                    });
                }
            }
        }
    }

    fn log_predictive_entry(&self, row: usize, col: usize, value: f64, labels: &[usize]) -> f64 {
        match self.clusters.get(labels[row]) {
            Some(c) => c.predictive[col].ln_pdf(value),
            None => self.prior_predictive.ln_pdf(value),
        }
    }

    fn clone_box(&self) -> Box<dyn SourceModel> {
        Box::new(self.clone())
    }
}
