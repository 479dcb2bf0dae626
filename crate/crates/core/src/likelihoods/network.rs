//! Binary relations with a beta-Bernoulli link probability per ordered (or,
//! for symmetric data, unordered) pair of clusters. Self-pairs are ignored.

use serde::{Deserialize, Serialize};

use super::{MaskedMatrix, SourceModel};
use crate::special::ln_beta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaHyper {
    pub a: f64,
    pub b: f64,
}

impl Default for BetaHyper {
    fn default() -> Self {
        BetaHyper { a: 0.1, b: 0.1 }
    }
}

impl BetaHyper {
    pub fn symmetric(beta: f64) -> Self {
        BetaHyper { a: beta, b: beta }
    }

    /// log ∫ θ^n1 (1-θ)^n0 Beta(θ | a, b) dθ
    pub fn block_log_marginal(&self, n1: f64, n0: f64) -> f64 {
        if n1 == 0.0 && n0 == 0.0 {
            return 0.0;
        }
        ln_beta(self.a + n1, self.b + n0) - ln_beta(self.a, self.b)
    }
}

/// Posterior predictive probability of a link in a block with `n1` links and
/// `n0` non-links.
pub fn network_predictive(n1: f64, n0: f64, hyper: &BetaHyper) -> f64 {
    (hyper.a + n1) / (hyper.a + hyper.b + n1 + n0)
}

/// Link and non-link counts per block, stored densely and grown on demand.
#[derive(Debug, Clone, Default)]
pub struct PairCounts {
    cap: usize,
    links: Vec<f64>,
    nonlinks: Vec<f64>,
}

impl PairCounts {
    pub fn new(cap: usize) -> Self {
        PairCounts {
            cap,
            links: vec![0.0; cap * cap],
            nonlinks: vec![0.0; cap * cap],
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    fn grow(&mut self, need: usize) {
        if need <= self.cap {
            return;
        }
        let cap = need.max(2 * self.cap);
        let mut next = PairCounts::new(cap);
        for i in 0..self.cap {
            for j in 0..self.cap {
                next.links[i * cap + j] = self.links[i * self.cap + j];
                next.nonlinks[i * cap + j] = self.nonlinks[i * self.cap + j];
            }
        }
        *self = next;
    }

    pub fn get(&self, k: usize, l: usize) -> (f64, f64) {
        if k >= self.cap || l >= self.cap {
            return (0.0, 0.0);
        }
        let i = k * self.cap + l;
        (self.links[i], self.nonlinks[i])
    }

    pub fn add(&mut self, k: usize, l: usize, y: f64, weight: f64) {
        self.grow(k.max(l) + 1);
        let i = k * self.cap + l;
        if y > 0.5 {
            self.links[i] += weight;
        } else {
            self.nonlinks[i] += weight;
        }
    }

    pub fn clear(&mut self) {
        self.links.iter_mut().for_each(|x| *x = 0.0);
        self.nonlinks.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn log_marginal(&self, hyper: &BetaHyper) -> f64 {
        self.links
            .iter()
            .zip(&self.nonlinks)
            .map(|(&n1, &n0)| hyper.block_log_marginal(n1, n0))
            .sum()
    }
}

fn block(k: usize, l: usize, symmetric: bool) -> (usize, usize) {
    if symmetric && k > l {
        (l, k)
    } else {
        (k, l)
    }
}

fn observed_pairs(data: &MaskedMatrix, symmetric: bool) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let n = data.rows();
    (0..n).flat_map(move |i| {
        let start = if symmetric { i + 1 } else { 0 };
        (start..n).filter_map(move |j| {
            if i == j {
                return None;
            }
            data.get(i, j).map(|y| (i, j, y))
        })
    })
}

/// Collapsed log marginal likelihood of one snapshot under `labels`.
pub fn network_marginal_loglik(data: &MaskedMatrix, labels: &[usize], hyper: &BetaHyper, symmetric: bool) -> f64 {
    assert_eq!(data.rows(), labels.len());
    let mut counts = PairCounts::new(labels.iter().copied().max().map_or(0, |m| m + 1));
    for (i, j, y) in observed_pairs(data, symmetric) {
        let (k, l) = block(labels[i], labels[j], symmetric);
        counts.add(k, l, y, 1.0);
    }
    counts.log_marginal(hyper)
}

/// Incremental block statistics for one snapshot.
#[derive(Debug, Clone)]
pub struct NetworkSource {
    data: MaskedMatrix,
    symmetric: bool,
    hyper: BetaHyper,
    counts: PairCounts,
    sizes: Vec<usize>,
}

/// Per-cluster link / non-link counts between one object and everyone else.
#[derive(Debug, Default)]
struct Tally {
    out1: Vec<f64>,
    out0: Vec<f64>,
    in1: Vec<f64>,
    in0: Vec<f64>,
    touched: Vec<usize>,
}

impl Tally {
    fn bump(&mut self, c: usize, outgoing: bool, y: f64) {
        if c >= self.out1.len() {
            for v in [&mut self.out1, &mut self.out0, &mut self.in1, &mut self.in0] {
                v.resize(c + 1, 0.0);
            }
        }
        if self.out1[c] + self.out0[c] + self.in1[c] + self.in0[c] == 0.0 {
            self.touched.push(c);
        }
        let slot = match (outgoing, y > 0.5) {
            (true, true) => &mut self.out1[c],
            (true, false) => &mut self.out0[c],
            (false, true) => &mut self.in1[c],
            (false, false) => &mut self.in0[c],
        };
        *slot += 1.0;
    }
}

impl NetworkSource {
    pub fn new(data: MaskedMatrix, symmetric: bool, hyper: BetaHyper) -> Self {
        NetworkSource {
            data,
            symmetric,
            hyper,
            counts: PairCounts::default(),
            sizes: Vec::new(),
        }
    }

    pub fn data(&self) -> &MaskedMatrix {
        &self.data
    }

    pub fn counts(&self) -> &PairCounts {
        &self.counts
    }

    fn move_object(&mut self, object: usize, k: usize, labels: &[usize], weight: f64) {
        let n = self.data.rows();
        for m in 0..n {
            if m == object {
                continue;
            }
            let c = labels[m];
            if let Some(y) = self.data.get(object, m) {
                let (a, b) = block(k, c, self.symmetric);
                self.counts.add(a, b, y, weight);
            }
            if !self.symmetric {
                if let Some(y) = self.data.get(m, object) {
                    self.counts.add(c, k, y, weight);
                }
            }
        }
    }

    fn tally(&self, object: usize, labels: &[usize]) -> Tally {
        let mut t = Tally::default();
        for m in 0..self.data.rows() {
            if m == object {
                continue;
            }
            let c = labels[m];
            if let Some(y) = self.data.get(object, m) {
                t.bump(c, true, y);
            }
            if !self.symmetric {
                if let Some(y) = self.data.get(m, object) {
                    t.bump(c, false, y);
                }
            }
        }
        t
    }

    /// Change in collapsed log likelihood from placing the (removed) object
    /// in cluster `k`.
    fn delta(&self, k: usize, t: &Tally) -> f64 {
        let h = &self.hyper;
        let gain = |(n1, n0): (f64, f64), d1: f64, d0: f64| {
            if d1 == 0.0 && d0 == 0.0 {
                0.0
            } else {
                h.block_log_marginal(n1 + d1, n0 + d0) - h.block_log_marginal(n1, n0)
            }
        };
        let mut acc = 0.0;
        for &c in &t.touched {
            if self.symmetric {
                let (a, b) = block(k, c, true);
                acc += gain(self.counts.get(a, b), t.out1[c], t.out0[c]);
            } else if c == k {
                acc += gain(self.counts.get(k, k), t.out1[c] + t.in1[c], t.out0[c] + t.in0[c]);
            } else {
                acc += gain(self.counts.get(k, c), t.out1[c], t.out0[c]);
                acc += gain(self.counts.get(c, k), t.in1[c], t.in0[c]);
            }
        }
        acc
    }
}

impl SourceModel for NetworkSource {
    fn n_objects(&self) -> usize {
        self.data.rows()
    }

    fn rebuild(&mut self, labels: &[usize]) {
        let cap = labels.iter().copied().max().map_or(0, |m| m + 1);
        if self.counts.capacity() < cap {
            self.counts = PairCounts::new(cap);
        } else {
            self.counts.clear();
        }
        self.sizes = vec![0; cap];
        for &c in labels {
            self.sizes[c] += 1;
        }
        for (i, j, y) in observed_pairs(&self.data, self.symmetric) {
            let (k, l) = block(labels[i], labels[j], self.symmetric);
            self.counts.add(k, l, y, 1.0);
        }
    }

    fn log_marginal(&self) -> f64 {
        self.counts.log_marginal(&self.hyper)
    }

    fn score(&self, labels: &[usize]) -> f64 {
        network_marginal_loglik(&self.data, labels, &self.hyper, self.symmetric)
    }

    fn remove(&mut self, object: usize, labels: &[usize]) {
        let k = labels[object];
        self.move_object(object, k, labels, -1.0);
        self.sizes[k] -= 1;
    }

    fn insert(&mut self, object: usize, label: usize, labels: &[usize]) {
        self.move_object(object, label, labels, 1.0);
        if self.sizes.len() <= label {
            self.sizes.resize(label + 1, 0);
        }
        self.sizes[label] += 1;
    }

    fn add_predictive(&self, object: usize, labels: &[usize], out: &mut [f64]) {
        let t = self.tally(object, labels);
        let mut empty = None;
        for (k, slot) in out.iter_mut().enumerate() {
            if self.sizes.get(k).copied().unwrap_or(0) == 0 {
                *slot += *empty.get_or_insert_with(|| self.delta(k, &t));
            } else {
                *slot += self.delta(k, &t);
            }
        }
    }

    fn log_predictive_entry(&self, row: usize, col: usize, value: f64, labels: &[usize]) -> f64 {
        let (k, l) = block(labels[row], labels[col], self.symmetric);
        let (n1, n0) = self.counts.get(k, l);
        let p = network_predictive(n1, n0, &self.hyper);
        if value > 0.5 {
            p.ln()
        } else {
            (1.0 - p).ln()
        }
    }

    fn clone_box(&self) -> Box<dyn SourceModel> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(rows: &[&[Option<f64>]]) -> MaskedMatrix {
        MaskedMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    /// ∫ θ^n1 (1-θ)^n0 Beta(θ | a, b) dθ by composite Gauss-Legendre on a
    /// t = θ^a substitution that removes the endpoint singularities.
    fn quadrature_block(n1: f64, n0: f64, h: &BetaHyper) -> f64 {
        let (x, w) = crate::likelihoods::quadrature::gauss_legendre(64);
        // θ = s^(1/a) near 0 and 1 - (1-s)^(1/b) near 1, split at 1/2
        let mut total = 0.0;
        let norm = ln_beta(h.a, h.b);
        let panels = 64;
        for p in 0..panels {
            for (xi, wi) in x.iter().zip(&w) {
                let s = (p as f64 + 0.5 * (xi + 1.0)) / panels as f64 * 0.5f64.powf(h.a);
                let theta = s.powf(1.0 / h.a);
                // dθ = (1/a) s^(1/a - 1) ds; θ^(a-1) dθ = ds / a
                let f = theta.powf(n1) * (1.0 - theta).powf(n0 + h.b - 1.0) / h.a;
                total += f * wi * 0.5 / panels as f64 * 0.5f64.powf(h.a);
                let s = (p as f64 + 0.5 * (xi + 1.0)) / panels as f64 * 0.5f64.powf(h.b);
                let om = s.powf(1.0 / h.b);
                let theta = 1.0 - om;
                let f = theta.powf(n1 + h.a - 1.0) * om.powf(n0) / h.b;
                total += f * wi * 0.5 / panels as f64 * 0.5f64.powf(h.b);
            }
        }
        total.ln() - norm
    }

    #[test]
    fn single_link_has_probability_half() {
        let m = net(&[&[None, Some(1.0)], &[Some(1.0), None]]);
        let ll = network_marginal_loglik(&m, &[0, 0], &BetaHyper::default(), true);
        assert!((ll - 0.5f64.ln()).abs() < 1e-12);
        assert!((quadrature_block(1.0, 0.0, &BetaHyper::default()) - 0.5f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn blocks_match_quadrature() {
        let h = BetaHyper::default();
        for &(n1, n0) in &[(0.0, 1.0), (3.0, 2.0), (7.0, 0.0), (1.0, 9.0)] {
            let exact = h.block_log_marginal(n1, n0);
            let quad = quadrature_block(n1, n0, &h);
            assert!((exact - quad).abs() < 1e-8, "{n1} {n0}: {exact} vs {quad}");
        }
    }

    #[test]
    fn predictive_examples() {
        let h = BetaHyper::default();
        assert!((network_predictive(0.0, 0.0, &h) - 0.5).abs() < 1e-15);
        assert!((network_predictive(9.0, 0.0, &h) - 9.1 / 9.2).abs() < 1e-15);
    }

    #[test]
    fn diagonal_is_ignored() {
        let a = net(&[&[Some(1.0), Some(0.0)], &[Some(0.0), Some(1.0)]]);
        let b = net(&[&[None, Some(0.0)], &[Some(0.0), None]]);
        let h = BetaHyper::default();
        for labels in [[0, 0], [0, 1]] {
            assert_eq!(
                network_marginal_loglik(&a, &labels, &h, true),
                network_marginal_loglik(&b, &labels, &h, true)
            );
        }
    }

    #[test]
    fn directed_counts_both_directions() {
        let m = net(&[&[None, Some(1.0)], &[Some(0.0), None]]);
        let h = BetaHyper::default();
        let joint = network_marginal_loglik(&m, &[0, 0], &h, false);
        assert!((joint - h.block_log_marginal(1.0, 1.0)).abs() < 1e-12);
        let split = network_marginal_loglik(&m, &[0, 1], &h, false);
        assert!((split - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }
}
