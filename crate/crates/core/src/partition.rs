//! The dependent partition-valued process: stick weights, thresholded
//! Gaussian-process functions, and the resulting per-location partitions.
//!
//! Labels are zero-based throughout: label `k < K-1` means the object fell
//! below the threshold of stick `k` first, and label `K-1` is the overflow
//! cluster of the truncated construction.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::special::{ln_gamma, normal_quantile, softplus};

/// Bound on logits built from raw stick values, so that v = 0 or v = 1 map
/// to finite states.
pub const LOGIT_LIMIT: f64 = 700.0;

pub const DEFAULT_TRUNCATION: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationConfig {
    /// Truncation level; there are `k - 1` explicit sticks.
    pub k: usize,
    /// Concentration (initial value when it is sampled).
    pub alpha: f64,
    /// Pitman-Yor discount.
    pub discount: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig {
            k: DEFAULT_TRUNCATION,
            alpha: 1.0,
            discount: 0.0,
        }
    }
}

impl TruncationConfig {
    pub fn new(k: usize, alpha: f64, discount: f64) -> Result<Self> {
        let c = TruncationConfig { k, alpha, discount };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("truncation K must be ≥ 2, got {}", self.k)));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if !(self.alpha > -self.discount) || !self.alpha.is_finite() {
            return Err(Error::Config(format!(
                "alpha must exceed -discount, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    pub fn n_sticks(&self) -> usize {
        self.k - 1
    }

    /// Beta parameters of stick `k` (zero-based): Beta(1 - d, α + (k+1) d).
    pub fn stick_prior(&self, stick: usize, alpha: f64) -> (f64, f64) {
        (
            1.0 - self.discount,
            alpha + (stick + 1) as f64 * self.discount,
        )
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(v / (1 - v)), bounded by [`LOGIT_LIMIT`].
pub fn logit(v: f64) -> f64 {
    (v.ln() - (-v).ln_1p()).clamp(-LOGIT_LIMIT, LOGIT_LIMIT)
}

/// Threshold η with Φ(η) = sigmoid(x). The smaller tail probability is
/// computed directly so that sticks arbitrarily close to 0 or 1 keep a
/// finite, monotone threshold.
pub fn threshold_of_logit(x: f64) -> f64 {
    let tail = |y: f64| normal_quantile(sigmoid(y).max(f64::MIN_POSITIVE));
    if x <= 0.0 {
        tail(x)
    } else {
        -tail(-x)
    }
}

/// Threshold η with Φ(η) = v.
pub fn threshold_of(v: f64) -> f64 {
    threshold_of_logit(logit(v))
}

/// Stick variables, stored as logits so that lengths extremely close to 1
/// (small α) keep their exact log complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StickWeights {
    logits: Vec<f64>,
    v: Vec<f64>,
    thresholds: Vec<f64>,
}

impl StickWeights {
    pub fn new(v: Vec<f64>) -> Self {
        Self::from_logits(v.into_iter().map(logit).collect())
    }

    pub fn from_logits(logits: Vec<f64>) -> Self {
        let v = logits.iter().map(|&x| sigmoid(x)).collect();
        let thresholds = logits.iter().map(|&x| threshold_of_logit(x)).collect();
        StickWeights { logits, v, thresholds }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// ln v_k.
    pub fn ln_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.logits.iter().map(|&x| -softplus(-x))
    }

    /// ln(1 - v_k).
    pub fn ln_complements(&self) -> impl Iterator<Item = f64> + '_ {
        self.logits.iter().map(|&x| -softplus(x))
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn set_logit(&mut self, stick: usize, x: f64) {
        self.logits[stick] = x;
        self.v[stick] = sigmoid(x);
        self.thresholds[stick] = threshold_of_logit(x);
    }

    pub fn set(&mut self, stick: usize, v: f64) {
        self.set_logit(stick, logit(v));
    }

    /// Probability mass not claimed by any explicit stick.
    pub fn leftover(&self) -> f64 {
        self.ln_complements().sum::<f64>().exp()
    }

    pub fn sample_prior<R: Rng + ?Sized>(config: &TruncationConfig, alpha: f64, rng: &mut R) -> Self {
        let v = (0..config.n_sticks())
            .map(|k| {
                let (a, b) = config.stick_prior(k, alpha);
                Beta::new(a, b).expect("valid beta parameters").sample(rng)
            })
            .collect();
        StickWeights::new(v)
    }
}

/// Mixture weights π_k = v_k ∏_{l<k} (1 - v_l) of the explicit sticks.
pub fn stick_lengths(sticks: &StickWeights) -> Vec<f64> {
    let mut ln_rest = 0.0;
    sticks
        .ln_values()
        .zip(sticks.ln_complements())
        .map(|(ln_v, ln_1mv)| {
            let pi = (ln_v + ln_rest).exp();
            ln_rest += ln_1mv;
            pi
        })
        .collect()
}

/// First stick whose value falls below its threshold, or `thresholds.len()`
/// (the overflow label) when there is none.
pub fn assign(f_row: &[f64], thresholds: &[f64]) -> usize {
    assert_eq!(f_row.len(), thresholds.len());
    f_row
        .iter()
        .zip(thresholds)
        .position(|(f, eta)| f < eta)
        .unwrap_or(thresholds.len())
}

/// [`assign`] over a strided row, as stored in [`FunctionMatrix`].
#[inline]
pub(crate) fn assign_strided(values: &[f64], offset: usize, stride: usize, thresholds: &[f64]) -> usize {
    for (k, eta) in thresholds.iter().enumerate() {
        if values[offset + k * stride] < *eta {
            return k;
        }
    }
    thresholds.len()
}

/// Latent function values f_nk(t_τ).
///
/// Stored object-major: the `(K-1)·T` values of one object are contiguous,
/// stick-major within the object, so one object's block is a stack of
/// `K-1` length-`T` vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionMatrix {
    n_locations: usize,
    n_objects: usize,
    n_sticks: usize,
    values: Vec<f64>,
}

impl FunctionMatrix {
    pub fn zeros(n_locations: usize, n_objects: usize, n_sticks: usize) -> Self {
        FunctionMatrix {
            n_locations,
            n_objects,
            n_sticks,
            values: vec![0.0; n_locations * n_objects * n_sticks],
        }
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn n_sticks(&self) -> usize {
        self.n_sticks
    }

    #[inline]
    fn index(&self, location: usize, object: usize, stick: usize) -> usize {
        (object * self.n_sticks + stick) * self.n_locations + location
    }

    pub fn get(&self, location: usize, object: usize, stick: usize) -> f64 {
        self.values[self.index(location, object, stick)]
    }

    pub fn set(&mut self, location: usize, object: usize, stick: usize, value: f64) {
        let i = self.index(location, object, stick);
        self.values[i] = value;
    }

    pub fn block_len(&self) -> usize {
        self.n_sticks * self.n_locations
    }

    /// All function values of one object, `[stick][location]`.
    pub fn object(&self, object: usize) -> &[f64] {
        let len = self.block_len();
        &self.values[object * len..(object + 1) * len]
    }

    pub fn object_mut(&mut self, object: usize) -> &mut [f64] {
        let len = self.block_len();
        &mut self.values[object * len..(object + 1) * len]
    }

    /// The length-T vector f_nk over locations.
    pub fn function(&self, object: usize, stick: usize) -> &[f64] {
        let start = self.index(0, object, stick);
        &self.values[start..start + self.n_locations]
    }

    pub fn function_mut(&mut self, object: usize, stick: usize) -> &mut [f64] {
        let start = self.index(0, object, stick);
        &mut self.values[start..start + self.n_locations]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Label of `object` at `location` under `thresholds`.
    pub fn label(&self, location: usize, object: usize, thresholds: &[f64]) -> usize {
        assign_strided(self.object(object), location, self.n_locations, thresholds)
    }

    /// Fills every f_nk with an independent draw from N(0, gram).
    pub fn sample_prior<R: Rng + ?Sized>(
        gram: &GramMatrix,
        n_objects: usize,
        n_sticks: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let chol = gram.cholesky()?;
        let t = gram.dim();
        let mut f = FunctionMatrix::zeros(t, n_objects, n_sticks);
        let mut z = vec![0.0; t];
        for n in 0..n_objects {
            for k in 0..n_sticks {
                z.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
                chol.mul_into(&z, f.function_mut(n, k));
            }
        }
        Ok(f)
    }
}

/// Cluster label of every object at every location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentField {
    n_locations: usize,
    n_objects: usize,
    labels: Vec<usize>,
}

impl AssignmentField {
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let n_locations = rows.len();
        let n_objects = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == n_objects));
        AssignmentField {
            n_locations,
            n_objects,
            labels: rows.into_iter().flatten().collect(),
        }
    }

    /// Applies [`assign`] at every (location, object).
    pub fn compute(f: &FunctionMatrix, sticks: &StickWeights) -> Self {
        assert_eq!(f.n_sticks(), sticks.len());
        let (t, n) = (f.n_locations(), f.n_objects());
        let mut labels = vec![0; t * n];
        for obj in 0..n {
            for loc in 0..t {
                labels[loc * n + obj] = f.label(loc, obj, sticks.thresholds());
            }
        }
        AssignmentField {
            n_locations: t,
            n_objects: n,
            labels,
        }
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn get(&self, location: usize, object: usize) -> usize {
        self.labels[location * self.n_objects + object]
    }

    pub fn set(&mut self, location: usize, object: usize, label: usize) {
        self.labels[location * self.n_objects + object] = label;
    }

    pub fn row(&self, location: usize) -> &[usize] {
        &self.labels[location * self.n_objects..(location + 1) * self.n_objects]
    }

    pub fn row_mut(&mut self, location: usize) -> &mut [usize] {
        &mut self.labels[location * self.n_objects..(location + 1) * self.n_objects]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[usize]> {
        self.labels.chunks(self.n_objects.max(1)).take(self.n_locations)
    }

    pub fn max_label(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Number of distinct clusters at `location`.
    pub fn n_clusters(&self, location: usize) -> usize {
        Partition::from_labels(self.row(location)).n_blocks()
    }
}

/// Set partition of {0, …, N-1}. Blocks are kept sorted internally and
/// ordered by smallest element, so equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Partition {
    n: usize,
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    /// Groups objects by equal label.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(labels: &[L]) -> Self {
        let mut index: HashMap<L, usize> = HashMap::new();
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            let b = *index.entry(*l).or_insert_with(|| {
                blocks.push(Vec::new());
                blocks.len() - 1
            });
            blocks[b].push(i);
        }
        Partition {
            n: labels.len(),
            blocks,
        }
    }

    pub fn from_blocks(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::Config("empty block in partition".into()));
            }
            for &i in b {
                if i >= n || seen[i] {
                    return Err(Error::Config(format!(
                        "element {i} out of range or repeated"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("blocks do not cover the ground set".into()));
        }
        let mut labels = vec![0usize; n];
        for (b, block) in blocks.iter().enumerate() {
            for &i in block {
                labels[i] = b;
            }
        }
        Ok(Partition::from_labels(&labels))
    }

    pub fn n_elements(&self) -> usize {
        self.n
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Canonical labels: block index ordered by first appearance.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (b, block) in self.blocks.iter().enumerate() {
            for &i in block {
                out[i] = b;
            }
        }
        out
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }
}

/// Partition induced at one location.
pub fn partition_of(assignments: &AssignmentField, location: usize) -> Partition {
    Partition::from_labels(assignments.row(location))
}

fn choose2(x: usize) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index (Hubert & Arabie). When both partitions are the
/// all-in-one or all-singletons partition the index is undefined; it is
/// reported as 1 for identical partitions and 0 otherwise.
pub fn adjusted_rand_index(p: &Partition, q: &Partition) -> Result<f64> {
    if p.n != q.n {
        return Err(Error::GroundSetMismatch(p.n, q.n));
    }
    let lp = p.labels();
    let lq = q.labels();
    let mut table = vec![0usize; p.n_blocks() * q.n_blocks()];
    for (a, b) in lp.iter().zip(&lq) {
        table[a * q.n_blocks() + b] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let rows: f64 = p.block_sizes().into_iter().map(choose2).sum();
    let cols: f64 = q.block_sizes().into_iter().map(choose2).sum();
    let total = choose2(p.n);
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        return Ok(if p == q { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Log probability of `p` under the Chinese restaurant process with
/// concentration `alpha`, by sequential seating in element order.
pub fn crp_log_prob(p: &Partition, alpha: f64) -> f64 {
    // Closed form of the seating product:
    // α^B Γ(α) / Γ(α + N) ∏_b Γ(n_b)
    let n = p.n as f64;
    let blocks = p.n_blocks() as f64;
    blocks * alpha.ln() + ln_gamma(alpha) - ln_gamma(alpha + n)
        + p
            .block_sizes()
            .into_iter()
            .map(|s| ln_gamma(s as f64))
            .sum::<f64>()
}

/// Every set partition of {0, …, n-1}, via restricted growth strings.
pub fn all_partitions(n: usize) -> Vec<Partition> {
    let mut out = Vec::new();
    let mut rgs = vec![0usize; n];
    fn rec(i: usize, max: usize, rgs: &mut Vec<usize>, out: &mut Vec<Partition>) {
        if i == rgs.len() {
            out.push(Partition::from_labels(rgs));
            return;
        }
        for b in 0..=max + 1 {
            rgs[i] = b;
            rec(i + 1, max.max(b), rgs, out);
        }
    }
    if n == 0 {
        return vec![Partition::from_labels::<usize>(&[])];
    }
    rec(1, 0, &mut rgs, &mut out);
    out
}

/// Draws sticks, latent functions and the implied assignments from the
/// truncated process at the locations covered by `gram`.
pub fn sample_prior<R: Rng + ?Sized>(
    config: &TruncationConfig,
    gram: &GramMatrix,
    n_objects: usize,
    rng: &mut R,
) -> Result<(StickWeights, FunctionMatrix, AssignmentField)> {
    config.validate()?;
    let sticks = StickWeights::sample_prior(config, config.alpha, rng);
    let f = FunctionMatrix::sample_prior(gram, n_objects, config.n_sticks(), rng)?;
    let c = AssignmentField::compute(&f, &sticks);
    Ok((sticks, f, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::similarity_gram;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn stick_lengths_examples() {
        let s = StickWeights::new(vec![0.5, 0.5]);
        assert!(close(&stick_lengths(&s), &[0.5, 0.25], 1e-15));
        assert!((s.leftover() - 0.25).abs() < 1e-15);

        let s = StickWeights::new(vec![0.2, 0.5, 0.5]);
        assert!(close(&stick_lengths(&s), &[0.2, 0.4, 0.2], 1e-15));
        assert!((s.leftover() - 0.2).abs() < 1e-15);

        let s = StickWeights::new(vec![1.0 - 1e-13, 0.3]);
        let pi = stick_lengths(&s);
        assert!((pi[0] - 1.0).abs() < 1e-11 && pi[1] < 1e-11);
    }

    #[test]
    fn thresholds_follow_quantile() {
        assert_eq!(threshold_of(0.5), 0.0);
        assert!((threshold_of(0.025) + 1.959_964).abs() < 1e-6);
        assert!(threshold_of(0.0).is_finite());
        assert!(threshold_of(1.0).is_finite());
        let s = StickWeights::new(vec![0.0, 1.0]);
        assert_eq!(s.logits(), &[-LOGIT_LIMIT, LOGIT_LIMIT]);
        assert!(s.thresholds()[0] < -30.0 && s.thresholds()[1] > 30.0);
    }

    #[test]
    fn thresholds_resolve_sticks_near_one() {
        // 1 - v far below machine epsilon: the upper tail must still match
        let x = 40.0;
        let eta = threshold_of_logit(x);
        let tail = crate::special::normal_cdf(-eta);
        assert!((tail / sigmoid(-x) - 1.0).abs() < 1e-9, "{tail:e}");
        let etas: Vec<f64> = [-500.0, -40.0, -1.0, 0.0, 1.0, 40.0, 500.0]
            .iter()
            .map(|&x| threshold_of_logit(x))
            .collect();
        assert!(etas.windows(2).all(|w| w[0] < w[1]), "{etas:?}");
        let s = StickWeights::from_logits(vec![60.0]);
        assert_eq!(s.values()[0], 1.0);
        assert_eq!(s.ln_complements().next().unwrap(), -60.0 - (-60.0f64).exp().ln_1p());
    }

    #[test]
    fn assign_examples() {
        assert_eq!(assign(&[0.5, -0.3], &[0.0, 0.0]), 1);
        assert_eq!(assign(&[1.0, 1.0], &[0.0, 0.0]), 2);
        assert_eq!(assign(&[-1.0, 5.0], &[0.0, 0.0]), 0);
    }

    #[test]
    fn partition_of_examples() {
        let a = AssignmentField::from_rows(vec![vec![1, 1, 2], vec![5, 5, 5], vec![1, 2, 3]]);
        assert_eq!(partition_of(&a, 0).blocks(), &[vec![0, 1], vec![2]]);
        assert_eq!(partition_of(&a, 1).blocks(), &[vec![0, 1, 2]]);
        assert_eq!(partition_of(&a, 2).n_blocks(), 3);
    }

    /// Pair-counting Rand-family oracle over all object pairs.
    fn ari_by_pairs(p: &Partition, q: &Partition) -> f64 {
        let (lp, lq) = (p.labels(), q.labels());
        let n = lp.len();
        let (mut both, mut only_p, mut only_q, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                match (lp[i] == lp[j], lq[i] == lq[j]) {
                    (true, true) => both += 1.0,
                    (true, false) => only_p += 1.0,
                    (false, true) => only_q += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let total: f64 = both + only_p + only_q + neither;
        let sp = both + only_p;
        let sq = both + only_q;
        let expected = sp * sq / total;
        (both - expected) / (0.5 * (sp + sq) - expected)
    }

    #[test]
    fn ari_examples() {
        let p = Partition::from_blocks(3, vec![vec![0, 1], vec![2]]).unwrap();
        assert_eq!(adjusted_rand_index(&p, &p).unwrap(), 1.0);

        let p = Partition::from_blocks(4, vec![vec![0, 1, 2, 3]]).unwrap();
        let q = Partition::from_blocks(4, vec![vec![0, 1], vec![2, 3]]).unwrap();
        let ari = adjusted_rand_index(&p, &q).unwrap();
        assert!((ari - ari_by_pairs(&p, &q)).abs() < 1e-15);
        assert_eq!(ari, 0.0);

        let p = Partition::from_blocks(3, vec![vec![0], vec![1], vec![2]]).unwrap();
        let q = Partition::from_blocks(3, vec![vec![0, 1, 2]]).unwrap();
        assert_eq!(adjusted_rand_index(&p, &q).unwrap(), 0.0);
        assert!((ari_by_pairs(&p, &q) - 0.0).abs() < 1e-15);
    }

    #[test]
    fn ari_ground_set_mismatch() {
        let p = Partition::from_labels(&[0, 0, 1]);
        let q = Partition::from_labels(&[0, 1]);
        assert!(matches!(
            adjusted_rand_index(&p, &q),
            Err(Error::GroundSetMismatch(3, 2))
        ));
    }

    #[test]
    fn crp_examples() {
        let one = Partition::from_labels(&[0, 0, 0]);
        assert!((crp_log_prob(&one, 1.0) - (1.0f64 / 3.0).ln()).abs() < 1e-13);
        let single = Partition::from_labels(&[0, 1, 2]);
        assert!((crp_log_prob(&single, 1.0) - (1.0f64 / 6.0).ln()).abs() < 1e-13);
        let all = all_partitions(3);
        assert_eq!(all.len(), 5);
        let total: f64 = all.iter().map(|p| crp_log_prob(p, 1.0).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    /// Sequential seating product, independent of the closed form.
    fn crp_by_seating(p: &Partition, alpha: f64) -> f64 {
        let labels = p.labels();
        let mut sizes: HashMap<usize, usize> = HashMap::new();
        let mut lp = 0.0;
        for (i, l) in labels.iter().enumerate() {
            let denom = i as f64 + alpha;
            let num = match sizes.get(l) {
                Some(&s) => s as f64,
                None => alpha,
            };
            lp += (num / denom).ln();
            *sizes.entry(*l).or_insert(0) += 1;
        }
        lp
    }

    #[test]
    fn crp_matches_seating_and_normalises() {
        for n in 1..=6 {
            for &alpha in &[0.3, 1.0, 2.5] {
                let all = all_partitions(n);
                let total: f64 = all.iter().map(|p| crp_log_prob(p, alpha).exp()).sum();
                assert!((total - 1.0).abs() < 1e-12);
                for p in &all {
                    assert!((crp_log_prob(p, alpha) - crp_by_seating(p, alpha)).abs() < 1e-12);
                }
            }
        }
        assert_eq!(all_partitions(4).len(), 15);
    }

    #[test]
    fn marginal_bernoulli_property() {
        let mut rng = stream(11, Stream::Prior);
        for &v in &[0.1, 0.5, 0.83] {
            let eta = threshold_of(v);
            let draws = 100_000;
            let hits = (0..draws)
                .filter(|_| rng.sample::<f64, _>(StandardNormal) < eta)
                .count() as f64;
            let mean = hits / draws as f64;
            let se = (v * (1.0 - v) / draws as f64).sqrt();
            assert!((mean - v).abs() < 3.0 * se, "v={v} mean={mean}");
        }
    }

    #[test]
    fn prior_near_perfect_correlation_gives_identical_assignments() {
        let t = 3;
        let gram = similarity_gram(t, &[0.99999; 3]).unwrap();
        let config = TruncationConfig::new(10, 1.0, 0.0).unwrap();
        let mut rng = stream(5, Stream::Prior);
        let (mut same, mut total) = (0usize, 0usize);
        for _ in 0..200 {
            let (_, _, c) = sample_prior(&config, &gram, 20, &mut rng).unwrap();
            for n in 0..20 {
                total += 1;
                if (1..t).all(|loc| c.get(loc, n) == c.get(0, n)) {
                    same += 1;
                }
            }
        }
        assert!(same as f64 / total as f64 >= 0.99, "{same}/{total}");
    }

    #[test]
    fn independent_locations_match_marginal_self_agreement() {
        // With Σ = I, c(t1) and c(t2) are independent given v, so
        // P(c(t1) = c(t2)) = E[Σ_k π_k²] (leftover included). Oracle: the
        // same expectation by direct Monte Carlo over v only.
        let config = TruncationConfig::new(40, 1.0, 0.0).unwrap();
        let gram = crate::kernels::GramMatrix::identity(2);
        let mut rng = stream(9, Stream::Prior);
        let mut agree = 0usize;
        let draws = 20_000;
        for _ in 0..draws {
            let (_, _, c) = sample_prior(&config, &gram, 1, &mut rng).unwrap();
            if c.get(0, 0) == c.get(1, 0) {
                agree += 1;
            }
        }
        let mut oracle_rng = stream(10, Stream::Prior);
        let mut oracle = 0.0;
        for _ in 0..draws {
            let s = StickWeights::sample_prior(&config, 1.0, &mut oracle_rng);
            let pi = stick_lengths(&s);
            oracle += pi.iter().map(|p| p * p).sum::<f64>() + s.leftover().powi(2);
        }
        oracle /= draws as f64;
        // under the CRP with α = 1, P(two objects share a table) = 1/2
        assert!((oracle - 0.5).abs() < 0.01);
        let rate = agree as f64 / draws as f64;
        let se = (0.25 / draws as f64).sqrt();
        assert!((rate - oracle).abs() < 4.0 * se + 0.01, "rate={rate} oracle={oracle}");
    }

    #[test]
    fn crp_marginal_small_n() {
        let gram = crate::kernels::GramMatrix::identity(1);
        let mut rng = stream(3, Stream::Prior);
        for &alpha in &[0.5, 1.0, 2.0] {
            let config = TruncationConfig::new(60, alpha, 0.0).unwrap();
            let n = 4;
            let draws = 20_000;
            let mut counts: HashMap<Partition, usize> = HashMap::new();
            for _ in 0..draws {
                let (_, _, c) = sample_prior(&config, &gram, n, &mut rng).unwrap();
                *counts.entry(partition_of(&c, 0)).or_default() += 1;
            }
            let tv: f64 = all_partitions(n)
                .iter()
                .map(|p| {
                    let emp = *counts.get(p).unwrap_or(&0) as f64 / draws as f64;
                    (emp - crp_log_prob(p, alpha).exp()).abs()
                })
                .sum::<f64>()
                / 2.0;
            assert!(tv <= 0.02, "alpha={alpha} tv={tv}");
        }
    }

    #[test]
    fn pitman_yor_sticks_have_expected_means() {
        let config = TruncationConfig::new(4, 1.0, 0.5).unwrap();
        let mut rng = stream(2, Stream::Prior);
        let draws = 20_000;
        let mut sums = [0.0; 3];
        for _ in 0..draws {
            let s = StickWeights::sample_prior(&config, 1.0, &mut rng);
            for (acc, v) in sums.iter_mut().zip(s.values()) {
                *acc += v;
            }
        }
        for (k, acc) in sums.iter().enumerate() {
            let (a, b) = config.stick_prior(k, 1.0);
            assert!((acc / draws as f64 - a / (a + b)).abs() < 0.01);
        }
    }

    #[test]
    fn invalid_truncation_rejected() {
        assert!(TruncationConfig::new(1, 1.0, 0.0).is_err());
        assert!(TruncationConfig::new(5, 1.0, 1.0).is_err());
        assert!(TruncationConfig::new(5, -0.5, 0.2).is_err());
        assert!(TruncationConfig::new(5, -0.1, 0.2).is_ok());
    }

    proptest! {
        #[test]
        fn sticks_normalise(v in proptest::collection::vec(0.0f64..1.0, 1..40)) {
            let s = StickWeights::new(v);
            let total: f64 = stick_lengths(&s).iter().sum::<f64>() + s.leftover();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn assignment_is_deterministic(seed in 0u64..1000) {
            let mut rng = stream(seed, Stream::Prior);
            let gram = crate::kernels::se_gram(&[0.0, 1.0, 2.0], 1.0);
            let config = TruncationConfig::new(6, 1.0, 0.0).unwrap();
            let (s, f, c) = sample_prior(&config, &gram, 5, &mut rng).unwrap();
            prop_assert_eq!(&AssignmentField::compute(&f, &s), &c);
            for loc in 0..3 {
                for n in 0..5 {
                    let row: Vec<f64> = (0..5).map(|k| f.get(loc, n, k)).collect();
                    prop_assert_eq!(assign(&row, s.thresholds()), c.get(loc, n));
                }
            }
        }

        #[test]
        fn partition_label_invariant(labels in proptest::collection::vec(0usize..5, 1..20), shift in 1usize..100) {
            let relabelled: Vec<usize> = labels.iter().map(|l| (l * 7 + shift) % 1000).collect();
            prop_assert_eq!(Partition::from_labels(&labels), Partition::from_labels(&relabelled));
        }

        #[test]
        fn ari_matches_pair_oracle(a in proptest::collection::vec(0usize..3, 6..12), b in proptest::collection::vec(0usize..3, 12)) {
            let b = &b[..a.len()];
            let p = Partition::from_labels(&a);
            let q = Partition::from_labels(b);
            let ari = adjusted_rand_index(&p, &q).unwrap();
            let oracle = ari_by_pairs(&p, &q);
            if oracle.is_finite() {
                prop_assert!((ari - oracle).abs() < 1e-12);
            }
            prop_assert!(ari <= 1.0 + 1e-12);
        }
    }
}
