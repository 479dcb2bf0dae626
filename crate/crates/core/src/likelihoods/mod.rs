//! Observation containers and collapsed likelihoods.
//!
//! Every source (a task matrix or a network snapshot) is scored given a
//! labelling of the shared object set, with cluster parameters integrated
//! out. [`SourceModel`] keeps incremental statistics so one object can be
//! removed, scored against every candidate cluster and reinserted.

mod gaussian;
mod network;

pub use gaussian::{
    gaussian_marginal_loglik, gaussian_posterior_predictive, GaussianHyper, GaussianSource, GaussianSuffStats,
    NormalGamma, StudentT,
};
pub use network::{network_marginal_loglik, network_predictive, BetaHyper, NetworkSource, PairCounts};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::AssignmentField;

/// Dense row-major matrix with a per-entry observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl MaskedMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>, observed: Vec<bool>) -> Result<Self> {
        if values.len() != rows * cols || observed.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {} values and {} mask flags",
                rows * cols,
                values.len(),
                observed.len()
            )));
        }
        if values.iter().zip(&observed).any(|(v, &o)| o && !v.is_finite()) {
            return Err(Error::Shape("observed entries must be finite".into()));
        }
        Ok(MaskedMatrix {
            rows,
            cols,
            values,
            observed,
        })
    }

    /// Fully observed matrix.
    pub fn dense(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(rows, cols, values, vec![true; rows * cols])
    }

    /// Matrix with every entry missing.
    pub fn missing(rows: usize, cols: usize) -> Self {
        MaskedMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            observed: vec![false; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut m = MaskedMatrix::missing(r, c);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != c {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {c}", row.len())));
            }
            for (j, v) in row.into_iter().enumerate() {
                m.set(i, j, v);
            }
        }
        if m.values.iter().zip(&m.observed).any(|(v, &o)| o && !v.is_finite()) {
            return Err(Error::Shape("observed entries must be finite".into()));
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let idx = i * self.cols + j;
        if self.observed[idx] {
            Some(self.values[idx])
        } else {
            None
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: Option<f64>) {
        let idx = i * self.cols + j;
        match value {
            Some(v) => {
                self.values[idx] = v;
                self.observed[idx] = true;
            }
            None => {
                self.values[idx] = 0.0;
                self.observed[idx] = false;
            }
        }
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.cols + j]
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    /// Observed entries as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows * self.cols)
            .filter(|&i| self.observed[i])
            .map(|i| (i / self.cols, i % self.cols, self.values[i]))
    }

    /// Rows restricted to `keep`, in that order.
    pub fn select_rows(&self, keep: &[usize]) -> MaskedMatrix {
        let mut out = MaskedMatrix::missing(keep.len(), self.cols);
        for (r, &i) in keep.iter().enumerate() {
            for j in 0..self.cols {
                out.set(r, j, self.get(i, j));
            }
        }
        out
    }

    /// Square submatrix on `keep` (rows and columns).
    pub fn select_square(&self, keep: &[usize]) -> MaskedMatrix {
        let mut out = MaskedMatrix::missing(keep.len(), keep.len());
        for (r, &i) in keep.iter().enumerate() {
            for (c, &j) in keep.iter().enumerate() {
                out.set(r, c, self.get(i, j));
            }
        }
        out
    }
}

/// The collection of sources sharing one ground set of objects.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationSet {
    /// Real-valued matrices, objects by features.
    Multitask { sources: Vec<MaskedMatrix> },
    /// Square binary relations, one per time point.
    Network { snapshots: Vec<MaskedMatrix>, symmetric: bool },
}

impl ObservationSet {
    pub fn multitask(sources: Vec<MaskedMatrix>) -> Result<Self> {
        let set = ObservationSet::Multitask { sources };
        set.validate()?;
        Ok(set)
    }

    pub fn network(snapshots: Vec<MaskedMatrix>, symmetric: bool) -> Result<Self> {
        let set = ObservationSet::Network { snapshots, symmetric };
        set.validate()?;
        Ok(set)
    }

    pub fn sources(&self) -> &[MaskedMatrix] {
        match self {
            ObservationSet::Multitask { sources } => sources,
            ObservationSet::Network { snapshots, .. } => snapshots,
        }
    }

    pub fn sources_mut(&mut self) -> &mut [MaskedMatrix] {
        match self {
            ObservationSet::Multitask { sources } => sources,
            ObservationSet::Network { snapshots, .. } => snapshots,
        }
    }

    pub fn n_sources(&self) -> usize {
        self.sources().len()
    }

    pub fn n_objects(&self) -> usize {
        self.sources().first().map_or(0, MaskedMatrix::rows)
    }

    pub fn is_network(&self) -> bool {
        matches!(self, ObservationSet::Network { .. })
    }

    pub fn is_symmetric(&self) -> bool {
        matches!(self, ObservationSet::Network { symmetric: true, .. })
    }

    pub fn validate(&self) -> Result<()> {
        let sources = self.sources();
        if sources.is_empty() {
            return Err(Error::Shape("no sources".into()));
        }
        let n = sources[0].rows();
        for (s, m) in sources.iter().enumerate() {
            if m.rows() != n {
                return Err(Error::GroundSetMismatch(n, m.rows()));
            }
            if let ObservationSet::Network { symmetric, .. } = self {
                if m.cols() != n {
                    return Err(Error::Shape(format!("snapshot {s} is {}x{}, not square", m.rows(), m.cols())));
                }
                if let Some((i, j, v)) = m.entries().find(|&(_, _, v)| v != 0.0 && v != 1.0) {
                    return Err(Error::Shape(format!("snapshot {s} entry ({i},{j}) = {v} is not binary")));
                }
                if *symmetric {
                    for (i, j, v) in m.entries() {
                        if i != j && m.get(j, i).is_some_and(|w| w != v) {
                            return Err(Error::Shape(format!("snapshot {s} is not symmetric at ({i},{j})")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The same sources restricted to a subset of objects.
    pub fn select_objects(&self, keep: &[usize]) -> ObservationSet {
        match self {
            ObservationSet::Multitask { sources } => ObservationSet::Multitask {
                sources: sources.iter().map(|m| m.select_rows(keep)).collect(),
            },
            ObservationSet::Network { snapshots, symmetric } => ObservationSet::Network {
                snapshots: snapshots.iter().map(|m| m.select_square(keep)).collect(),
                symmetric: *symmetric,
            },
        }
    }

    /// A single-source observation set.
    pub fn single(&self, source: usize) -> ObservationSet {
        match self {
            ObservationSet::Multitask { sources } => ObservationSet::Multitask {
                sources: vec![sources[source].clone()],
            },
            ObservationSet::Network { snapshots, symmetric } => ObservationSet::Network {
                snapshots: vec![snapshots[source].clone()],
                symmetric: *symmetric,
            },
        }
    }

    /// One incremental model per source.
    pub fn source_models(&self, hyper: &ModelHyper) -> Vec<Box<dyn SourceModel>> {
        match self {
            ObservationSet::Multitask { sources } => sources
                .iter()
                .map(|m| Box::new(GaussianSource::new(m.clone(), hyper.gaussian)) as Box<dyn SourceModel>)
                .collect(),
            ObservationSet::Network { snapshots, symmetric } => snapshots
                .iter()
                .map(|m| Box::new(NetworkSource::new(m.clone(), *symmetric, hyper.network)) as Box<dyn SourceModel>)
                .collect(),
        }
    }

    /// Collapsed log likelihood of one source under a labelling.
    pub fn source_loglik(&self, source: usize, labels: &[usize], hyper: &ModelHyper) -> f64 {
        match self {
            ObservationSet::Multitask { sources } => gaussian_marginal_loglik(&sources[source], labels, &hyper.gaussian),
            ObservationSet::Network { snapshots, symmetric } => {
                network_marginal_loglik(&snapshots[source], labels, &hyper.network, *symmetric)
            }
        }
    }
}

/// Hyperparameters of both observation families.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelHyper {
    pub gaussian: GaussianHyper,
    pub network: BetaHyper,
}

/// Sum of per-source collapsed log likelihoods; source `s` is read at
/// location `locations[s]` of the assignment field.
pub fn total_loglik(data: &ObservationSet, field: &AssignmentField, locations: &[usize], hyper: &ModelHyper) -> f64 {
    assert_eq!(locations.len(), data.n_sources());
    (0..data.n_sources())
        .map(|s| data.source_loglik(s, field.row(locations[s]), hyper))
        .sum()
}

/// Incremental collapsed likelihood of one source.
///
/// `remove` must be called before `add_predictive` for the same object, and
/// `insert` afterwards; `labels` holds the current labels of all objects (the
/// entry for the moved object is read by `remove` only).
pub trait SourceModel: Send + Sync + std::fmt::Debug {
    fn n_objects(&self) -> usize;
    /// Recompute all statistics from scratch.
    fn rebuild(&mut self, labels: &[usize]);
    /// Collapsed log likelihood of the current statistics.
    fn log_marginal(&self) -> f64;
    /// Collapsed log likelihood of an arbitrary labelling, without touching state.
    fn score(&self, labels: &[usize]) -> f64;
    fn remove(&mut self, object: usize, labels: &[usize]);
    fn insert(&mut self, object: usize, label: usize, labels: &[usize]);
    /// Adds log p(data of `object` | object in cluster k, rest) to `out[k]`.
    fn add_predictive(&self, object: usize, labels: &[usize], out: &mut [f64]);
    /// Log posterior predictive of one held-out entry given current statistics.
    fn log_predictive_entry(&self, row: usize, col: usize, value: f64, labels: &[usize]) -> f64;
    fn clone_box(&self) -> Box<dyn SourceModel>;
}

impl Clone for Box<dyn SourceModel> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gaussian(n: usize, d: usize, rng: &mut ChaCha8Rng) -> MaskedMatrix {
        let mut m = MaskedMatrix::missing(n, d);
        for i in 0..n {
            for j in 0..d {
                if rng.random::<f64>() < 0.85 {
                    m.set(i, j, Some(rng.random::<f64>() * 4.0 - 2.0));
                }
            }
        }
        m
    }

    fn random_network(n: usize, symmetric: bool, rng: &mut ChaCha8Rng) -> MaskedMatrix {
        let mut m = MaskedMatrix::missing(n, n);
        for i in 0..n {
            for j in 0..n {
                if i == j || (symmetric && j < i) {
                    continue;
                }
                if rng.random::<f64>() < 0.9 {
                    let y = f64::from(u8::from(rng.random::<f64>() < 0.3));
                    m.set(i, j, Some(y));
                    if symmetric {
                        m.set(j, i, Some(y));
                    }
                }
            }
        }
        m
    }

    fn check_incremental(model: &mut dyn SourceModel, n: usize, moves: usize, k: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        model.rebuild(&labels);
        for step in 0..moves {
            let obj = rng.random_range(0..n);
            model.remove(obj, &labels);
            let before = model.log_marginal();
            let mut pred = vec![0.0; k];
            model.add_predictive(obj, &labels, &mut pred);
            let new = rng.random_range(0..k);
            model.insert(obj, new, &labels);
            labels[obj] = new;
            let after = model.log_marginal();
            assert!(
                (after - before - pred[new]).abs() < 1e-8,
                "predictive mismatch at step {step}: {} vs {}",
                after - before,
                pred[new]
            );
            if step % 97 == 0 {
                let full = model.score(&labels);
                assert!((after - full).abs() < 1e-9 * full.abs().max(1.0), "drift at {step}");
            }
        }
        let full = model.score(&labels);
        assert!((model.log_marginal() - full).abs() < 1e-9 * full.abs().max(1.0));
    }

    #[test]
    fn gaussian_incremental_matches_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_gaussian(12, 3, &mut rng);
        let mut model = GaussianSource::new(data, GaussianHyper::default());
        check_incremental(&mut model, 12, 10_000, 5, 11);
    }

    #[test]
    fn network_incremental_matches_rebuild() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for symmetric in [true, false] {
            let data = random_network(10, symmetric, &mut rng);
            let mut model = NetworkSource::new(data, symmetric, BetaHyper::default());
            check_incremental(&mut model, 10, 10_000, 4, 12);
        }
    }

    #[test]
    fn masked_entries_do_not_contribute() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let full = random_gaussian(8, 4, &mut rng);
        let mut wild = full.clone();
        let hidden = MaskedMatrix::missing(8, 4);
        for i in 0..8 {
            for j in 0..4 {
                if !full.is_observed(i, j) {
                    // overwrite masked values with garbage, keep them masked
                    wild.values[i * 4 + j] = 1e6;
                }
            }
        }
        let labels = [0, 1, 0, 2, 1, 0, 2, 2];
        let h = GaussianHyper::default();
        assert_eq!(gaussian_marginal_loglik(&full, &labels, &h), gaussian_marginal_loglik(&wild, &labels, &h));
        assert_eq!(gaussian_marginal_loglik(&hidden, &labels, &h), 0.0);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let a = MaskedMatrix::missing(3, 2);
        let b = MaskedMatrix::missing(4, 2);
        assert!(matches!(ObservationSet::multitask(vec![a, b]), Err(Error::GroundSetMismatch(3, 4))));
        let rect = MaskedMatrix::missing(3, 2);
        assert!(ObservationSet::network(vec![rect], true).is_err());
        let nonbinary = MaskedMatrix::dense(2, 2, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        assert!(ObservationSet::network(vec![nonbinary], true).is_err());
        let asym = MaskedMatrix::dense(2, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(ObservationSet::network(vec![asym.clone()], true).is_err());
        assert!(ObservationSet::network(vec![asym], false).is_ok());
    }

    proptest! {
        #[test]
        fn label_permutation_invariance(seed in 0u64..500, perm_seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_gaussian(9, 2, &mut rng);
            let net = random_network(9, false, &mut rng);
            let labels: Vec<usize> = (0..9).map(|_| rng.random_range(0..4)).collect();
            let mut perm: Vec<usize> = (0..4).collect();
            let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..4).rev() {
                perm.swap(i, prng.random_range(0..=i));
            }
            let relabelled: Vec<usize> = labels.iter().map(|&c| perm[c]).collect();
            let h = ModelHyper::default();
            let a = gaussian_marginal_loglik(&g, &labels, &h.gaussian);
            let b = gaussian_marginal_loglik(&g, &relabelled, &h.gaussian);
            prop_assert!((a - b).abs() < 1e-10);
            let a = network_marginal_loglik(&net, &labels, &h.network, false);
            let b = network_marginal_loglik(&net, &relabelled, &h.network, false);
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn symmetric_network_matches_directed_half(seed in 0u64..300) {
            // a symmetric snapshot scored as directed counts every pair twice,
            // so the blocks differ; but the symmetric score must equal the
            // directed score of its upper triangle alone
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sym = random_network(7, true, &mut rng);
            let mut upper = sym.clone();
            for i in 0..7 {
                for j in 0..i {
                    upper.set(i, j, None);
                }
            }
            let labels: Vec<usize> = (0..7).map(|_| rng.random_range(0..3)).collect();
            // canonicalise blocks so (k, l) and (l, k) coincide in the directed count
            let sorted: Vec<usize> = labels.clone();
            let h = BetaHyper::default();
            let s = network_marginal_loglik(&sym, &sorted, &h, true);
            let mut counts = PairCounts::new(3);
            for (i, j, y) in upper.entries() {
                let (a, b) = (labels[i].min(labels[j]), labels[i].max(labels[j]));
                counts.add(a, b, y, 1.0);
            }
            prop_assert!((s - counts.log_marginal(&h)).abs() < 1e-10);
        }
    }
}
