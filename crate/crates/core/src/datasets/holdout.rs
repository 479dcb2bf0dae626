//! Heldout-entry masks.
//!
//! Eligible entries are shuffled once per permutation and cut into
//! `floor(1 / fraction)` disjoint folds of `round(fraction * eligible)`
//! entries; repeat `r` uses permutation `r / folds` and fold `r % folds`.
//! In symmetric networks an unordered pair is one entry and masking it hides
//! both directions.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::likelihoods::ObservationSet;
use crate::rng::{derive_seed, stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldoutPlan {
    pub fraction: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for HoldoutPlan {
    fn default() -> Self {
        HoldoutPlan {
            fraction: 0.1,
            repeats: 10,
            seed: 0,
        }
    }
}

/// One heldout entry and its true value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldEntry {
    pub source: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub train: ObservationSet,
    pub held: Vec<HeldEntry>,
}

impl HoldoutPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 0.5) {
            return Err(Error::Config(format!(
                "holdout fraction must lie in (0, 0.5], got {}",
                self.fraction
            )));
        }
        if self.repeats == 0 {
            return Err(Error::Config("at least one holdout repeat is required".into()));
        }
        Ok(())
    }

    pub fn folds(&self) -> usize {
        (1.0 / self.fraction).floor() as usize
    }

    /// Entries that can be held out, in canonical order.
    pub fn eligible(data: &ObservationSet) -> Vec<HeldEntry> {
        let symmetric = data.is_symmetric();
        let network = data.is_network();
        data.sources()
            .iter()
            .enumerate()
            .flat_map(|(s, m)| {
                m.entries()
                    .filter(move |&(i, j, _)| !network || (i != j && (!symmetric || i < j)))
                    .map(move |(row, col, value)| HeldEntry {
                        source: s,
                        row,
                        col,
                        value,
                    })
            })
            .collect()
    }

    pub fn split(&self, data: &ObservationSet, repeat: usize) -> Result<HoldoutSplit> {
        self.validate()?;
        let mut entries = Self::eligible(data);
        let folds = self.folds();
        let size = (self.fraction * entries.len() as f64).round() as usize;
        if size == 0 {
            return Err(Error::Config("holdout fraction selects no entries".into()));
        }
        let (perm, fold) = (repeat / folds, repeat % folds);
        let mut rng = stream(derive_seed(self.seed, perm as u64), Stream::Holdout);
        entries.shuffle(&mut rng);
        let held: Vec<HeldEntry> = entries[fold * size..(fold + 1) * size].to_vec();
        let mut train = data.clone();
        let symmetric = data.is_symmetric();
        {
            let sources = train.sources_mut();
            for e in &held {
                sources[e.source].set(e.row, e.col, None);
                if symmetric {
                    sources[e.source].set(e.col, e.row, None);
                }
            }
        }
        Ok(HoldoutSplit { train, held })
    }

    pub fn splits(&self, data: &ObservationSet) -> Result<Vec<HoldoutSplit>> {
        (0..self.repeats).map(|r| self.split(data, r)).collect()
    }
}
