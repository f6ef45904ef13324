//! Identity-labelled embedding sets.

mod csv_io;
mod synthetic;

pub use csv_io::{load_embeddings, read_embeddings, save_embeddings, write_embeddings};
pub use synthetic::{gen_synthetic, generate, Synthetic, SyntheticConfig, OUTLIER_QUALITY};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Profile/frontal boundary and the folded yaw range, in degrees.
pub const MAX_YAW: f64 = 90.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub feature: Vec<f64>,
    /// Degrees in `[0, 90]`; left and right profiles are folded together.
    pub yaw: f64,
    /// Synthetic data only. Never visible to the learner.
    pub quality: Option<f64>,
}

impl Member {
    pub fn is_planted_outlier(&self) -> bool {
        self.quality == Some(OUTLIER_QUALITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub set_id: String,
    pub identity: usize,
    pub members: Vec<Member>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.members.first().map_or(0, |m| m.feature.len())
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.members.iter().map(|m| m.feature.as_slice()).collect()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Input(format!("set `{}` has no members", self.set_id)));
        }
        for (i, m) in self.members.iter().enumerate() {
            if m.feature.len() != dim {
                return Err(Error::Shape(format!(
                    "set `{}` member {i} has dim {}, expected {dim}",
                    self.set_id,
                    m.feature.len()
                )));
            }
            if !m.feature.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("set `{}` member {i}", self.set_id)));
            }
            if !(0.0..=MAX_YAW).contains(&m.yaw) {
                return Err(Error::Input(format!(
                    "set `{}` member {i} yaw {} outside [0, {MAX_YAW}]",
                    self.set_id, m.yaw
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sets: Vec<FeatureSet>,
    pub num_identities: usize,
    pub dim: usize,
}

impl Dataset {
    /// Builds a dataset, re-indexing identities densely in ascending order of
    /// the labels they carry.
    pub fn from_sets(mut sets: Vec<FeatureSet>, dim: usize) -> Result<Self> {
        let labels: BTreeMap<usize, usize> = sets
            .iter()
            .map(|s| s.identity)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(dense, orig)| (orig, dense))
            .collect();
        for s in &mut sets {
            s.validate(dim)?;
            s.identity = labels[&s.identity];
        }
        Ok(Self {
            num_identities: labels.len(),
            sets,
            dim,
        })
    }

    pub fn find(&self, set_id: &str) -> Option<&FeatureSet> {
        self.sets.iter().find(|s| s.set_id == set_id)
    }

    /// Copy with every `quality` dropped (the CSV format does not carry it).
    pub fn without_quality(&self) -> Self {
        let mut out = self.clone();
        for m in out.sets.iter_mut().flat_map(|s| s.members.iter_mut()) {
            m.quality = None;
        }
        out
    }

    /// Identity-disjoint split: a `test_fraction` share of identities (at
    /// least one, at most all but one) goes to the test side.
    pub fn split<R: Rng + ?Sized>(&self, test_fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(Error::config(
                "test_fraction",
                format!("must lie in (0, 1), got {test_fraction}"),
            ));
        }
        if self.num_identities < 2 {
            return Err(Error::Input(format!(
                "cannot split {} identities",
                self.num_identities
            )));
        }
        let n_test = ((self.num_identities as f64 * test_fraction).round() as usize)
            .clamp(1, self.num_identities - 1);
        let mut ids: Vec<usize> = (0..self.num_identities).collect();
        ids.shuffle(rng);
        let mut is_test = vec![false; self.num_identities];
        for &i in &ids[..n_test] {
            is_test[i] = true;
        }
        let (test, train): (Vec<_>, Vec<_>) = self.sets.iter().cloned().partition(|s| is_test[s.identity]);
        Ok((Dataset::from_sets(train, self.dim)?, Dataset::from_sets(test, self.dim)?))
    }
}

/// Free-function form of [`Dataset::split`].
pub fn split<R: Rng + ?Sized>(ds: &Dataset, test_fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
    ds.split(test_fraction, rng)
}
