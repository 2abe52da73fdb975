use std::collections::BTreeSet;

use crate::data::SampleId;
use crate::error::{Error, Result};

/// Unlabelled pool `U`, annotated pool `D` and every id ever annotated.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    train_size: usize,
    unlabeled: BTreeSet<SampleId>,
    annotated: BTreeSet<SampleId>,
    ever_annotated: BTreeSet<SampleId>,
    pub epoch: usize,
}

impl PoolState {
    pub fn new(train_ids: impl IntoIterator<Item = SampleId>) -> Self {
        let unlabeled: BTreeSet<_> = train_ids.into_iter().collect();
        Self {
            train_size: unlabeled.len(),
            unlabeled,
            annotated: BTreeSet::new(),
            ever_annotated: BTreeSet::new(),
            epoch: 0,
        }
    }

    pub fn train_size(&self) -> usize {
        self.train_size
    }

    pub fn unlabeled(&self) -> &BTreeSet<SampleId> {
        &self.unlabeled
    }

    pub fn annotated(&self) -> &BTreeSet<SampleId> {
        &self.annotated
    }

    pub fn ever_annotated(&self) -> &BTreeSet<SampleId> {
        &self.ever_annotated
    }

    /// Moves `ids` from `U` into `D`. Every id must currently be unlabelled.
    pub fn accumulate(&mut self, ids: &[SampleId]) -> Result<()> {
        if let Some(id) = ids.iter().find(|id| !self.unlabeled.contains(id)) {
            return Err(Error::Internal(format!("sample {id} is not in the unlabeled pool")));
        }
        for &id in ids {
            self.unlabeled.remove(&id);
            self.annotated.insert(id);
            self.ever_annotated.insert(id);
        }
        Ok(())
    }

    /// Replaces `D` with `ids`, drawn from the full training pool; `U` is untouched.
    pub fn recalculate(&mut self, ids: &[SampleId]) -> Result<()> {
        if let Some(id) = ids.iter().find(|id| !self.unlabeled.contains(id)) {
            return Err(Error::Internal(format!("sample {id} is not in the training pool")));
        }
        self.annotated = ids.iter().copied().collect();
        self.ever_annotated.extend(ids.iter().copied());
        Ok(())
    }

    pub fn clear_annotated(&mut self) {
        self.annotated.clear();
    }

    /// `|D| / |train|`.
    pub fn annotated_fraction(&self) -> f64 {
        ratio(self.annotated.len(), self.train_size)
    }

    /// `|ever annotated| / |train|`.
    pub fn cumulative_fraction(&self) -> f64 {
        ratio(self.ever_annotated.len(), self.train_size)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}
