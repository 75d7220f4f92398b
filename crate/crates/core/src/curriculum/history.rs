use std::collections::BTreeMap;

use super::CurriculumBatch;

/// How many intervals selected each sample.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SelectionHistory {
    counts: BTreeMap<u64, u64>,
}

impl SelectionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Marks first-time ids in `batch`, bumps every count and returns the
    /// number of first-time ids.
    pub fn update(&mut self, batch: &mut CurriculumBatch) -> usize {
        batch.first_time_flags = batch
            .selected_ids
            .iter()
            .map(|id| {
                let c = self.counts.entry(*id).or_insert(0);
                *c += 1;
                *c == 1
            })
            .collect();
        batch.first_time_flags.iter().filter(|&&f| f).count()
    }

    pub fn count(&self, id: u64) -> u64 {
        self.counts.get(&id).copied().unwrap_or(0)
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }
}
