use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use super::{CurriculumBatch, CurriculumError};
use crate::entropy::EntropyRecord;

/// One selected sample. `H` is blank when the strategy did not score the pool.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchLogRow {
    pub interval: usize,
    pub strategy: String,
    pub sample_id: u64,
    #[serde(rename = "H")]
    pub entropy: Option<f64>,
    pub first_time: bool,
}

impl BatchLogRow {
    pub fn from_batch(batch: &CurriculumBatch, records: &[EntropyRecord]) -> Vec<Self> {
        let by_id: HashMap<u64, f64> = records.iter().map(|r| (r.sample_id, r.value)).collect();
        batch
            .selected_ids
            .iter()
            .zip(&batch.first_time_flags)
            .map(|(&id, &first)| Self {
                interval: batch.interval,
                strategy: batch.strategy.clone(),
                sample_id: id,
                entropy: by_id.get(&id).copied(),
                first_time: first,
            })
            .collect()
    }
}

/// CSV columns: `interval,strategy,sample_id,H,first_time`.
pub fn write_batch_log<W: Write>(rows: &[BatchLogRow], out: W) -> Result<(), CurriculumError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["interval", "strategy", "sample_id", "H", "first_time"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
