use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EntropyError, EntropyRecord, Estimator};

#[derive(Serialize, Deserialize)]
struct Row {
    sample_id: u64,
    interval: usize,
    estimator: Estimator,
    #[serde(rename = "L")]
    prefix_length: usize,
    qap: bool,
    #[serde(rename = "H")]
    value: f64,
    wall_time_s: f64,
}

/// CSV columns: `sample_id,interval,estimator,L,qap,H,wall_time_s`.
pub fn write_records_csv<W: Write>(records: &[EntropyRecord], out: W) -> Result<(), EntropyError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(Row {
            sample_id: r.sample_id,
            interval: r.interval,
            estimator: r.estimator,
            prefix_length: r.prefix_length,
            qap: r.with_qap,
            value: r.value,
            wall_time_s: r.wall_time,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<EntropyRecord>, EntropyError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|row| {
            let row: Row = row?;
            Ok(EntropyRecord {
                sample_id: row.sample_id,
                interval: row.interval,
                estimator: row.estimator,
                prefix_length: row.prefix_length,
                with_qap: row.qap,
                value: row.value,
                wall_time: row.wall_time_s,
            })
        })
        .collect()
}
