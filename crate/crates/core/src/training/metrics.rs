use std::io::{Read, Write};

use super::{Paradigm, TrainError};

#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub interval: usize,
    pub strategy: String,
    /// SFT loss or RLFT mean reward, depending on the paradigm.
    pub objective: f64,
    pub mean_batch_h: f64,
    pub lr: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntervalRow {
    pub interval: usize,
    pub first_time_count: usize,
    pub eval_accuracy: Option<f64>,
    pub mean_pool_h: f64,
}

/// Append-only training log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsLog {
    pub paradigm: Paradigm,
    steps: Vec<StepRow>,
    intervals: Vec<IntervalRow>,
}

impl MetricsLog {
    pub fn new(paradigm: Paradigm) -> Self {
        Self {
            paradigm,
            steps: Vec::new(),
            intervals: Vec::new(),
        }
    }

    pub fn push_step(&mut self, row: StepRow) -> Result<(), TrainError> {
        if let Some(last) = self.steps.last() {
            if row.step <= last.step {
                return Err(TrainError::InvalidConfig(format!(
                    "step {} does not follow step {}",
                    row.step, last.step
                )));
            }
        }
        self.steps.push(row);
        Ok(())
    }

    pub fn push_interval(&mut self, row: IntervalRow) {
        self.intervals.push(row);
    }

    pub fn steps(&self) -> &[StepRow] {
        &self.steps
    }

    pub fn intervals(&self) -> &[IntervalRow] {
        &self.intervals
    }

    pub fn objective_column(&self) -> &'static str {
        match self.paradigm {
            Paradigm::Sft => "loss",
            Paradigm::Rlft => "mean_reward",
        }
    }

    /// Columns: `step,interval,strategy,loss|mean_reward,mean_batch_H,lr,wall_time`.
    pub fn write_steps_csv<W: Write>(&self, out: W) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "interval", "strategy", self.objective_column(), "mean_batch_H", "lr", "wall_time"])?;
        for r in &self.steps {
            w.write_record([
                r.step.to_string(),
                r.interval.to_string(),
                r.strategy.clone(),
                r.objective.to_string(),
                r.mean_batch_h.to_string(),
                r.lr.to_string(),
                r.wall_time.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Columns: `interval,first_time_count,eval_accuracy,mean_pool_H`; accuracy
    /// is blank for intervals that were not evaluated.
    pub fn write_intervals_csv<W: Write>(&self, out: W) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["interval", "first_time_count", "eval_accuracy", "mean_pool_H"])?;
        for r in &self.intervals {
            w.write_record([
                r.interval.to_string(),
                r.first_time_count.to_string(),
                r.eval_accuracy.map(|a| a.to_string()).unwrap_or_default(),
                r.mean_pool_h.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, TrainError> {
    rec.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| TrainError::InvalidConfig(format!("metrics row {rec:?}: bad {name}")))
}

impl MetricsLog {
    /// Reads back the two files written by [`MetricsLog::write_steps_csv`]
    /// and [`MetricsLog::write_intervals_csv`].
    pub fn read_csv<S: Read, I: Read>(steps: S, intervals: I) -> Result<Self, TrainError> {
        let mut r = csv::Reader::from_reader(steps);
        let paradigm = match r.headers()?.get(3) {
            Some("loss") => Paradigm::Sft,
            Some("mean_reward") => Paradigm::Rlft,
            other => return Err(TrainError::InvalidConfig(format!("unknown objective column {other:?}"))),
        };
        let mut log = MetricsLog::new(paradigm);
        for rec in r.records() {
            let rec = rec?;
            log.push_step(StepRow {
                step: field(&rec, 0, "step")?,
                interval: field(&rec, 1, "interval")?,
                strategy: field(&rec, 2, "strategy")?,
                objective: field(&rec, 3, "objective")?,
                mean_batch_h: field(&rec, 4, "mean_batch_H")?,
                lr: field(&rec, 5, "lr")?,
                wall_time: field(&rec, 6, "wall_time")?,
            })?;
        }
        let mut r = csv::Reader::from_reader(intervals);
        for rec in r.records() {
            let rec = rec?;
            let eval_accuracy = match rec.get(2) {
                Some("") => None,
                _ => Some(field(&rec, 2, "eval_accuracy")?),
            };
            log.push_interval(IntervalRow {
                interval: field(&rec, 0, "interval")?,
                first_time_count: field(&rec, 1, "first_time_count")?,
                eval_accuracy,
                mean_pool_h: field(&rec, 3, "mean_pool_H")?,
            });
        }
        Ok(log)
    }
}
