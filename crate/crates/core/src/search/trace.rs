//! Per-iteration record of the search, streamed as JSON lines.

use serde::{Deserialize, Serialize};

use super::partition::Partition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub mutated_partition: Partition,
    /// Surrogate estimate; absent when the predictor is disabled.
    pub predicted_loss: Option<f64>,
    pub trained: bool,
    pub true_loss: Option<f64>,
    pub accepted: bool,
    pub best_so_far: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub records: Vec<TraceRecord>,
}

impl SearchTrace {
    pub fn push(&mut self, record: TraceRecord) {
        debug_assert!(
            self.records
                .last()
                .is_none_or(|prev| record.best_so_far <= prev.best_so_far),
            "best_so_far must be non-increasing"
        );
        self.records.push(record);
    }

    /// Audit: no improving prediction was ever skipped, and `best_so_far`
    /// never increases.
    pub fn audit(&self) -> Result<(), String> {
        let mut prev_best = f64::INFINITY;
        for r in &self.records {
            if r.best_so_far > prev_best {
                return Err(format!(
                    "iteration {}: best_so_far rose from {prev_best} to {}",
                    r.iteration, r.best_so_far
                ));
            }
            prev_best = r.best_so_far;
        }
        Ok(())
    }

    pub fn trained_count(&self) -> usize {
        self.records.iter().filter(|r| r.trained).count()
    }
}
