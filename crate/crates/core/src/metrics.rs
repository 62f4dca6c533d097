//! Detection, location and notification accuracy over a set of trials.
//!
//! Each accuracy is a recall, `TP / (TP + FN)`. Counts are kept alongside the
//! ratios so that reports from separate shards merge exactly.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no trials to evaluate")]
    EmptyTrials,
    #[error("place {0} appears more than once")]
    DuplicatePlace(u32),
}

/// Outcome of one staged accident.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub place_no: u32,
    pub detected: bool,
    pub located: bool,
    pub notified: bool,
}

/// Hit and miss counts for one recall ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recall {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Recall {
    fn tally(hits: impl Iterator<Item = bool>) -> Self {
        hits.fold(Recall::default(), |mut r, hit| {
            if hit {
                r.tp += 1;
            } else {
                r.fn_ += 1;
            }
            r
        })
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_
    }

    /// `None` for the zero-count identity.
    pub fn ratio(&self) -> Option<f64> {
        match self.total() {
            0 => None,
            n => Some(self.tp as f64 / n as f64),
        }
    }

    fn add(self, other: Recall) -> Recall {
        Recall {
            tp: self.tp + other.tp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n_trials: u64,
    pub detection: Recall,
    pub location: Recall,
    pub notification: Recall,
}

impl AccuracyReport {
    /// Identity element for [`merge`].
    pub fn empty() -> Self {
        AccuracyReport::default()
    }

    /// Accident detection accuracy.
    pub fn d_a(&self) -> Option<f64> {
        self.detection.ratio()
    }

    /// Location tracking accuracy.
    pub fn t_l(&self) -> Option<f64> {
        self.location.ratio()
    }

    /// Notification sending accuracy.
    pub fn s_n(&self) -> Option<f64> {
        self.notification.ratio()
    }
}

pub fn accumulate(records: &[TrialRecord]) -> Result<AccuracyReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyTrials);
    }
    let mut seen = HashSet::new();
    if let Some(dup) = records.iter().find(|r| !seen.insert(r.place_no)) {
        return Err(MetricsError::DuplicatePlace(dup.place_no));
    }
    Ok(AccuracyReport {
        n_trials: records.len() as u64,
        detection: Recall::tally(records.iter().map(|r| r.detected)),
        location: Recall::tally(records.iter().map(|r| r.located)),
        notification: Recall::tally(records.iter().map(|r| r.notified)),
    })
}

/// Adds counts. Callers are responsible for the two reports covering
/// disjoint places.
pub fn merge(a: &AccuracyReport, b: &AccuracyReport) -> AccuracyReport {
    AccuracyReport {
        n_trials: a.n_trials + b.n_trials,
        detection: a.detection.add(b.detection),
        location: a.location.add(b.location),
        notification: a.notification.add(b.notification),
    }
}

/// Outcomes of twenty staged field trials: place 6 missed detection, places 9 and 15 missed
/// the exact location, every notification went out.
pub fn reference_field_trials() -> Vec<TrialRecord> {
    (1..=20)
        .map(|place_no| TrialRecord {
            place_no,
            detected: place_no != 6,
            located: place_no != 9 && place_no != 15,
            notified: true,
        })
        .collect()
}
