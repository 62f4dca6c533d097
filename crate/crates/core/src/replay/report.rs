//! Report and transcript files.
//!
//! Reports are TOML: the three accuracy ratios with their raw counts, the
//! proximity warning count, and one row per trial. Ratios are informational;
//! merging and re-reading always work from the counts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ReplayError, RunOutput};
use crate::metrics::{merge, AccuracyReport, Recall};

pub const REPORT_FORMAT: &str = "crashwatch-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl From<Recall> for MetricBlock {
    fn from(r: Recall) -> Self {
        MetricBlock {
            ratio: r.ratio(),
            tp: r.tp,
            fn_: r.fn_,
        }
    }
}

impl From<&MetricBlock> for Recall {
    fn from(m: &MetricBlock) -> Self {
        Recall { tp: m.tp, fn_: m.fn_ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub place_no: u32,
    pub vehicle: String,
    pub detected: bool,
    pub located: bool,
    pub notified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub format: String,
    pub vehicles: Vec<String>,
    pub n_trials: u64,
    pub proximity_warnings: u64,
    /// Accident detection accuracy.
    pub detection: MetricBlock,
    /// Location tracking accuracy.
    pub location: MetricBlock,
    /// Notification sending accuracy.
    pub notification: MetricBlock,
    #[serde(default, rename = "trial")]
    pub trials: Vec<TrialRow>,
}

impl ReportDocument {
    pub fn from_run(out: &RunOutput) -> Self {
        let mut doc = Self::from_accuracy(&out.accuracy);
        doc.vehicles = vec![out.vehicle_id.clone()];
        doc.proximity_warnings = out.proximity_warnings;
        doc.trials = out
            .trials
            .iter()
            .map(|t| TrialRow {
                place_no: t.place_no,
                vehicle: out.vehicle_id.clone(),
                detected: t.detected,
                located: t.located,
                notified: t.notified,
            })
            .collect();
        doc
    }

    fn from_accuracy(acc: &AccuracyReport) -> Self {
        ReportDocument {
            format: REPORT_FORMAT.to_owned(),
            vehicles: Vec::new(),
            n_trials: acc.n_trials,
            proximity_warnings: 0,
            detection: acc.detection.into(),
            location: acc.location.into(),
            notification: acc.notification.into(),
            trials: Vec::new(),
        }
    }

    pub fn accuracy(&self) -> AccuracyReport {
        AccuracyReport {
            n_trials: self.n_trials,
            detection: (&self.detection).into(),
            location: (&self.location).into(),
            notification: (&self.notification).into(),
        }
    }

    /// Combines shard reports. Trial rows are renumbered in order so places
    /// stay unique.
    pub fn merge_all<'a>(docs: impl IntoIterator<Item = &'a ReportDocument>) -> ReportDocument {
        let mut acc = AccuracyReport::empty();
        let mut vehicles = Vec::new();
        let mut trials = Vec::new();
        let mut proximity = 0;
        for d in docs {
            acc = merge(&acc, &d.accuracy());
            vehicles.extend(d.vehicles.iter().cloned());
            proximity += d.proximity_warnings;
            for row in &d.trials {
                trials.push(TrialRow {
                    place_no: trials.len() as u32 + 1,
                    ..row.clone()
                });
            }
        }
        let mut doc = Self::from_accuracy(&acc);
        doc.vehicles = vehicles;
        doc.proximity_warnings = proximity;
        doc.trials = trials;
        doc
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let doc: ReportDocument = toml::from_str(text).map_err(|e| e.to_string())?;
        if doc.format != REPORT_FORMAT {
            return Err(format!("unknown report format {:?}", doc.format));
        }
        let acc = doc.accuracy();
        for m in [acc.detection, acc.location, acc.notification] {
            if m.total() != acc.n_trials {
                return Err(format!(
                    "counts {}+{} do not add up to {} trials",
                    m.tp, m.fn_, acc.n_trials
                ));
            }
        }
        Ok(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReplayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|err| ReplayError::Io {
            path: path.to_owned(),
            err,
        })?;
        Self::parse(&text).map_err(|msg| ReplayError::Report {
            path: path.to_owned(),
            msg,
        })
    }
}

/// Every SMS dialogue of a run, one header line per delivery followed by its
/// escaped transcript.
pub fn render_transcripts(out: &RunOutput) -> String {
    let mut text = String::new();
    for d in &out.deliveries {
        text.push_str(&format!(
            "# place={} kind={} recipient={} success={} attempts={}\n",
            d.place_no, d.kind, d.report.recipient, d.report.success, d.report.attempts
        ));
        text.push_str(&d.report.transcript.render());
    }
    text
}
