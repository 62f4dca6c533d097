//! End-to-end replay: sense, detect, locate, notify.
//!
//! [`run`] walks a trace in order, feeding accelerometer and ultrasonic
//! samples to the [`Detector`] and NMEA lines to the GPS decoder. Each
//! accepted tilt accident is one trial: the freshest fix is attached (marked
//! stale if too old), the nearest hospital and police station are chosen, and
//! both are messaged through a simulated modem. Nothing reads a wall clock,
//! so the same inputs always produce the same bytes.

mod report;
mod synth;
mod trace;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{DetectionConfig, DetectionError, Detector};
use crate::geo::{compose, GeoError, ResponderRegistry};
use crate::gsm::{notify_all, DeliveryReport, FaultScript, FaultScriptError, LinkConfig, ModemSim, SimTransport};
use crate::metrics::{accumulate, AccuracyReport, TrialRecord};
use crate::nmea::{parse_sentence, NmeaError};
use crate::telemetry::{DetectionEvent, DetectionKind, GeoFix, ResponderKind, SensorSample, Timestamp};

pub use report::{render_transcripts, ReportDocument, TrialRow};
pub use synth::{synthesize_trace, Scenario};
pub use trace::{load_trace, TraceEntry, TraceError, TraceFile, TraceRecord, TRACE_VERSION};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace: {0}")]
    Trace(#[from] TraceError),
    #[error("registry: {0}")]
    Registry(#[from] GeoError),
    #[error(transparent)]
    FaultScript(#[from] FaultScriptError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
    #[error("report {path}: {msg}")]
    Report { path: PathBuf, msg: String },
}

impl From<DetectionError> for ReplayError {
    fn from(e: DetectionError) -> Self {
        ReplayError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub detection: DetectionConfig,
    /// Responder registry; a command-line path takes precedence.
    pub registry: Option<PathBuf>,
    /// Modem fault script; a command-line path takes precedence.
    pub fault_script: Option<PathBuf>,
    /// A fix older than this when an accident fires is sent marked STALE.
    pub staleness_window_ms: u64,
    /// Tilt accidents this soon after the previous one are the same crash.
    pub dedup_window_ms: u64,
    pub link: LinkConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detection: DetectionConfig::default(),
            registry: None,
            fault_script: None,
            staleness_window_ms: 30_000,
            dedup_window_ms: 5_000,
            link: LinkConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ReplayError> {
        self.detection.validate()?;
        if self.staleness_window_ms == 0 || self.dedup_window_ms == 0 {
            return Err(ReplayError::Config("windows must be positive".into()));
        }
        if self.link.response_deadline_ms == 0 {
            return Err(ReplayError::Config("response deadline must be positive".into()));
        }
        Ok(())
    }

    /// Reads a TOML config file; missing keys take their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReplayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|err| ReplayError::Io {
            path: path.to_owned(),
            err,
        })?;
        let cfg: PipelineConfig = toml::from_str(&text).map_err(|e| ReplayError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One entry of the run log.
#[derive(Debug, Clone, PartialEq)]
pub enum LogEntry {
    Detected(DetectionEvent),
    /// A second tilt event inside the dedup window of an earlier accident.
    Duplicate(DetectionEvent),
    Staged {
        t: Timestamp,
    },
    /// A trace line that could not be used.
    Rejected {
        line: usize,
        t: Timestamp,
        reason: String,
    },
    StaleFix {
        place_no: u32,
        age_ms: u64,
    },
    LocationFailure {
        place_no: u32,
        t: Timestamp,
    },
    Delivered {
        place_no: u32,
        kind: ResponderKind,
        recipient: String,
        success: bool,
        attempts: u32,
    },
    NotificationError {
        place_no: u32,
        reason: String,
    },
    MissedAccident {
        place_no: u32,
        staged_at: Timestamp,
    },
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogEntry::Detected(e) => write!(f, "detected {e}"),
            LogEntry::Duplicate(e) => write!(f, "duplicate {e}"),
            LogEntry::Staged { t } => write!(f, "t={} accident staged", t.millis()),
            LogEntry::Rejected { line, t, reason } => {
                write!(f, "t={} line {line} rejected: {reason}", t.millis())
            }
            LogEntry::StaleFix { place_no, age_ms } => {
                write!(f, "place {place_no} stale fix age={age_ms}ms")
            }
            LogEntry::LocationFailure { place_no, t } => {
                write!(f, "place {place_no} t={} location failure: no fix", t.millis())
            }
            LogEntry::Delivered {
                place_no,
                kind,
                recipient,
                success,
                attempts,
            } => write!(
                f,
                "place {place_no} sms {kind} {recipient} {} attempts={attempts}",
                if *success { "delivered" } else { "failed" }
            ),
            LogEntry::NotificationError { place_no, reason } => {
                write!(f, "place {place_no} notification error: {reason}")
            }
            LogEntry::MissedAccident { place_no, staged_at } => {
                write!(f, "place {place_no} staged at t={} not detected", staged_at.millis())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub place_no: u32,
    pub kind: ResponderKind,
    pub report: DeliveryReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub vehicle_id: String,
    pub trials: Vec<TrialRecord>,
    /// Zero counts when the trace had no trials.
    pub accuracy: AccuracyReport,
    pub deliveries: Vec<Delivery>,
    pub log: Vec<LogEntry>,
    pub proximity_warnings: u64,
}

impl RunOutput {
    pub fn report(&self) -> ReportDocument {
        ReportDocument::from_run(self)
    }

    pub fn log_text(&self) -> String {
        self.log.iter().map(|e| format!("{e}\n")).collect()
    }
}

struct PendingStage {
    t: Timestamp,
    located: bool,
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    registry: &'a ResponderRegistry,
    vehicle_id: &'a str,
    modem: SimTransport,
    last_fix: Option<GeoFix>,
    last_accident: Option<Timestamp>,
    pending_stage: Option<PendingStage>,
    out: RunOutput,
}

impl Runner<'_> {
    fn next_place(&self) -> u32 {
        self.out.trials.len() as u32 + 1
    }

    fn fresh_fix_at(&self, t: Timestamp) -> Option<GeoFix> {
        self.last_fix.map(|fix| GeoFix {
            stale: t.since(fix.t) > self.cfg.staleness_window_ms,
            ..fix
        })
    }

    fn close_stage(&mut self) {
        if let Some(stage) = self.pending_stage.take() {
            let place_no = self.next_place();
            self.out.log.push(LogEntry::MissedAccident {
                place_no,
                staged_at: stage.t,
            });
            // Nothing was handed to the modem, so no send failed.
            self.out.trials.push(TrialRecord {
                place_no,
                detected: false,
                located: stage.located,
                notified: true,
            });
        }
    }

    fn stage(&mut self, t: Timestamp) {
        self.close_stage();
        self.out.log.push(LogEntry::Staged { t });
        let located = self.fresh_fix_at(t).is_some_and(|f| !f.stale);
        self.pending_stage = Some(PendingStage { t, located });
    }

    fn event(&mut self, event: DetectionEvent) {
        match event.kind {
            DetectionKind::ProximityWarning { .. } => {
                self.out.proximity_warnings += 1;
                self.out.log.push(LogEntry::Detected(event));
            }
            DetectionKind::TiltAccident { .. } => {
                if let Some(prev) = self.last_accident {
                    if event.t.since(prev) < self.cfg.dedup_window_ms {
                        self.out.log.push(LogEntry::Duplicate(event));
                        return;
                    }
                }
                self.out.log.push(LogEntry::Detected(event));
                self.last_accident = Some(event.t);
                self.pending_stage = None;
                self.accident(event);
            }
        }
    }

    fn accident(&mut self, event: DetectionEvent) {
        let place_no = self.next_place();
        let Some(fix) = self.fresh_fix_at(event.t) else {
            self.out.log.push(LogEntry::LocationFailure { place_no, t: event.t });
            self.out.trials.push(TrialRecord {
                place_no,
                detected: true,
                located: false,
                notified: true,
            });
            return;
        };
        if fix.stale {
            self.out.log.push(LogEntry::StaleFix {
                place_no,
                age_ms: event.t.since(fix.t),
            });
        }
        let notified = match compose(&event, &fix, self.registry, self.vehicle_id) {
            Ok(n) => match notify_all(&mut self.modem, &n, self.cfg.link) {
                Ok(reports) => {
                    let kinds = [ResponderKind::Hospital, ResponderKind::Police];
                    for (kind, report) in kinds.into_iter().zip(reports) {
                        self.out.log.push(LogEntry::Delivered {
                            place_no,
                            kind,
                            recipient: report.recipient.to_string(),
                            success: report.success,
                            attempts: report.attempts,
                        });
                        self.out.deliveries.push(Delivery { place_no, kind, report });
                    }
                    self.out
                        .deliveries
                        .iter()
                        .filter(|d| d.place_no == place_no)
                        .all(|d| d.report.success)
                }
                Err(e) => {
                    self.out.log.push(LogEntry::NotificationError {
                        place_no,
                        reason: e.to_string(),
                    });
                    false
                }
            },
            Err(e) => {
                self.out.log.push(LogEntry::NotificationError {
                    place_no,
                    reason: e.to_string(),
                });
                false
            }
        };
        self.out.trials.push(TrialRecord {
            place_no,
            detected: true,
            located: !fix.stale,
            notified,
        });
    }
}

/// Replays one trace against a simulated modem running `faults`.
pub fn run(
    trace: &TraceFile,
    registry: &ResponderRegistry,
    cfg: &PipelineConfig,
    faults: FaultScript,
) -> Result<RunOutput, ReplayError> {
    cfg.validate()?;
    let mut detector = Detector::new(cfg.detection.clone())?;
    let mut runner = Runner {
        cfg,
        registry,
        vehicle_id: &trace.vehicle_id,
        modem: SimTransport::new(ModemSim::new(faults)),
        last_fix: None,
        last_accident: None,
        pending_stage: None,
        out: RunOutput {
            vehicle_id: trace.vehicle_id.clone(),
            trials: Vec::new(),
            accuracy: AccuracyReport::empty(),
            deliveries: Vec::new(),
            log: Vec::new(),
            proximity_warnings: 0,
        },
    };

    for record in &trace.records {
        let t = record.entry.timestamp();
        let reject = |reason: String| LogEntry::Rejected {
            line: record.line,
            t,
            reason,
        };
        let events = match &record.entry {
            TraceEntry::Staged(t) => {
                runner.stage(*t);
                continue;
            }
            TraceEntry::Sample(SensorSample::Accel(a)) => detector.ingest_accel(a),
            TraceEntry::Sample(SensorSample::Ultrasonic(u)) => detector.ingest_ultrasonic(u),
            TraceEntry::Sample(SensorSample::Nmea(line)) => {
                match parse_sentence(line).and_then(|s| s.to_geo_fix(line.t)) {
                    Ok(fix) => runner.last_fix = Some(fix),
                    Err(NmeaError::NoFix) => {}
                    Err(e) => runner.out.log.push(reject(e.to_string())),
                }
                continue;
            }
        };
        match events {
            Ok(events) => events.into_iter().for_each(|e| runner.event(e)),
            Err(e) => runner.out.log.push(reject(e.to_string())),
        }
    }
    runner.close_stage();

    let mut out = runner.out;
    if !out.trials.is_empty() {
        out.accuracy = accumulate(&out.trials).expect("place numbers are sequential");
    }
    Ok(out)
}

/// Loads the registry and fault script named by the config (or overrides).
pub fn load_inputs(
    cfg: &PipelineConfig,
    registry: Option<&Path>,
    fault_script: Option<&Path>,
) -> Result<(ResponderRegistry, FaultScript), ReplayError> {
    let registry_path = registry
        .map(Path::to_path_buf)
        .or_else(|| cfg.registry.clone())
        .ok_or_else(|| ReplayError::Config("no responder registry given".into()))?;
    let registry = ResponderRegistry::load(&registry_path)?;
    let faults = match fault_script.map(Path::to_path_buf).or_else(|| cfg.fault_script.clone()) {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|err| ReplayError::Io { path, err })?;
            FaultScript::parse(&text)?
        }
        None => FaultScript::default(),
    };
    Ok((registry, faults))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmea::NmeaSentence;

    const REGISTRY: &str = "\
H1,hospital,Dhaka Medical,+8801711000001,23.7256,90.3973
H2,hospital,Chittagong Medical,+8801711000002,22.3594,91.8308
P1,police,Ramna,+8801711000003,23.7375,90.4030
P2,police,Kotwali,+8801711000004,22.3384,91.8317
";

    fn registry() -> ResponderRegistry {
        ResponderRegistry::parse(REGISTRY, "test").unwrap()
    }

    fn gga_line() -> String {
        let s = NmeaSentence::new(
            "GP",
            "GGA",
            [
                "080001.00",
                "2221.4140",
                "N",
                "09147.9920",
                "E",
                "1",
                "08",
                "0.9",
                "12.0",
                "M",
                "-45.0",
                "M",
                "",
                "",
            ],
        )
        .unwrap();
        let raw = String::from_utf8(s.serialize()).unwrap();
        raw.trim_end().to_owned()
    }

    fn crash_trace(with_gps: bool) -> TraceFile {
        let mut text = String::from("crashwatch-trace 1 vehicle=BUS-42\n");
        if with_gps {
            text.push_str(&format!("1000 NMEA {}\n", gga_line()));
        }
        text.push_str(
            "1900 ACC 280 300 400\n2000 STAGED\n2000 ACC 320 300 400\n2100 ACC 320 300 400\n2200 ACC 320 300 400\n",
        );
        TraceFile::parse(&text).unwrap()
    }

    #[test]
    fn healthy_crash_notifies_both() {
        let out = run(
            &crash_trace(true),
            &registry(),
            &PipelineConfig::default(),
            FaultScript::default(),
        )
        .unwrap();
        assert_eq!(out.deliveries.len(), 2);
        assert!(out.deliveries.iter().all(|d| d.report.success));
        assert_eq!(out.deliveries[0].kind, ResponderKind::Hospital);
        assert_eq!(
            out.trials,
            vec![TrialRecord {
                place_no: 1,
                detected: true,
                located: true,
                notified: true
            }]
        );
        assert_eq!(
            (out.accuracy.d_a(), out.accuracy.t_l(), out.accuracy.s_n()),
            (Some(1.0), Some(1.0), Some(1.0))
        );
        let body = out.deliveries[0].report.transcript.sent();
        let body = String::from_utf8(body).unwrap();
        assert!(
            body.contains("ACCIDENT BUS-42 t=2.2s http://maps.google.com/?q=22.356900,91.799867"),
            "{body}"
        );
    }

    #[test]
    fn modem_errors_fail_notification_only() {
        let faults = FaultScript::parse("cmd_index:* action:error").unwrap();
        let out = run(&crash_trace(true), &registry(), &PipelineConfig::default(), faults).unwrap();
        assert_eq!(
            out.trials,
            vec![TrialRecord {
                place_no: 1,
                detected: true,
                located: true,
                notified: false
            }]
        );
        assert_eq!(out.accuracy.s_n(), Some(0.0));
        assert_eq!(out.accuracy.d_a(), Some(1.0));
        assert_eq!(out.accuracy.t_l(), Some(1.0));
    }

    #[test]
    fn no_gps_is_location_failure() {
        let out = run(
            &crash_trace(false),
            &registry(),
            &PipelineConfig::default(),
            FaultScript::default(),
        )
        .unwrap();
        assert!(out.deliveries.is_empty());
        assert!(out
            .log
            .iter()
            .any(|e| matches!(e, LogEntry::LocationFailure { place_no: 1, .. })));
        assert_eq!(out.accuracy.t_l(), Some(0.0));
        assert!(!out.trials[0].located);
    }

    #[test]
    fn old_fix_goes_out_stale() {
        let cfg = PipelineConfig {
            staleness_window_ms: 500,
            ..Default::default()
        };
        let out = run(&crash_trace(true), &registry(), &cfg, FaultScript::default()).unwrap();
        let sent = String::from_utf8(out.deliveries[1].report.transcript.sent()).unwrap();
        assert!(sent.contains(" STALE\x1a"));
        assert!(out
            .log
            .iter()
            .any(|e| matches!(e, LogEntry::StaleFix { age_ms: 1200, .. })));
        assert!(!out.trials[0].located);
        assert!(out.trials[0].notified);
    }

    #[test]
    fn x_and_y_together_are_one_accident() {
        let text = "crashwatch-trace 1 vehicle=V\n\
            0 ACC 320 350 400\n100 ACC 320 350 400\n200 ACC 320 350 400\n\
            9000 ACC 100 100 400\n9100 ACC 320 100 400\n9200 ACC 320 100 400\n9300 ACC 320 100 400\n";
        let trace = TraceFile::parse(text).unwrap();
        let out = run(&trace, &registry(), &PipelineConfig::default(), FaultScript::default()).unwrap();
        assert_eq!(
            out.log.iter().filter(|e| matches!(e, LogEntry::Duplicate(_))).count(),
            1
        );
        assert_eq!(out.trials.len(), 2);
    }

    #[test]
    fn unmatched_stage_is_missed_detection() {
        let text = format!(
            "crashwatch-trace 1 vehicle=V\n1000 NMEA {}\n2000 STAGED\n2000 ACC 320 300 400\n2100 ACC 280 300 400\n",
            gga_line()
        );
        let trace = TraceFile::parse(&text).unwrap();
        let out = run(&trace, &registry(), &PipelineConfig::default(), FaultScript::default()).unwrap();
        assert_eq!(
            out.trials,
            vec![TrialRecord {
                place_no: 1,
                detected: false,
                located: true,
                notified: true
            }]
        );
        assert!(out.deliveries.is_empty());
    }

    #[test]
    fn bad_nmea_is_logged_not_fatal() {
        let text = "crashwatch-trace 1 vehicle=V\n1000 NMEA $GPGGA,1*00\n1100 ACC 1 1 1\n";
        let out = run(
            &TraceFile::parse(text).unwrap(),
            &registry(),
            &PipelineConfig::default(),
            FaultScript::default(),
        )
        .unwrap();
        assert!(matches!(out.log[0], LogEntry::Rejected { line: 2, .. }));
        assert!(out.trials.is_empty());
        assert_eq!(out.accuracy, AccuracyReport::empty());
    }

    #[test]
    fn config_toml_defaults_and_overrides() {
        let cfg: PipelineConfig =
            toml::from_str("dedup_window_ms = 100\n[detection]\nthreshold_x = 400\n[link]\nmax_retries = 1\n").unwrap();
        assert_eq!(cfg.dedup_window_ms, 100);
        assert_eq!(cfg.detection.threshold_x, 400);
        assert_eq!(cfg.detection.threshold_y, 340);
        assert_eq!(cfg.link.max_retries, 1);
        assert_eq!(cfg.link.backoff_ms, 2_000);
        assert!(toml::from_str::<PipelineConfig>("bogus = 1").is_err());
        let zero = PipelineConfig {
            dedup_window_ms: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }
}
