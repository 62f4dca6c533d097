//! Line-oriented trace files.
//!
//! ```text
//! # comments and blank lines are ignored
//! crashwatch-trace 1 vehicle=BUS-42
//! 1000 NMEA $GPGGA,...*hh
//! 1100 ACC 338 336 380
//! 1150 US front 42.5
//! 2000 STAGED
//! ```
//!
//! Every record starts with its timestamp in milliseconds. Timestamps never
//! decrease. `STAGED` marks the moment an accident was staged; it carries no
//! sensor data and is only used to score missed detections.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::telemetry::{AccelSample, NmeaLine, SensorId, SensorSample, Timestamp, UltrasonicSample};

pub const TRACE_MAGIC: &str = "crashwatch-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unsupported trace version {found}")]
    Version { line: usize, found: String },
    #[error("line {line}: timestamp {found} precedes {previous}")]
    Order { line: usize, previous: u64, found: u64 },
    #[error("reading trace: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEntry {
    Sample(SensorSample),
    Staged(Timestamp),
}

impl TraceEntry {
    pub fn timestamp(&self) -> Timestamp {
        match self {
            TraceEntry::Sample(s) => s.timestamp(),
            TraceEntry::Staged(t) => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// 1-based source line, for diagnostics.
    pub line: usize,
    pub entry: TraceEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub vehicle_id: String,
    pub version: u32,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    /// Builds a trace from entries, numbering lines as [`TraceFile::to_text`]
    /// would write them.
    pub fn from_entries(vehicle_id: impl Into<String>, entries: Vec<TraceEntry>) -> Self {
        TraceFile {
            vehicle_id: vehicle_id.into(),
            version: TRACE_VERSION,
            records: entries
                .into_iter()
                .enumerate()
                .map(|(i, entry)| TraceRecord { line: i + 2, entry })
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{TRACE_MAGIC} {} vehicle={}\n", self.version, self.vehicle_id);
        for r in &self.records {
            let t = r.entry.timestamp().millis();
            match &r.entry {
                TraceEntry::Sample(SensorSample::Accel(a)) => {
                    writeln!(out, "{t} ACC {} {} {}", a.x, a.y, a.z)
                }
                TraceEntry::Sample(SensorSample::Ultrasonic(u)) => {
                    writeln!(out, "{t} US {} {}", u.sensor, u.range_cm)
                }
                TraceEntry::Sample(SensorSample::Nmea(n)) => {
                    let raw = crate::telemetry::strip_line_ending(&n.raw);
                    writeln!(out, "{t} NMEA {}", String::from_utf8_lossy(raw))
                }
                TraceEntry::Staged(_) => writeln!(out, "{t} STAGED"),
            }
            .expect("writing to a String");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut header: Option<(String, u32)> = None;
        let mut records = Vec::new();
        let mut previous: Option<u64> = None;

        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw_line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let perr = |msg: String| TraceError::Parse { line, msg };

            if header.is_none() {
                header = Some(parse_header(trimmed, line)?);
                continue;
            }

            let (t_str, rest) = trimmed.split_once(char::is_whitespace).unwrap_or((trimmed, ""));
            let t: u64 = t_str.parse().map_err(|_| perr(format!("bad timestamp {t_str:?}")))?;
            if let Some(prev) = previous {
                if t < prev {
                    return Err(TraceError::Order {
                        line,
                        previous: prev,
                        found: t,
                    });
                }
            }
            previous = Some(t);
            let ts = Timestamp(t);
            let rest = rest.trim_start();
            let (kind, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let args = args.trim();

            let entry = match kind {
                "ACC" => {
                    let vals: Vec<&str> = args.split_whitespace().collect();
                    let [x, y, z] = vals[..] else {
                        return Err(perr(format!("ACC needs 3 values, found {}", vals.len())));
                    };
                    let adc = |s: &str| -> Result<u16, TraceError> {
                        let v: i64 = s.parse().map_err(|_| perr(format!("bad ADC value {s:?}")))?;
                        u16::try_from(v).map_err(|_| perr(format!("ADC value {v} out of range")))
                    };
                    TraceEntry::Sample(SensorSample::Accel(AccelSample {
                        t: ts,
                        x: adc(x)?,
                        y: adc(y)?,
                        z: adc(z)?,
                    }))
                }
                "US" => {
                    let vals: Vec<&str> = args.split_whitespace().collect();
                    let [sensor, cm] = vals[..] else {
                        return Err(perr(format!("US needs 2 values, found {}", vals.len())));
                    };
                    let sensor: SensorId = sensor.parse().map_err(|e| perr(format!("{e}")))?;
                    let range_cm: f64 = cm.parse().map_err(|_| perr(format!("bad range {cm:?}")))?;
                    TraceEntry::Sample(SensorSample::Ultrasonic(UltrasonicSample {
                        t: ts,
                        sensor,
                        range_cm,
                    }))
                }
                "NMEA" => TraceEntry::Sample(SensorSample::Nmea(NmeaLine::new(ts, args))),
                "STAGED" if args.is_empty() => TraceEntry::Staged(ts),
                other => return Err(perr(format!("unknown record kind {other:?}"))),
            };
            let entry = match entry {
                TraceEntry::Sample(s) => TraceEntry::Sample(s.validate().map_err(|e| perr(e.to_string()))?),
                staged => staged,
            };
            records.push(TraceRecord { line, entry });
        }

        let (vehicle_id, version) = header.ok_or_else(|| TraceError::Parse {
            line: text.lines().count().max(1),
            msg: "missing trace header".into(),
        })?;
        Ok(TraceFile {
            vehicle_id,
            version,
            records,
        })
    }
}

fn parse_header(line_text: &str, line: usize) -> Result<(String, u32), TraceError> {
    let perr = |msg: String| TraceError::Parse { line, msg };
    let parts: Vec<&str> = line_text.split_whitespace().collect();
    let [magic, version, vehicle] = parts[..] else {
        return Err(perr(format!("expected `{TRACE_MAGIC} <version> vehicle=<id>` header")));
    };
    if magic != TRACE_MAGIC {
        return Err(perr(format!("expected `{TRACE_MAGIC}` header, found {magic:?}")));
    }
    if version.parse::<u32>().ok() != Some(TRACE_VERSION) {
        return Err(TraceError::Version {
            line,
            found: version.to_owned(),
        });
    }
    let vehicle = vehicle
        .strip_prefix("vehicle=")
        .filter(|v| !v.is_empty() && v.bytes().all(|b| b.is_ascii_graphic()))
        .ok_or_else(|| perr(format!("bad vehicle field {vehicle:?}")))?;
    Ok((vehicle.to_owned(), TRACE_VERSION))
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<TraceFile, TraceError> {
    TraceFile::parse(&std::fs::read_to_string(path)?)
}
