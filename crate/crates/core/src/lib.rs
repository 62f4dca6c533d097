//! Vehicle accident detection, GPS location and SMS notification, driven by
//! recorded sensor traces instead of live hardware.
//!
//! The pipeline has three stages:
//!
//! * [`detection`] turns accelerometer and ultrasonic samples into tilt
//!   accidents and proximity warnings.
//! * [`nmea`] decodes the GPS receiver's sentences into [`GeoFix`]es, and
//!   [`geo`] picks the nearest hospital and police station and writes the
//!   message.
//! * [`gsm`] delivers the message over an AT-command dialogue, here against
//!   a simulated modem.
//!
//! [`replay`] wires the stages together over a trace file and [`metrics`]
//! scores the outcome. The guide under `book/` walks through each stage; its
//! code samples are compiled and run as doc-tests of this crate.

pub mod detection;
pub mod geo;
pub mod gsm;
pub mod metrics;
pub mod nmea;
pub mod replay;
pub mod telemetry;

pub use telemetry::{
    AccelSample, Axis, DetectionEvent, DetectionKind, GeoFix, LatLon, NmeaLine, PhoneNumber, Responder, ResponderKind,
    SensorId, SensorSample, Timestamp, UltrasonicSample,
};

// `cargo test --doc` runs every code block in the guide.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/nmea.md")]
    mod nmea {}
    #[doc = include_str!("../../../book/src/notification.md")]
    mod notification {}
    #[doc = include_str!("../../../book/src/gsm.md")]
    mod gsm {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/replay.md")]
    mod replay {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
}
