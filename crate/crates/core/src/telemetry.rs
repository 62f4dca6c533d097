//! Domain types shared by every stage of the pipeline.
//!
//! Samples come in three flavors, one per sensor on the vehicle: a 10-bit
//! accelerometer triple, an ultrasonic range reading from the front or rear
//! sensor, and a raw NMEA line from the GPS receiver. Everything is a plain
//! value; validation never coerces, it either returns the sample unchanged or
//! a typed error.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest value a 10-bit ADC can report.
pub const ADC_MAX: u16 = 1023;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("value out of range: {0}")]
    Range(String),
    #[error("bad format: {0}")]
    Format(String),
}

/// Milliseconds since the start of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const fn from_millis(ms: u64) -> Self {
        Timestamp(ms)
    }

    pub const fn millis(self) -> u64 {
        self.0
    }

    /// Milliseconds elapsed from `earlier` to `self`, zero if `earlier` is later.
    pub fn since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

/// One accelerometer reading, raw ADC counts per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccelSample {
    pub t: Timestamp,
    pub x: u16,
    pub y: u16,
    pub z: u16,
}

impl AccelSample {
    pub fn validate(self) -> Result<Self, ValidationError> {
        for (name, v) in [("x", self.x), ("y", self.y), ("z", self.z)] {
            if v > ADC_MAX {
                return Err(ValidationError::Range(format!(
                    "accelerometer {name}={v} exceeds {ADC_MAX}"
                )));
            }
        }
        Ok(self)
    }
}

/// Mounting position of an ultrasonic range sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensorId {
    Front,
    Rear,
}

impl SensorId {
    pub fn as_str(self) -> &'static str {
        match self {
            SensorId::Front => "front",
            SensorId::Rear => "rear",
        }
    }
}

impl std::str::FromStr for SensorId {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "front" => Ok(SensorId::Front),
            "rear" => Ok(SensorId::Rear),
            other => Err(ValidationError::Format(format!("unknown ultrasonic sensor {other:?}"))),
        }
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UltrasonicSample {
    pub t: Timestamp,
    pub sensor: SensorId,
    pub range_cm: f64,
}

impl UltrasonicSample {
    pub fn validate(self) -> Result<Self, ValidationError> {
        if !self.range_cm.is_finite() || self.range_cm < 0.0 {
            return Err(ValidationError::Range(format!(
                "ultrasonic range {} cm is not a non-negative number",
                self.range_cm
            )));
        }
        Ok(self)
    }
}

/// A raw line as received from the GPS receiver.
///
/// The line must start with `$`. A single trailing CRLF (or LF) is tolerated;
/// CR or LF anywhere else is rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NmeaLine {
    pub t: Timestamp,
    pub raw: Vec<u8>,
}

impl NmeaLine {
    pub fn new(t: Timestamp, raw: impl Into<Vec<u8>>) -> Self {
        NmeaLine { t, raw: raw.into() }
    }

    pub fn validate(self) -> Result<Self, ValidationError> {
        if self.raw.first() != Some(&b'$') {
            return Err(ValidationError::Format("NMEA line must begin with '$'".into()));
        }
        let body = strip_line_ending(&self.raw);
        if body.iter().any(|&b| b == b'\r' || b == b'\n') {
            return Err(ValidationError::Format(
                "NMEA line contains an interior CR or LF".into(),
            ));
        }
        Ok(self)
    }
}

pub(crate) fn strip_line_ending(raw: &[u8]) -> &[u8] {
    raw.strip_suffix(b"\r\n")
        .or_else(|| raw.strip_suffix(b"\n"))
        .unwrap_or(raw)
}

/// Any sample a vehicle stream can carry.
#[derive(Debug, Clone, PartialEq)]
pub enum SensorSample {
    Accel(AccelSample),
    Ultrasonic(UltrasonicSample),
    Nmea(NmeaLine),
}

impl SensorSample {
    pub fn timestamp(&self) -> Timestamp {
        match self {
            SensorSample::Accel(s) => s.t,
            SensorSample::Ultrasonic(s) => s.t,
            SensorSample::Nmea(s) => s.t,
        }
    }

    pub fn validate(self) -> Result<Self, ValidationError> {
        Ok(match self {
            SensorSample::Accel(s) => SensorSample::Accel(s.validate()?),
            SensorSample::Ultrasonic(s) => SensorSample::Ultrasonic(s.validate()?),
            SensorSample::Nmea(s) => SensorSample::Nmea(s.validate()?),
        })
    }
}

/// Latitude/longitude pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self, ValidationError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(ValidationError::Range(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(ValidationError::Range(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(LatLon { lat, lon })
    }
}

/// A GPS position fix.
///
/// `stale` is set by the pipeline when the fix is older than the configured
/// staleness window at the moment it is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoFix {
    pub position: LatLon,
    pub t: Timestamp,
    pub stale: bool,
}

impl GeoFix {
    pub fn new(lat: f64, lon: f64, t: Timestamp) -> Result<Self, ValidationError> {
        Ok(GeoFix {
            position: LatLon::new(lat, lon)?,
            t,
            stale: false,
        })
    }

    pub fn lat(&self) -> f64 {
        self.position.lat
    }

    pub fn lon(&self) -> f64 {
        self.position.lon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionKind {
    /// Tilt past an axis threshold, sustained for the debounce length.
    TiltAccident { axis: Axis, adc: u16 },
    /// An object inside the proximity distance of one ultrasonic sensor.
    ProximityWarning { sensor: SensorId, range_cm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub t: Timestamp,
    pub kind: DetectionKind,
}

impl DetectionEvent {
    pub fn is_accident(&self) -> bool {
        matches!(self.kind, DetectionKind::TiltAccident { .. })
    }

    pub fn axis(&self) -> Option<Axis> {
        match self.kind {
            DetectionKind::TiltAccident { axis, .. } => Some(axis),
            DetectionKind::ProximityWarning { .. } => None,
        }
    }

    /// ADC count for tilt events, centimeters for proximity warnings.
    pub fn trigger_value(&self) -> f64 {
        match self.kind {
            DetectionKind::TiltAccident { adc, .. } => f64::from(adc),
            DetectionKind::ProximityWarning { range_cm, .. } => range_cm,
        }
    }
}

impl fmt::Display for DetectionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DetectionKind::TiltAccident { axis, adc } => {
                write!(f, "t={} tilt accident axis={axis} adc={adc}", self.t.millis())
            }
            DetectionKind::ProximityWarning { sensor, range_cm } => write!(
                f,
                "t={} proximity warning sensor={sensor} range={range_cm}cm",
                self.t.millis()
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResponderKind {
    Hospital,
    Police,
}

impl ResponderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponderKind::Hospital => "hospital",
            ResponderKind::Police => "police",
        }
    }
}

impl std::str::FromStr for ResponderKind {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hospital" => Ok(ResponderKind::Hospital),
            "police" => Ok(ResponderKind::Police),
            other => Err(ValidationError::Format(format!("unknown responder kind {other:?}"))),
        }
    }
}

impl fmt::Display for ResponderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// International phone number: `+` followed by 8 to 15 digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhoneNumber(String);

impl PhoneNumber {
    pub fn parse(s: &str) -> Result<Self, ValidationError> {
        let digits = s
            .strip_prefix('+')
            .ok_or_else(|| ValidationError::Format(format!("phone {s:?} must start with '+'")))?;
        if !(8..=15).contains(&digits.len()) || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ValidationError::Format(format!(
                "phone {s:?} must be '+' followed by 8-15 digits"
            )));
        }
        Ok(PhoneNumber(s.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PhoneNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A hospital or police station registered to receive notifications.
#[derive(Debug, Clone, PartialEq)]
pub struct Responder {
    pub id: String,
    pub kind: ResponderKind,
    pub name: String,
    pub phone: PhoneNumber,
    pub location: LatLon,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accel(x: u16, y: u16, z: u16) -> AccelSample {
        AccelSample {
            t: Timestamp(0),
            x,
            y,
            z,
        }
    }

    #[test]
    fn nominal_accel_is_valid() {
        let s = accel(338, 336, 380);
        assert_eq!(s.validate(), Ok(s));
        assert!(accel(0, 0, 0).validate().is_ok());
        assert!(accel(1023, 1023, 1023).validate().is_ok());
    }

    #[test]
    fn adc_overflow_is_range_error() {
        assert!(matches!(
            accel(1200, 300, 300).validate(),
            Err(ValidationError::Range(_))
        ));
        assert!(matches!(
            accel(300, 300, 1024).validate(),
            Err(ValidationError::Range(_))
        ));
    }

    #[test]
    fn negative_or_nan_range_rejected() {
        let mut s = UltrasonicSample {
            t: Timestamp(5),
            sensor: SensorId::Front,
            range_cm: -0.5,
        };
        assert!(matches!(s.validate(), Err(ValidationError::Range(_))));
        s.range_cm = f64::NAN;
        assert!(s.validate().is_err());
        s.range_cm = 0.0;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn nmea_needs_dollar_and_no_interior_newlines() {
        let missing = NmeaLine::new(Timestamp(0), "GPGGA,123519*00");
        assert!(matches!(missing.validate(), Err(ValidationError::Format(_))));

        let interior = NmeaLine::new(Timestamp(0), "$GPGGA,12\r\n3519*00");
        assert!(matches!(interior.validate(), Err(ValidationError::Format(_))));

        assert!(NmeaLine::new(Timestamp(0), "$GPGGA,1*00\r\n").validate().is_ok());
        assert!(NmeaLine::new(Timestamp(0), "$GPGGA,1*00").validate().is_ok());
    }

    #[test]
    fn validation_is_idempotent() {
        let samples = vec![
            SensorSample::Accel(accel(1, 2, 3)),
            SensorSample::Ultrasonic(UltrasonicSample {
                t: Timestamp(9),
                sensor: SensorId::Rear,
                range_cm: 12.5,
            }),
            SensorSample::Nmea(NmeaLine::new(Timestamp(3), "$GPRMC,x*00")),
        ];
        for s in samples {
            let once = s.clone().validate().unwrap();
            assert_eq!(once.clone().validate().unwrap(), once);
            assert_eq!(once, s);
        }
    }

    #[test]
    fn phone_numbers() {
        assert!(PhoneNumber::parse("+8801711000000").is_ok());
        assert!(PhoneNumber::parse("+12345678").is_ok());
        assert!(PhoneNumber::parse("01711000000").is_err());
        assert!(PhoneNumber::parse("+1234567").is_err());
        assert!(PhoneNumber::parse("+1234567890123456").is_err());
        assert!(PhoneNumber::parse("+88017-11000").is_err());
    }

    #[test]
    fn lat_lon_bounds() {
        assert!(LatLon::new(90.0, -180.0).is_ok());
        assert!(LatLon::new(90.1, 0.0).is_err());
        assert!(LatLon::new(0.0, 180.5).is_err());
        assert!(LatLon::new(f64::NAN, 0.0).is_err());
    }
}
