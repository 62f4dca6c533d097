//! Responder selection and notification composition.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::telemetry::{DetectionEvent, GeoFix, LatLon, PhoneNumber, Responder, ResponderKind, Timestamp};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Longest body that fits a single GSM-7 SMS segment.
pub const MAX_SMS_BODY: usize = 160;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("no {0} registered")]
    EmptyKind(ResponderKind),
    #[error("{source_name}:{line}: {msg}")]
    Registry {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("reading registry {path}: {err}")]
    Io {
        path: PathBuf,
        #[source]
        err: std::io::Error,
    },
    #[error("only tilt accidents produce notifications")]
    NotAnAccident,
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: LatLon, b: LatLon) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    // rounding can push h a hair above 1 for antipodal points
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// The hospitals and police stations known to the device.
#[derive(Debug, Clone)]
pub struct ResponderRegistry {
    responders: Vec<Responder>,
    source: String,
}

impl ResponderRegistry {
    pub fn new(responders: Vec<Responder>, source: impl Into<String>) -> Result<Self, GeoError> {
        let source = source.into();
        let mut seen = HashSet::new();
        for r in &responders {
            if !seen.insert(r.id.as_str()) {
                return Err(GeoError::Registry {
                    source_name: source,
                    line: 0,
                    msg: format!("duplicate responder id {:?}", r.id),
                });
            }
        }
        for kind in [ResponderKind::Hospital, ResponderKind::Police] {
            if !responders.iter().any(|r| r.kind == kind) {
                return Err(GeoError::EmptyKind(kind));
            }
        }
        Ok(ResponderRegistry { responders, source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GeoError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|err| GeoError::Io {
            path: path.to_owned(),
            err,
        })?;
        Self::parse(&text, path.display().to_string())
    }

    /// Parses `id,kind,name,phone,lat,lon` records, one per line.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, source: impl Into<String>) -> Result<Self, GeoError> {
        let source = source.into();
        let mut responders = Vec::new();
        let mut ids = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| GeoError::Registry {
                source_name: source.clone(),
                line: line_no,
                msg,
            };
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let [id, kind, name, phone, lat, lon] = cols[..] else {
                return Err(err(format!("expected 6 fields, found {}", cols.len())));
            };
            if id.is_empty() {
                return Err(err("empty responder id".into()));
            }
            if !ids.insert(id.to_owned()) {
                return Err(err(format!("duplicate responder id {id:?}")));
            }
            let kind: ResponderKind = kind.parse().map_err(|e| err(format!("{e}")))?;
            let phone = PhoneNumber::parse(phone).map_err(|e| err(format!("{e}")))?;
            let lat: f64 = lat.parse().map_err(|_| err(format!("bad latitude {lat:?}")))?;
            let lon: f64 = lon.parse().map_err(|_| err(format!("bad longitude {lon:?}")))?;
            let location = LatLon::new(lat, lon).map_err(|e| err(format!("{e}")))?;
            responders.push(Responder {
                id: id.to_owned(),
                kind,
                name: name.to_owned(),
                phone,
                location,
            });
        }
        Self::new(responders, source)
    }

    pub fn responders(&self) -> &[Responder] {
        &self.responders
    }

    /// Where the registry was loaded from.
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Closest responder of `kind` to `at`; the first listed wins exact ties.
    pub fn nearest(&self, at: LatLon, kind: ResponderKind) -> Result<&Responder, GeoError> {
        let mut best: Option<(&Responder, f64)> = None;
        for r in self.responders.iter().filter(|r| r.kind == kind) {
            let d = haversine_m(at, r.location);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((r, d));
            }
        }
        best.map(|(r, _)| r).ok_or(GeoError::EmptyKind(kind))
    }
}

/// `http://maps.google.com/?q=<lat>,<lon>` with six decimals per coordinate.
pub fn maps_link(at: LatLon) -> String {
    format!(
        "http://maps.google.com/?q={},{}",
        six_decimals(at.lat),
        six_decimals(at.lon)
    )
}

fn six_decimals(v: f64) -> String {
    let s = format!("{v:.6}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_owned(),
        _ => s,
    }
}

/// Finds a maps link inside a message body and returns its coordinates.
pub fn parse_maps_link(body: &str) -> Option<LatLon> {
    const PREFIX: &str = "http://maps.google.com/?q=";
    let start = body.find(PREFIX)? + PREFIX.len();
    let query = body[start..].split(' ').next()?;
    let (lat, lon) = query.split_once(',')?;
    LatLon::new(lat.parse().ok()?, lon.parse().ok()?).ok()
}

/// A composed accident message and who receives it.
#[derive(Debug, Clone, PartialEq)]
pub struct Notification {
    pub event: DetectionEvent,
    pub fix: GeoFix,
    pub hospital: Responder,
    pub police: Responder,
    pub link: String,
    pub body: String,
}

impl Notification {
    /// Hospital first, then police.
    pub fn recipients(&self) -> [&Responder; 2] {
        [&self.hospital, &self.police]
    }
}

/// Seconds with one decimal, rounded half up, from trace milliseconds.
fn seconds_tenths(t: Timestamp) -> String {
    let tenths = (t.millis() + 50) / 100;
    format!("{}.{}", tenths / 10, tenths % 10)
}

/// Builds the message for a tilt accident at `fix`.
///
/// Body layout: `ACCIDENT <vehicle> t=<s>s <link>[ STALE]`. The vehicle id is
/// reduced to printable ASCII and truncated if the body would exceed one SMS
/// segment; the link is never shortened.
pub fn compose(
    event: &DetectionEvent,
    fix: &GeoFix,
    registry: &ResponderRegistry,
    vehicle_id: &str,
) -> Result<Notification, GeoError> {
    if !event.is_accident() {
        return Err(GeoError::NotAnAccident);
    }
    let hospital = registry.nearest(fix.position, ResponderKind::Hospital)?.clone();
    let police = registry.nearest(fix.position, ResponderKind::Police)?.clone();
    let link = maps_link(fix.position);
    let t = seconds_tenths(event.t);
    let stale = if fix.stale { " STALE" } else { "" };

    let fixed_len = "ACCIDENT ".len() + " t=".len() + t.len() + "s ".len() + link.len() + stale.len();
    assert!(fixed_len <= MAX_SMS_BODY, "fixed message parts exceed one SMS segment");
    let mut vehicle: String = vehicle_id
        .chars()
        .map(|c| if c.is_ascii_graphic() { c } else { '_' })
        .collect();
    vehicle.truncate(MAX_SMS_BODY - fixed_len);

    let body = format!("ACCIDENT {vehicle} t={t}s {link}{stale}");
    debug_assert!(body.len() <= MAX_SMS_BODY);
    Ok(Notification {
        event: *event,
        fix: *fix,
        hospital,
        police,
        link,
        body,
    })
}
