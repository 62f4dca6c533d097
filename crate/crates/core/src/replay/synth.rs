//! Deterministic synthetic traces for desk-scale trials.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trace::{TraceEntry, TraceFile};
use crate::nmea::NmeaSentence;
use crate::telemetry::{AccelSample, NmeaLine, SensorId, SensorSample, Timestamp, UltrasonicSample};

const DURATION_MS: u64 = 30_000;
const ACCEL_PERIOD_MS: u64 = 100;
const RANGE_PERIOD_MS: u64 = 250;
const GPS_PERIOD_MS: u64 = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// One sustained rollover, GPS healthy throughout.
    CleanCrash,
    /// The same rollover with a silent GPS receiver.
    NoGpsCrash,
    /// A staged accident that only produces tilt spikes shorter than the
    /// debounce length.
    TiltSpikes,
    /// Objects inside the proximity distance, no tilt.
    ProximityOnly,
    /// Nothing happens.
    Quiet,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::CleanCrash,
        Scenario::NoGpsCrash,
        Scenario::TiltSpikes,
        Scenario::ProximityOnly,
        Scenario::Quiet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::CleanCrash => "clean_crash",
            Scenario::NoGpsCrash => "no_gps_crash",
            Scenario::TiltSpikes => "tilt_spikes",
            Scenario::ProximityOnly => "proximity_only",
            Scenario::Quiet => "quiet",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Scenario::CleanCrash => 0x11,
            Scenario::NoGpsCrash => 0x22,
            Scenario::TiltSpikes => 0x33,
            Scenario::ProximityOnly => 0x44,
            Scenario::Quiet => 0x55,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
            format!("unknown scenario {s:?}, expected one of {}", names.join(", "))
        })
    }
}

// Nominal readings stay below each threshold minus the re-arm margin.
fn nominal(rng: &mut ChaCha8Rng) -> (u16, u16, u16) {
    (
        rng.random_range(260..=295),
        rng.random_range(280..=325),
        rng.random_range(390..=430),
    )
}

fn ddmm(value: f64, degree_digits: usize) -> String {
    let abs = value.abs();
    let mut degrees = abs.trunc() as u32;
    let mut minutes = ((abs - f64::from(degrees)) * 60.0 * 10_000.0).round() / 10_000.0;
    if minutes >= 60.0 {
        degrees += 1;
        minutes = 0.0;
    }
    format!("{degrees:0degree_digits$}{minutes:07.4}")
}

fn gps_sentences(t: u64, lat: f64, lon: f64) -> Vec<NmeaSentence> {
    let secs = 8 * 3600 + t / 1000;
    let hhmmss = format!(
        "{:02}{:02}{:02}.{:02}",
        secs / 3600,
        secs / 60 % 60,
        secs % 60,
        t % 1000 / 10
    );
    let ns = if lat < 0.0 { "S" } else { "N" };
    let ew = if lon < 0.0 { "W" } else { "E" };
    let (lat, lon) = (ddmm(lat, 2), ddmm(lon, 3));
    let mut out = vec![NmeaSentence::new(
        "GP",
        "GGA",
        [
            hhmmss.as_str(),
            &lat,
            ns,
            &lon,
            ew,
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
    .expect("generated GGA is well formed")];
    if (t / GPS_PERIOD_MS).is_multiple_of(5) {
        out.push(
            NmeaSentence::new(
                "GP",
                "RMC",
                [hhmmss.as_str(), "A", &lat, ns, &lon, ew, "0.0", "0.0", "161026", "", ""],
            )
            .expect("generated RMC is well formed"),
        );
    }
    out
}

/// Generates a 30-second trace for `scenario`. Same inputs, same trace.
pub fn synthesize_trace(scenario: Scenario, seed: u64) -> TraceFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(8) ^ scenario.salt());
    // (t, rank, entry); rank orders records sharing a millisecond
    let mut entries: Vec<(u64, u8, TraceEntry)> = Vec::new();

    let crash = matches!(
        scenario,
        Scenario::CleanCrash | Scenario::NoGpsCrash | Scenario::TiltSpikes
    );
    let event_at = rng.random_range(80..=180u64) * ACCEL_PERIOD_MS;
    if crash {
        entries.push((event_at, 0, TraceEntry::Staged(Timestamp(event_at))));
    }

    // Accelerometer
    let rolled_axis_is_x = rng.random_bool(0.5);
    for k in 0..DURATION_MS / ACCEL_PERIOD_MS {
        let t = k * ACCEL_PERIOD_MS;
        let (mut x, mut y, z) = nominal(&mut rng);
        match scenario {
            Scenario::CleanCrash | Scenario::NoGpsCrash if t >= event_at => {
                let tilted = rng.random_range(420..=700);
                if rolled_axis_is_x {
                    x = tilted;
                } else {
                    y = tilted;
                }
            }
            Scenario::TiltSpikes if t >= event_at => {
                // bursts of one or two samples, every fifth slot
                let slot = (t - event_at) / ACCEL_PERIOD_MS;
                if slot % 5 < 2 && rng.random_bool(0.7) {
                    x = rng.random_range(320..=500);
                }
            }
            _ => {}
        }
        let sample = AccelSample {
            t: Timestamp(t),
            x,
            y,
            z,
        };
        entries.push((t, 2, TraceEntry::Sample(SensorSample::Accel(sample))));
    }

    // Ultrasonic, front and rear alternating
    let approach_at = rng.random_range(40..=90u64) * RANGE_PERIOD_MS;
    for k in 0..DURATION_MS / RANGE_PERIOD_MS {
        let t = k * RANGE_PERIOD_MS + 50;
        let sensor = if k % 2 == 0 { SensorId::Front } else { SensorId::Rear };
        let mut range_cm = f64::from(rng.random_range(200..=4000u32)) / 10.0;
        if scenario == Scenario::ProximityOnly && sensor == SensorId::Front {
            let since = t.saturating_sub(approach_at);
            if t >= approach_at && since < 3_000 {
                range_cm = f64::from(rng.random_range(10..=49u32)) / 10.0;
            }
        }
        let sample = UltrasonicSample {
            t: Timestamp(t),
            sensor,
            range_cm,
        };
        entries.push((t, 3, TraceEntry::Sample(SensorSample::Ultrasonic(sample))));
    }

    // GPS: drive north-east through the country until the crash, then stop
    if scenario != Scenario::NoGpsCrash {
        let mut lat = rng.random_range(21.0..26.0);
        let mut lon = rng.random_range(88.5..92.0);
        let (dlat, dlon) = (rng.random_range(-0.0002..0.0002), rng.random_range(-0.0002..0.0002));
        for k in 0..DURATION_MS / GPS_PERIOD_MS {
            let t = k * GPS_PERIOD_MS + 20;
            if !(crash && t >= event_at) {
                lat += dlat;
                lon += dlon;
            }
            for s in gps_sentences(t, lat, lon) {
                let raw = s.serialize();
                let line = NmeaLine::new(Timestamp(t), &raw[..raw.len() - 2]);
                entries.push((t, 1, TraceEntry::Sample(SensorSample::Nmea(line))));
            }
        }
    }

    entries.sort_by_key(|(t, rank, _)| (*t, *rank));
    TraceFile::from_entries(
        format!("SIM-{}-{seed}", scenario.name()),
        entries.into_iter().map(|(_, _, e)| e).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.name().parse::<Scenario>(), Ok(sc));
        }
        assert!("crash".parse::<Scenario>().is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        for sc in Scenario::ALL {
            assert_eq!(synthesize_trace(sc, 7), synthesize_trace(sc, 7));
            assert_ne!(synthesize_trace(sc, 7).to_text(), synthesize_trace(sc, 8).to_text());
        }
    }

    #[test]
    fn text_form_reparses_identically() {
        for sc in Scenario::ALL {
            let t = synthesize_trace(sc, 3);
            assert_eq!(TraceFile::parse(&t.to_text()).unwrap(), t);
        }
    }

    #[test]
    fn no_gps_has_no_nmea() {
        let t = synthesize_trace(Scenario::NoGpsCrash, 1);
        assert!(!t
            .records
            .iter()
            .any(|r| matches!(r.entry, TraceEntry::Sample(SensorSample::Nmea(_)))));
        let t = synthesize_trace(Scenario::CleanCrash, 1);
        assert!(t
            .records
            .iter()
            .any(|r| matches!(r.entry, TraceEntry::Sample(SensorSample::Nmea(_)))));
    }

    #[test]
    fn ddmm_formatting() {
        assert_eq!(ddmm(23.391_666_666_7, 2), "2323.5000");
        assert_eq!(ddmm(-91.783_333_333_3, 3), "09147.0000");
        assert_eq!(ddmm(22.999_999_999, 2), "2300.0000");
    }
}
