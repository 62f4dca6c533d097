//! Tilt and proximity detection over a single vehicle stream.
//!
//! Tilt: each monitored axis keeps a run-length counter of consecutive samples
//! at or above its threshold (raw ADC counts). When the counter reaches
//! `debounce_samples` while the axis is armed, a [`DetectionKind::TiltAccident`]
//! fires and the axis disarms. It re-arms once a sample drops below
//! `threshold - rearm_below_margin`.
//!
//! Proximity: each ultrasonic sensor latches after a reading strictly below
//! `proximity_cm` and unlatches at `2 * proximity_cm` or more. Proximity
//! warnings never count as accidents.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{
    AccelSample, Axis, DetectionEvent, DetectionKind, SensorId, Timestamp, UltrasonicSample, ADC_MAX,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectionError {
    #[error("sample at {found} arrived after {last}")]
    OutOfOrder { last: Timestamp, found: Timestamp },
    #[error("invalid detection config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub threshold_x: u16,
    pub threshold_y: u16,
    /// Z is wired but not compared unless a threshold is configured.
    pub threshold_z: Option<u16>,
    pub proximity_cm: f64,
    pub debounce_samples: u32,
    pub rearm_below_margin: u16,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            threshold_x: 310,
            threshold_y: 340,
            threshold_z: None,
            proximity_cm: 5.0,
            debounce_samples: 3,
            rearm_below_margin: 10,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<(), DetectionError> {
        let thresholds = [Some(self.threshold_x), Some(self.threshold_y), self.threshold_z];
        for t in thresholds.into_iter().flatten() {
            if t == 0 || t > ADC_MAX {
                return Err(DetectionError::Config(format!("threshold {t} outside (0, {ADC_MAX}]")));
            }
            if self.rearm_below_margin >= t {
                return Err(DetectionError::Config(format!(
                    "re-arm margin {} would never re-arm threshold {t}",
                    self.rearm_below_margin
                )));
            }
        }
        if !(self.proximity_cm.is_finite() && self.proximity_cm > 0.0) {
            return Err(DetectionError::Config("proximity_cm must be > 0".into()));
        }
        if self.debounce_samples == 0 {
            return Err(DetectionError::Config("debounce_samples must be >= 1".into()));
        }
        Ok(())
    }

    pub fn threshold(&self, axis: Axis) -> Option<u16> {
        match axis {
            Axis::X => Some(self.threshold_x),
            Axis::Y => Some(self.threshold_y),
            Axis::Z => self.threshold_z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AxisState {
    run: u32,
    armed: bool,
}

impl Default for AxisState {
    fn default() -> Self {
        AxisState { run: 0, armed: true }
    }
}

/// Per-stream detector state. One instance per vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    cfg: DetectionConfig,
    axes: [AxisState; 3],
    front_latched: bool,
    rear_latched: bool,
    last_t: Option<Timestamp>,
}

impl Detector {
    pub fn new(cfg: DetectionConfig) -> Result<Self, DetectionError> {
        cfg.validate()?;
        Ok(Detector {
            cfg,
            axes: Default::default(),
            front_latched: false,
            rear_latched: false,
            last_t: None,
        })
    }

    pub fn config(&self) -> &DetectionConfig {
        &self.cfg
    }

    /// Clears counters, re-arms every axis, and clears proximity latches.
    pub fn reset(&mut self) {
        self.axes = Default::default();
        self.front_latched = false;
        self.rear_latched = false;
        self.last_t = None;
    }

    /// Current run length for an axis.
    pub fn run_length(&self, axis: Axis) -> u32 {
        self.axes[axis as usize].run
    }

    pub fn is_armed(&self, axis: Axis) -> bool {
        self.axes[axis as usize].armed
    }

    pub fn is_latched(&self, sensor: SensorId) -> bool {
        match sensor {
            SensorId::Front => self.front_latched,
            SensorId::Rear => self.rear_latched,
        }
    }

    fn check_order(&mut self, t: Timestamp) -> Result<(), DetectionError> {
        if let Some(last) = self.last_t {
            if t < last {
                return Err(DetectionError::OutOfOrder { last, found: t });
            }
        }
        self.last_t = Some(t);
        Ok(())
    }

    pub fn ingest_accel(&mut self, sample: &AccelSample) -> Result<Vec<DetectionEvent>, DetectionError> {
        self.check_order(sample.t)?;
        let mut events = Vec::new();
        for (axis, value) in [(Axis::X, sample.x), (Axis::Y, sample.y), (Axis::Z, sample.z)] {
            let Some(threshold) = self.cfg.threshold(axis) else {
                continue;
            };
            let debounce = self.cfg.debounce_samples;
            let state = &mut self.axes[axis as usize];
            if value >= threshold {
                state.run = (state.run + 1).min(debounce);
                if state.run == debounce && state.armed {
                    state.armed = false;
                    events.push(DetectionEvent {
                        t: sample.t,
                        kind: DetectionKind::TiltAccident { axis, adc: value },
                    });
                }
            } else {
                state.run = 0;
                if value < threshold - self.cfg.rearm_below_margin {
                    state.armed = true;
                }
            }
        }
        Ok(events)
    }

    pub fn ingest_ultrasonic(&mut self, sample: &UltrasonicSample) -> Result<Vec<DetectionEvent>, DetectionError> {
        self.check_order(sample.t)?;
        let proximity = self.cfg.proximity_cm;
        let latch = match sample.sensor {
            SensorId::Front => &mut self.front_latched,
            SensorId::Rear => &mut self.rear_latched,
        };
        let mut events = Vec::new();
        if sample.range_cm < proximity {
            if !*latch {
                *latch = true;
                events.push(DetectionEvent {
                    t: sample.t,
                    kind: DetectionKind::ProximityWarning {
                        sensor: sample.sensor,
                        range_cm: sample.range_cm,
                    },
                });
            }
        } else if sample.range_cm >= 2.0 * proximity {
            *latch = false;
        }
        Ok(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accel(t: u64, x: u16, y: u16) -> AccelSample {
        AccelSample {
            t: Timestamp(t),
            x,
            y,
            z: 380,
        }
    }

    fn range(t: u64, cm: f64) -> UltrasonicSample {
        UltrasonicSample {
            t: Timestamp(t),
            sensor: SensorId::Front,
            range_cm: cm,
        }
    }

    fn feed_x(det: &mut Detector, xs: &[u16]) -> Vec<DetectionEvent> {
        xs.iter()
            .enumerate()
            .flat_map(|(i, &x)| det.ingest_accel(&accel(i as u64, x, 300)).unwrap())
            .collect()
    }

    /// Straight-line reference: scan the series once, remembering whether the
    /// axis is armed, and fire on the sample that completes a window of
    /// `debounce` over-threshold values.
    fn reference_events(xs: &[u16], threshold: u16, debounce: usize, margin: u16) -> Vec<usize> {
        let mut armed = true;
        let mut out = Vec::new();
        for i in 0..xs.len() {
            if xs[i] < threshold - margin {
                armed = true;
            }
            if i + 1 < debounce {
                continue;
            }
            let window = &xs[i + 1 - debounce..=i];
            let starts_run = i + 1 == debounce || xs[i - debounce] < threshold;
            if armed && starts_run && window.iter().all(|&v| v >= threshold) {
                out.push(i);
                armed = false;
            }
        }
        out
    }

    #[test]
    fn sustained_x_tilt_fires_once_on_third_sample() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        let events = feed_x(&mut det, &[320, 320, 320]);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].t, Timestamp(2));
        assert_eq!(
            events[0].kind,
            DetectionKind::TiltAccident {
                axis: Axis::X,
                adc: 320
            }
        );
    }

    #[test]
    fn nominal_stream_is_quiet() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        for t in 0..1000 {
            let s = AccelSample {
                t: Timestamp(t),
                x: 0,
                y: 0,
                z: 0,
            };
            assert!(det.ingest_accel(&s).unwrap().is_empty());
        }
    }

    #[test]
    fn broken_run_does_not_fire() {
        let xs = [320, 320, 250, 320, 320];
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        assert!(feed_x(&mut det, &xs).is_empty());
        assert!(reference_events(&xs, 310, 3, 10).is_empty());
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        assert_eq!(feed_x(&mut det, &[310, 310, 310]).len(), 1);
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        assert!(feed_x(&mut det, &[309, 309, 309]).is_empty());
    }

    #[test]
    fn rearm_requires_dip_below_margin() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        // 305 breaks the run but is not below 300, so the axis stays disarmed
        let xs = [320, 320, 320, 305, 320, 320, 320, 299, 320, 320, 320];
        let events = feed_x(&mut det, &xs);
        assert_eq!(events.iter().map(|e| e.t.millis()).collect::<Vec<_>>(), vec![2, 10]);
        assert_eq!(reference_events(&xs, 310, 3, 10), vec![2, 10]);
    }

    #[test]
    fn y_axis_uses_its_own_threshold() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        let mut events = Vec::new();
        for t in 0..3 {
            events.extend(det.ingest_accel(&accel(t, 100, 339)).unwrap());
        }
        assert!(events.is_empty());
        for t in 3..6 {
            events.extend(det.ingest_accel(&accel(t, 100, 340)).unwrap());
        }
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].axis(), Some(Axis::Y));
    }

    #[test]
    fn z_axis_off_by_default() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        for t in 0..10 {
            let s = AccelSample {
                t: Timestamp(t),
                x: 0,
                y: 0,
                z: 1023,
            };
            assert!(det.ingest_accel(&s).unwrap().is_empty());
        }
        let cfg = DetectionConfig {
            threshold_z: Some(900),
            ..Default::default()
        };
        let mut det = Detector::new(cfg).unwrap();
        let n: usize = (0..10)
            .map(|t| {
                det.ingest_accel(&AccelSample {
                    t: Timestamp(t),
                    x: 0,
                    y: 0,
                    z: 1023,
                })
                .unwrap()
                .len()
            })
            .sum();
        assert_eq!(n, 1);
    }

    #[test]
    fn debounce_of_one_is_the_literal_rule() {
        let cfg = DetectionConfig {
            debounce_samples: 1,
            ..Default::default()
        };
        let mut det = Detector::new(cfg).unwrap();
        assert_eq!(feed_x(&mut det, &[311]).len(), 1);
    }

    #[test]
    fn out_of_order_is_rejected() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        det.ingest_accel(&accel(10, 0, 0)).unwrap();
        assert_eq!(
            det.ingest_ultrasonic(&range(5, 100.0)),
            Err(DetectionError::OutOfOrder {
                last: Timestamp(10),
                found: Timestamp(5)
            })
        );
        // equal timestamps are fine
        assert!(det.ingest_accel(&accel(10, 0, 0)).is_ok());
    }

    #[test]
    fn proximity_warning_and_latch() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        let e = det.ingest_ultrasonic(&range(0, 4.0)).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].trigger_value(), 4.0);
        assert!(!e[0].is_accident());

        assert!(det.ingest_ultrasonic(&range(1, 4.5)).unwrap().is_empty());
        assert!(det.ingest_ultrasonic(&range(2, 4.0)).unwrap().is_empty());
        assert!(det.ingest_ultrasonic(&range(3, 9.9)).unwrap().is_empty());
        assert!(det.ingest_ultrasonic(&range(4, 4.0)).unwrap().is_empty());
        assert!(det.ingest_ultrasonic(&range(5, 10.0)).unwrap().is_empty());
        assert_eq!(det.ingest_ultrasonic(&range(6, 4.0)).unwrap().len(), 1);
    }

    #[test]
    fn proximity_boundary_is_strict() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        assert!(det.ingest_ultrasonic(&range(0, 5.0)).unwrap().is_empty());
    }

    #[test]
    fn sensors_latch_independently() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        assert_eq!(det.ingest_ultrasonic(&range(0, 1.0)).unwrap().len(), 1);
        let rear = UltrasonicSample {
            t: Timestamp(1),
            sensor: SensorId::Rear,
            range_cm: 1.0,
        };
        assert_eq!(det.ingest_ultrasonic(&rear).unwrap().len(), 1);
        assert!(det.is_latched(SensorId::Front) && det.is_latched(SensorId::Rear));
    }

    #[test]
    fn reset_behaves_like_new() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        feed_x(&mut det, &[320, 320]);
        det.ingest_ultrasonic(&range(100, 1.0)).unwrap();
        det.reset();
        assert_eq!(det, Detector::new(DetectionConfig::default()).unwrap());
        assert!(feed_x(&mut det, &[0, 0, 0]).is_empty());
    }

    #[test]
    fn reset_mid_excursion_fires_again() {
        let mut det = Detector::new(DetectionConfig::default()).unwrap();
        assert_eq!(feed_x(&mut det, &[320, 320, 320, 320]).len(), 1);
        det.reset();
        // the vehicle is still tilted; a fresh detector sees a new excursion
        let events = feed_x(&mut det, &[320, 320, 320]);
        assert_eq!(events.len(), 1);
        assert_eq!(reference_events(&[320, 320, 320], 310, 3, 10), vec![2]);
    }

    #[test]
    fn config_validation() {
        assert!(DetectionConfig::default().validate().is_ok());
        for bad in [
            DetectionConfig {
                threshold_x: 0,
                ..Default::default()
            },
            DetectionConfig {
                threshold_y: 1024,
                ..Default::default()
            },
            DetectionConfig {
                proximity_cm: 0.0,
                ..Default::default()
            },
            DetectionConfig {
                debounce_samples: 0,
                ..Default::default()
            },
            DetectionConfig {
                rearm_below_margin: 400,
                ..Default::default()
            },
        ] {
            assert!(Detector::new(bad).is_err());
        }
    }
}
