//! Control function `c(t)` and the controlled Hamiltonian `[1 + c(t)] H_s(t)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{build_hxy, build_hz, combine_drive, energy_gap, ChainConfig, OperatorMatrix};

/// Intensity floor used near the level crossing for gap-tuned pulses.
pub const DEFAULT_GAP_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseMode {
    /// Alternating `+I, -I, +I, ...` with constant strength.
    IdealRect,
    /// Alternating sign with strength `I / max(Delta E_01(t), floor)`.
    GapTuned,
    /// Arbitrary signed amplitude per half period (the optimizer's search space).
    FreePiecewise,
}

/// Piecewise control on segments `[n tau, (n+1) tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSchedule {
    pub tau: f64,
    /// Signed amplitude per segment. For [`PulseMode::GapTuned`] this is the
    /// signed base strength that gets divided by the instantaneous gap.
    pub amplitudes: Vec<f64>,
    pub mode: PulseMode,
    pub gap_floor: f64,
}

/// Number of half periods in `[0, T]`; `T / tau` must be an integer.
pub fn segment_count(total_time: f64, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let ratio = total_time / tau;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::NonIntegerSegments { ratio });
    }
    Ok(m as usize)
}

fn alternating(strength: f64, segments: usize) -> Vec<f64> {
    (0..segments)
        .map(|n| if n % 2 == 0 { strength } else { -strength })
        .collect()
}

/// Zero-area rectangular pulses, positive in the first half period.
pub fn ideal_rect(strength: f64, tau: f64, total_time: f64) -> Result<PulseSchedule> {
    let m = segment_count(total_time, tau)?;
    Ok(PulseSchedule {
        tau,
        amplitudes: alternating(strength, m),
        mode: PulseMode::IdealRect,
        gap_floor: DEFAULT_GAP_FLOOR,
    })
}

/// Rectangular pulses whose strength tracks `1 / Delta E_01(t)`.
pub fn gap_tuned(strength: f64, tau: f64, total_time: f64, gap_floor: f64) -> Result<PulseSchedule> {
    if !(gap_floor > 0.0) {
        return Err(Error::InvalidConfig(format!("gap floor must be positive, got {gap_floor}")));
    }
    let m = segment_count(total_time, tau)?;
    Ok(PulseSchedule {
        tau,
        amplitudes: alternating(strength, m),
        mode: PulseMode::GapTuned,
        gap_floor,
    })
}

pub fn free_piecewise(amplitudes: Vec<f64>, tau: f64) -> Result<PulseSchedule> {
    if amplitudes.is_empty() {
        return Err(Error::InvalidConfig("a schedule needs at least one segment".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    Ok(PulseSchedule {
        tau,
        amplitudes,
        mode: PulseMode::FreePiecewise,
        gap_floor: DEFAULT_GAP_FLOOR,
    })
}

/// The uncontrolled schedule `c = 0` on a single segment.
pub fn no_control(total_time: f64) -> PulseSchedule {
    PulseSchedule {
        tau: total_time,
        amplitudes: vec![0.0],
        mode: PulseMode::FreePiecewise,
        gap_floor: DEFAULT_GAP_FLOOR,
    }
}

/// `base / max(Delta E_01(t), floor)`.
pub fn gap_tuned_intensity(t: f64, base: f64, cfg: &ChainConfig, gap_floor: f64) -> Result<f64> {
    Ok(floored_intensity(base, energy_gap(t, cfg)?, gap_floor))
}

pub(crate) fn floored_intensity(base: f64, gap: f64, gap_floor: f64) -> f64 {
    base / gap.max(gap_floor)
}

impl PulseSchedule {
    pub fn segments(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn total_time(&self) -> f64 {
        self.tau * self.amplitudes.len() as f64
    }

    /// Segment containing `t`; right-continuous at switch times, with `t = T`
    /// assigned to the last segment.
    pub fn segment_at(&self, t: f64) -> usize {
        let x = t / self.tau;
        let nearest = x.round();
        let n = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            x.floor()
        };
        (n.max(0.0) as usize).min(self.amplitudes.len() - 1)
    }

    /// `c(t)` evaluated with the amplitude of segment `segment`.
    pub fn value_in_segment(&self, t: f64, segment: usize, cfg: &ChainConfig) -> Result<f64> {
        let amp = self.amplitudes[segment];
        match self.mode {
            PulseMode::IdealRect | PulseMode::FreePiecewise => Ok(amp),
            PulseMode::GapTuned => gap_tuned_intensity(t, amp, cfg, self.gap_floor),
        }
    }

    pub fn value(&self, t: f64, cfg: &ChainConfig) -> Result<f64> {
        cfg.check_time(t)?;
        self.value_in_segment(t, self.segment_at(t), cfg)
    }

    /// Largest `|amplitude|`. For gap-tuned schedules use
    /// [`crate::propagator::ControlTrack::c_max`], which reflects the realized intensity.
    pub fn max_amplitude(&self) -> f64 {
        self.amplitudes.iter().fold(0.0, |acc, a| acc.max(a.abs()))
    }

    /// `int_0^t c(s) ds` for piecewise-constant schedules.
    pub fn integral_to(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let x = t / self.tau;
        let full = if (x - x.round()).abs() <= 1e-9 * x.round().max(1.0) {
            x.round()
        } else {
            x.floor()
        };
        let full = (full as usize).min(self.amplitudes.len());
        let whole: f64 = self.amplitudes[..full].iter().sum();
        let partial = self
            .amplitudes
            .get(full)
            .map_or(0.0, |a| a * (t - full as f64 * self.tau));
        whole * self.tau + partial
    }

    pub fn check_horizon(&self, total_time: f64) -> Result<()> {
        let m = segment_count(total_time, self.tau)?;
        if m != self.amplitudes.len() {
            return Err(Error::InvalidConfig(format!(
                "schedule has {} segments but T/tau = {m}",
                self.amplitudes.len()
            )));
        }
        Ok(())
    }
}

/// `{0, tau, 2 tau, ..., T}`.
pub fn switch_times(schedule: &PulseSchedule) -> Vec<f64> {
    (0..=schedule.segments())
        .map(|n| n as f64 * schedule.tau)
        .collect()
}

/// `[1 + c(t)] H_s(t)`.
pub fn apply_control(t: f64, schedule: &PulseSchedule, cfg: &ChainConfig) -> Result<OperatorMatrix> {
    ControlledHamiltonian::new(cfg, schedule)?.at(t, schedule.segment_at(t))
}

/// Caches `H_xy` and `H_z` so the controlled Hamiltonian can be sampled cheaply.
pub struct ControlledHamiltonian<'a> {
    cfg: ChainConfig,
    schedule: &'a PulseSchedule,
    hxy: OperatorMatrix,
    hz: OperatorMatrix,
}

impl<'a> ControlledHamiltonian<'a> {
    pub fn new(cfg: &ChainConfig, schedule: &'a PulseSchedule) -> Result<Self> {
        Ok(Self {
            cfg: *cfg,
            schedule,
            hxy: build_hxy(cfg),
            hz: build_hz(cfg),
        })
    }

    /// Hamiltonian at `t` using segment `segment`'s amplitude, so an
    /// integration step can pin its segment at both endpoints.
    pub fn at(&self, t: f64, segment: usize) -> Result<OperatorMatrix> {
        self.cfg.check_time(t)?;
        let c = self.schedule.value_in_segment(t, segment, &self.cfg)?;
        Ok(combine_drive(t, &self.cfg, &self.hxy, &self.hz) * Complex64::new(1.0 + c, 0.0))
    }
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    segment_index: usize,
    t_start: f64,
    t_end: f64,
    amplitude: f64,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRecord {
    mode: PulseMode,
    tau: f64,
    #[serde(default = "default_floor")]
    gap_floor: f64,
    segments: Vec<SegmentRecord>,
}

fn default_floor() -> f64 {
    DEFAULT_GAP_FLOOR
}

impl Serialize for PulseSchedule {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let record = ScheduleRecord {
            mode: self.mode,
            tau: self.tau,
            gap_floor: self.gap_floor,
            segments: self
                .amplitudes
                .iter()
                .enumerate()
                .map(|(n, &amplitude)| SegmentRecord {
                    segment_index: n,
                    t_start: n as f64 * self.tau,
                    t_end: (n + 1) as f64 * self.tau,
                    amplitude,
                })
                .collect(),
        };
        record.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PulseSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let mut record = ScheduleRecord::deserialize(deserializer)?;
        record.segments.sort_by_key(|s| s.segment_index);
        for (n, s) in record.segments.iter().enumerate() {
            if s.segment_index != n {
                return Err(serde::de::Error::custom(format!(
                    "segment indices must be 0..M without gaps, found {}",
                    s.segment_index
                )));
            }
        }
        if record.segments.is_empty() || !(record.tau > 0.0) {
            return Err(serde::de::Error::custom("schedule needs tau > 0 and at least one segment"));
        }
        Ok(PulseSchedule {
            tau: record.tau,
            amplitudes: record.segments.iter().map(|s| s.amplitude).collect(),
            mode: record.mode,
            gap_floor: record.gap_floor,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::{max_abs, system_hamiltonian};
    use std::f64::consts::PI;

    fn chain() -> ChainConfig {
        ChainConfig::new(3, -1.0, 0.5, PI).unwrap()
    }

    #[test]
    fn ideal_rect_values() {
        let s = ideal_rect(20.0, PI / 10.0, PI).unwrap();
        assert_eq!(s.segments(), 10);
        let cfg = chain();
        assert_eq!(s.value(PI / 20.0, &cfg).unwrap(), 20.0);
        assert_eq!(s.value(3.0 * PI / 20.0, &cfg).unwrap(), -20.0);
        assert!(s.integral_to(2.0 * s.tau).abs() < 1e-12);
        assert!(s.integral_to(PI).abs() < 1e-12);
        assert!((20.0 * s.tau - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn non_integer_segments_rejected() {
        assert!(matches!(ideal_rect(20.0, 0.3, PI), Err(Error::NonIntegerSegments { .. })));
    }

    #[test]
    fn right_continuous_at_switches() {
        let s = free_piecewise(vec![1.0, 2.0, 3.0, 4.0], 0.25).unwrap();
        let cfg = ChainConfig::new(2, -1.0, 0.5, 1.0).unwrap();
        assert_eq!(s.value(0.25, &cfg).unwrap(), 2.0);
        assert_eq!(s.value(0.5, &cfg).unwrap(), 3.0);
        assert_eq!(s.value(1.0, &cfg).unwrap(), 4.0);
        assert_eq!(s.value(0.0, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn gap_tuned_intensity_examples() {
        assert_eq!(floored_intensity(20.0, 2.0, DEFAULT_GAP_FLOOR), 10.0);
        assert!((floored_intensity(20.0, 0.0, DEFAULT_GAP_FLOOR) - 200.0).abs() < 1e-9);
        assert!(floored_intensity(20.0, 0.5, 1e12) < 1e-10);
        // at t = 0 the N=2, h_m=1 gap is 2
        let cfg = ChainConfig::new(2, -1.0, 1.0, PI).unwrap();
        assert!((gap_tuned_intensity(0.0, 20.0, &cfg, 0.1).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn gap_tuned_signs_alternate() {
        let cfg = chain();
        let s = gap_tuned(4.0, PI / 4.0, PI, 0.1).unwrap();
        assert!(s.value(0.1, &cfg).unwrap() > 0.0);
        assert!(s.value(PI / 4.0 + 0.1, &cfg).unwrap() < 0.0);
    }

    #[test]
    fn apply_control_examples() {
        let cfg = chain();
        let zero = no_control(PI);
        for t in [0.0, 0.7, PI] {
            assert_eq!(apply_control(t, &zero, &cfg).unwrap(), system_hamiltonian(t, &cfg).unwrap());
        }
        let kill = free_piecewise(vec![-1.0, 3.0], PI / 2.0).unwrap();
        assert_eq!(max_abs(&apply_control(0.3, &kill, &cfg).unwrap()), 0.0);

        let ideal = ideal_rect(20.0, PI / 10.0, PI).unwrap();
        for (t, factor) in [(0.1, 21.0), (0.4, -19.0)] {
            let expected = system_hamiltonian(t, &cfg).unwrap() * Complex64::new(factor, 0.0);
            assert!(max_abs(&(apply_control(t, &ideal, &cfg).unwrap() - expected)) < 1e-12);
        }
        assert!(apply_control(4.0, &ideal, &cfg).is_err());
    }

    #[test]
    fn switch_time_examples() {
        let s = ideal_rect(20.0, PI / 10.0, PI).unwrap();
        let times = switch_times(&s);
        assert_eq!(times.len(), 11);
        assert_eq!(times[0], 0.0);
        assert!((times[10] - PI).abs() < 1e-12);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(switch_times(&no_control(2.0)), vec![0.0, 2.0]);
    }

    #[test]
    fn json_layout() {
        let s = ideal_rect(20.0, 0.5, 1.0).unwrap();
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["mode"], "ideal_rect");
        assert_eq!(v["tau"], 0.5);
        assert_eq!(v["segments"][1]["segment_index"], 1);
        assert_eq!(v["segments"][1]["t_start"], 0.5);
        assert_eq!(v["segments"][1]["t_end"], 1.0);
        assert_eq!(v["segments"][1]["amplitude"], -20.0);
        let back: PulseSchedule = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}
