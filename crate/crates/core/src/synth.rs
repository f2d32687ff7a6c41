//! Synthetic vessel telemetry: cruising behavior plus two injected anomaly
//! classes (propeller failure, stress maneuvers), with ground-truth flags.
//!
//! Everything is a pure function of the `ScenarioSpec`; the same spec always
//! produces the same series bit for bit.

use crate::error::{Error, Result};
use crate::ingest::{FrameSeries, SignalFrame, N_SIGNALS, SIG_HEADING_TRUE, SIG_PORT_BATT_V,
                    SIG_PORT_RPM, SIG_RATE_OF_TURN, SIG_RUDDER_ANGLE, SIG_SOG, SIG_STBD_BATT_V,
                    SIG_STBD_RPM};
use crate::rng::{role, Rng};

/// 2024-01-01T00:00:00Z; all generated series start here.
pub const SERIES_START_EPOCH: i64 = 1_704_067_200;

const TAU: f64 = std::f64::consts::TAU;

/// Cruise model constants. RPM magnitudes sit in the mid-20s so surrogate
/// rule thresholds come out in realistic ranges.
pub mod cruise {
    /// Mean engine RPM while cruising.
    pub const RPM_MEAN: f64 = 25.0;
    /// Amplitude of the slow sinusoidal RPM variation.
    pub const RPM_SWING: f64 = 2.0;
    /// Period of the slow RPM variation, seconds.
    pub const RPM_PERIOD_S: f64 = 5400.0;
    /// AR(1) coefficient and innovation sigma for the RPM random walk.
    pub const RPM_AR: f64 = 0.98;
    pub const RPM_AR_SIGMA: f64 = 0.06;
    /// Per-engine RPM measurement noise sigma.
    pub const RPM_NOISE: f64 = 0.15;
    /// SOG response to mean RPM: sog = SOG_PER_RPM * rpm.
    pub const SOG_PER_RPM: f64 = 0.22;
    pub const SOG_NOISE: f64 = 0.05;
    /// Heading random-walk: slow AR(1) turn bias plus white jitter, rad/frame.
    pub const HEADING_BIAS_AR: f64 = 0.995;
    pub const HEADING_BIAS_SIGMA: f64 = 0.0004;
    pub const HEADING_JITTER: f64 = 0.003;
    /// Rudder follows rate of turn with a gain plus small noise.
    pub const RUDDER_PER_ROT: f64 = 0.8;
    pub const RUDDER_NOISE: f64 = 0.01;
    /// Battery voltages: level, daily drift amplitude, noise.
    pub const PORT_BATT: f64 = 12.6;
    pub const STBD_BATT: f64 = 12.7;
    pub const BATT_SWING: f64 = 0.05;
    pub const BATT_NOISE: f64 = 0.005;
}

/// Anomaly injection constants.
pub mod fault {
    /// Propeller failure: starboard RPM runs away while thrust collapses.
    pub const PROP_STBD_RPM_RISE: f64 = 15.0;
    pub const PROP_PORT_RPM_DROP: f64 = 3.0;
    pub const PROP_SOG_FLOOR: f64 = 0.3;
    /// Frames over which the failure ramps in.
    pub const PROP_RAMP_FRAMES: usize = 6;

    /// Stress maneuver, hard phase: rudder hard over, fast turns, SOG dip.
    pub const STRESS_HARD_FRACTION: f64 = 0.4;
    pub const STRESS_HARD_RUDDER: f64 = 0.5;
    pub const STRESS_HARD_PERIOD_FRAMES: f64 = 30.0;
    pub const STRESS_HARD_SOG_DIP: f64 = 0.45;
    /// Heading change per frame per radian of rudder.
    pub const STRESS_TURN_GAIN: f64 = 0.12;

    /// Stress maneuver, recovery phase: smaller coherent oscillation that
    /// stays near the normal per-frame envelope but is sustained in time.
    pub const STRESS_SOFT_RUDDER: f64 = 0.065;
    pub const STRESS_SOFT_PERIOD_FRAMES: f64 = 12.0;
    pub const STRESS_SOFT_SOG_WOBBLE: f64 = 0.09;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AnomalyKind {
    PropellerFailure,
    StressManeuver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnomalyWindow {
    pub start_seconds: u64,
    pub length_seconds: u64,
    pub kind: AnomalyKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub duration_seconds: u64,
    pub seed: u64,
    pub cadence_seconds: u32,
    pub anomaly_windows: Vec<AnomalyWindow>,
}

impl ScenarioSpec {
    pub fn normal(duration_seconds: u64, seed: u64) -> Self {
        ScenarioSpec { duration_seconds, seed, cadence_seconds: 10, anomaly_windows: Vec::new() }
    }

    fn validate_windows(&self) -> Result<()> {
        let mut sorted = self.anomaly_windows.clone();
        sorted.sort_by_key(|w| w.start_seconds);
        let mut prev_end = 0u64;
        for (i, w) in sorted.iter().enumerate() {
            if w.start_seconds + w.length_seconds > self.duration_seconds {
                return Err(Error::Scenario(format!(
                    "anomaly window {} extends past scenario duration",
                    i
                )));
            }
            if i > 0 && w.start_seconds < prev_end {
                return Err(Error::Scenario("anomaly windows overlap".into()));
            }
            prev_end = w.start_seconds + w.length_seconds;
        }
        Ok(())
    }
}

/// A frame series plus per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub series: FrameSeries,
    pub truth: Vec<bool>,
}

fn wrap_heading(h: f64) -> f64 {
    let mut x = h % TAU;
    if x < 0.0 {
        x += TAU;
    }
    x
}

/// Cruising baseline. All truth flags false. Anomaly windows in the spec are
/// ignored here.
pub fn generate_normal(spec: &ScenarioSpec) -> Result<LabeledSeries> {
    if spec.cadence_seconds == 0 {
        return Err(Error::Param("cadence_seconds must be positive".into()));
    }
    let n = (spec.duration_seconds / spec.cadence_seconds as u64) as usize;
    if n == 0 {
        return Err(Error::EmptyInput("scenario duration shorter than one frame".into()));
    }
    let mut rng = Rng::for_role(spec.seed, role::SYNTH_NORMAL);
    let cadence = spec.cadence_seconds as f64;
    let rot_per_delta = 60.0 / cadence; // rad/frame -> rad/min

    let mut frames = Vec::with_capacity(n);
    let mut rpm_walk = 0.0;
    let mut heading = rng.uniform(0.0, TAU);
    let mut turn_bias = 0.0;
    for k in 0..n {
        let t = k as f64 * cadence;
        rpm_walk = cruise::RPM_AR * rpm_walk + cruise::RPM_AR_SIGMA * rng.gauss();
        let rpm_base =
            cruise::RPM_MEAN + cruise::RPM_SWING * (TAU * t / cruise::RPM_PERIOD_S).sin() + rpm_walk;
        let port_rpm = rpm_base + cruise::RPM_NOISE * rng.gauss();
        let stbd_rpm = rpm_base + cruise::RPM_NOISE * rng.gauss();
        let mean_rpm = 0.5 * (port_rpm + stbd_rpm);
        let sog = (cruise::SOG_PER_RPM * mean_rpm + cruise::SOG_NOISE * rng.gauss()).max(0.0);

        turn_bias = cruise::HEADING_BIAS_AR * turn_bias + cruise::HEADING_BIAS_SIGMA * rng.gauss();
        let delta = if k == 0 { 0.0 } else { turn_bias + cruise::HEADING_JITTER * rng.gauss() };
        if k == 0 {
            // keep draw count per frame fixed
            rng.gauss();
        }
        heading = wrap_heading(heading + delta);
        let rot = delta * rot_per_delta;
        let rudder = cruise::RUDDER_PER_ROT * rot + cruise::RUDDER_NOISE * rng.gauss();

        let day_phase = TAU * t / 86_400.0;
        let port_batt =
            cruise::PORT_BATT + cruise::BATT_SWING * day_phase.sin() + cruise::BATT_NOISE * rng.gauss();
        let stbd_batt =
            cruise::STBD_BATT + cruise::BATT_SWING * day_phase.sin() + cruise::BATT_NOISE * rng.gauss();

        let mut values = [None; N_SIGNALS];
        values[SIG_PORT_RPM] = Some(port_rpm);
        values[SIG_STBD_RPM] = Some(stbd_rpm);
        values[SIG_PORT_BATT_V] = Some(port_batt);
        values[SIG_STBD_BATT_V] = Some(stbd_batt);
        values[SIG_HEADING_TRUE] = Some(heading);
        values[SIG_RATE_OF_TURN] = Some(rot);
        values[SIG_SOG] = Some(sog);
        values[SIG_RUDDER_ANGLE] = Some(rudder);
        frames.push(SignalFrame {
            timestamp: SERIES_START_EPOCH + (k as i64) * spec.cadence_seconds as i64,
            values,
        });
    }
    Ok(LabeledSeries {
        series: FrameSeries { frames, cadence_seconds: spec.cadence_seconds },
        truth: vec![false; n],
    })
}

/// Overwrites the spec's anomaly windows onto a base series and sets the
/// truth flags. Outside the windows the base is untouched.
pub fn inject_anomalies(base: &LabeledSeries, spec: &ScenarioSpec) -> Result<LabeledSeries> {
    spec.validate_windows()?;
    let mut out = base.clone();
    let cadence = spec.cadence_seconds as f64;
    let rot_per_delta = 60.0 / cadence;
    let mut rng = Rng::for_role(spec.seed, role::SYNTH_INJECT);

    for w in &spec.anomaly_windows {
        let start = (w.start_seconds / spec.cadence_seconds as u64) as usize;
        let end = ((w.start_seconds + w.length_seconds) / spec.cadence_seconds as u64) as usize;
        let end = end.min(out.series.len());
        match w.kind {
            AnomalyKind::PropellerFailure => {
                for (k, i) in (start..end).enumerate() {
                    let ramp = ((k + 1) as f64 / fault::PROP_RAMP_FRAMES as f64).min(1.0);
                    let f = &mut out.series.frames[i];
                    let stbd = f.values[SIG_STBD_RPM].unwrap_or(cruise::RPM_MEAN);
                    let port = f.values[SIG_PORT_RPM].unwrap_or(cruise::RPM_MEAN);
                    let sog = f.values[SIG_SOG].unwrap_or(0.0);
                    f.values[SIG_STBD_RPM] = Some(stbd + fault::PROP_STBD_RPM_RISE * ramp);
                    f.values[SIG_PORT_RPM] = Some(port - fault::PROP_PORT_RPM_DROP * ramp);
                    let failed_sog =
                        fault::PROP_SOG_FLOOR + 0.05 * rng.gauss().abs();
                    f.values[SIG_SOG] = Some((sog * (1.0 - ramp) + failed_sog * ramp).max(0.0));
                    out.truth[i] = true;
                }
            }
            AnomalyKind::StressManeuver => {
                let hard_len =
                    ((end - start) as f64 * fault::STRESS_HARD_FRACTION).round() as usize;
                let mut heading = if start > 0 {
                    out.series.frames[start - 1].values[SIG_HEADING_TRUE].unwrap_or(0.0)
                } else {
                    out.series.frames[start].values[SIG_HEADING_TRUE].unwrap_or(0.0)
                };
                for (k, i) in (start..end).enumerate() {
                    let (rudder, sog_factor, sog_shift) = if k < hard_len {
                        let phase = TAU * k as f64 / fault::STRESS_HARD_PERIOD_FRAMES;
                        let r = fault::STRESS_HARD_RUDDER * phase.sin();
                        (r, 1.0 - fault::STRESS_HARD_SOG_DIP * phase.sin().abs(), 0.0)
                    } else {
                        let phase = TAU * (k - hard_len) as f64 / fault::STRESS_SOFT_PERIOD_FRAMES;
                        let r = fault::STRESS_SOFT_RUDDER * phase.sin();
                        (r, 1.0, fault::STRESS_SOFT_SOG_WOBBLE * phase.sin())
                    };
                    let delta = fault::STRESS_TURN_GAIN * rudder;
                    heading = wrap_heading(heading + delta);
                    let rot = delta * rot_per_delta;
                    let f = &mut out.series.frames[i];
                    let base_sog = f.values[SIG_SOG].unwrap_or(0.0);
                    f.values[SIG_RUDDER_ANGLE] =
                        Some(rudder + cruise::RUDDER_NOISE * rng.gauss());
                    f.values[SIG_HEADING_TRUE] = Some(heading);
                    f.values[SIG_RATE_OF_TURN] = Some(rot);
                    f.values[SIG_SOG] = Some((base_sog * sog_factor + sog_shift).max(0.0));
                    out.truth[i] = true;
                }
            }
        }
    }
    Ok(out)
}

/// Convenience: normal baseline plus the spec's anomaly windows.
pub fn generate(spec: &ScenarioSpec) -> Result<LabeledSeries> {
    let base = generate_normal(spec)?;
    inject_anomalies(&base, spec)
}

/// Expected SOG for a given mean RPM under the cruise model. Exposed for the
/// residual-separability checks.
pub fn expected_sog(mean_rpm: f64) -> f64 {
    cruise::SOG_PER_RPM * mean_rpm
}
