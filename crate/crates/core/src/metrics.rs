//! Evaluation quantities computed from recorded run traces.
//!
//! Everything here is a pure function of a [`RunTrace`], so a report can be
//! recomputed from a CSV file long after the run that produced it.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gesture::Gesture;
use crate::model::{horizontal, horizontal_distance, Vec3};
use crate::planner::{Domain, MissionPhase, PlannerConfig};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty series")]
    Empty,
    #[error("delay is undefined for a constant series")]
    ZeroVariance,
    #[error("series of {len} samples is too short for a max lag of {max_lag_samples} samples")]
    TooShort { len: usize, max_lag_samples: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("trace format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub const RUN_TRACE_HEADER: [&str; 19] = [
    "t", "x", "y", "z", "tx", "ty", "tz", "yaw", "goal_yaw", "chest_x", "chest_y", "chest_z",
    "palm_x", "palm_y", "palm_z", "phase", "domain", "gesture", "cmd_speed",
];

/// Hardware figures reported by the original experiments, listed in every
/// report for comparison. They are not targets for the simulator.
pub const REFERENCE_RMSE: f64 = 0.1695;
pub const REFERENCE_DELAY: f64 = 1.0;
pub const REFERENCE_MIN_CHEST_DISTANCE: f64 = 0.693;

/// A step increase in drone-palm distance above this counts as a jerk.
pub const SMOOTHNESS_THRESHOLD: f64 = 0.02;
/// Longest lag searched when estimating tracking delay.
pub const MAX_DELAY: f64 = 2.0;
/// Time after a STAY switch excluded from hold-drift measurement.
pub const HOLD_SETTLE: f64 = 2.0;

/// Tolerance applied when counting setpoints inside the safety radius.
const SAFETY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSample {
    pub t: f64,
    pub position: Vec3,
    pub target: Vec3,
    pub yaw: f64,
    pub goal_yaw: f64,
    pub chest: Vec3,
    pub palm: Vec3,
    pub phase: MissionPhase,
    pub domain: Option<Domain>,
    pub gesture: Gesture,
    pub cmd_speed: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub samples: Vec<RunSample>,
}

impl RunTrace {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MetricsError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        w.write_record(RUN_TRACE_HEADER)?;
        for s in &self.samples {
            let nums = [
                s.t,
                s.position.x,
                s.position.y,
                s.position.z,
                s.target.x,
                s.target.y,
                s.target.z,
                s.yaw,
                s.goal_yaw,
                s.chest.x,
                s.chest.y,
                s.chest.z,
                s.palm.x,
                s.palm.y,
                s.palm.z,
            ];
            let mut record: Vec<String> = nums.iter().map(|v| v.to_string()).collect();
            record.push(s.phase.as_str().into());
            record.push(s.domain.map_or("NONE", Domain::as_str).into());
            record.push(s.gesture.as_str().into());
            record.push(s.cmd_speed.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricsError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, MetricsError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
        let header = rdr.headers()?;
        if header.iter().ne(RUN_TRACE_HEADER.iter().copied()) {
            return Err(MetricsError::Parse {
                line: 1,
                message: format!("expected header {}", RUN_TRACE_HEADER.join(",")),
            });
        }
        let mut samples = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| MetricsError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let err = |message: String| MetricsError::Parse { line, message };
            let num = |i: usize| {
                record[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("column {} is not a finite number", RUN_TRACE_HEADER[i])))
            };
            let v3 = |i: usize| -> Result<Vec3, MetricsError> { Ok(Vec3::new(num(i)?, num(i + 1)?, num(i + 2)?)) };
            let domain = match &record[16] {
                "NONE" => None,
                d => Some(d.parse::<Domain>().map_err(err)?),
            };
            samples.push(RunSample {
                t: num(0)?,
                position: v3(1)?,
                target: v3(4)?,
                yaw: num(7)?,
                goal_yaw: num(8)?,
                chest: v3(9)?,
                palm: v3(12)?,
                phase: record[15].parse().map_err(err)?,
                domain,
                gesture: record[17]
                    .parse()
                    .map_err(|e: crate::gesture::GestureError| err(e.to_string()))?,
                cmd_speed: num(18)?,
            });
        }
        let trace = Self { samples };
        trace.sample_period()?;
        Ok(trace)
    }

    /// Common sample spacing. Fails on fewer than two samples or
    /// non-uniform timestamps.
    pub fn sample_period(&self) -> Result<f64, MetricsError> {
        let n = self.samples.len();
        if n < 2 {
            return Err(MetricsError::Format("a run trace needs at least two samples".into()));
        }
        let dt = (self.samples[n - 1].t - self.samples[0].t) / (n - 1) as f64;
        for w in self.samples.windows(2) {
            let step = w[1].t - w[0].t;
            if !(step > 0.0) || (step - dt).abs() > 0.01 * dt {
                return Err(MetricsError::Format(format!(
                    "non-uniform timestamps at t = {}",
                    w[1].t
                )));
            }
        }
        Ok(dt)
    }
}

/// Root-mean-square distance between paired positions.
pub fn rmse(actual: &[Vec3], target: &[Vec3]) -> Result<f64, MetricsError> {
    if actual.len() != target.len() {
        return Err(MetricsError::LengthMismatch(actual.len(), target.len()));
    }
    if actual.is_empty() {
        return Err(MetricsError::Empty);
    }
    let sum: f64 = actual.iter().zip(target).map(|(a, t)| (a - t).norm_squared()).sum();
    Ok((sum / actual.len() as f64).sqrt())
}

fn centered_energy(series: &[Vec3]) -> f64 {
    let mean = series.iter().sum::<Vec3>() / series.len() as f64;
    series.iter().map(|v| (v - mean).norm_squared()).sum()
}

fn normalized_correlation(a: &[Vec3], b: &[Vec3]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<Vec3>() / n;
    let mb = b.iter().sum::<Vec3>() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x - ma, y - mb);
        ab += x.dot(&y);
        aa += x.norm_squared();
        bb += y.norm_squared();
    }
    let denom = (aa * bb).sqrt();
    (denom > 0.0).then(|| ab / denom)
}

/// Lag by which `actual` trails `target`, as the shift in `[0, max_lag]`
/// maximizing normalized cross-correlation. Ties go to the smaller lag.
pub fn estimate_delay(
    actual: &[Vec3],
    target: &[Vec3],
    dt: f64,
    max_lag: f64,
) -> Result<f64, MetricsError> {
    if actual.len() != target.len() {
        return Err(MetricsError::LengthMismatch(actual.len(), target.len()));
    }
    if !(dt > 0.0) || !(max_lag >= 0.0) {
        return Err(MetricsError::InvalidArgument("dt must be > 0 and max_lag >= 0".into()));
    }
    let max_k = (max_lag / dt + 1e-9).floor() as usize;
    if actual.len() <= 2 * max_k || actual.len() < 2 {
        return Err(MetricsError::TooShort {
            len: actual.len(),
            max_lag_samples: max_k,
        });
    }
    if centered_energy(actual) == 0.0 || centered_energy(target) == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    let n = actual.len();
    let mut best: Option<(usize, f64)> = None;
    for k in 0..=max_k {
        let Some(c) = normalized_correlation(&target[..n - k], &actual[k..]) else {
            continue;
        };
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    let (k, _) = best.ok_or(MetricsError::ZeroVariance)?;
    Ok(k as f64 * dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyAudit {
    pub min_drone_chest: Option<f64>,
    pub min_setpoint_chest: Option<f64>,
    /// Airborne samples whose setpoint lies inside the safety radius.
    pub violations: usize,
    /// Largest single-sample increase of drone-palm distance while
    /// approaching a stationary palm.
    pub max_palm_distance_increase: f64,
    pub smooth: bool,
}

pub fn safety_audit(trace: &RunTrace, cfg: &PlannerConfig) -> SafetyAudit {
    let measure = |a: &Vec3, b: &Vec3| cfg.distance_mode.measure(a, b);
    let airborne = || trace.samples.iter().filter(|s| s.phase.is_airborne());
    let min = |it: &mut dyn Iterator<Item = f64>| it.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))));
    let min_drone_chest = min(&mut airborne().map(|s| measure(&s.position, &s.chest)));
    let min_setpoint_chest = min(&mut airborne().map(|s| measure(&s.target, &s.chest)));
    let violations = airborne()
        .filter(|s| measure(&s.target, &s.chest) < cfg.r_s - SAFETY_TOL)
        .count();
    let approaching = |s: &RunSample| s.phase == MissionPhase::Flight && s.gesture == Gesture::Approach;
    let max_palm_distance_increase = trace
        .samples
        .windows(2)
        .filter(|w| approaching(&w[0]) && approaching(&w[1]) && (w[1].palm - w[0].palm).norm() <= 1e-9)
        .map(|w| measure(&w[1].position, &w[1].palm) - measure(&w[0].position, &w[0].palm))
        .fold(0.0, f64::max);
    SafetyAudit {
        min_drone_chest,
        min_setpoint_chest,
        violations,
        max_palm_distance_increase,
        smooth: max_palm_distance_increase < SMOOTHNESS_THRESHOLD,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandingReport {
    pub success: bool,
    pub time: Option<f64>,
    pub touchdown_speed: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub rmse: f64,
    pub delay: f64,
    pub min_chest_drone: f64,
}

impl Default for ReferenceValues {
    fn default() -> Self {
        Self {
            rmse: REFERENCE_RMSE,
            delay: REFERENCE_DELAY,
            min_chest_drone: REFERENCE_MIN_CHEST_DISTANCE,
        }
    }
}

/// Summary of one run. Key names are stable; absent quantities are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub mode: String,
    pub seed: Option<u64>,
    pub duration: f64,
    pub samples: usize,
    /// Actual vs target position over airborne samples.
    pub rmse: Option<f64>,
    /// Lag of the actual position behind the target.
    pub delay: Option<f64>,
    pub min_chest_drone: Option<f64>,
    pub min_setpoint_chest: Option<f64>,
    pub max_commanded_speed: f64,
    /// Largest speed averaged over one planner period.
    pub max_actual_speed: f64,
    /// How far the drone runs past the frozen setpoint after APPROACH to STAY.
    pub overshoot_after_switches: f64,
    /// Distance from the frozen setpoint once a STAY hold has settled.
    pub hold_drift: Option<f64>,
    pub gesture_switches: usize,
    pub landing: LandingReport,
    pub domain_dwell: BTreeMap<String, f64>,
    /// Spread of actual horizontal speed in the far domain.
    pub d1_speed_std: Option<f64>,
    /// Angle at the chest between drone and palm when the arc domain starts.
    pub approach_bearing_deg: Option<f64>,
    pub safety: SafetyAudit,
    pub reference: ReferenceValues,
}

impl MetricsReport {
    /// Computes the report. `planner_period` sets the averaging window for
    /// actual speeds.
    pub fn compute(trace: &RunTrace, cfg: &PlannerConfig) -> Result<Self, MetricsError> {
        let dt = trace.sample_period()?;
        let samples = &trace.samples;
        let window = ((cfg.delta_t / dt).round() as usize).max(1);
        let speed_at = |i: usize| -> Option<f64> {
            (i >= window).then(|| (samples[i].position - samples[i - window].position).norm() / (window as f64 * dt))
        };
        let hspeed_at = |i: usize| -> Option<f64> {
            (i >= window).then(|| {
                horizontal_distance(&samples[i].position, &samples[i - window].position) / (window as f64 * dt)
            })
        };

        let airborne: Vec<&RunSample> = samples.iter().filter(|s| s.phase.is_airborne()).collect();
        let actual: Vec<Vec3> = airborne.iter().map(|s| s.position).collect();
        let target: Vec<Vec3> = airborne.iter().map(|s| s.target).collect();
        let rmse_value = rmse(&actual, &target).ok();
        let delay = estimate_delay(&actual, &target, dt, MAX_DELAY).ok();

        let max_commanded_speed = samples.iter().map(|s| s.cmd_speed).fold(0.0, f64::max);
        let max_actual_speed = (0..samples.len())
            .filter(|&i| samples[i].phase.is_airborne())
            .filter_map(speed_at)
            .fold(0.0, f64::max);

        let gesture_switches = samples.windows(2).filter(|w| w[0].gesture != w[1].gesture).count();
        let (overshoot_after_switches, hold_drift) = stay_response(samples);

        let landed = samples.iter().position(|s| s.phase == MissionPhase::Landed);
        let landing = LandingReport {
            success: landed.is_some(),
            time: landed.map(|i| samples[i].t),
            touchdown_speed: landed.and_then(speed_at),
        };

        let mut domain_dwell: BTreeMap<String, f64> =
            Domain::ALL.iter().map(|d| (d.as_str().to_string(), 0.0)).collect();
        for s in samples {
            if let Some(d) = s.domain {
                *domain_dwell.get_mut(d.as_str()).unwrap() += dt;
            }
        }

        let d1_speeds: Vec<f64> = (0..samples.len())
            .filter(|&i| samples[i].domain == Some(Domain::D1Far))
            .filter_map(hspeed_at)
            .collect();
        let d1_speed_std = (!d1_speeds.is_empty()).then(|| {
            let mean = d1_speeds.iter().sum::<f64>() / d1_speeds.len() as f64;
            (d1_speeds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d1_speeds.len() as f64).sqrt()
        });

        let approach_bearing_deg = samples.iter().find(|s| s.domain == Some(Domain::D3Arc)).map(|s| {
            let a = horizontal(&(s.position - s.chest));
            let b = horizontal(&(s.palm - s.chest));
            a.angle(&b).to_degrees()
        });

        let safety = safety_audit(trace, cfg);
        Ok(Self {
            scenario: String::new(),
            mode: String::new(),
            seed: None,
            duration: samples.last().unwrap().t - samples[0].t,
            samples: samples.len(),
            rmse: rmse_value,
            delay,
            min_chest_drone: safety.min_drone_chest,
            min_setpoint_chest: safety.min_setpoint_chest,
            max_commanded_speed,
            max_actual_speed,
            overshoot_after_switches,
            hold_drift,
            gesture_switches,
            landing,
            domain_dwell,
            d1_speed_std,
            approach_bearing_deg,
            safety,
            reference: ReferenceValues::default(),
        })
    }
}

/// Overshoot and settled drift over every STAY hold entered from APPROACH
/// in flight.
fn stay_response(samples: &[RunSample]) -> (f64, Option<f64>) {
    let mut overshoot: f64 = 0.0;
    let mut drift: Option<f64> = None;
    let mut i = 1;
    while i < samples.len() {
        let entered = samples[i].phase == MissionPhase::Flight
            && samples[i].gesture == Gesture::Stay
            && samples[i - 1].gesture == Gesture::Approach;
        if !entered {
            i += 1;
            continue;
        }
        let start = &samples[i];
        let hold = start.target;
        let motion = start.position - samples[i - 1].position;
        let direction = (motion.norm() > 1e-12).then(|| motion.normalize());
        let mut j = i;
        while j < samples.len()
            && samples[j].phase == MissionPhase::Flight
            && samples[j].gesture == Gesture::Stay
        {
            let s = &samples[j];
            let offset = s.position - hold;
            if s.t - start.t < HOLD_SETTLE {
                let past = direction.map_or(offset.norm(), |d| offset.dot(&d));
                overshoot = overshoot.max(past);
            } else {
                let e = offset.norm();
                drift = Some(drift.map_or(e, |d| d.max(e)));
            }
            j += 1;
        }
        i = j.max(i + 1);
    }
    (overshoot, drift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn xs(values: &[f64]) -> Vec<Vec3> {
        values.iter().map(|&x| Vec3::new(x, 0.0, 0.0)).collect()
    }

    #[test]
    fn rmse_examples() {
        let a = xs(&[0.0, 1.0, 2.0]);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = xs(&[0.1, 1.1, 2.1]);
        assert_abs_diff_eq!(rmse(&b, &a).unwrap(), 0.1, epsilon = 1e-12);
        let c = rmse(&xs(&[0.3, 0.4]), &xs(&[0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(c, 0.35355339059327373, epsilon = 1e-12);
        assert!(matches!(rmse(&a, &b[..2]), Err(MetricsError::LengthMismatch(3, 2))));
        assert!(matches!(rmse(&[], &[]), Err(MetricsError::Empty)));
    }

    fn chirp(n: usize, dt: f64) -> Vec<Vec3> {
        (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                Vec3::new((1.3 * t + 0.4 * t * t).sin(), (0.7 * t).cos(), 0.1 * t)
            })
            .collect()
    }

    fn shift(s: &[Vec3], k: usize) -> Vec<Vec3> {
        (0..s.len()).map(|i| s[i.saturating_sub(k)]).collect()
    }

    #[test]
    fn delay_examples() {
        let target = chirp(600, 0.01);
        let actual = shift(&target, 10);
        assert_abs_diff_eq!(estimate_delay(&actual, &target, 0.01, 1.0).unwrap(), 0.10, epsilon = 1e-12);
        assert_eq!(estimate_delay(&target, &target, 0.01, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn delay_quarter_period_sine() {
        let period = 2.0;
        let dt = 0.01;
        let target: Vec<Vec3> = (0..1000)
            .map(|i| Vec3::new((2.0 * std::f64::consts::PI * i as f64 * dt / period).sin(), 0.0, 0.0))
            .collect();
        let actual = shift(&target, 50);
        let d = estimate_delay(&actual, &target, dt, 0.8).unwrap();
        assert_abs_diff_eq!(d, period / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn delay_errors() {
        let flat = xs(&[1.0; 100]);
        let ramp: Vec<Vec3> = xs(&(0..100).map(|i| i as f64).collect::<Vec<_>>());
        assert!(matches!(estimate_delay(&flat, &ramp, 0.01, 0.2), Err(MetricsError::ZeroVariance)));
        assert!(matches!(
            estimate_delay(&ramp, &ramp, 0.01, 0.5),
            Err(MetricsError::TooShort { .. })
        ));
    }

    fn sample(t: f64, target: Vec3) -> RunSample {
        RunSample {
            t,
            position: target,
            target,
            yaw: 0.0,
            goal_yaw: 0.0,
            chest: Vec3::new(0.0, 0.0, 1.3),
            palm: Vec3::new(0.7, 0.0, 1.1),
            phase: MissionPhase::Flight,
            domain: Some(Domain::D2Weber),
            gesture: Gesture::Approach,
            cmd_speed: 0.5,
        }
    }

    #[test]
    fn audit_counts_setpoint_inside_safety_radius() {
        let mut trace = RunTrace {
            samples: (0..5).map(|i| sample(i as f64 * 0.01, Vec3::new(1.0, 0.0, 1.2))).collect(),
        };
        let cfg = PlannerConfig::default();
        assert_eq!(safety_audit(&trace, &cfg).violations, 0);
        trace.samples[2].target = Vec3::new(0.2, 0.0, 1.2);
        let audit = safety_audit(&trace, &cfg);
        assert_eq!(audit.violations, 1);
        assert_abs_diff_eq!(audit.min_setpoint_chest.unwrap(), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(audit.min_drone_chest.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn audit_flags_jerk_toward_palm() {
        let mut trace = RunTrace {
            samples: (0..4)
                .map(|i| sample(i as f64 * 0.01, Vec3::new(1.5 - 0.01 * i as f64, 0.0, 1.2)))
                .collect(),
        };
        let cfg = PlannerConfig::default();
        assert!(safety_audit(&trace, &cfg).smooth);
        trace.samples[3].position.x = 1.6;
        let audit = safety_audit(&trace, &cfg);
        assert!(!audit.smooth);
        assert_abs_diff_eq!(audit.max_palm_distance_increase, 0.12, epsilon = 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut samples: Vec<RunSample> =
            (0..3).map(|i| sample(i as f64 * 0.01, Vec3::new(0.1 * i as f64, 1.0 / 3.0, 1.2))).collect();
        samples[1].domain = None;
        samples[2].gesture = Gesture::Stay;
        samples[2].phase = MissionPhase::Landed;
        let trace = RunTrace { samples };
        let text = trace.to_csv_string();
        assert!(text.starts_with(&RUN_TRACE_HEADER.join(",")));
        assert!(text.contains(",NONE,"));
        let back = RunTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        let trace = RunTrace {
            samples: (0..2).map(|i| sample(i as f64 * 0.01, Vec3::new(1.0, 0.0, 1.0))).collect(),
        };
        let text = trace.to_csv_string().replace("D2_WEBER", "D9");
        assert!(matches!(RunTrace::read_csv(text.as_bytes()), Err(MetricsError::Parse { line: 2, .. })));
        let one = format!("{}\n", trace.to_csv_string().lines().take(2).collect::<Vec<_>>().join("\n"));
        assert!(matches!(RunTrace::read_csv(one.as_bytes()), Err(MetricsError::Format(_))));
    }

    #[test]
    fn stay_overshoot_and_drift() {
        let mut samples = Vec::new();
        for i in 0..400 {
            let t = i as f64 * 0.01;
            let mut s = sample(t, Vec3::new(1.0, 0.0, 1.2));
            if i < 100 {
                s.position.x = 0.01 * i as f64;
                s.target = s.position;
            } else {
                s.gesture = Gesture::Stay;
                s.target = Vec3::new(1.0, 0.0, 1.2);
                // Runs 0.05 past the hold, then settles 0.01 short.
                s.position.x = if i < 150 { 1.05 } else { 0.99 };
            }
            samples.push(s);
        }
        let (overshoot, drift) = stay_response(&samples);
        assert_abs_diff_eq!(overshoot, 0.05, epsilon = 1e-9);
        assert_abs_diff_eq!(drift.unwrap(), 0.01, epsilon = 1e-9);
    }

    #[test]
    fn report_serializes_with_stable_keys() {
        let trace = RunTrace {
            samples: (0..50).map(|i| sample(i as f64 * 0.01, Vec3::new(1.0 + 0.01 * i as f64, 0.0, 1.2))).collect(),
        };
        let report = MetricsReport::compute(&trace, &PlannerConfig::default()).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in [
            "rmse",
            "delay",
            "min_chest_drone",
            "min_setpoint_chest",
            "max_commanded_speed",
            "max_actual_speed",
            "overshoot_after_switches",
            "landing",
            "domain_dwell",
            "reference",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert_eq!(json["reference"]["min_chest_drone"], 0.693);
        assert_eq!(report.rmse, Some(0.0));
        assert_abs_diff_eq!(report.domain_dwell["D2_WEBER"], 0.5, epsilon = 1e-9);
    }
}
