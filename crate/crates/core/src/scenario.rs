//! Scripted user behaviour and recorded user traces.
//!
//! A [`Scenario`] is a declarative description of one experiment: where the
//! user stands, when they stretch or bend their arm, where they walk and when
//! the drone is told to take off. [`Scenario::sample_user`] is a pure
//! function of time, so the same scenario always produces the same user.
//!
//! A [`UserTrace`] is the same information recorded at a fixed rate, e.g.
//! exported from a motion-capture session, and loaded from CSV.

use std::io::Read;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Pose, UserModel, Vec3, ARM_REACH_SLACK, UNIT_QUATERNION_TOL};

/// Duration of the palm stretch/bend motion.
pub const GESTURE_RAMP: f64 = 0.5;
/// Horizontal palm distance from the chest with the arm bent.
pub const BENT_PALM_DISTANCE: f64 = 0.15;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("time {t} outside scenario range [0, {duration}]")]
    OutOfRange { t: f64, duration: f64 },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown built-in scenario {0:?}")]
    UnknownBuiltin(String),
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("trace format error: {0}")]
    Format(String),
}

/// Commands that drive the mission state machine from outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionCommand {
    Takeoff,
    Reset,
}

/// Initial user description in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserInit {
    pub chest: [f64; 3],
    /// Heading the chest faces, radians about +z.
    #[serde(default)]
    pub facing: f64,
    /// Palm position relative to the chest, in the chest's heading frame
    /// (x forward, y left, z up). Defaults to a bent arm at elbow height.
    #[serde(default)]
    pub palm_offset: Option<[f64; 3]>,
    pub arm_length: f64,
    pub elbow_height: f64,
    pub eye_height: f64,
}

impl UserInit {
    pub fn stretched_offset(&self) -> Vec3 {
        Vec3::new(self.arm_length, 0.0, self.elbow_height - self.chest[2])
    }

    pub fn bent_offset(&self) -> Vec3 {
        Vec3::new(BENT_PALM_DISTANCE, 0.0, self.elbow_height - self.chest[2])
    }

    fn initial_offset(&self) -> Vec3 {
        self.palm_offset.map(Vec3::from).unwrap_or_else(|| self.bent_offset())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneStart {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    Takeoff,
    Reset,
    /// Arm out: palm at arm's length in front of the chest, elbow height.
    Stretch,
    /// Arm in: palm close to the chest.
    Bend,
    /// Chest walks in a straight line to `to` (xy) at `speed`.
    Walk { to: [f64; 2], speed: f64 },
    /// Palm moves to an explicit chest-frame offset.
    PalmOffset { offset: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    /// Uniform noise amplitude added to tracked chest and palm positions.
    #[serde(default)]
    pub jitter: f64,
    pub user: UserInit,
    pub drone: DroneStart,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
}

const BUILTINS: [(&str, &str); 3] = [
    ("approach_static", include_str!("../scenarios/approach_static.json")),
    ("switching", include_str!("../scenarios/switching.json")),
    ("walking_user", include_str!("../scenarios/walking_user.json")),
];

impl Scenario {
    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTINS.iter().map(|(name, _)| *name)
    }

    pub fn builtin(name: &str) -> Result<Self, ScenarioError> {
        let (_, text) = BUILTINS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| ScenarioError::UnknownBuiltin(name.to_string()))?;
        Self::from_json(text)
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Built-in name or path to a scenario file.
    pub fn resolve(name_or_path: &str) -> Result<Self, ScenarioError> {
        match Self::builtin(name_or_path) {
            Ok(s) => Ok(s),
            Err(ScenarioError::UnknownBuiltin(_)) if Path::new(name_or_path).exists() => {
                Self::load(Path::new(name_or_path))
            }
            Err(e) => Err(e),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be > 0, got {}", self.duration));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return bad("jitter must be >= 0".into());
        }
        let mut last = f64::NEG_INFINITY;
        for ev in &self.events {
            if !(ev.t > last) {
                return bad(format!("event times must be strictly increasing (at t = {})", ev.t));
            }
            if !(ev.t >= 0.0 && ev.t <= self.duration) {
                return bad(format!("event at t = {} outside [0, {}]", ev.t, self.duration));
            }
            last = ev.t;
            match &ev.kind {
                EventKind::Walk { to, speed } => {
                    if !(*speed >= 0.0 && speed.is_finite()) || !to.iter().all(|v| v.is_finite()) {
                        return bad(format!("walk at t = {} needs finite target and speed >= 0", ev.t));
                    }
                }
                EventKind::PalmOffset { offset } => {
                    let reach = Vec3::from(*offset).norm();
                    if !(reach <= self.user.arm_length + ARM_REACH_SLACK) {
                        return bad(format!("palm offset at t = {} is beyond arm reach", ev.t));
                    }
                }
                _ => {}
            }
        }
        let initial = self.sample_at(0.0);
        initial
            .validate()
            .map_err(|e| ScenarioError::Invalid(format!("initial user: {e}")))?;
        for offset in [self.user.stretched_offset(), self.user.bent_offset()] {
            if offset.norm() > self.user.arm_length + ARM_REACH_SLACK {
                return bad("stretched palm at elbow height is beyond arm reach; \
                            lower the chest or raise the elbow"
                    .into());
            }
        }
        Ok(())
    }

    pub fn sample_user(&self, t: f64) -> Result<UserModel, ScenarioError> {
        if !(t >= -TIME_EPS && t <= self.duration + TIME_EPS) {
            return Err(ScenarioError::OutOfRange {
                t,
                duration: self.duration,
            });
        }
        Ok(self.sample_at(t.clamp(0.0, self.duration)))
    }

    fn sample_at(&self, t: f64) -> UserModel {
        let init = &self.user;
        let chest_xy = self.chest_xy_at(t);
        let mut chest = Vec3::new(chest_xy.0, chest_xy.1, init.chest[2]);
        let orientation = crate::model::yaw_rotation(init.facing);
        let mut palm = chest + orientation * self.palm_offset_at(t);
        if self.jitter > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ t.to_bits().wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut noise = || Vec3::from_fn(|_, _| rng.random_range(-self.jitter..=self.jitter));
            chest += noise();
            palm += noise();
        }
        UserModel {
            chest: Pose::new(chest, orientation),
            palm: Pose::new(palm, orientation),
            arm_length: init.arm_length,
            elbow_height: init.elbow_height,
            eye_height: init.eye_height,
        }
    }

    fn chest_xy_at(&self, t: f64) -> (f64, f64) {
        let advance = |pos: (f64, f64), walk: Option<([f64; 2], f64)>, dt: f64| match walk {
            Some((to, speed)) => {
                let (dx, dy) = (to[0] - pos.0, to[1] - pos.1);
                let dist = dx.hypot(dy);
                let moved = speed * dt;
                if moved >= dist {
                    (to[0], to[1])
                } else {
                    (pos.0 + dx * moved / dist, pos.1 + dy * moved / dist)
                }
            }
            None => pos,
        };
        let mut pos = (self.user.chest[0], self.user.chest[1]);
        let mut anchor = 0.0;
        let mut walk = None;
        for ev in self.events.iter().take_while(|e| e.t <= t) {
            if let EventKind::Walk { to, speed } = ev.kind {
                pos = advance(pos, walk, ev.t - anchor);
                anchor = ev.t;
                walk = Some((to, speed));
            }
        }
        advance(pos, walk, t - anchor)
    }

    fn palm_offset_at(&self, t: f64) -> Vec3 {
        let lerp = |from: Vec3, to: Vec3, since: f64, now: f64| {
            let s = (now - since) / GESTURE_RAMP;
            if s >= 1.0 {
                to
            } else {
                from + (to - from) * s.max(0.0)
            }
        };
        let init = self.user.initial_offset();
        let (mut from, mut to, mut since) = (init, init, 0.0);
        for ev in self.events.iter().take_while(|e| e.t <= t) {
            let target = match &ev.kind {
                EventKind::Stretch => self.user.stretched_offset(),
                EventKind::Bend => self.user.bent_offset(),
                EventKind::PalmOffset { offset } => Vec3::from(*offset),
                _ => continue,
            };
            from = lerp(from, to, since, ev.t);
            to = target;
            since = ev.t;
        }
        lerp(from, to, since, t)
    }

    pub fn drone_start(&self) -> DroneStart {
        self.drone
    }
}

/// Anything that can tell the simulation where the user is.
pub trait UserSource {
    fn user_at(&self, t: f64) -> Result<UserModel, ScenarioError>;
    fn duration(&self) -> f64;
    /// Timed mission commands, sorted by time.
    fn mission_events(&self) -> Vec<(f64, MissionCommand)>;
}

impl UserSource for Scenario {
    fn user_at(&self, t: f64) -> Result<UserModel, ScenarioError> {
        self.sample_user(t)
    }

    fn duration(&self) -> f64 {
        self.duration
    }

    fn mission_events(&self) -> Vec<(f64, MissionCommand)> {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Takeoff => Some((e.t, MissionCommand::Takeoff)),
                EventKind::Reset => Some((e.t, MissionCommand::Reset)),
                _ => None,
            })
            .collect()
    }
}

pub const USER_TRACE_HEADER: [&str; 15] = [
    "t", "chest_x", "chest_y", "chest_z", "chest_qw", "chest_qx", "chest_qy", "chest_qz", "palm_x",
    "palm_y", "palm_z", "palm_qw", "palm_qx", "palm_qy", "palm_qz",
];

/// Relative deviation from the nominal period tolerated between samples.
pub const TRACE_JITTER_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserSample {
    pub t: f64,
    pub chest: Pose,
    pub palm: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTrace {
    pub samples: Vec<UserSample>,
    /// Samples per second, inferred from the timestamps.
    pub rate: f64,
}

fn parse_pose(fields: &[f64], line: u64) -> Result<Pose, TraceError> {
    let q = Quaternion::new(fields[3], fields[4], fields[5], fields[6]);
    let norm = q.norm();
    if (norm - 1.0).abs() > UNIT_QUATERNION_TOL {
        return Err(TraceError::Parse {
            line,
            message: format!("quaternion norm {norm} is not unit"),
        });
    }
    Ok(Pose::new(
        Vec3::new(fields[0], fields[1], fields[2]),
        UnitQuaternion::new_normalize(q),
    ))
}

impl UserTrace {
    pub fn load(path: &Path) -> Result<Self, TraceError> {
        Self::parse(std::fs::File::open(path)?)
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers().map_err(|e| TraceError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.iter().ne(USER_TRACE_HEADER.iter().copied()) {
            return Err(TraceError::Parse {
                line: 1,
                message: format!("expected header {}", USER_TRACE_HEADER.join(",")),
            });
        }
        let mut samples = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| TraceError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let values = record
                .iter()
                .enumerate()
                .map(|(i, field)| {
                    field
                        .trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| TraceError::Parse {
                            line,
                            message: format!("column {} is not a finite number: {field:?}", USER_TRACE_HEADER[i]),
                        })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            samples.push(UserSample {
                t: values[0],
                chest: parse_pose(&values[1..8], line)?,
                palm: parse_pose(&values[8..15], line)?,
            });
        }
        if samples.len() < 2 {
            return Err(TraceError::Format("need at least two samples to infer the rate".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(TraceError::Format(format!(
                    "time is not increasing at t = {}",
                    w[1].t
                )));
            }
        }
        let span = samples.last().unwrap().t - samples[0].t;
        let period = span / (samples.len() - 1) as f64;
        for w in samples.windows(2) {
            let dt = w[1].t - w[0].t;
            if (dt - period).abs() > TRACE_JITTER_TOL * period {
                return Err(TraceError::Format(format!(
                    "non-uniform sampling between t = {} and t = {} (period {period:.6} s)",
                    w[0].t, w[1].t
                )));
            }
        }
        Ok(Self {
            samples,
            rate: 1.0 / period,
        })
    }

    pub fn start(&self) -> f64 {
        self.samples[0].t
    }

    pub fn span(&self) -> f64 {
        self.samples.last().unwrap().t - self.start()
    }

    /// Interpolated chest and palm poses at `t` seconds after the first sample.
    pub fn poses_at(&self, t: f64) -> Option<(Pose, Pose)> {
        if !(t >= -TIME_EPS && t <= self.span() + TIME_EPS) {
            return None;
        }
        let abs = self.start() + t.clamp(0.0, self.span());
        let idx = self.samples.partition_point(|s| s.t <= abs);
        let (a, b) = match idx {
            0 => return Some((self.samples[0].chest, self.samples[0].palm)),
            i if i >= self.samples.len() => {
                let last = self.samples.last().unwrap();
                return Some((last.chest, last.palm));
            }
            i => (&self.samples[i - 1], &self.samples[i]),
        };
        let s = (abs - a.t) / (b.t - a.t);
        let blend = |p: &Pose, q: &Pose| {
            Pose::new(
                p.position + (q.position - p.position) * s,
                p.orientation.slerp(&q.orientation, s),
            )
        };
        Some((blend(&a.chest, &b.chest), blend(&a.palm, &b.palm)))
    }
}

/// Body geometry that a recorded trace does not carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyGeometry {
    pub arm_length: f64,
    pub elbow_height: f64,
    pub eye_height: f64,
}

impl Default for BodyGeometry {
    fn default() -> Self {
        Self {
            arm_length: 0.7,
            elbow_height: 1.1,
            eye_height: 1.6,
        }
    }
}

/// A recorded trace replayed as the user, with a takeoff at its start.
#[derive(Debug, Clone)]
pub struct TraceUser {
    pub trace: UserTrace,
    pub body: BodyGeometry,
}

impl UserSource for TraceUser {
    fn user_at(&self, t: f64) -> Result<UserModel, ScenarioError> {
        let (chest, palm) = self.trace.poses_at(t).ok_or(ScenarioError::OutOfRange {
            t,
            duration: self.trace.span(),
        })?;
        Ok(UserModel {
            chest,
            palm,
            arm_length: self.body.arm_length,
            elbow_height: self.body.elbow_height,
            eye_height: self.body.eye_height,
        })
    }

    fn duration(&self) -> f64 {
        self.trace.span()
    }

    fn mission_events(&self) -> Vec<(f64, MissionCommand)> {
        vec![(0.0, MissionCommand::Takeoff)]
    }
}

/// Arm pose requested by a live operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PalmMode {
    Stretch,
    Bend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LiveState {
    since: f64,
    chest: Vec3,
    velocity: (f64, f64),
    palm_from: Vec3,
    palm_to: Vec3,
    palm_since: f64,
}

impl LiveState {
    fn chest_at(&self, t: f64) -> Vec3 {
        let dt = (t - self.since).max(0.0);
        self.chest + Vec3::new(self.velocity.0 * dt, self.velocity.1 * dt, 0.0)
    }

    fn offset_at(&self, t: f64) -> Vec3 {
        let s = (t - self.palm_since) / GESTURE_RAMP;
        if s >= 1.0 {
            self.palm_to
        } else {
            self.palm_from + (self.palm_to - self.palm_from) * s.max(0.0)
        }
    }
}

/// A scenario that an operator can take over at any time. Until the first
/// command it replays the base scenario unchanged; afterwards the chest
/// moves at the commanded velocity and the palm follows stretch/bend
/// requests with the usual ramp. It never ends on its own.
#[derive(Debug, Clone)]
pub struct LiveUser {
    base: Scenario,
    live: Option<LiveState>,
}

impl LiveUser {
    pub fn new(base: Scenario) -> Self {
        Self { base, live: None }
    }

    pub fn base(&self) -> &Scenario {
        &self.base
    }

    pub fn is_live(&self) -> bool {
        self.live.is_some()
    }

    fn take_over(&mut self, t: f64) -> &mut LiveState {
        let base = &self.base;
        self.live.get_or_insert_with(|| {
            let user = base.sample_at(t.clamp(0.0, base.duration));
            let chest = user.chest.position;
            let offset = user.chest.orientation.inverse() * (user.palm.position - chest);
            LiveState {
                since: t,
                chest,
                velocity: (0.0, 0.0),
                palm_from: offset,
                palm_to: offset,
                palm_since: t,
            }
        })
    }

    pub fn set_velocity(&mut self, t: f64, vx: f64, vy: f64) {
        let state = self.take_over(t);
        state.chest = state.chest_at(t);
        state.since = t;
        state.velocity = (vx, vy);
    }

    pub fn set_palm(&mut self, t: f64, mode: PalmMode) {
        let target = match mode {
            PalmMode::Stretch => self.base.user.stretched_offset(),
            PalmMode::Bend => self.base.user.bent_offset(),
        };
        let state = self.take_over(t);
        state.palm_from = state.offset_at(t);
        state.palm_to = target;
        state.palm_since = t;
    }
}

impl UserSource for LiveUser {
    fn user_at(&self, t: f64) -> Result<UserModel, ScenarioError> {
        let Some(state) = &self.live else {
            return self.base.sample_user(t.min(self.base.duration));
        };
        if !(t >= 0.0) {
            return Err(ScenarioError::OutOfRange {
                t,
                duration: f64::INFINITY,
            });
        }
        let init = &self.base.user;
        let orientation = crate::model::yaw_rotation(init.facing);
        let chest = state.chest_at(t);
        Ok(UserModel {
            chest: Pose::new(chest, orientation),
            palm: Pose::new(chest + orientation * state.offset_at(t), orientation),
            arm_length: init.arm_length,
            elbow_height: init.elbow_height,
            eye_height: init.eye_height,
        })
    }

    fn duration(&self) -> f64 {
        f64::INFINITY
    }

    fn mission_events(&self) -> Vec<(f64, MissionCommand)> {
        self.base.mission_events()
    }
}
