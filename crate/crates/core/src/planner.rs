//! Proxemics-aware approach planner.
//!
//! The approach toward the palm is split into four domains by the drone's
//! horizontal distance `r` to the user's chest:
//!
//! | domain | condition            | behaviour                                   |
//! |--------|----------------------|---------------------------------------------|
//! | D1     | `r > r_v`            | straight toward the palm at cruise speed    |
//! | D2     | `r_v >= r > r_p`     | Weber step: advance `k' * d` per tick       |
//! | D3     | `r_p >= r > r_s`     | slide along the arm-length circle to palm   |
//! | D4     | palm within `r_s`    | hold position and wait                      |
//!
//! `d` is the horizontal drone-to-palm distance. Commanded speed follows
//! `v = k' d / dt`, capped at `v_max`. The drone always faces the chest and
//! flies between the user's elbow and eye height.
//!
//! On top of the domains sits the mission state machine
//! `GROUNDED -> TAKEOFF -> FLIGHT -> LANDING -> LANDED`, and in FLIGHT the
//! user's gesture gates motion: STAY freezes the setpoint, APPROACH runs the
//! domain logic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::DroneState;
use crate::gesture::{Gesture, GestureState};
use crate::model::{horizontal, horizontal_distance, wrap_angle, DistanceMode, UserModel, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    Config(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("illegal mission transition {from:?} -> {to:?}")]
    InvalidTransition { from: MissionPhase, to: MissionPhase },
}

/// Drone-chest distances within this of `r_p` count as on the circle.
pub const ON_CIRCLE_EPS: f64 = 1e-9;

const GEOMETRY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Outer comfort radius around the chest.
    pub r_v: f64,
    /// Inner safety radius around the chest.
    pub r_s: f64,
    pub k_prime: f64,
    /// Gain used once the drone is within `boost_radius` of the palm.
    pub k_prime_boost: f64,
    pub boost_radius: f64,
    /// Planner period.
    pub delta_t: f64,
    pub v_cruise: f64,
    pub v_max: f64,
    pub land_commit_dist: f64,
    pub land_commit_speed: f64,
    pub takeoff_altitude: f64,
    pub takeoff_speed: f64,
    /// Altitude error at which takeoff is considered complete.
    pub takeoff_tolerance: f64,
    /// Height lost between landing commit and touchdown.
    pub landing_descent: f64,
    pub landing_speed: f64,
    pub landing_timeout: f64,
    /// Palm distance that aborts a landing in progress back to FLIGHT.
    pub landing_abort_dist: f64,
    pub distance_mode: DistanceMode,
    /// Ramp speed in and out of STAY/APPROACH switches.
    pub switch_ramp: bool,
    pub switch_ramp_duration: f64,
    /// Furthest the planning reference may run ahead of the measured drone.
    pub tracking_leash: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            r_v: 1.25,
            r_s: 0.30,
            k_prime: 0.2,
            k_prime_boost: 0.5,
            boost_radius: 0.3,
            delta_t: 0.1,
            v_cruise: 0.8,
            v_max: 1.0,
            land_commit_dist: 0.05,
            land_commit_speed: 0.10,
            takeoff_altitude: 1.2,
            takeoff_speed: 0.5,
            takeoff_tolerance: 0.05,
            landing_descent: 0.05,
            landing_speed: 0.25,
            landing_timeout: 2.0,
            landing_abort_dist: 0.15,
            distance_mode: DistanceMode::Planar,
            switch_ramp: false,
            switch_ramp_duration: 0.5,
            tracking_leash: 0.5,
        }
    }
}

/// Largest `k'` keeping `k' d / dt` under 1 m/s at 0.30 m with dt = 0.1 s.
pub const K_PRIME_MAX: f64 = 0.33;

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let fail = |msg: String| Err(PlannerError::Config(msg));
        let all_finite = [
            self.r_v,
            self.r_s,
            self.k_prime,
            self.k_prime_boost,
            self.boost_radius,
            self.delta_t,
            self.v_cruise,
            self.v_max,
            self.land_commit_dist,
            self.land_commit_speed,
            self.takeoff_altitude,
            self.takeoff_speed,
            self.takeoff_tolerance,
            self.landing_descent,
            self.landing_speed,
            self.landing_timeout,
            self.landing_abort_dist,
            self.switch_ramp_duration,
            self.tracking_leash,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return fail("all values must be finite".into());
        }
        if !(0.0 < self.r_s && self.r_s < self.r_v) {
            return fail(format!("need 0 < r_s < r_v, got r_s {} r_v {}", self.r_s, self.r_v));
        }
        if !(0.0 < self.k_prime && self.k_prime <= K_PRIME_MAX) {
            return fail(format!("k_prime must be in (0, {K_PRIME_MAX}], got {}", self.k_prime));
        }
        if !(self.k_prime_boost > 0.0 && self.k_prime_boost < 1.0) {
            return fail(format!("k_prime_boost must be in (0, 1), got {}", self.k_prime_boost));
        }
        if self.boost_radius < 0.0 {
            return fail("boost_radius must be >= 0".into());
        }
        if !(self.delta_t > 0.0) {
            return fail(format!("delta_t must be > 0, got {}", self.delta_t));
        }
        if !(0.0 < self.v_cruise && self.v_cruise <= self.v_max) {
            return fail(format!(
                "need 0 < v_cruise <= v_max, got {} and {}",
                self.v_cruise, self.v_max
            ));
        }
        if self.land_commit_dist < 0.0 || self.land_commit_speed < 0.0 {
            return fail("landing commit thresholds must be >= 0".into());
        }
        if !(self.takeoff_altitude > 0.0 && self.takeoff_speed > 0.0 && self.takeoff_tolerance > 0.0)
        {
            return fail("takeoff altitude, speed and tolerance must be > 0".into());
        }
        if !(self.landing_descent >= 0.0 && self.landing_speed > 0.0 && self.landing_timeout > 0.0)
        {
            return fail("landing descent must be >= 0, speed and timeout > 0".into());
        }
        if !(self.landing_abort_dist > self.land_commit_dist) {
            return fail("landing_abort_dist must exceed land_commit_dist".into());
        }
        if !(self.tracking_leash > 0.0) {
            return fail(format!("tracking_leash must be > 0, got {}", self.tracking_leash));
        }
        if !(self.switch_ramp_duration > 0.0) {
            return fail("switch_ramp_duration must be > 0".into());
        }
        Ok(())
    }

    /// Longest step any setpoint may take from the current position.
    pub fn step_budget(&self) -> f64 {
        self.v_max * self.delta_t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MissionPhase {
    Grounded,
    Takeoff,
    Flight,
    Landing,
    Landed,
}

impl MissionPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            MissionPhase::Grounded => "GROUNDED",
            MissionPhase::Takeoff => "TAKEOFF",
            MissionPhase::Flight => "FLIGHT",
            MissionPhase::Landing => "LANDING",
            MissionPhase::Landed => "LANDED",
        }
    }

    pub fn can_transition_to(self, next: MissionPhase) -> bool {
        use MissionPhase::*;
        matches!(
            (self, next),
            (Grounded, Takeoff) | (Takeoff, Flight) | (Flight, Landing) | (Landing, Flight) | (Landing, Landed) | (_, Grounded)
        )
    }

    pub fn is_airborne(self) -> bool {
        matches!(self, MissionPhase::Takeoff | MissionPhase::Flight | MissionPhase::Landing)
    }
}

impl std::str::FromStr for MissionPhase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "GROUNDED" => MissionPhase::Grounded,
            "TAKEOFF" => MissionPhase::Takeoff,
            "FLIGHT" => MissionPhase::Flight,
            "LANDING" => MissionPhase::Landing,
            "LANDED" => MissionPhase::Landed,
            other => return Err(format!("unknown phase {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "D1_FAR")]
    D1Far,
    #[serde(rename = "D2_WEBER")]
    D2Weber,
    #[serde(rename = "D3_ARC")]
    D3Arc,
    #[serde(rename = "D4_HOLD")]
    D4Hold,
}

impl Domain {
    pub const ALL: [Domain; 4] = [Domain::D1Far, Domain::D2Weber, Domain::D3Arc, Domain::D4Hold];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::D1Far => "D1_FAR",
            Domain::D2Weber => "D2_WEBER",
            Domain::D3Arc => "D3_ARC",
            Domain::D4Hold => "D4_HOLD",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown domain {s:?}"))
    }
}

/// Goal pose commanded to the flight controller for one planner period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    pub goal_position: Vec3,
    pub goal_yaw: f64,
    /// Horizontal speed implied by this setpoint.
    pub commanded_speed: f64,
    /// Feed-forward velocity, the displacement to the goal over one period.
    pub goal_velocity: Vec3,
    pub source_domain: Option<Domain>,
    pub phase: MissionPhase,
}

impl Setpoint {
    pub fn hold(position: Vec3, yaw: f64, phase: MissionPhase) -> Self {
        Self {
            goal_position: position,
            goal_yaw: yaw,
            commanded_speed: 0.0,
            goal_velocity: Vec3::zeros(),
            source_domain: None,
            phase,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerStatus {
    pub phase: MissionPhase,
    pub gesture: GestureState,
    pub domain: Option<Domain>,
    /// Palm distance from the planning reference. Equals the measured
    /// drone distance on the ground and under ideal tracking.
    pub d_palm: f64,
    /// Chest distance from the planning reference.
    pub r_chest: f64,
    pub k_prime_effective: f64,
}

impl Default for PlannerStatus {
    fn default() -> Self {
        Self {
            phase: MissionPhase::Grounded,
            gesture: GestureState::default(),
            domain: None,
            d_palm: 0.0,
            r_chest: 0.0,
            k_prime_effective: 0.0,
        }
    }
}

pub fn classify_domain(
    r_chest: f64,
    palm_chest: f64,
    user: &UserModel,
    cfg: &PlannerConfig,
) -> Result<Domain, PlannerError> {
    let r_p = user.arm_length;
    if !(cfg.r_s < r_p && r_p < cfg.r_v) {
        return Err(PlannerError::Config(format!(
            "arm length {r_p} must lie strictly between r_s {} and r_v {}",
            cfg.r_s, cfg.r_v
        )));
    }
    Ok(if palm_chest <= cfg.r_s {
        Domain::D4Hold
    } else if r_chest > cfg.r_v {
        Domain::D1Far
    } else if r_chest > r_p {
        Domain::D2Weber
    } else {
        // Inside r_s the drone is pushed back out along the D3 circle logic.
        Domain::D3Arc
    })
}

/// `k' d / dt`, capped at `v_max`.
pub fn weber_speed(d_palm: f64, k_prime: f64, cfg: &PlannerConfig) -> f64 {
    (k_prime * d_palm / cfg.delta_t).min(cfg.v_max)
}

pub fn effective_k_prime(d_palm: f64, cfg: &PlannerConfig) -> f64 {
    if d_palm < cfg.boost_radius {
        cfg.k_prime_boost
    } else {
        cfg.k_prime
    }
}

/// Horizontal Weber step from `current` toward `target`. The returned goal
/// keeps `current`'s altitude.
pub fn weber_goal(current: &Vec3, target: &Vec3, k_prime: f64, cfg: &PlannerConfig) -> Vec3 {
    let d = horizontal_distance(current, target);
    let step = (k_prime * d).min(cfg.step_budget());
    step_toward(current, target, step)
}

/// Moves `current` horizontally toward `target` by `step` (never past it).
fn step_toward(current: &Vec3, target: &Vec3, step: f64) -> Vec3 {
    let delta = horizontal(&(target - current));
    let d = delta.norm();
    if d <= GEOMETRY_EPS {
        return *current;
    }
    if step >= d {
        return Vec3::new(target.x, target.y, current.z);
    }
    current + delta * (step / d)
}

fn polar(p: &Vec3, center: &Vec3) -> (f64, f64) {
    let dx = p.x - center.x;
    let dy = p.y - center.y;
    (dx.hypot(dy), dy.atan2(dx))
}

/// Step along the circle of radius `r_p` about the chest toward the palm's
/// bearing. A drone off the circle first moves radially onto it; whatever
/// budget is left after reaching the circle is spent along the arc.
pub fn arc_goal(
    drone: &Vec3,
    chest: &Vec3,
    palm: &Vec3,
    r_p: f64,
    k_prime: f64,
    cfg: &PlannerConfig,
) -> Result<Vec3, PlannerError> {
    let (rho, theta_d) = polar(drone, chest);
    if rho <= GEOMETRY_EPS {
        return Err(PlannerError::DegenerateGeometry(
            "drone is directly above the chest".into(),
        ));
    }
    let (palm_rho, theta_p) = polar(palm, chest);
    if palm_rho <= GEOMETRY_EPS {
        return Err(PlannerError::DegenerateGeometry(
            "palm is directly at the chest".into(),
        ));
    }
    let budget = cfg.step_budget();
    let gap = r_p - rho;
    if gap.abs() > budget {
        let radius = rho + budget.copysign(gap);
        return Ok(on_circle(chest, radius, theta_d, drone.z));
    }
    let remaining = budget - gap.abs();
    let dtheta = wrap_angle(theta_p - theta_d);
    let arc_left = r_p * dtheta.abs();
    let step = (k_prime * arc_left).min(remaining);
    let theta = theta_d + dtheta.signum() * step / r_p;
    Ok(on_circle(chest, r_p, theta, drone.z))
}

fn on_circle(center: &Vec3, radius: f64, theta: f64, z: f64) -> Vec3 {
    Vec3::new(center.x + radius * theta.cos(), center.y + radius * theta.sin(), z)
}

pub fn goal_yaw_toward_chest(drone: &Vec3, chest: &Vec3) -> Result<f64, PlannerError> {
    let dx = chest.x - drone.x;
    let dy = chest.y - drone.y;
    if dx.hypot(dy) <= GEOMETRY_EPS {
        return Err(PlannerError::DegenerateGeometry(
            "drone and chest coincide in the horizontal plane".into(),
        ));
    }
    Ok(dy.atan2(dx))
}

/// Flight altitude: the palm height kept inside the elbow-to-eye band.
pub fn target_altitude(palm_z: f64, user: &UserModel) -> f64 {
    palm_z.clamp(user.elbow_height, user.eye_height)
}

/// Shortens the horizontal segment `from -> goal` so it does not enter the
/// disk of radius `r_s` about the chest. A drone already inside the disk may
/// only move outward.
pub fn clip_to_safety_disk(from: &Vec3, goal: &Vec3, chest: &Vec3, r_s: f64) -> Vec3 {
    let start_r = horizontal_distance(from, chest);
    let goal_r = horizontal_distance(goal, chest);
    if goal_r >= r_s.min(start_r) {
        return *goal;
    }
    if start_r < r_s {
        return Vec3::new(from.x, from.y, goal.z);
    }
    // Smallest s in [0, 1] with |from + s (goal - from) - chest| = r_s.
    let p = horizontal(&(from - chest));
    let u = horizontal(&(goal - from));
    let a = u.norm_squared();
    let b = 2.0 * p.dot(&u);
    let c = p.norm_squared() - r_s * r_s;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let s = ((-b - disc.sqrt()) / (2.0 * a)).clamp(0.0, 1.0);
    let hit = p + u * s;
    let hit_r = hit.norm();
    let hit = if hit_r > GEOMETRY_EPS { hit * (r_s / hit_r) } else { p };
    Vec3::new(chest.x + hit.x, chest.y + hit.y, goal.z)
}

#[derive(Debug, Clone, Copy)]
struct LandingState {
    started: f64,
    target_z: f64,
}

#[derive(Debug, Clone, Copy)]
struct HoldState {
    setpoint: Setpoint,
    entered: f64,
    /// Feed-forward velocity at entry, decayed by the optional switch ramp.
    entry_velocity: Vec3,
}

/// Mission state machine plus domain dispatch. One instance per drone; call
/// [`Planner::step`] once per `delta_t`.
#[derive(Debug, Clone)]
pub struct Planner {
    cfg: PlannerConfig,
    phase: MissionPhase,
    status: PlannerStatus,
    last_setpoint: Option<Setpoint>,
    hold: Option<HoldState>,
    landing: Option<LandingState>,
    takeoff_xy: Option<(f64, f64)>,
    prev_palm: Option<(f64, Vec3)>,
    last_gesture: Gesture,
    last_switch_t: Option<f64>,
}

impl Planner {
    pub fn new(cfg: PlannerConfig) -> Result<Self, PlannerError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            phase: MissionPhase::Grounded,
            status: PlannerStatus::default(),
            last_setpoint: None,
            hold: None,
            landing: None,
            takeoff_xy: None,
            prev_palm: None,
            last_gesture: Gesture::Stay,
            last_switch_t: None,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    pub fn set_config(&mut self, cfg: PlannerConfig) -> Result<(), PlannerError> {
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn phase(&self) -> MissionPhase {
        self.phase
    }

    pub fn status(&self) -> &PlannerStatus {
        &self.status
    }

    pub fn last_setpoint(&self) -> Option<&Setpoint> {
        self.last_setpoint.as_ref()
    }

    fn transition(&mut self, next: MissionPhase) -> Result<(), PlannerError> {
        if !self.phase.can_transition_to(next) {
            return Err(PlannerError::InvalidTransition {
                from: self.phase,
                to: next,
            });
        }
        self.phase = next;
        Ok(())
    }

    pub fn request_takeoff(&mut self) -> Result<(), PlannerError> {
        self.transition(MissionPhase::Takeoff)?;
        self.takeoff_xy = None;
        Ok(())
    }

    /// Back to the ground state from any phase.
    pub fn reset(&mut self) {
        self.phase = MissionPhase::Grounded;
        self.status = PlannerStatus::default();
        self.last_setpoint = None;
        self.hold = None;
        self.landing = None;
        self.takeoff_xy = None;
        self.prev_palm = None;
        self.last_gesture = Gesture::Stay;
        self.last_switch_t = None;
    }

    pub fn step(
        &mut self,
        t: f64,
        user: &UserModel,
        drone: &DroneState,
        gesture: &GestureState,
    ) -> Result<Setpoint, PlannerError> {
        let cfg = self.cfg;
        let chest = user.chest.position;
        let palm = user.palm.position;
        let actual = drone;
        let plan = DroneState {
            position: self.planning_origin(actual),
            ..*actual
        };
        let drone = &plan;
        let p = drone.position;

        let palm_velocity = match self.prev_palm {
            Some((pt, pp)) if t > pt => (palm - pp) / (t - pt),
            _ => Vec3::zeros(),
        };
        self.prev_palm = Some((t, palm));

        if gesture.current != self.last_gesture {
            self.last_gesture = gesture.current;
            self.last_switch_t = Some(t);
        }

        let d_palm = cfg.distance_mode.measure(&p, &palm);
        let r_chest = cfg.distance_mode.measure(&p, &chest);
        let k_eff = effective_k_prime(d_palm, &cfg);
        self.status = PlannerStatus {
            phase: self.phase,
            gesture: *gesture,
            domain: None,
            d_palm,
            r_chest,
            k_prime_effective: k_eff,
        };

        let setpoint = match self.phase {
            MissionPhase::Grounded => {
                Setpoint::hold(p, drone_yaw(drone), MissionPhase::Grounded)
            }
            MissionPhase::Takeoff => {
                let (x, y) = *self.takeoff_xy.get_or_insert((p.x, p.y));
                if (actual.position.z - cfg.takeoff_altitude).abs() <= cfg.takeoff_tolerance {
                    self.transition(MissionPhase::Flight)?;
                    self.flight(t, user, drone, actual, gesture, palm_velocity)?
                } else {
                    let climb = cfg.takeoff_speed * cfg.delta_t;
                    let prev_z = self
                        .last_setpoint
                        .filter(|s| s.phase == MissionPhase::Takeoff)
                        .map_or(p.z, |s| s.goal_position.z);
                    let z = if prev_z < cfg.takeoff_altitude {
                        (prev_z + climb).min(cfg.takeoff_altitude)
                    } else {
                        (prev_z - climb).max(cfg.takeoff_altitude)
                    };
                    let goal = Vec3::new(x, y, z);
                    let yaw = goal_yaw_toward_chest(&p, &chest).unwrap_or_else(|_| drone_yaw(drone));
                    Setpoint {
                        goal_position: goal,
                        goal_yaw: yaw,
                        commanded_speed: horizontal_distance(&goal, &p) / cfg.delta_t,
                        goal_velocity: (goal - p) / cfg.delta_t,
                        source_domain: None,
                        phase: MissionPhase::Takeoff,
                    }
                }
            }
            MissionPhase::Flight => self.flight(t, user, drone, actual, gesture, palm_velocity)?,
            MissionPhase::Landing => {
                let d_actual = self.cfg.distance_mode.measure(&actual.position, &user.palm.position);
                if d_actual > self.cfg.landing_abort_dist {
                    // Palm pulled away mid-descent.
                    self.transition(MissionPhase::Flight)?;
                    self.landing = None;
                    self.flight(t, user, drone, actual, gesture, palm_velocity)?
                } else {
                    self.landing_step(t, user, drone, actual)?
                }
            }
            MissionPhase::Landed => {
                Setpoint::hold(actual.position, drone_yaw(actual), MissionPhase::Landed)
            }
        };

        self.status.phase = self.phase;
        self.status.domain = setpoint.source_domain;
        self.last_setpoint = Some(setpoint);
        Ok(setpoint)
    }

    /// Point the next step is planned from: the previous airborne goal,
    /// kept within `tracking_leash` of the measured drone. Planning from the
    /// reference rather than the measurement keeps the 10 Hz planner out of
    /// the flight controller's feedback loop.
    fn planning_origin(&self, drone: &DroneState) -> Vec3 {
        match self.last_setpoint {
            Some(s) if self.phase.is_airborne() && s.phase.is_airborne() => {
                let lead = s.goal_position - drone.position;
                let n = lead.norm();
                if n > self.cfg.tracking_leash {
                    drone.position + lead * (self.cfg.tracking_leash / n)
                } else {
                    s.goal_position
                }
            }
            _ => drone.position,
        }
    }

    fn flight(
        &mut self,
        t: f64,
        user: &UserModel,
        drone: &DroneState,
        actual: &DroneState,
        gesture: &GestureState,
        palm_velocity: Vec3,
    ) -> Result<Setpoint, PlannerError> {
        let cfg = self.cfg;
        let chest = user.chest.position;
        let palm = user.palm.position;
        let p = drone.position;

        if gesture.current == Gesture::Stay {
            return Ok(self.stay(t, user, drone));
        }
        self.hold = None;

        // Commit on what the drone is really doing, not on the reference.
        let d_actual = cfg.distance_mode.measure(&actual.position, &palm);
        let relative_speed = (actual.velocity - palm_velocity).norm();
        if d_actual < cfg.land_commit_dist && relative_speed < cfg.land_commit_speed {
            self.transition(MissionPhase::Landing)?;
            let start_z = self.last_setpoint.map_or(p.z, |s| s.goal_position.z);
            self.landing = Some(LandingState {
                started: t,
                target_z: start_z - cfg.landing_descent,
            });
            return self.landing_step(t, user, drone, actual);
        }

        let palm_chest = cfg.distance_mode.measure(&palm, &chest);
        let mut r = self.status.r_chest;
        if (r - user.arm_length).abs() <= ON_CIRCLE_EPS {
            r = user.arm_length;
        }
        let domain = classify_domain(r, palm_chest, user, &cfg)?;
        let k_eff = self.status.k_prime_effective;

        let mut goal = match domain {
            Domain::D1Far => step_toward(&p, &palm, cfg.v_cruise * cfg.delta_t),
            Domain::D2Weber => weber_goal(&p, &palm, k_eff, &cfg),
            // Never inward: a palm pulled inside the circle is waited for at its bearing.
            Domain::D3Arc => arc_goal(&p, &chest, &palm, user.arm_length, k_eff, &cfg)?,
            Domain::D4Hold => p,
        };

        if cfg.switch_ramp {
            if let Some(ts) = self.last_switch_t {
                let scale = ((t - ts + cfg.delta_t) / cfg.switch_ramp_duration).clamp(0.0, 1.0);
                goal = p + (goal - p) * scale;
            }
        }
        goal = clip_to_safety_disk(&p, &goal, &chest, cfg.r_s);

        let horizontal_step = horizontal_distance(&goal, &p);
        let budget = cfg.step_budget();
        let vertical_budget = (budget * budget - horizontal_step * horizontal_step).max(0.0).sqrt();
        let dz = (target_altitude(palm.z, user) - p.z).clamp(-vertical_budget, vertical_budget);
        goal.z = (p.z + dz).clamp(user.elbow_height, user.eye_height);

        let yaw = goal_yaw_toward_chest(&p, &chest)?;
        Ok(Setpoint {
            goal_position: goal,
            goal_yaw: yaw,
            commanded_speed: horizontal_step / cfg.delta_t,
            goal_velocity: (goal - p) / cfg.delta_t,
            source_domain: Some(domain),
            phase: MissionPhase::Flight,
        })
    }

    fn stay(&mut self, t: f64, user: &UserModel, drone: &DroneState) -> Setpoint {
        let cfg = self.cfg;
        let hold = *self.hold.get_or_insert_with(|| {
            let base = self
                .last_setpoint
                .filter(|s| s.phase.is_airborne())
                .unwrap_or_else(|| {
                    let yaw = goal_yaw_toward_chest(&drone.position, &user.chest.position)
                        .unwrap_or_else(|_| drone_yaw(drone));
                    Setpoint::hold(drone.position, yaw, MissionPhase::Flight)
                });
            let mut goal = base.goal_position;
            let entry_velocity = if cfg.switch_ramp { base.goal_velocity } else { Vec3::zeros() };
            if cfg.switch_ramp {
                // Stopping distance of a linear ramp-down.
                let drift = horizontal(&entry_velocity) * (cfg.switch_ramp_duration / 2.0);
                goal = clip_to_safety_disk(&goal, &(goal + drift), &user.chest.position, cfg.r_s);
            }
            HoldState {
                setpoint: Setpoint {
                    goal_position: goal,
                    commanded_speed: 0.0,
                    goal_velocity: Vec3::zeros(),
                    source_domain: None,
                    phase: MissionPhase::Flight,
                    ..base
                },
                entered: t,
                entry_velocity,
            }
        });
        let mut sp = hold.setpoint;
        if cfg.switch_ramp {
            let fade = 1.0 - (t - hold.entered) / cfg.switch_ramp_duration;
            if fade > 0.0 {
                sp.goal_velocity = hold.entry_velocity * fade;
                sp.commanded_speed = horizontal(&sp.goal_velocity).norm();
            }
        }
        sp
    }

    fn landing_step(
        &mut self,
        t: f64,
        user: &UserModel,
        drone: &DroneState,
        actual: &DroneState,
    ) -> Result<Setpoint, PlannerError> {
        let cfg = self.cfg;
        let p = drone.position;
        let chest = user.chest.position;
        let landing = match self.landing {
            Some(l) => l,
            None => {
                let l = LandingState {
                    started: t,
                    target_z: p.z - cfg.landing_descent,
                };
                self.landing = Some(l);
                l
            }
        };
        if actual.position.z <= landing.target_z + 0.01 || t - landing.started >= cfg.landing_timeout {
            self.transition(MissionPhase::Landed)?;
            return Ok(Setpoint::hold(actual.position, drone_yaw(actual), MissionPhase::Landed));
        }
        let prev_z = self
            .last_setpoint
            .filter(|s| s.phase == MissionPhase::Landing)
            .map_or(p.z, |s| s.goal_position.z);
        let z = (prev_z - cfg.landing_speed * cfg.delta_t).max(landing.target_z);
        let budget = cfg.step_budget();
        let mut goal = step_toward(&p, &user.palm.position, budget);
        goal = clip_to_safety_disk(&p, &goal, &chest, cfg.r_s);
        goal.z = z;
        let yaw = goal_yaw_toward_chest(&p, &chest).unwrap_or_else(|_| drone_yaw(drone));
        Ok(Setpoint {
            goal_position: goal,
            goal_yaw: yaw,
            commanded_speed: horizontal_distance(&goal, &p) / cfg.delta_t,
            goal_velocity: (goal - p) / cfg.delta_t,
            source_domain: None,
            phase: MissionPhase::Landing,
        })
    }
}

fn drone_yaw(drone: &DroneState) -> f64 {
    crate::model::quaternion_yaw(drone.orientation.quaternion()).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Pose;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn user(palm: Vec3) -> UserModel {
        UserModel {
            chest: Pose::from_yaw(Vec3::new(0.0, 0.0, 1.3), 0.0),
            palm: Pose::from_yaw(palm, 0.0),
            arm_length: 0.7,
            elbow_height: 1.0,
            eye_height: 1.6,
        }
    }

    fn xy(x: f64, y: f64) -> Vec3 {
        Vec3::new(x, y, 0.0)
    }

    #[test]
    fn domain_examples() {
        let cfg = PlannerConfig::default();
        let u = user(Vec3::new(0.6, 0.0, 1.1));
        assert_eq!(classify_domain(2.0, 0.6, &u, &cfg).unwrap(), Domain::D1Far);
        assert_eq!(classify_domain(1.0, 0.6, &u, &cfg).unwrap(), Domain::D2Weber);
        assert_eq!(classify_domain(0.5, 0.25, &u, &cfg).unwrap(), Domain::D4Hold);
        assert_eq!(classify_domain(1.25, 0.6, &u, &cfg).unwrap(), Domain::D2Weber);
    }

    #[test]
    fn domain_boundaries_follow_inequality_chain() {
        let cfg = PlannerConfig::default();
        let u = user(Vec3::new(0.6, 0.0, 1.1));
        assert_eq!(classify_domain(0.7, 0.6, &u, &cfg).unwrap(), Domain::D3Arc);
        assert_eq!(classify_domain(0.30, 0.6, &u, &cfg).unwrap(), Domain::D3Arc);
        assert_eq!(classify_domain(0.1, 0.6, &u, &cfg).unwrap(), Domain::D3Arc);
        assert_eq!(classify_domain(0.5, 0.30, &u, &cfg).unwrap(), Domain::D4Hold);
        assert_eq!(classify_domain(3.0, 0.30, &u, &cfg).unwrap(), Domain::D4Hold);
    }

    #[test]
    fn domain_rejects_bad_arm_length() {
        let cfg = PlannerConfig::default();
        let mut u = user(Vec3::new(0.2, 0.0, 1.1));
        u.arm_length = 0.25;
        assert!(matches!(classify_domain(1.0, 0.6, &u, &cfg), Err(PlannerError::Config(_))));
        u.arm_length = 1.5;
        assert!(classify_domain(1.0, 0.6, &u, &cfg).is_err());
    }

    #[test]
    fn weber_speed_examples() {
        let cfg = PlannerConfig::default();
        assert_abs_diff_eq!(weber_speed(0.30, 0.33, &cfg), 0.99, epsilon = 1e-12);
        assert_eq!(weber_speed(0.0, 0.2, &cfg), 0.0);
        assert_abs_diff_eq!(weber_speed(0.40, 0.2, &cfg), 0.80, epsilon = 1e-12);
        assert_eq!(weber_speed(1.25, 0.2, &cfg), 1.0);
    }

    #[test]
    fn weber_goal_examples() {
        let cfg = PlannerConfig::default();
        let g = weber_goal(&xy(0.0, 0.0), &xy(0.4, 0.0), 0.2, &cfg);
        assert_abs_diff_eq!(g.x, 0.08, epsilon = 1e-12);
        assert_abs_diff_eq!(g.y, 0.0, epsilon = 1e-12);
        let c = Vec3::new(0.4, -0.3, 1.2);
        assert_eq!(weber_goal(&c, &Vec3::new(0.4, -0.3, 5.0), 0.2, &cfg), c);
        let g = weber_goal(&xy(0.0, 0.0), &xy(2.0, 0.0), 0.2, &cfg);
        assert_abs_diff_eq!(g.x, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn weber_goal_keeps_altitude() {
        let cfg = PlannerConfig::default();
        let g = weber_goal(&Vec3::new(0.0, 0.0, 1.3), &Vec3::new(0.3, 0.4, 0.2), 0.2, &cfg);
        assert_eq!(g.z, 1.3);
        assert_abs_diff_eq!(g.x, 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(g.y, 0.08, epsilon = 1e-12);
    }

    #[test]
    fn arc_goal_unclamped_example() {
        // Wide speed cap so the step is not clamped.
        let cfg = PlannerConfig { v_max: 3.0, ..Default::default() };
        let chest = xy(0.0, 0.0);
        let drone = xy(0.0, 0.7);
        let palm = xy(0.7, 0.0);
        let g = arc_goal(&drone, &chest, &palm, 0.7, 0.2, &cfg).unwrap();
        let (rho, theta) = polar(&g, &chest);
        assert_abs_diff_eq!(rho, 0.7, epsilon = 1e-12);
        // Arc left 0.7 * pi/2; step 0.2 of it.
        assert_abs_diff_eq!(theta, PI / 2.0 - 0.2 * PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(theta.to_degrees(), 72.0, epsilon = 1e-9);
    }

    #[test]
    fn arc_goal_clamped_by_speed_cap() {
        let cfg = PlannerConfig::default();
        let chest = xy(0.0, 0.0);
        let g = arc_goal(&xy(0.0, 0.7), &chest, &xy(0.7, 0.0), 0.7, 0.2, &cfg).unwrap();
        let (rho, theta) = polar(&g, &chest);
        assert_abs_diff_eq!(rho, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(PI / 2.0 - theta, 0.1 / 0.7, epsilon = 1e-12);
        assert!((g - xy(0.0, 0.7)).norm() <= cfg.step_budget() + 1e-12);
    }

    #[test]
    fn arc_goal_fixed_point_at_palm() {
        let cfg = PlannerConfig::default();
        let palm = xy(0.7, 0.0);
        let g = arc_goal(&palm, &xy(0.0, 0.0), &palm, 0.7, 0.2, &cfg).unwrap();
        assert_abs_diff_eq!((g - palm).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn arc_goal_projects_from_outside() {
        let cfg = PlannerConfig::default();
        let chest = xy(0.0, 0.0);
        let g = arc_goal(&xy(0.0, 0.9), &chest, &xy(0.7, 0.0), 0.7, 0.2, &cfg).unwrap();
        let (rho, theta) = polar(&g, &chest);
        assert_abs_diff_eq!(rho, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(theta, PI / 2.0, epsilon = 1e-12);
        // Within budget: lands on the circle and uses the rest along the arc.
        let g = arc_goal(&xy(0.0, 0.75), &chest, &xy(0.7, 0.0), 0.7, 0.2, &cfg).unwrap();
        let (rho, theta) = polar(&g, &chest);
        assert_abs_diff_eq!(rho, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(PI / 2.0 - theta, 0.05 / 0.7, epsilon = 1e-12);
    }

    #[test]
    fn arc_goal_pushes_out_of_safety_disk() {
        let cfg = PlannerConfig::default();
        let chest = xy(0.0, 0.0);
        let g = arc_goal(&xy(0.2, 0.0), &chest, &xy(0.0, 0.7), 0.7, 0.2, &cfg).unwrap();
        assert_abs_diff_eq!(horizontal_distance(&g, &chest), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn arc_goal_degenerate() {
        let cfg = PlannerConfig::default();
        let chest = Vec3::new(1.0, 1.0, 1.3);
        let r = arc_goal(&Vec3::new(1.0, 1.0, 1.0), &chest, &xy(0.0, 0.0), 0.7, 0.2, &cfg);
        assert!(matches!(r, Err(PlannerError::DegenerateGeometry(_))));
    }

    #[test]
    fn yaw_examples() {
        let chest = xy(0.0, 0.0);
        assert_abs_diff_eq!(goal_yaw_toward_chest(&xy(1.0, 0.0), &chest).unwrap(), PI);
        assert_abs_diff_eq!(goal_yaw_toward_chest(&xy(0.0, -1.0), &chest).unwrap(), PI / 2.0);
        assert_abs_diff_eq!(
            goal_yaw_toward_chest(&xy(1.0, 1.0), &chest).unwrap(),
            -3.0 * PI / 4.0,
            epsilon = 1e-12
        );
        assert!(goal_yaw_toward_chest(&Vec3::new(0.0, 0.0, 2.0), &chest).is_err());
    }

    #[test]
    fn altitude_band() {
        let u = user(Vec3::new(0.6, 0.0, 1.1));
        assert_eq!(target_altitude(1.1, &u), 1.1);
        assert_eq!(target_altitude(0.8, &u), 1.0);
        assert_eq!(target_altitude(1.8, &u), 1.6);
    }

    #[test]
    fn boost_examples() {
        let cfg = PlannerConfig::default();
        assert_eq!(effective_k_prime(0.5, &cfg), 0.2);
        assert_eq!(effective_k_prime(0.2, &cfg), 0.5);
        assert_eq!(effective_k_prime(0.3, &cfg), 0.2);
    }

    #[test]
    fn safety_clip() {
        let chest = xy(0.0, 0.0);
        // Segment through the chest is cut at r_s.
        let g = clip_to_safety_disk(&xy(0.5, 0.0), &xy(0.1, 0.0), &chest, 0.3);
        assert_abs_diff_eq!(g.x, 0.3, epsilon = 1e-12);
        // Goal outside is untouched.
        let g = clip_to_safety_disk(&xy(0.5, 0.0), &xy(0.4, 0.0), &chest, 0.3);
        assert_eq!(g, xy(0.4, 0.0));
        // Inside the disk, inward motion is refused but outward allowed.
        let g = clip_to_safety_disk(&xy(0.2, 0.0), &xy(0.1, 0.0), &chest, 0.3);
        assert_eq!(g, xy(0.2, 0.0));
        let g = clip_to_safety_disk(&xy(0.2, 0.0), &xy(0.25, 0.0), &chest, 0.3);
        assert_eq!(g, xy(0.25, 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(PlannerConfig::default().validate().is_ok());
        let bad = PlannerConfig { k_prime: 0.9, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PlannerConfig { r_s: 1.3, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PlannerConfig { v_cruise: 1.2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PlannerConfig { delta_t: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn phase_transitions() {
        use MissionPhase::*;
        assert!(Grounded.can_transition_to(Takeoff));
        assert!(Landing.can_transition_to(Landed));
        assert!(Flight.can_transition_to(Grounded));
        assert!(!Grounded.can_transition_to(Flight));
        assert!(!Landed.can_transition_to(Flight));
        assert!(Landing.can_transition_to(Flight));
        let mut planner = Planner::new(PlannerConfig::default()).unwrap();
        planner.request_takeoff().unwrap();
        assert!(matches!(
            planner.request_takeoff(),
            Err(PlannerError::InvalidTransition { from: Takeoff, to: Takeoff })
        ));
        planner.reset();
        assert_eq!(planner.phase(), Grounded);
    }

    fn hovering(position: Vec3) -> DroneState {
        DroneState::at_rest(position, 0.0)
    }

    fn flying_planner(cfg: PlannerConfig, drone: &DroneState, u: &UserModel) -> Planner {
        let mut planner = Planner::new(cfg).unwrap();
        planner.request_takeoff().unwrap();
        // Already at takeoff altitude, so the first step enters FLIGHT.
        let stay = GestureState::new(Gesture::Stay, 0.0);
        let d = DroneState::at_rest(Vec3::new(drone.position.x, drone.position.y, cfg.takeoff_altitude), 0.0);
        planner.step(0.0, u, &d, &stay).unwrap();
        assert_eq!(planner.phase(), MissionPhase::Flight);
        planner
    }

    #[test]
    fn stay_freezes_setpoint() {
        let cfg = PlannerConfig::default();
        let u = user(Vec3::new(0.7, 0.0, 1.2));
        let start = hovering(Vec3::new(1.0, 2.0, 1.2));
        let mut planner = flying_planner(cfg, &start, &u);
        let stay = GestureState::new(Gesture::Stay, 0.0);
        let mut drone = start;
        let first = planner.step(0.1, &u, &drone, &stay).unwrap();
        assert_eq!(first.goal_position, Vec3::new(1.0, 2.0, 1.2));
        for i in 2..5 {
            drone.position += Vec3::new(0.01, -0.02, 0.003);
            let sp = planner.step(0.1 * i as f64, &u, &drone, &stay).unwrap();
            assert_eq!(sp, first);
        }
    }

    #[test]
    fn far_domain_moves_at_cruise_speed() {
        let cfg = PlannerConfig::default();
        let u = user(Vec3::new(0.7, 0.0, 1.2));
        let drone = hovering(Vec3::new(2.0, 0.0, 1.2));
        let mut planner = flying_planner(cfg, &drone, &u);
        let approach = GestureState::new(Gesture::Approach, 0.0);
        let d = hovering(Vec3::new(2.0, 0.0, 1.2));
        let sp = planner.step(0.1, &u, &d, &approach).unwrap();
        assert_eq!(sp.source_domain, Some(Domain::D1Far));
        assert_abs_diff_eq!(sp.goal_position.x, 2.0 - 0.08, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.commanded_speed, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.goal_yaw, PI, epsilon = 1e-12);
    }

    #[test]
    fn palm_near_chest_holds() {
        let cfg = PlannerConfig::default();
        let u = user(Vec3::new(0.2, 0.0, 1.2));
        let drone = hovering(Vec3::new(0.5, 0.5, 1.2));
        let mut planner = flying_planner(cfg, &drone, &u);
        let approach = GestureState::new(Gesture::Approach, 0.0);
        let sp = planner.step(0.1, &u, &drone, &approach).unwrap();
        assert_eq!(sp.source_domain, Some(Domain::D4Hold));
        assert_eq!(sp.goal_position, drone.position);
        assert_eq!(sp.commanded_speed, 0.0);
    }

    #[test]
    fn altitude_rate_limited_and_banded() {
        let cfg = PlannerConfig::default();
        let u = user(Vec3::new(0.7, 0.0, 1.5));
        let drone = hovering(Vec3::new(3.0, 0.0, 1.2));
        let mut planner = flying_planner(cfg, &drone, &u);
        let approach = GestureState::new(Gesture::Approach, 0.0);
        let sp = planner.step(0.1, &u, &drone, &approach).unwrap();
        let disp = sp.goal_position - drone.position;
        assert!(disp.norm() <= cfg.step_budget() + 1e-12);
        assert_abs_diff_eq!(disp.z, (0.01f64 - 0.0064).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn landing_commits_then_lands() {
        let cfg = PlannerConfig::default();
        let u = user(Vec3::new(0.7, 0.0, 1.2));
        let mut drone = hovering(Vec3::new(0.72, 0.0, 1.2));
        let mut planner = flying_planner(cfg, &drone, &u);
        let approach = GestureState::new(Gesture::Approach, 0.0);
        let sp = planner.step(0.1, &u, &drone, &approach).unwrap();
        assert_eq!(planner.phase(), MissionPhase::Landing);
        assert_eq!(sp.phase, MissionPhase::Landing);
        let mut t = 0.1;
        while planner.phase() == MissionPhase::Landing {
            drone.position = sp_goal(&planner);
            t += 0.1;
            planner.step(t, &u, &drone, &approach).unwrap();
            assert!(t < 3.0);
        }
        assert_eq!(planner.phase(), MissionPhase::Landed);
        assert_abs_diff_eq!(drone.position.z, 1.15, epsilon = 0.011);
    }

    fn sp_goal(planner: &Planner) -> Vec3 {
        planner.last_setpoint().unwrap().goal_position
    }

    #[test]
    fn landing_aborts_when_palm_leaves() {
        let cfg = PlannerConfig::default();
        let u = user(Vec3::new(0.7, 0.0, 1.2));
        let drone = hovering(Vec3::new(0.72, 0.0, 1.2));
        let mut planner = flying_planner(cfg, &drone, &u);
        let approach = GestureState::new(Gesture::Approach, 0.0);
        planner.step(0.1, &u, &drone, &approach).unwrap();
        assert_eq!(planner.phase(), MissionPhase::Landing);
        let pulled = user(Vec3::new(0.45, 0.0, 1.2));
        let sp = planner.step(0.2, &pulled, &drone, &approach).unwrap();
        assert_eq!(planner.phase(), MissionPhase::Flight);
        assert_eq!(sp.phase, MissionPhase::Flight);
    }

    #[test]
    fn arc_does_not_follow_palm_inside_circle() {
        let cfg = PlannerConfig::default();
        // Palm at the drone's bearing but pulled in to 0.5 m.
        let u = user(Vec3::new(0.5, 0.0, 1.1));
        let drone = hovering(Vec3::new(0.7, 0.0, 1.1));
        let mut planner = flying_planner(cfg, &drone, &u);
        let approach = GestureState::new(Gesture::Approach, 0.0);
        let mut d = drone;
        for i in 1..20 {
            let sp = planner.step(0.1 * i as f64, &u, &d, &approach).unwrap();
            assert_eq!(sp.source_domain, Some(Domain::D3Arc));
            assert_abs_diff_eq!(horizontal_distance(&sp.goal_position, &u.chest.position), 0.7, epsilon = 1e-9);
            d.position = sp.goal_position;
        }
        assert_eq!(planner.phase(), MissionPhase::Flight);
    }
}
