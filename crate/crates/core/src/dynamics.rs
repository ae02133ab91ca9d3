//! Rigid-body flapping-drone model and cascaded PID flight controller.
//!
//! The drone is a single rigid body driven by a body-frame wrench. The
//! motor/flapping mechanism is abstracted away: the controller commands
//! thrust and torque directly, saturated to actuator limits, and wing
//! flapping shows up as a deterministic sinusoidal thrust ripple.

use std::f64::consts::PI;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{yaw_rotation, Vec3};
use crate::planner::Setpoint;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("simulation diverged at t = {t:.3} s: {what}")]
    Diverged { t: f64, what: String },
    #[error("invalid dynamics config: {0}")]
    Config(String),
}

fn gravity() -> Vec3 {
    Vec3::new(0.0, 0.0, -GRAVITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroneParams {
    pub mass: f64,
    /// Diagonal of the body inertia tensor.
    pub inertia: Vec3,
    pub max_thrust: f64,
    pub max_torque: Vec3,
    pub flap_frequency: f64,
    /// Ripple amplitude as a fraction of the instantaneous thrust.
    pub flap_ripple: f64,
    pub drag_coeff: f64,
    /// Floor height; `None` disables ground contact.
    pub ground_z: Option<f64>,
}

impl Default for DroneParams {
    fn default() -> Self {
        let mass = 0.10;
        Self {
            mass,
            inertia: Vec3::new(1e-4, 1e-4, 2e-4),
            max_thrust: 3.0 * mass * GRAVITY,
            max_torque: Vec3::new(0.01, 0.01, 0.01),
            flap_frequency: 12.0,
            flap_ripple: 0.05,
            drag_coeff: 0.05,
            ground_z: Some(0.0),
        }
    }
}

impl DroneParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fail = |m: String| Err(DynamicsError::Config(m));
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return fail(format!("mass must be > 0, got {}", self.mass));
        }
        if !self.inertia.iter().all(|&i| i > 0.0 && i.is_finite()) {
            return fail("inertia diagonal must be positive".into());
        }
        if !(self.max_thrust > self.mass * GRAVITY) {
            return fail("max_thrust must exceed the drone's weight".into());
        }
        if !self.max_torque.iter().all(|&t| t >= 0.0) {
            return fail("max_torque must be >= 0".into());
        }
        if !(0.0..0.5).contains(&self.flap_ripple) || !(self.flap_frequency >= 0.0) {
            return fail("flap_ripple must be in [0, 0.5) and flap_frequency >= 0".into());
        }
        if !(self.drag_coeff >= 0.0) {
            return fail("drag_coeff must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub orientation: UnitQuaternion<f64>,
    /// Body-frame angular velocity.
    pub angular_velocity: Vec3,
}

impl DroneState {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            orientation: yaw_rotation(yaw),
            angular_velocity: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }
}

/// Body-frame force and torque.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Wrench {
    pub fn zero() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: Vec3,
    pub ki: Vec3,
    pub kd: Vec3,
    /// Absolute bound on each integrator component.
    pub integral_limit: Vec3,
}

impl PidGains {
    pub fn uniform(kp: f64, ki: f64, kd: f64, integral_limit: f64) -> Self {
        Self {
            kp: Vec3::repeat(kp),
            ki: Vec3::repeat(ki),
            kd: Vec3::repeat(kd),
            integral_limit: Vec3::repeat(integral_limit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pid {
    pub integral: Vec3,
    pub prev_error: Option<Vec3>,
}

impl Pid {
    /// Proportional + clamped rectangle-rule integral + first-difference
    /// derivative. The first call after a reset has no derivative term.
    pub fn update(&mut self, error: Vec3, gains: &PidGains, dt: f64) -> Vec3 {
        let rate = match self.prev_error {
            Some(prev) => (error - prev) / dt,
            None => Vec3::zeros(),
        };
        self.update_with_rate(error, rate, gains, dt)
    }

    /// Same as [`Pid::update`] but with an externally supplied error rate,
    /// e.g. measured velocity instead of a differentiated setpoint step.
    pub fn update_with_rate(&mut self, error: Vec3, rate: Vec3, gains: &PidGains, dt: f64) -> Vec3 {
        self.integral += error * dt;
        self.integral = self
            .integral
            .zip_map(&gains.integral_limit, |i, lim| i.clamp(-lim, lim));
        self.prev_error = Some(error);
        gains.kp.component_mul(&error) + gains.ki.component_mul(&self.integral) + gains.kd.component_mul(&rate)
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Position loop, output in m/s^2.
    pub position: PidGains,
    /// Attitude loop, output in rad/s^2 (scaled by inertia into torque).
    pub attitude: PidGains,
    pub max_tilt: f64,
    pub control_rate: f64,
    pub physics_rate: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            position: PidGains {
                kp: Vec3::new(9.0, 9.0, 6.0),
                ki: Vec3::new(0.2, 0.2, 1.0),
                kd: Vec3::new(6.0, 6.0, 5.0),
                integral_limit: Vec3::new(0.5, 0.5, 0.5),
            },
            attitude: PidGains {
                kp: Vec3::new(150.0, 150.0, 60.0),
                ki: Vec3::zeros(),
                kd: Vec3::new(24.0, 24.0, 15.0),
                integral_limit: Vec3::zeros(),
            },
            max_tilt: 0.35,
            control_rate: 100.0,
            physics_rate: 500.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fail = |m: &str| Err(DynamicsError::Config(m.into()));
        if !(self.control_rate > 0.0 && self.physics_rate > 0.0) {
            return fail("rates must be > 0");
        }
        if self.physics_rate < self.control_rate {
            return fail("physics_rate must be >= control_rate");
        }
        for g in [&self.position, &self.attitude] {
            let non_negative = g
                .kp
                .iter()
                .chain(g.ki.iter())
                .chain(g.kd.iter())
                .chain(g.integral_limit.iter())
                .all(|&v| v >= 0.0 && v.is_finite());
            if !non_negative {
                return fail("gains and integrator limits must be finite and >= 0");
            }
        }
        if !(self.max_tilt > 0.0 && self.max_tilt < PI / 2.0) {
            return fail("max_tilt must be in (0, pi/2)");
        }
        Ok(())
    }
}

/// Rotation vector taking `from` to `to`, expressed in `from`'s frame.
fn attitude_error(from: &UnitQuaternion<f64>, to: &UnitQuaternion<f64>) -> Vec3 {
    let q: Quaternion<f64> = *(from.inverse() * to).quaternion();
    let q = if q.w < 0.0 { -q } else { q };
    let v = q.imag();
    let s = v.norm();
    if s < 1e-15 {
        return v * 2.0;
    }
    v * (2.0 * s.atan2(q.w) / s)
}

/// Position loop feeding an attitude loop.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    position_pid: Pid,
    attitude_pid: Pid,
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Result<Self, DynamicsError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            position_pid: Pid::default(),
            attitude_pid: Pid::default(),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.position_pid.reset();
        self.attitude_pid.reset();
    }

    pub fn control_step(
        &mut self,
        state: &DroneState,
        setpoint: &Setpoint,
        params: &DroneParams,
        dt: f64,
    ) -> Wrench {
        let cfg = &self.cfg;
        let error = setpoint.goal_position - state.position;
        let error_rate = setpoint.goal_velocity - state.velocity;
        let accel = self
            .position_pid
            .update_with_rate(error, error_rate, &cfg.position, dt);

        let (s, c) = setpoint.goal_yaw.sin_cos();
        let pitch = ((accel.x * c + accel.y * s) / GRAVITY).clamp(-cfg.max_tilt, cfg.max_tilt);
        let roll = ((accel.x * s - accel.y * c) / GRAVITY).clamp(-cfg.max_tilt, cfg.max_tilt);
        let thrust = (params.mass * (GRAVITY + accel.z) / (roll.cos() * pitch.cos()))
            .clamp(0.0, params.max_thrust);

        let desired = UnitQuaternion::from_euler_angles(roll, pitch, setpoint.goal_yaw);
        let att_error = attitude_error(&state.orientation, &desired);
        let alpha = self.attitude_pid.update_with_rate(
            att_error,
            -state.angular_velocity,
            &cfg.attitude,
            dt,
        );
        let torque = params
            .inertia
            .component_mul(&alpha)
            .zip_map(&params.max_torque, |t, lim| t.clamp(-lim, lim));

        Wrench {
            force: Vec3::new(0.0, 0.0, thrust),
            torque,
        }
    }
}

/// Advances the rigid body by `dt`. Velocity and angular velocity use
/// semi-implicit Euler; position uses the mean of the old and new velocity,
/// which is exact under constant acceleration. The flap ripple is sampled
/// at the step midpoint, cosine-phased from `t = 0`, so a level hover from
/// rest carries no mean velocity offset.
pub fn physics_step(
    state: &DroneState,
    wrench: &Wrench,
    params: &DroneParams,
    t: f64,
    dt: f64,
) -> Result<DroneState, DynamicsError> {
    let m = params.mass;
    let thrust_accel = (state.orientation * wrench.force) / m;
    let phase = 2.0 * PI * params.flap_frequency * (t + dt / 2.0);
    let ripple = thrust_accel * (params.flap_ripple * phase.cos());
    let accel = gravity() + thrust_accel - state.velocity * (params.drag_coeff / m) + ripple;

    let mut velocity = state.velocity + accel * dt;
    let mut position = state.position + (state.velocity + velocity) * (dt / 2.0);

    let w = state.angular_velocity;
    let inertia_w = params.inertia.component_mul(&w);
    let angular_accel = (wrench.torque - w.cross(&inertia_w)).component_div(&params.inertia);
    let mut angular_velocity = w + angular_accel * dt;
    let mut orientation = state.orientation * UnitQuaternion::from_scaled_axis(angular_velocity * dt);
    orientation.renormalize();

    if let Some(ground) = params.ground_z {
        if position.z <= ground && velocity.z <= 0.0 {
            position.z = ground;
            velocity = Vec3::zeros();
            angular_velocity = Vec3::zeros();
            orientation = yaw_rotation(crate::model::quaternion_yaw(orientation.quaternion()).unwrap_or(0.0));
        }
    }

    let next = DroneState {
        position,
        velocity,
        orientation,
        angular_velocity,
    };
    if !next.is_finite() {
        return Err(DynamicsError::Diverged {
            t,
            what: "non-finite drone state".into(),
        });
    }
    Ok(next)
}

/// Oracle tracking: the drone lands exactly on the setpoint pose.
pub fn ideal_tracking_step(state: &DroneState, setpoint: &Setpoint, dt: f64) -> DroneState {
    DroneState {
        position: setpoint.goal_position,
        velocity: (setpoint.goal_position - state.position) / dt,
        orientation: yaw_rotation(setpoint.goal_yaw),
        angular_velocity: Vec3::zeros(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::MissionPhase;
    use approx::assert_abs_diff_eq;

    fn no_drag() -> DroneParams {
        DroneParams {
            drag_coeff: 0.0,
            ground_z: None,
            ..Default::default()
        }
    }

    #[test]
    fn pid_examples() {
        let gains = PidGains::uniform(2.0, 0.0, 0.0, 10.0);
        let mut pid = Pid::default();
        assert_eq!(pid.update(Vec3::new(1.0, 0.0, 0.0), &gains, 0.01), Vec3::new(2.0, 0.0, 0.0));

        let gains = PidGains::uniform(1.0, 1.0, 1.0, 10.0);
        let mut pid = Pid::default();
        assert_eq!(pid.update(Vec3::zeros(), &gains, 0.01), Vec3::zeros());

        let gains = PidGains::uniform(0.0, 1.0, 0.0, 10.0);
        let mut pid = Pid::default();
        pid.update(Vec3::new(1.0, 0.0, 0.0), &gains, 0.5);
        let out = pid.update(Vec3::new(1.0, 0.0, 0.0), &gains, 0.5);
        assert_abs_diff_eq!(out.x, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pid_derivative_and_windup() {
        let gains = PidGains::uniform(0.0, 0.0, 1.0, 0.0);
        let mut pid = Pid::default();
        pid.update(Vec3::new(1.0, 0.0, 0.0), &gains, 0.1);
        let out = pid.update(Vec3::new(1.5, 0.0, 0.0), &gains, 0.1);
        assert_abs_diff_eq!(out.x, 5.0, epsilon = 1e-12);

        let gains = PidGains::uniform(0.0, 1.0, 0.0, 0.3);
        let mut pid = Pid::default();
        for _ in 0..100 {
            pid.update(Vec3::new(1.0, -1.0, 0.0), &gains, 0.1);
        }
        assert_eq!(pid.integral, Vec3::new(0.3, -0.3, 0.0));
    }

    fn hover_setpoint(position: Vec3, yaw: f64) -> Setpoint {
        Setpoint::hold(position, yaw, MissionPhase::Flight)
    }

    #[test]
    fn hover_thrust_is_weight() {
        let params = DroneParams::default();
        let mut ctrl = Controller::new(ControllerConfig::default()).unwrap();
        let state = DroneState::at_rest(Vec3::new(0.0, 0.0, 1.0), 0.3);
        let w = ctrl.control_step(&state, &hover_setpoint(state.position, 0.3), &params, 0.01);
        assert!((w.force.z - 0.981).abs() < 1e-6);
        assert!(w.torque.norm() < 1e-12);
    }

    #[test]
    fn climb_and_yaw_signs() {
        let params = DroneParams::default();
        let mut ctrl = Controller::new(ControllerConfig::default()).unwrap();
        let state = DroneState::at_rest(Vec3::new(0.0, 0.0, 1.0), 0.0);
        let w = ctrl.control_step(&state, &hover_setpoint(Vec3::new(0.0, 0.0, 2.0), 0.0), &params, 0.01);
        assert!(w.force.z > params.mass * GRAVITY);

        let mut ctrl = Controller::new(ControllerConfig::default()).unwrap();
        let w = ctrl.control_step(&state, &hover_setpoint(state.position, PI / 2.0), &params, 0.01);
        assert!(w.torque.z > 0.0);
    }

    #[test]
    fn lateral_error_tilts_toward_goal() {
        let params = DroneParams::default();
        let mut ctrl = Controller::new(ControllerConfig::default()).unwrap();
        for yaw in [0.0, 1.0, -2.5] {
            let state = DroneState::at_rest(Vec3::new(0.0, 0.0, 1.0), yaw);
            ctrl.reset();
            let sp = hover_setpoint(Vec3::new(1.0, 0.5, 1.0), yaw);
            let w = ctrl.control_step(&state, &sp, &params, 0.01);
            // Torque about the body axis that tips the thrust vector toward +x/+y.
            let world_torque = state.orientation * w.torque;
            let tip = world_torque.cross(&Vec3::z());
            assert!(tip.dot(&Vec3::new(1.0, 0.5, 0.0)) > 0.0, "yaw {yaw}");
        }
    }

    #[test]
    fn free_fall() {
        let params = no_drag();
        let mut s = DroneState::at_rest(Vec3::new(0.0, 0.0, 10.0), 0.0);
        let dt = 0.002;
        for k in 0..250 {
            s = physics_step(&s, &Wrench::zero(), &params, k as f64 * dt, dt).unwrap();
        }
        assert!((s.velocity.z + 4.905).abs() < 1e-3);
        assert!((10.0 - s.position.z - 0.5 * GRAVITY * 0.25).abs() < 1e-3);
    }

    #[test]
    fn level_weight_thrust_holds_position() {
        let params = DroneParams { drag_coeff: 0.0, ..Default::default() };
        let start = Vec3::new(0.0, 0.0, 1.0);
        let mut s = DroneState::at_rest(start, 0.0);
        let w = Wrench {
            force: Vec3::new(0.0, 0.0, params.mass * GRAVITY),
            torque: Vec3::zeros(),
        };
        let dt = 0.002;
        // Peak-to-peak displacement of a cosine ripple starting from rest.
        let envelope = 2.0 * params.flap_ripple * GRAVITY / (2.0 * PI * params.flap_frequency).powi(2);
        for k in 0..2500 {
            s = physics_step(&s, &w, &params, k as f64 * dt, dt).unwrap();
            assert!((s.position - start).norm() < 1.05 * envelope);
        }
    }

    #[test]
    fn torque_free_z_spin_is_constant() {
        let params = no_drag();
        let mut s = DroneState::at_rest(Vec3::new(0.0, 0.0, 1.0), 0.0);
        s.angular_velocity = Vec3::new(0.0, 0.0, 1.0);
        for k in 0..1000 {
            s = physics_step(&s, &Wrench::zero(), &params, k as f64 * 0.002, 0.002).unwrap();
        }
        assert_eq!(s.angular_velocity, Vec3::new(0.0, 0.0, 1.0));
        // Quarter turn after pi/2 seconds would be 785 steps; 2 s is 2 rad.
        assert_abs_diff_eq!(
            crate::model::quaternion_yaw(s.orientation.quaternion()).unwrap(),
            2.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn ground_stops_fall() {
        let params = DroneParams::default();
        let mut s = DroneState::at_rest(Vec3::new(0.0, 0.0, 0.0), 0.7);
        for k in 0..100 {
            s = physics_step(&s, &Wrench::zero(), &params, k as f64 * 0.002, 0.002).unwrap();
        }
        assert_eq!(s.position.z, 0.0);
        assert_eq!(s.velocity, Vec3::zeros());
    }

    #[test]
    fn divergence_is_reported() {
        let params = no_drag();
        let s = DroneState::at_rest(Vec3::new(0.0, 0.0, 1.0), 0.0);
        let w = Wrench {
            force: Vec3::new(0.0, 0.0, f64::INFINITY),
            torque: Vec3::zeros(),
        };
        assert!(matches!(
            physics_step(&s, &w, &params, 0.0, 0.002),
            Err(DynamicsError::Diverged { .. })
        ));
    }

    #[test]
    fn hover_regulation_from_offset() {
        let params = DroneParams::default();
        let cfg = ControllerConfig::default();
        let mut ctrl = Controller::new(cfg).unwrap();
        let target = Vec3::new(0.0, 0.0, 1.2);
        let sp = hover_setpoint(target, 0.0);
        let mut s = DroneState::at_rest(target + Vec3::new(0.1, 0.0, 0.0), 0.0);
        let dt = 1.0 / cfg.physics_rate;
        let per_control = (cfg.physics_rate / cfg.control_rate) as usize;
        let mut wrench = Wrench::zero();
        let mut settled_at = None;
        for k in 0..(10.0 / dt) as usize {
            if k % per_control == 0 {
                wrench = ctrl.control_step(&s, &sp, &params, 1.0 / cfg.control_rate);
            }
            s = physics_step(&s, &wrench, &params, k as f64 * dt, dt).unwrap();
            let err = (s.position - target).norm();
            assert!(err < 0.5, "diverged: {err}");
            if err < 0.05 && settled_at.is_none() {
                settled_at = Some(k as f64 * dt);
            }
            if err >= 0.05 {
                settled_at = None;
            }
        }
        let settled = settled_at.expect("never settled");
        assert!(settled < 5.0, "settled at {settled}");
    }

    #[test]
    fn ideal_tracking() {
        let s = DroneState::at_rest(Vec3::new(0.0, 0.0, 1.0), 0.0);
        let sp = hover_setpoint(Vec3::new(1.0, 2.0, 1.2), 0.5);
        let n = ideal_tracking_step(&s, &sp, 0.1);
        assert_eq!(n.position, Vec3::new(1.0, 2.0, 1.2));
        assert_abs_diff_eq!(n.velocity, Vec3::new(10.0, 20.0, 2.0), epsilon = 1e-12);
        let same = ideal_tracking_step(&n, &hover_setpoint(n.position, 0.5), 0.1);
        assert_eq!(same.position, n.position);
        assert_eq!(same.velocity, Vec3::zeros());
    }

    #[test]
    fn params_validation() {
        assert!(DroneParams::default().validate().is_ok());
        assert!(DroneParams { mass: 0.0, ..Default::default() }.validate().is_err());
        assert!(DroneParams { flap_ripple: 0.6, ..Default::default() }.validate().is_err());
        assert!(DroneParams { max_thrust: 0.5, ..Default::default() }.validate().is_err());
        let cfg = ControllerConfig { control_rate: 1000.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
