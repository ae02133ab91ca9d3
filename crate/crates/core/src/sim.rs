//! The three-rate simulation loop.
//!
//! Physics runs at `controller.physics_rate`, the flight controller at
//! `controller.control_rate` and gesture recognition plus planning every
//! `planner.delta_t`. All rates are derived from one integer tick counter so
//! runs are exactly repeatable.

use thiserror::Error;

use crate::config::{RunConfig, SimMode};
use crate::dynamics::{
    ideal_tracking_step, physics_step, Controller, DroneState, DynamicsError, Wrench,
};
use crate::gesture::{Gesture, GestureConfig, GestureError, GestureTracker};
use crate::metrics::{MetricsError, MetricsReport, RunSample, RunTrace};
use crate::model::{ModelError, UserModel, Vec3, WorldState};
use crate::planner::{MissionPhase, Planner, PlannerConfig, PlannerError, PlannerStatus, Setpoint};
use crate::scenario::{DroneStart, MissionCommand, Scenario, ScenarioError, UserSource};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("user model: {0}")]
    User(#[from] ModelError),
    #[error(transparent)]
    Gesture(#[from] GestureError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid simulation config: {0}")]
    Config(String),
}

/// One planner invocation, for analysis that needs planner-rate data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerTick {
    pub t: f64,
    /// Drone position the planner saw.
    pub drone: Vec3,
    pub user: UserModel,
    pub status: PlannerStatus,
    pub setpoint: Setpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Keep the trace and planner log in memory.
    pub record: bool,
    /// End the run as soon as the drone reports LANDED.
    pub stop_on_landed: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            record: true,
            stop_on_landed: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: RunTrace,
    pub planner_log: Vec<PlannerTick>,
    pub final_state: WorldState,
}

pub struct Simulation<U: UserSource> {
    cfg: RunConfig,
    options: SimOptions,
    source: U,
    duration: f64,
    gesture: GestureTracker,
    gesture_override: Option<Gesture>,
    planner: Planner,
    controller: Controller,
    drone: DroneState,
    user: UserModel,
    setpoint: Setpoint,
    wrench: Wrench,
    events: Vec<(f64, MissionCommand)>,
    next_event: usize,
    queued: Vec<MissionCommand>,
    /// Palm and drone positions when the drone touched down.
    landed_anchor: Option<(Vec3, Vec3)>,
    start: DroneStart,
    tick: u64,
    physics_per_control: u64,
    physics_per_plan: u64,
    finished: bool,
    trace: RunTrace,
    log: Vec<PlannerTick>,
}

impl<U: UserSource> Simulation<U> {
    pub fn new(cfg: RunConfig, source: U, start: DroneStart) -> Result<Self, SimError> {
        Self::with_options(cfg, source, start, SimOptions::default())
    }

    pub fn with_options(
        cfg: RunConfig,
        source: U,
        start: DroneStart,
        options: SimOptions,
    ) -> Result<Self, SimError> {
        cfg.validate().map_err(|e| SimError::Config(e.to_string()))?;
        let physics_per_control =
            (cfg.controller.physics_rate / cfg.controller.control_rate).round() as u64;
        let physics_per_plan =
            physics_per_control * (cfg.controller.control_rate * cfg.planner.delta_t).round() as u64;
        let duration = cfg.duration.unwrap_or(f64::INFINITY).min(source.duration());
        let user = source.user_at(0.0)?;
        user.validate()?;
        let drone = DroneState::at_rest(Vec3::from(start.position), start.yaw);
        let mut events = source.mission_events();
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            gesture: GestureTracker::new(cfg.gesture)?,
            gesture_override: None,
            planner: Planner::new(cfg.planner)?,
            controller: Controller::new(cfg.controller)?,
            setpoint: Setpoint::hold(drone.position, start.yaw, MissionPhase::Grounded),
            wrench: Wrench::zero(),
            cfg,
            options,
            source,
            duration,
            drone,
            user,
            events,
            next_event: 0,
            queued: Vec::new(),
            landed_anchor: None,
            start,
            tick: 0,
            physics_per_control,
            physics_per_plan,
            finished: false,
            trace: RunTrace::default(),
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / self.cfg.controller.physics_rate
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// True when the next [`Simulation::step`] starts with a planner tick.
    pub fn at_planner_boundary(&self) -> bool {
        self.tick.is_multiple_of(self.physics_per_plan)
    }

    pub fn source(&self) -> &U {
        &self.source
    }

    /// Mutable access to the user source. Intended for changes between
    /// planner ticks.
    pub fn source_mut(&mut self) -> &mut U {
        &mut self.source
    }

    pub fn drone(&self) -> &DroneState {
        &self.drone
    }

    pub fn planner(&self) -> &Planner {
        &self.planner
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn planner_log(&self) -> &[PlannerTick] {
        &self.log
    }

    pub fn world_state(&self) -> WorldState {
        WorldState {
            t: self.time(),
            user: self.user,
            drone: self.drone,
            planner: *self.planner.status(),
            setpoint: self.setpoint,
        }
    }

    /// Mission command applied at the next planner tick.
    pub fn queue_command(&mut self, cmd: MissionCommand) {
        self.queued.push(cmd);
    }

    /// Presents `gesture` to the planner until the recognizer itself reports
    /// it. Used as a fail-safe when live input is lost.
    pub fn override_gesture(&mut self, gesture: Gesture) {
        self.gesture_override = Some(gesture);
    }

    pub fn set_planner_config(&mut self, cfg: PlannerConfig) -> Result<(), SimError> {
        self.planner.set_config(cfg)?;
        self.cfg.planner = cfg;
        Ok(())
    }

    pub fn set_gesture_config(&mut self, cfg: GestureConfig) -> Result<(), SimError> {
        self.gesture.set_config(cfg)?;
        self.cfg.gesture = cfg;
        Ok(())
    }

    fn apply(&mut self, cmd: MissionCommand, t: f64) -> Result<(), SimError> {
        match cmd {
            MissionCommand::Takeoff => self.planner.request_takeoff()?,
            MissionCommand::Reset => {
                // Back on the ground at the start pose, ready for another takeoff.
                self.drone = DroneState::at_rest(Vec3::from(self.start.position), self.start.yaw);
                self.setpoint = Setpoint::hold(self.drone.position, self.start.yaw, MissionPhase::Grounded);
                self.planner.reset();
                self.controller.reset();
                self.gesture.reset(t);
                self.gesture_override = None;
                self.landed_anchor = None;
                self.wrench = Wrench::zero();
            }
        }
        Ok(())
    }

    fn planner_tick(&mut self, t: f64) -> Result<(), SimError> {
        let user = self.source.user_at(t)?;
        user.validate()?;
        self.user = user;

        while let Some(&(et, cmd)) = self.events.get(self.next_event) {
            if et > t + TIME_EPS {
                break;
            }
            self.next_event += 1;
            self.apply(cmd, t)?;
        }
        for cmd in std::mem::take(&mut self.queued) {
            self.apply(cmd, t)?;
        }

        let mut gesture = self.gesture.update(&user, t)?;
        if let Some(forced) = self.gesture_override {
            if gesture.current == forced {
                self.gesture_override = None;
            } else {
                gesture.current = forced;
            }
        }

        let seen = self.drone.position;
        self.setpoint = self.planner.step(t, &user, &self.drone, &gesture)?;
        if self.cfg.mode == SimMode::Ideal {
            self.drone = ideal_tracking_step(&self.drone, &self.setpoint, self.cfg.planner.delta_t);
        }
        if self.planner.phase() == MissionPhase::Landed {
            // The drone rides on the palm.
            let (palm0, drone0) = *self
                .landed_anchor
                .get_or_insert((user.palm.position, self.drone.position));
            self.drone.position = drone0 + (user.palm.position - palm0);
            self.drone.velocity = Vec3::zeros();
            self.drone.angular_velocity = Vec3::zeros();
        }
        if self.options.record {
            self.log.push(PlannerTick {
                t,
                drone: seen,
                user,
                status: *self.planner.status(),
                setpoint: self.setpoint,
            });
        }
        Ok(())
    }

    fn control_tick(&mut self, t: f64) {
        let dynamic = self.cfg.mode == SimMode::Dynamic;
        if dynamic {
            self.wrench = if self.planner.phase().is_airborne() {
                let dt = 1.0 / self.cfg.controller.control_rate;
                self.controller
                    .control_step(&self.drone, &self.setpoint, &self.cfg.drone, dt)
            } else {
                self.controller.reset();
                Wrench::zero()
            };
        }
        if self.options.record {
            let status = self.planner.status();
            self.trace.samples.push(RunSample {
                t,
                position: self.drone.position,
                target: self.setpoint.goal_position,
                yaw: crate::model::Pose::new(self.drone.position, self.drone.orientation).yaw(),
                goal_yaw: self.setpoint.goal_yaw,
                chest: self.user.chest.position,
                palm: self.user.palm.position,
                phase: self.planner.phase(),
                domain: self.setpoint.source_domain,
                gesture: status.gesture.current,
                cmd_speed: self.setpoint.commanded_speed,
            });
        }
    }

    /// Advances by one physics tick.
    pub fn step(&mut self) -> Result<(), SimError> {
        if self.finished {
            return Ok(());
        }
        let t = self.time();
        if self.tick.is_multiple_of(self.physics_per_plan) {
            self.planner_tick(t)?;
        }
        if self.tick.is_multiple_of(self.physics_per_control) {
            self.control_tick(t);
            let landed = self.planner.phase() == MissionPhase::Landed;
            let control_dt = 1.0 / self.cfg.controller.control_rate;
            if (landed && self.options.stop_on_landed) || t + control_dt > self.duration + TIME_EPS {
                self.finished = true;
                return Ok(());
            }
        }
        if self.cfg.mode == SimMode::Dynamic && self.planner.phase() != MissionPhase::Landed {
            let dt = 1.0 / self.cfg.controller.physics_rate;
            self.drone = physics_step(&self.drone, &self.wrench, &self.cfg.drone, t, dt)?;
        }
        self.tick += 1;
        Ok(())
    }

    /// Steps until the next planner tick is due (or the run ends).
    pub fn step_planner_period(&mut self) -> Result<(), SimError> {
        loop {
            self.step()?;
            if self.finished || self.at_planner_boundary() {
                return Ok(());
            }
        }
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        if !self.duration.is_finite() {
            return Err(SimError::Config("cannot run an unbounded user source to completion".into()));
        }
        while !self.finished {
            self.step()?;
        }
        let final_state = self.world_state();
        Ok(RunOutput {
            trace: self.trace,
            planner_log: self.log,
            final_state,
        })
    }
}

/// Runs a scenario under `cfg`, applying its seed and duration overrides,
/// and computes the metrics report.
pub fn run_scenario(cfg: &RunConfig, scenario: &Scenario) -> Result<(RunOutput, MetricsReport), SimError> {
    let mut scenario = scenario.clone();
    if let Some(seed) = cfg.seed {
        scenario.seed = seed;
    }
    if let Some(d) = cfg.duration {
        scenario.duration = d;
    }
    let start = scenario.drone_start();
    let sim = Simulation::new(*cfg, scenario.clone(), start)?;
    let output = sim.run()?;
    let mut report = MetricsReport::compute(&output.trace, &cfg.planner)?;
    report.scenario = scenario.name.clone();
    report.mode = match cfg.mode {
        SimMode::Ideal => "ideal".into(),
        SimMode::Dynamic => "dynamic".into(),
    };
    report.seed = Some(scenario.seed);
    Ok((output, report))
}
