//! The live simulation, advanced in steps and fed commands only at planner
//! tick boundaries so every broadcast sees a consistent state.

use std::collections::VecDeque;

use falconry_core::model::quaternion_yaw;
use falconry_core::scenario::MissionCommand;
use falconry_core::sim::SimOptions;
use falconry_core::*;

use crate::protocol::{
    ClientCommand, DroneView, ErrorCode, MissionAction, ParamKey, SetpointView, StateBroadcast,
    UserView, PROTOCOL_VERSION,
};

/// Something to apply at the next planner tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Input {
    Command {
        client: u64,
        id: Option<u64>,
        command: ClientCommand,
    },
    /// Controller lost: stop the user, bend the arm and hold the drone.
    Failsafe,
}

/// Result of applying a client's command, addressed back to that client.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub client: u64,
    pub id: Option<u64>,
    pub cmd: &'static str,
    pub t: f64,
    pub result: Result<(), (ErrorCode, String)>,
}

pub struct SimDriver {
    sim: Simulation<LiveUser>,
    pending: VecDeque<Input>,
}

impl SimDriver {
    pub fn new(cfg: RunConfig, scenario: Scenario) -> Result<Self, SimError> {
        let start = scenario.drone_start();
        let options = SimOptions {
            record: false,
            stop_on_landed: false,
        };
        let sim = Simulation::with_options(cfg, LiveUser::new(scenario), start, options)?;
        Ok(Self {
            sim,
            pending: VecDeque::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn simulation(&self) -> &Simulation<LiveUser> {
        &self.sim
    }

    pub fn submit(&mut self, input: Input) {
        self.pending.push_back(input);
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// One physics tick; queued inputs go in first when a planner tick is due.
    pub fn step(&mut self, applied: &mut Vec<Applied>) -> Result<(), SimError> {
        if self.sim.at_planner_boundary() {
            while let Some(input) = self.pending.pop_front() {
                if let Some(a) = self.apply(input) {
                    applied.push(a);
                }
            }
        }
        self.sim.step()
    }

    /// Runs every step that starts at or before `t`, so a planner tick due
    /// at exactly `t` is already reflected in the next snapshot. Time ends
    /// up at most one physics tick past `t`.
    pub fn advance_to(&mut self, t: f64) -> Result<Vec<Applied>, SimError> {
        let mut applied = Vec::new();
        while self.sim.time() <= t + 1e-9 {
            self.step(&mut applied)?;
        }
        Ok(applied)
    }

    /// Runs through the next planner tick and stops right after it.
    pub fn advance_planner_tick(&mut self) -> Result<Vec<Applied>, SimError> {
        let mut applied = Vec::new();
        loop {
            self.step(&mut applied)?;
            if self.sim.at_planner_boundary() {
                return Ok(applied);
            }
        }
    }

    fn apply(&mut self, input: Input) -> Option<Applied> {
        let t = self.sim.time();
        let (client, id, command) = match input {
            Input::Failsafe => {
                let user = self.sim.source_mut();
                user.set_velocity(t, 0.0, 0.0);
                user.set_palm(t, PalmMode::Bend);
                self.sim.override_gesture(Gesture::Stay);
                return None;
            }
            Input::Command { client, id, command } => (client, id, command),
        };
        let result = self.apply_command(t, command);
        Some(Applied {
            client,
            id,
            cmd: command.name(),
            t,
            result,
        })
    }

    fn apply_command(&mut self, t: f64, command: ClientCommand) -> Result<(), (ErrorCode, String)> {
        let invalid = |m: String| (ErrorCode::Invalid, m);
        match command {
            ClientCommand::SetUserVelocity { vx, vy } => self.sim.source_mut().set_velocity(t, vx, vy),
            ClientCommand::SetPalmMode { mode } => self.sim.source_mut().set_palm(t, mode),
            ClientCommand::Mission { action: MissionAction::Takeoff } => {
                let phase = self.sim.planner().phase();
                if phase != MissionPhase::Grounded {
                    return Err(invalid(format!("takeoff needs GROUNDED, drone is {}", phase.as_str())));
                }
                self.sim.queue_command(MissionCommand::Takeoff);
            }
            ClientCommand::Mission { action: MissionAction::Reset } => {
                self.sim.queue_command(MissionCommand::Reset);
            }
            ClientCommand::SetParam { key, value } => match key {
                ParamKey::KPrime | ParamKey::RV => {
                    let mut cfg = *self.sim.planner().config();
                    match key {
                        ParamKey::KPrime => cfg.k_prime = value,
                        _ => cfg.r_v = value,
                    }
                    self.sim.set_planner_config(cfg).map_err(|e| invalid(e.to_string()))?;
                }
                ParamKey::DTh => {
                    let cfg = GestureConfig {
                        d_th: value,
                        ..self.sim.config().gesture
                    };
                    self.sim.set_gesture_config(cfg).map_err(|e| invalid(e.to_string()))?;
                }
            },
        }
        Ok(())
    }

    /// The state as of the last completed step.
    pub fn snapshot(&self) -> StateBroadcast {
        let w = self.sim.world_state();
        let drone = self.sim.drone();
        let user = self.sim.source().user_at(self.sim.time()).unwrap_or(w.user);
        let measure = |a, b| self.sim.config().planner.distance_mode.measure(a, b);
        let arr = |v: &Vec3| [v.x, v.y, v.z];
        StateBroadcast {
            v: PROTOCOL_VERSION,
            t: self.sim.time(),
            drone: DroneView {
                position: arr(&drone.position),
                velocity: arr(&drone.velocity),
                yaw: quaternion_yaw(drone.orientation.quaternion()).unwrap_or(0.0),
            },
            setpoint: SetpointView {
                position: arr(&w.setpoint.goal_position),
                yaw: w.setpoint.goal_yaw,
            },
            user: UserView {
                chest: arr(&user.chest.position),
                facing: user.facing(),
                palm: arr(&user.palm.position),
            },
            phase: w.planner.phase,
            domain: w.planner.domain,
            gesture: w.planner.gesture.current,
            d_palm: measure(&drone.position, &user.palm.position),
            r_chest: measure(&drone.position, &user.chest.position),
            cmd_speed: w.setpoint.commanded_speed,
        }
    }
}
