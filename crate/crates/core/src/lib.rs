//! Simulation core for palm-landing drone interaction.
//!
//! A virtual user stretches or bends an arm; a gesture recognizer turns the
//! chest-hand distance into STAY/APPROACH; a four-domain planner produces
//! setpoints that approach the palm while keeping clear of the chest; a
//! rigid-body drone model under a cascaded PID controller follows them.
//! [`sim::Simulation`] ties the pieces together at three rates and
//! [`metrics`] evaluates the recorded trace.

// Validation uses `!(x > lo)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dynamics;
pub mod gesture;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod scenario;
pub mod sim;

pub use config::{ConfigError, RunConfig, SimMode};
pub use dynamics::{Controller, ControllerConfig, DroneParams, DroneState};
pub use gesture::{Gesture, GestureConfig, GestureState, GestureTracker};
pub use metrics::{MetricsReport, RunSample, RunTrace};
pub use model::{DistanceMode, Pose, UserModel, Vec3, WorldState};
pub use planner::{Domain, MissionPhase, Planner, PlannerConfig, PlannerStatus, Setpoint};
pub use scenario::{LiveUser, PalmMode, Scenario, UserSource, UserTrace};
pub use sim::{run_scenario, RunOutput, SimError, Simulation};
