//! Run configuration: every tunable of one simulation run in one JSON file.
//!
//! All sections are optional and fall back to defaults. Unknown keys are
//! rejected so a typo cannot silently leave a parameter at its default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControllerConfig, DroneParams};
use crate::gesture::GestureConfig;
use crate::planner::PlannerConfig;
use crate::scenario::{BodyGeometry, DroneStart};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

/// How the drone follows setpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// The drone jumps exactly to each setpoint.
    Ideal,
    /// Full rigid-body dynamics under the cascaded controller.
    #[default]
    Dynamic,
}

impl std::str::FromStr for SimMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ideal" => Ok(SimMode::Ideal),
            "dynamic" => Ok(SimMode::Dynamic),
            other => Err(format!("unknown mode {other:?}, expected ideal or dynamic")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: SimMode,
    /// Overrides the scenario seed when set.
    pub seed: Option<u64>,
    /// Overrides the scenario duration when set.
    pub duration: Option<f64>,
    pub planner: PlannerConfig,
    pub gesture: GestureConfig,
    pub controller: ControllerConfig,
    pub drone: DroneParams,
    /// Body geometry for replayed user traces.
    pub body: BodyGeometry,
    /// Drone start for replayed user traces.
    pub drone_start: Option<DroneStart>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, message: String| ConfigError::Invalid {
            field: field.into(),
            message,
        };
        self.planner
            .validate()
            .map_err(|e| invalid("planner", e.to_string()))?;
        self.gesture
            .validate()
            .map_err(|e| invalid("gesture", e.to_string()))?;
        self.controller
            .validate()
            .map_err(|e| invalid("controller", e.to_string()))?;
        self.drone
            .validate()
            .map_err(|e| invalid("drone", e.to_string()))?;
        if let Some(d) = self.duration {
            if !(d > 0.0 && d.is_finite()) {
                return Err(invalid("duration", format!("must be > 0, got {d}")));
            }
        }
        let ratio = self.controller.control_rate * self.planner.delta_t;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(invalid(
                "planner.delta_t",
                "planner period must be a whole number of control ticks".into(),
            ));
        }
        let ratio = self.controller.physics_rate / self.controller.control_rate;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(invalid(
                "controller.physics_rate",
                "physics rate must be a whole multiple of the control rate".into(),
            ));
        }
        Ok(())
    }
}
