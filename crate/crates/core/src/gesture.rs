//! Arm-gesture classification.
//!
//! A stretched arm (palm far from the chest) means APPROACH, a bent arm means
//! STAY. The raw threshold rule is wrapped in a hysteresis band and a dwell
//! time so tracking noise around the threshold does not make the drone
//! stutter. Setting both to zero gives back the bare threshold rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{horizontal_distance, UserModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GestureError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid gesture config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Gesture {
    Stay,
    Approach,
}

impl Gesture {
    pub fn as_str(self) -> &'static str {
        match self {
            Gesture::Stay => "STAY",
            Gesture::Approach => "APPROACH",
        }
    }
}

impl std::str::FromStr for Gesture {
    type Err = GestureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "STAY" => Ok(Gesture::Stay),
            "APPROACH" => Ok(Gesture::Approach),
            other => Err(GestureError::InvalidInput(format!("unknown gesture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GestureConfig {
    /// Chest-hand distance separating a bent arm from a stretched one.
    pub d_th: f64,
    pub hysteresis_band: f64,
    /// Seconds the opposite condition must persist before switching.
    pub min_hold: f64,
}

impl Default for GestureConfig {
    fn default() -> Self {
        Self {
            d_th: 0.30,
            hysteresis_band: 0.04,
            min_hold: 0.2,
        }
    }
}

impl GestureConfig {
    /// The bare threshold rule, with no hysteresis or dwell.
    pub fn threshold_only(d_th: f64) -> Self {
        Self {
            d_th,
            hysteresis_band: 0.0,
            min_hold: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GestureError> {
        if !(self.d_th > 0.0 && self.d_th.is_finite()) {
            return Err(GestureError::Config(format!("d_th must be > 0, got {}", self.d_th)));
        }
        if !(self.hysteresis_band >= 0.0 && self.hysteresis_band < self.d_th) {
            return Err(GestureError::Config(format!(
                "hysteresis_band must be in [0, d_th), got {}",
                self.hysteresis_band
            )));
        }
        if !(self.min_hold >= 0.0 && self.min_hold.is_finite()) {
            return Err(GestureError::Config(format!(
                "min_hold must be >= 0, got {}",
                self.min_hold
            )));
        }
        Ok(())
    }

    fn upper(&self) -> f64 {
        self.d_th + self.hysteresis_band / 2.0
    }

    fn lower(&self) -> f64 {
        self.d_th - self.hysteresis_band / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureState {
    pub current: Gesture,
    pub last_transition_t: f64,
    /// Time at which the condition for the opposite gesture started holding.
    pub pending_since: Option<f64>,
}

impl GestureState {
    pub fn new(current: Gesture, t: f64) -> Self {
        Self {
            current,
            last_transition_t: t,
            pending_since: None,
        }
    }
}

impl Default for GestureState {
    fn default() -> Self {
        Self::new(Gesture::Stay, 0.0)
    }
}

/// Horizontal distance between the tracked palm and the chest.
///
/// The tracker reports the wrist device; the wrist-to-palm offset is not
/// modeled.
pub fn chest_hand_distance(user: &UserModel) -> f64 {
    horizontal_distance(&user.palm.position, &user.chest.position)
}

/// Slack on the dwell comparison so sampled clocks are not off by one tick.
pub const DWELL_EPS: f64 = 1e-9;

pub fn classify(
    d: f64,
    prev: &GestureState,
    t: f64,
    cfg: &GestureConfig,
) -> Result<GestureState, GestureError> {
    if !(d >= 0.0) || !d.is_finite() {
        return Err(GestureError::InvalidInput(format!(
            "chest-hand distance must be finite and >= 0, got {d}"
        )));
    }
    if !(t >= prev.last_transition_t) {
        return Err(GestureError::InvalidInput(format!(
            "time {t} precedes last transition at {}",
            prev.last_transition_t
        )));
    }

    // A tie at d_th counts as STAY.
    let wants = match prev.current {
        Gesture::Stay if d > cfg.upper() => Some(Gesture::Approach),
        Gesture::Approach if d <= cfg.lower() => Some(Gesture::Stay),
        _ => None,
    };

    let Some(next) = wants else {
        return Ok(GestureState {
            pending_since: None,
            ..*prev
        });
    };
    let since = prev.pending_since.unwrap_or(t);
    if t - since >= cfg.min_hold - DWELL_EPS {
        Ok(GestureState::new(next, t))
    } else {
        Ok(GestureState {
            pending_since: Some(since),
            ..*prev
        })
    }
}

/// Stateful wrapper around [`classify`] for a control loop.
#[derive(Debug, Clone)]
pub struct GestureTracker {
    cfg: GestureConfig,
    state: GestureState,
}

impl GestureTracker {
    pub fn new(cfg: GestureConfig) -> Result<Self, GestureError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: GestureState::default(),
        })
    }

    pub fn config(&self) -> &GestureConfig {
        &self.cfg
    }

    pub fn set_config(&mut self, cfg: GestureConfig) -> Result<(), GestureError> {
        cfg.validate()?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn state(&self) -> &GestureState {
        &self.state
    }

    pub fn update(&mut self, user: &UserModel, t: f64) -> Result<GestureState, GestureError> {
        self.state = classify(chest_hand_distance(user), &self.state, t, &self.cfg)?;
        Ok(self.state)
    }

    /// Forces STAY immediately, bypassing hysteresis and dwell.
    pub fn force(&mut self, gesture: Gesture, t: f64) {
        if self.state.current != gesture {
            self.state = GestureState::new(gesture, t.max(self.state.last_transition_t));
        } else {
            self.state.pending_since = None;
        }
    }

    pub fn reset(&mut self, t: f64) {
        self.state = GestureState::new(Gesture::Stay, t);
    }
}
