//! Mode selection: position control, the two avoidance controllers, or
//! free-drive, with hysteresis on leaving free-drive.

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::controller::{clamp_speed, ControlLaw, ObstacleKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Avoidance threshold, m.
    pub d_at: f64,
    /// Free-drive activation, m.
    pub d_act: f64,
    /// Free-drive deactivation, m.
    pub d_dct: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            d_at: 0.2,
            d_act: 0.1,
            d_dct: 0.2,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("thresholds.d_at_m", self.d_at),
            ("thresholds.d_act_m", self.d_act),
            ("thresholds.d_dct_m", self.d_dct),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(field, "must be finite and > 0"));
            }
        }
        if self.d_dct <= self.d_act {
            return Err(Error::validation("thresholds.d_dct_m", "must exceed d_act_m"));
        }
        if self.d_at <= self.d_act {
            return Err(Error::validation("thresholds.d_at_m", "must exceed d_act_m"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    #[default]
    Position,
    AvoidType1,
    AvoidType2,
    FreeDrive,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Position,
        Mode::AvoidType1,
        Mode::AvoidType2,
        Mode::FreeDrive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Position => "position",
            Mode::AvoidType1 => "avoid1",
            Mode::AvoidType2 => "avoid2",
            Mode::FreeDrive => "freedrive",
        }
    }

    pub fn is_avoiding(self) -> bool {
        matches!(self, Mode::AvoidType1 | Mode::AvoidType2)
    }

    /// The controller law for this mode; `None` in free-drive.
    pub fn control_law(self) -> Option<ControlLaw> {
        match self {
            Mode::Position => Some(ControlLaw::Position),
            Mode::AvoidType1 => Some(ControlLaw::Avoid(ObstacleKind::Type1Imminent)),
            Mode::AvoidType2 => Some(ControlLaw::Avoid(ObstacleKind::Type2NonImminent)),
            Mode::FreeDrive => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Next mode given the previous one, the robot-operator distance and the
/// current obstacle class.
pub fn step_mode(prev: Mode, d_ro: f64, kind: ObstacleKind, th: &Thresholds) -> Mode {
    let held = prev == Mode::FreeDrive && d_ro <= th.d_dct;
    if held || d_ro < th.d_act {
        Mode::FreeDrive
    } else if d_ro < th.d_at {
        match kind {
            ObstacleKind::Type1Imminent => Mode::AvoidType1,
            ObstacleKind::Type2NonImminent => Mode::AvoidType2,
        }
    } else {
        Mode::Position
    }
}

/// Free-drive surrogate: hold still, or follow the operator's drag velocity
/// scaled by `compliance` and capped at `v_max`.
pub fn free_drive_velocity(drag: Option<Vector3<f64>>, compliance: f64, v_max: f64) -> Vector3<f64> {
    match drag {
        Some(d) => clamp_speed(d * compliance, v_max),
        None => Vector3::zeros(),
    }
}
