//! Artificial-potential-field velocity controller: a saturated position
//! controller, three repulsive forces around the operator's hand, and an
//! exponential blend between the two.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this TCP speed the approach angle is undefined.
pub const MIN_CLASSIFY_SPEED: f64 = 1e-6;
/// Distance floor used inside the inverse-square force laws.
pub const RHO_MIN: f64 = 0.01;
/// Robot and obstacle closer than this are treated as coincident.
pub const COINCIDENT_EPS: f64 = 1e-9;
const PARALLEL_EPS: f64 = 1e-9;
/// |n_z| above which the fallback perpendicular is built from world x
/// instead of world z.
const VERTICAL_COS: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    /// Saturated feedback magnitude, m/s.
    pub k_pc1: f64,
    /// Feedback slope, 1/m.
    pub k_pc2: f64,
    pub k_ca1: f64,
    pub k_ca2: f64,
    pub k_ca3: f64,
    pub k_rep: f64,
    /// Space-null attenuation, 1/m.
    pub tau: f64,
    /// Approach-angle threshold, rad.
    pub theta_obs: f64,
    /// TCP speed cap, m/s.
    pub v_max: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            k_pc1: 0.2,
            k_pc2: 10.0,
            k_ca1: 2e-3,
            k_ca2: 2e-3,
            k_ca3: 2e-3,
            k_rep: 1.0,
            tau: 20.0,
            theta_obs: 45f64.to_radians(),
            v_max: 0.2,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gains.k_pc1", self.k_pc1),
            ("gains.k_pc2", self.k_pc2),
            ("gains.k_ca1", self.k_ca1),
            ("gains.k_ca2", self.k_ca2),
            ("gains.k_ca3", self.k_ca3),
            ("gains.k_rep", self.k_rep),
            ("gains.tau_per_m", self.tau),
            ("gains.v_max_m_s", self.v_max),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::validation(field, "must be finite and > 0"));
            }
        }
        if !(self.theta_obs > 0.0 && self.theta_obs < std::f64::consts::FRAC_PI_2) {
            return Err(Error::validation(
                "gains.theta_obs_deg",
                "must lie strictly between 0 and 90 degrees",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInputs {
    /// TCP position.
    pub x_r: Vector3<f64>,
    /// Current TCP velocity.
    pub v_r: Vector3<f64>,
    /// Goal position.
    pub x_g: Vector3<f64>,
    /// Goal feedforward velocity.
    pub xdot_g: Vector3<f64>,
    /// Obstacle (hand) position.
    pub x_o: Vector3<f64>,
}

impl ControlInputs {
    fn all_finite(&self) -> bool {
        [self.x_r, self.v_r, self.x_g, self.xdot_g, self.x_o]
            .iter()
            .all(|v| v.iter().all(|c| c.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObstacleKind {
    /// The TCP is heading into the obstacle.
    Type1Imminent,
    Type2NonImminent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleClass {
    pub kind: ObstacleKind,
    /// Angle between v_R and the robot-to-obstacle direction. `None` when the
    /// TCP is (nearly) at rest.
    pub angle: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepulsiveBreakdown {
    pub f_rep1: Vector3<f64>,
    pub f_rep2: Vector3<f64>,
    pub f_rep3: Vector3<f64>,
    /// Sign constants of the two rotational terms (type 1 only).
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub v_rep: Vector3<f64>,
}

/// Which control law the supervisor selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlLaw {
    Position,
    Avoid(ObstacleKind),
}

/// Unit vector from `x_r` toward `x_o` and the distance between them.
fn robot_obstacle(x_r: &Vector3<f64>, x_o: &Vector3<f64>) -> Result<(Vector3<f64>, f64)> {
    let d = x_o - x_r;
    let rho = d.norm();
    // Written so that a NaN distance also lands here.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(rho >= COINCIDENT_EPS) {
        return Err(Error::DegenerateGeometry(format!(
            "robot and obstacle coincide (distance {rho:.3e} m)"
        )));
    }
    Ok((d / rho, rho))
}

/// `ẋ_G − k_PC1 · tanh(k_PC2 · (x_R − x_G))`, tanh taken per component.
pub fn position_velocity(
    x_r: &Vector3<f64>,
    x_g: &Vector3<f64>,
    xdot_g: &Vector3<f64>,
    gains: &ControlGains,
) -> Vector3<f64> {
    let e = x_r - x_g;
    xdot_g - (e * gains.k_pc2).map(f64::tanh) * gains.k_pc1
}

pub fn classify_obstacle(
    v_r: &Vector3<f64>,
    x_r: &Vector3<f64>,
    x_o: &Vector3<f64>,
    theta_obs: f64,
) -> Result<ObstacleClass> {
    let (n_ro, _) = robot_obstacle(x_r, x_o)?;
    if v_r.norm() < MIN_CLASSIFY_SPEED {
        return Ok(ObstacleClass {
            kind: ObstacleKind::Type2NonImminent,
            angle: None,
        });
    }
    // atan2 keeps precision near 0 and π, where acos of a dot product does not.
    let angle = v_r.cross(&n_ro).norm().atan2(v_r.dot(&n_ro));
    let kind = if angle < theta_obs {
        ObstacleKind::Type1Imminent
    } else {
        ObstacleKind::Type2NonImminent
    };
    Ok(ObstacleClass {
        kind,
        angle: Some(angle),
    })
}

/// Radial repulsion, pointing from the obstacle toward the robot.
pub fn repulsive_force_1(x_r: &Vector3<f64>, x_o: &Vector3<f64>, k_ca1: f64) -> Result<Vector3<f64>> {
    let (n_ro, rho) = robot_obstacle(x_r, x_o)?;
    Ok(-n_ro * (k_ca1 / rho.max(RHO_MIN).powi(2)))
}

/// Direction of a rotational repulsive term and its sign constant.
///
/// `n_b` is the normalised `(u × n) × n`, i.e. the part of `u` perpendicular
/// to `n`, reversed. `c` orients the result toward the robot base (the
/// origin). When `u` is parallel to `n` a fixed perpendicular is used.
pub fn rotational_direction(
    u: &Vector3<f64>,
    n_ro: &Vector3<f64>,
    x_r: &Vector3<f64>,
) -> (Vector3<f64>, f64) {
    let a = u.cross(n_ro);
    let n_b = if a.norm() < PARALLEL_EPS {
        let h = if n_ro.z.abs() > VERTICAL_COS {
            Vector3::x()
        } else {
            Vector3::z()
        };
        (h - n_ro * h.dot(n_ro)).normalize()
    } else {
        a.cross(n_ro).normalize()
    };
    let c = if n_b.dot(&-x_r) >= 0.0 { 1.0 } else { -1.0 };
    (n_b, c)
}

pub fn repulsive_velocity(
    inputs: &ControlInputs,
    kind: ObstacleKind,
    gains: &ControlGains,
) -> Result<RepulsiveBreakdown> {
    let (n_ro, rho) = robot_obstacle(&inputs.x_r, &inputs.x_o)?;
    let inv_sq = 1.0 / rho.max(RHO_MIN).powi(2);
    let f_rep1 = -n_ro * (gains.k_ca1 * inv_sq);
    let (f_rep2, f_rep3, c1, c2) = match kind {
        ObstacleKind::Type2NonImminent => (Vector3::zeros(), Vector3::zeros(), None, None),
        ObstacleKind::Type1Imminent => {
            let (n_b1, c1) = rotational_direction(&inputs.v_r, &n_ro, &inputs.x_r);
            let to_goal = inputs.x_g - inputs.x_r;
            let n_rg = to_goal
                .try_normalize(COINCIDENT_EPS)
                .unwrap_or_else(Vector3::zeros);
            let (n_b2, c2) = rotational_direction(&n_rg, &n_ro, &inputs.x_r);
            (
                n_b1 * (gains.k_ca2 * c1 * inv_sq),
                n_b2 * (gains.k_ca3 * c2 * inv_sq),
                Some(c1),
                Some(c2),
            )
        }
    };
    let v_rep = inputs.v_r + (f_rep1 + f_rep2 + f_rep3) * gains.k_rep;
    Ok(RepulsiveBreakdown {
        f_rep1,
        f_rep2,
        f_rep3,
        c1,
        c2,
        v_rep,
    })
}

/// `v_PC · (1 − w) + v_rep · w` with `w = exp(−τρ)`.
pub fn blend(v_pc: &Vector3<f64>, v_rep: &Vector3<f64>, rho: f64, tau: f64) -> Vector3<f64> {
    let w = (-tau * rho).exp();
    v_pc * (1.0 - w) + v_rep * w
}

/// Rescales `v` onto the ball of radius `v_max` if it lies outside.
pub fn clamp_speed(v: Vector3<f64>, v_max: f64) -> Vector3<f64> {
    let speed = v.norm();
    if speed > v_max {
        v * (v_max / speed)
    } else {
        v
    }
}

/// One controller evaluation: the commanded TCP velocity for the selected
/// law, speed-clamped, plus the repulsive breakdown when avoiding.
pub fn control_tick(
    inputs: &ControlInputs,
    gains: &ControlGains,
    law: ControlLaw,
) -> Result<(Vector3<f64>, Option<RepulsiveBreakdown>)> {
    if !inputs.all_finite() {
        return Err(Error::NumericalFailure("non-finite controller input".into()));
    }
    let v_pc = position_velocity(&inputs.x_r, &inputs.x_g, &inputs.xdot_g, gains);
    let (v, breakdown) = match law {
        ControlLaw::Position => (v_pc, None),
        ControlLaw::Avoid(kind) => {
            let b = repulsive_velocity(inputs, kind, gains)?;
            let rho = (inputs.x_o - inputs.x_r).norm();
            (blend(&v_pc, &b.v_rep, rho, gains.tau), Some(b))
        }
    };
    Ok((clamp_speed(v, gains.v_max), breakdown))
}
