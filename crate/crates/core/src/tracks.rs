//! Seeded synthetic hand tracks.
//!
//! The operator's hand rests beyond the far edge of the table, pauses, reaches
//! to a random point over the work area, lingers, and pulls back. Every leg is
//! a straight line at constant speed, so the result is a piecewise-linear track.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::simulator::ObstacleTrack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReachRetract {
    /// y coordinate of the resting hand, m.
    pub rest_y: f64,
    pub rest_x: [f64; 2],
    pub rest_z: [f64; 2],
    pub reach_x: [f64; 2],
    pub reach_y: [f64; 2],
    pub reach_z: [f64; 2],
    /// Hand speed range along each leg, m/s.
    pub speed: [f64; 2],
    /// Time spent at rest before a reach, s.
    pub pause_s: [f64; 2],
    /// Time spent at the reach point, s.
    pub linger_s: [f64; 2],
}

impl Default for ReachRetract {
    fn default() -> Self {
        Self {
            rest_y: 1.3,
            rest_x: [-0.4, 0.4],
            rest_z: [0.5, 0.9],
            reach_x: [-0.45, 0.45],
            reach_y: [0.45, 1.0],
            reach_z: [0.5, 0.9],
            speed: [0.2, 1.0],
            pause_s: [0.5, 3.0],
            linger_s: [0.0, 1.5],
        }
    }
}

/// Shortest hold kept as a separate knot; shorter holds are dropped so knot
/// times stay strictly increasing.
const MIN_HOLD_S: f64 = 1e-3;

impl ReachRetract {
    pub fn max_speed(&self) -> f64 {
        self.speed[1]
    }

    /// Knots covering at least `[0, duration_s]`.
    pub fn knots(&self, seed: u64, duration_s: f64) -> Vec<(f64, Vector3<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r: [f64; 2]| {
            if r[1] > r[0] {
                rng.random_range(r[0]..r[1])
            } else {
                r[0]
            }
        };
        let mut knots = vec![(0.0, Vector3::new(draw(self.rest_x), self.rest_y, draw(self.rest_z)))];
        let push_move = |knots: &mut Vec<(f64, Vector3<f64>)>, p: Vector3<f64>, speed: f64| {
            let (t0, p0) = *knots.last().unwrap();
            let dt = ((p - p0).norm() / speed).max(MIN_HOLD_S);
            knots.push((t0 + dt, p));
        };
        let push_hold = |knots: &mut Vec<(f64, Vector3<f64>)>, h: f64| {
            if h >= MIN_HOLD_S {
                let (t0, p0) = *knots.last().unwrap();
                knots.push((t0 + h, p0));
            }
        };
        while knots.last().unwrap().0 < duration_s {
            let pause = draw(self.pause_s);
            push_hold(&mut knots, pause);
            let reach = Vector3::new(draw(self.reach_x), draw(self.reach_y), draw(self.reach_z));
            let out_speed = draw(self.speed);
            push_move(&mut knots, reach, out_speed);
            let linger = draw(self.linger_s);
            push_hold(&mut knots, linger);
            let rest = Vector3::new(draw(self.rest_x), self.rest_y, draw(self.rest_z));
            let back_speed = draw(self.speed);
            push_move(&mut knots, rest, back_speed);
        }
        knots
    }

    pub fn track(&self, seed: u64, duration_s: f64) -> ObstacleTrack {
        ObstacleTrack::PiecewiseLinear(self.knots(seed, duration_s))
    }
}

/// Largest straight-line speed between consecutive knots.
pub fn max_knot_speed(knots: &[(f64, Vector3<f64>)]) -> f64 {
    knots
        .windows(2)
        .map(|w| (w[1].1 - w[0].1).norm() / (w[1].0 - w[0].0))
        .fold(0.0, f64::max)
}
