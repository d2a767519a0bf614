//! Summary statistics over a trajectory log.

use serde::{Deserialize, Serialize};

use crate::controller::RHO_MIN;
use crate::error::{Error, Result};
use crate::simulator::{TickRecord, TrajectoryLog};
use crate::supervisor::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ticks: usize,
    pub dt: f64,
    pub min_d_ro: f64,
    /// Sum of TCP displacements between consecutive records, m.
    pub path_length: f64,
    /// Time between first and last record, s.
    pub duration: f64,
    pub time_in_avoidance: f64,
    pub time_in_freedrive: f64,
    pub mode_switch_count: usize,
    /// Number of waypoint arrivals (including wrap-arounds of a cycling plan).
    pub reached_goals: usize,
    pub avoidance_episodes: usize,
    pub freedrive_episodes: usize,
    /// Ticks with d_ro at or below the force-law floor.
    pub contact_ticks: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avoidance_onset_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avoidance_onset_d_ro: Option<f64>,
}

fn episodes(records: &[TickRecord], pred: impl Fn(Mode) -> bool) -> usize {
    let mut count = 0;
    let mut inside = false;
    for r in records {
        let now = pred(r.mode);
        if now && !inside {
            count += 1;
        }
        inside = now;
    }
    count
}

pub fn compute_metrics(log: &TrajectoryLog) -> Result<MetricsReport> {
    let records = &log.records;
    let (first, last) = match (records.first(), records.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::EmptyLog),
    };
    let dt = log.dt;
    let min_d_ro = records.iter().map(|r| r.d_ro).fold(f64::INFINITY, f64::min);
    let path_length = records
        .windows(2)
        .map(|w| (w[1].tcp - w[0].tcp).norm())
        .sum();
    let avoid_ticks = records.iter().filter(|r| r.mode.is_avoiding()).count();
    let free_ticks = records.iter().filter(|r| r.mode == Mode::FreeDrive).count();
    let mode_switch_count = records.windows(2).filter(|w| w[0].mode != w[1].mode).count();
    let reached_goals = records
        .windows(2)
        .filter(|w| w[0].waypoint != w[1].waypoint)
        .count();
    let onset = records.iter().find(|r| r.mode != Mode::Position);
    Ok(MetricsReport {
        ticks: records.len(),
        dt,
        min_d_ro,
        path_length,
        duration: last.t - first.t,
        time_in_avoidance: avoid_ticks as f64 * dt,
        time_in_freedrive: free_ticks as f64 * dt,
        mode_switch_count,
        reached_goals,
        avoidance_episodes: episodes(records, Mode::is_avoiding),
        freedrive_episodes: episodes(records, |m| m == Mode::FreeDrive),
        contact_ticks: records.iter().filter(|r| r.d_ro <= RHO_MIN).count(),
        avoidance_onset_t: onset.map(|r| r.t),
        avoidance_onset_d_ro: onset.map(|r| r.d_ro),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::JointVector;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    pub(crate) fn record(t: f64, tcp: Vector3<f64>, mode: Mode, d_ro: f64, waypoint: usize) -> TickRecord {
        TickRecord {
            t,
            q: JointVector::zeros(),
            tcp,
            v_cmd: Vector3::zeros(),
            mode,
            d_ro,
            class: None,
            forces: [0.0; 3],
            waypoint,
            hand: None,
        }
    }

    #[test]
    fn empty_log_is_an_error() {
        assert_eq!(compute_metrics(&TrajectoryLog::default()), Err(Error::EmptyLog));
    }

    #[test]
    fn single_tick_has_zero_path() {
        let log = TrajectoryLog {
            dt: 0.1,
            records: vec![record(0.0, Vector3::new(1.0, 2.0, 3.0), Mode::Position, 1.0, 0)],
        };
        let m = compute_metrics(&log).unwrap();
        assert_eq!(m.path_length, 0.0);
        assert_eq!(m.duration, 0.0);
        assert_eq!(m.avoidance_onset_t, None);
    }

    #[test]
    fn straight_line_path_length() {
        let records = (0..=60)
            .map(|k| record(k as f64 * 0.1, Vector3::new(-0.3 + 0.01 * k as f64, 0.8, 0.7), Mode::Position, 1.0, 0))
            .collect();
        let m = compute_metrics(&TrajectoryLog { dt: 0.1, records }).unwrap();
        assert_relative_eq!(m.path_length, 0.6, epsilon = 1e-6);
        assert_relative_eq!(m.duration, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn counts_time_episodes_and_onset() {
        let modes = [
            Mode::Position,
            Mode::AvoidType1,
            Mode::AvoidType1,
            Mode::AvoidType2,
            Mode::FreeDrive,
            Mode::AvoidType2,
            Mode::AvoidType1,
            Mode::AvoidType2,
            Mode::AvoidType1,
            Mode::Position,
        ];
        let records = modes
            .iter()
            .enumerate()
            .map(|(k, m)| record(k as f64 * 0.1, Vector3::zeros(), *m, 0.3 - 0.01 * k as f64, usize::from(k >= 9)))
            .collect();
        let m = compute_metrics(&TrajectoryLog { dt: 0.1, records }).unwrap();
        assert_relative_eq!(m.time_in_avoidance, 0.7, epsilon = 1e-12);
        assert_relative_eq!(m.time_in_freedrive, 0.1, epsilon = 1e-12);
        assert_eq!(m.avoidance_episodes, 2);
        assert_eq!(m.freedrive_episodes, 1);
        assert_eq!(m.mode_switch_count, 8);
        assert_eq!(m.reached_goals, 1);
        assert_eq!(m.avoidance_onset_t, Some(0.1));
        assert_eq!(m.avoidance_onset_d_ro, Some(0.29));
        assert_relative_eq!(m.min_d_ro, 0.21, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn path_at_least_chord(points in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..40)) {
            let records: Vec<_> = points
                .iter()
                .enumerate()
                .map(|(k, (x, y, z))| record(k as f64 * 0.1, Vector3::new(*x, *y, *z), Mode::Position, 1.0, 0))
                .collect();
            let chord = (records.last().unwrap().tcp - records[0].tcp).norm();
            let m = compute_metrics(&TrajectoryLog { dt: 0.1, records }).unwrap();
            prop_assert!(m.path_length + 1e-12 >= chord);
        }
    }
}
