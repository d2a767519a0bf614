//! The simulation side of the bridge: one owner of the simulator, fed from
//! the shared input cell and paced against the wall clock.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use apfsim_core::scenario::Scenario;
use apfsim_core::simulator::{ObstacleTrack, Simulator};
use apfsim_core::supervisor::Mode;
use apfsim_core::{Error, Result};

use crate::input::SharedInput;
use crate::protocol::{ConfigMessage, ServerMessage, StateMessage};

pub struct LiveSession {
    sim: Simulator,
    input: SharedInput,
    config: ConfigMessage,
    max_ticks: u64,
}

impl LiveSession {
    /// Builds a session for a scenario with a live track. The input cell
    /// starts at the track's initial hand position.
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let initial = match &scenario.track {
            ObstacleTrack::Live { initial } => *initial,
            _ => return Err(Error::validation("track.kind", "the live bridge needs a live track")),
        };
        let cfg = scenario.config.clone();
        let config = ConfigMessage::new(&scenario.name, cfg.dt, &cfg.thresholds, &scenario.plan.waypoints);
        let max_ticks = cfg.max_ticks();
        let sim = Simulator::new(cfg, scenario.track.clone(), scenario.plan.clone())?;
        Ok(Self {
            sim,
            input: SharedInput::new(initial),
            config,
            max_ticks,
        })
    }

    pub fn input(&self) -> &SharedInput {
        &self.input
    }

    pub fn config(&self) -> &ConfigMessage {
        &self.config
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn is_finished(&self) -> bool {
        self.sim.is_complete() || self.sim.ticks() >= self.max_ticks
    }

    /// Applies whatever input is current, advances one tick and returns the
    /// state for that tick. A drag that arrives outside free-drive is spent.
    pub fn tick(&mut self) -> Result<StateMessage> {
        let input = self.input.latest();
        self.sim.set_live_input(input.hand, input.drag);
        let record = self.sim.step().map_err(|f| f.error)?;
        if record.mode != Mode::FreeDrive && input.drag.is_some() {
            self.input.clear_drag_if_unchanged(input.seq);
        }
        Ok(StateMessage::from_record(&record))
    }
}

/// Wall-clock spacing between tick starts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickStats {
    pub ticks: u64,
    pub min_interval: Option<Duration>,
    pub max_interval: Option<Duration>,
    pub total: Duration,
}

impl TickStats {
    fn push(&mut self, interval: Duration) {
        self.min_interval = Some(self.min_interval.map_or(interval, |m| m.min(interval)));
        self.max_interval = Some(self.max_interval.map_or(interval, |m| m.max(interval)));
        self.total += interval;
    }

    pub fn intervals(&self) -> u64 {
        self.ticks.saturating_sub(1)
    }

    pub fn mean_interval(&self) -> Option<Duration> {
        let n = self.intervals();
        (n > 0).then(|| self.total / n as u32)
    }

    /// Largest relative deviation of any interval from `dt`.
    pub fn worst_deviation(&self, dt: Duration) -> Option<f64> {
        let (lo, hi) = (self.min_interval?, self.max_interval?);
        let dt_s = dt.as_secs_f64();
        Some(((lo.as_secs_f64() - dt_s).abs()).max((hi.as_secs_f64() - dt_s).abs()) / dt_s)
    }
}

/// Runs `session` in real time until `stop` is set or the run ends,
/// handing every tick's frame to `publish`. Returns early on a simulation
/// error.
pub fn run_paced(
    mut session: LiveSession,
    stop: &AtomicBool,
    stats: &Mutex<TickStats>,
    mut publish: impl FnMut(ServerMessage),
) -> Result<()> {
    let dt = Duration::from_secs_f64(session.dt());
    let mut deadline = Instant::now();
    let mut last_start: Option<Instant> = None;
    while !stop.load(Ordering::Relaxed) && !session.is_finished() {
        let now = Instant::now();
        if now < deadline {
            std::thread::sleep(deadline - now);
        } else if now > deadline + dt {
            // Fell more than a tick behind (suspended process, debugger):
            // resume from now rather than bursting to catch up.
            deadline = now;
        }
        let start = Instant::now();
        {
            let mut s = stats.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(prev) = last_start {
                s.push(start - prev);
            }
            s.ticks += 1;
        }
        last_start = Some(start);
        let state = session.tick()?;
        publish(ServerMessage::State(state));
        deadline += dt;
    }
    Ok(())
}

/// Convenience for callers that share the stop flag and stats.
#[derive(Debug, Clone, Default)]
pub struct LoopControl {
    pub stop: Arc<AtomicBool>,
    pub stats: Arc<Mutex<TickStats>>,
}

impl LoopControl {
    pub fn stats(&self) -> TickStats {
        *self.stats.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn request_stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::input::apply_hand_input;
    use crate::protocol::HandMessage;
    use nalgebra::Vector3;

    fn session() -> LiveSession {
        LiveSession::new(&Scenario::builtin("live").unwrap()).unwrap()
    }

    fn tcp(s: &LiveSession) -> Vector3<f64> {
        s.simulator().state().tcp.position
    }

    #[test]
    fn needs_a_live_track() {
        let err = LiveSession::new(&Scenario::builtin("triangle").unwrap()).err().unwrap();
        assert!(matches!(err, Error::Validation { ref field, .. } if field == "track.kind"));
    }

    #[test]
    fn no_input_means_far_hand() {
        let mut s = session();
        for _ in 0..5 {
            let st = s.tick().unwrap();
            assert_eq!(st.hand, [10.0; 3]);
            assert_eq!(st.mode, Mode::Position);
        }
    }

    #[test]
    fn hand_in_band_switches_to_avoidance_next_tick() {
        let mut s = session();
        s.tick().unwrap();
        let pos = tcp(&s) + Vector3::new(0.15, 0.0, 0.0);
        apply_hand_input(s.input(), &HandMessage::new(pos, None)).unwrap();
        let st = s.tick().unwrap();
        assert_eq!(st.hand, <[f64; 3]>::from(pos));
        assert!(st.mode.is_avoiding(), "mode {}", st.mode);
    }

    #[test]
    fn close_hand_switches_to_freedrive_next_tick() {
        let mut s = session();
        s.tick().unwrap();
        let pos = tcp(&s) + Vector3::new(0.05, 0.0, 0.0);
        apply_hand_input(s.input(), &HandMessage::new(pos, None)).unwrap();
        assert_eq!(s.tick().unwrap().mode, Mode::FreeDrive);
    }

    #[test]
    fn drag_outside_freedrive_is_spent() {
        let mut s = session();
        s.tick().unwrap();
        let far = Vector3::new(10.0, 10.0, 10.0) / 3f64.sqrt() * 0.99;
        apply_hand_input(s.input(), &HandMessage::new(far, Some(Vector3::new(0.0, 0.0, 0.1)))).unwrap();
        let mut plain = session();
        plain.tick().unwrap();
        apply_hand_input(plain.input(), &HandMessage::new(far, None)).unwrap();
        let (a, b) = (s.tick().unwrap(), plain.tick().unwrap());
        assert_eq!(a, b);
        assert_eq!(s.input().latest().drag, None);
    }

    #[test]
    fn drag_moves_tcp_in_freedrive() {
        let mut s = session();
        s.tick().unwrap();
        let close = tcp(&s) + Vector3::new(0.05, 0.0, 0.0);
        let drag = Vector3::new(0.0, 0.0, 0.05);
        apply_hand_input(s.input(), &HandMessage::new(close, Some(drag))).unwrap();
        let before = tcp(&s);
        let st = s.tick().unwrap();
        assert_eq!(st.mode, Mode::FreeDrive);
        assert_eq!(st.v, <[f64; 3]>::from(drag));
        assert!((tcp(&s) - before).z > 0.0);
        // Held input keeps pulling.
        assert_eq!(s.tick().unwrap().v, <[f64; 3]>::from(drag));
    }

    #[test]
    fn paced_loop_stops_on_flag() {
        let ctl = LoopControl::default();
        let mut frames = 0;
        let stop = ctl.stop.clone();
        run_paced(session(), &ctl.stop, &ctl.stats, |_| {
            frames += 1;
            if frames == 3 {
                stop.store(true, Ordering::Relaxed);
            }
        })
        .unwrap();
        assert_eq!(frames, 3);
        let st = ctl.stats();
        assert_eq!(st.ticks, 3);
        assert!(st.mean_interval().unwrap() >= Duration::from_millis(90));
    }
}
