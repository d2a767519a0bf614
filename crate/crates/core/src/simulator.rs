//! Fixed-step closed-loop simulation: hand track, supervisor, controller and
//! kinematics advanced together, one record per tick.

use nalgebra::{Vector3, Vector6};

use crate::controller::{classify_obstacle, control_tick, ControlGains, ControlInputs, ObstacleKind};
use crate::error::{Error, Result};
use crate::kinematics::{
    forward_kinematics, jacobian, solve_joint_rates, JointState, JointVector, Pose, RobotModel,
};
use crate::supervisor::{free_drive_velocity, step_mode, Mode, Thresholds};

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_DAMPING: f64 = 0.01;
pub const DEFAULT_TOLERANCE: f64 = 0.01;

/// Source of the hand position over time.
#[derive(Debug, Clone, PartialEq)]
pub enum ObstacleTrack {
    Static(Vector3<f64>),
    /// Knots `(t, position)` with strictly increasing `t`; held constant
    /// before the first and after the last knot.
    PiecewiseLinear(Vec<(f64, Vector3<f64>)>),
    /// Fed at run time through [`Simulator::set_live_input`]; `initial` is
    /// used until the first update.
    Live { initial: Vector3<f64> },
}

impl ObstacleTrack {
    pub fn validate(&self) -> Result<()> {
        let finite = |p: &Vector3<f64>| p.iter().all(|c| c.is_finite());
        match self {
            ObstacleTrack::Static(p) | ObstacleTrack::Live { initial: p } => {
                if !finite(p) {
                    return Err(Error::validation("track.position", "must be finite"));
                }
            }
            ObstacleTrack::PiecewiseLinear(knots) => {
                if knots.is_empty() {
                    return Err(Error::validation("track.knots", "needs at least one knot"));
                }
                for (i, (t, p)) in knots.iter().enumerate() {
                    if !t.is_finite() || !finite(p) {
                        return Err(Error::validation(format!("track.knots[{i}]"), "must be finite"));
                    }
                    if i > 0 && *t <= knots[i - 1].0 {
                        return Err(Error::validation(
                            format!("track.knots[{i}].t"),
                            "timestamps must be strictly increasing",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Hand position at time `t` (ignores live updates).
    pub fn sample(&self, t: f64) -> Vector3<f64> {
        match self {
            ObstacleTrack::Static(p) => *p,
            ObstacleTrack::Live { initial } => *initial,
            ObstacleTrack::PiecewiseLinear(knots) => {
                let i = knots.partition_point(|(tk, _)| *tk <= t);
                if i == 0 {
                    return knots[0].1;
                }
                if i == knots.len() {
                    return knots[i - 1].1;
                }
                let (t0, p0) = knots[i - 1];
                let (t1, p1) = knots[i];
                p0 + (p1 - p0) * ((t - t0) / (t1 - t0))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskPlan {
    pub waypoints: Vec<Vector3<f64>>,
    /// Distance at which a waypoint counts as reached, m.
    pub arrival_tolerance: f64,
    /// Restart from the first waypoint after the last one.
    pub cycle: bool,
    /// Pause at each reached waypoint, s.
    pub dwell_s: f64,
}

impl TaskPlan {
    pub fn new(waypoints: Vec<Vector3<f64>>) -> Self {
        Self {
            waypoints,
            arrival_tolerance: DEFAULT_TOLERANCE,
            cycle: false,
            dwell_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::validation("plan.waypoints", "needs at least one waypoint"));
        }
        if let Some(i) = self
            .waypoints
            .iter()
            .position(|w| !w.iter().all(|c| c.is_finite()))
        {
            return Err(Error::validation(format!("plan.waypoints[{i}]"), "must be finite"));
        }
        if !(self.arrival_tolerance.is_finite() && self.arrival_tolerance > 0.0) {
            return Err(Error::validation("plan.tolerance", "must be finite and > 0"));
        }
        if !(self.dwell_s.is_finite() && self.dwell_s >= 0.0) {
            return Err(Error::validation("plan.dwell_s", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub duration_max: f64,
    pub gains: ControlGains,
    pub thresholds: Thresholds,
    pub robot: RobotModel,
    pub initial_q: JointVector,
    /// Damped least-squares factor λ.
    pub damping: f64,
    /// Scale from operator drag velocity to TCP velocity in free-drive.
    pub freedrive_compliance: f64,
}

impl SimConfig {
    pub fn new(robot: RobotModel, initial_q: JointVector) -> Self {
        Self {
            dt: DEFAULT_DT,
            duration_max: 60.0,
            gains: ControlGains::default(),
            thresholds: Thresholds::default(),
            robot,
            initial_q,
            damping: DEFAULT_DAMPING,
            freedrive_compliance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::validation("sim.dt", "must be finite and > 0"));
        }
        if !(self.duration_max.is_finite() && self.duration_max > 0.0) {
            return Err(Error::validation("sim.duration_max", "must be finite and > 0"));
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(Error::validation("sim.damping", "must be finite and >= 0"));
        }
        if !(self.freedrive_compliance.is_finite() && self.freedrive_compliance >= 0.0) {
            return Err(Error::validation("sim.freedrive_compliance", "must be finite and >= 0"));
        }
        self.gains.validate()?;
        self.thresholds.validate()?;
        self.robot.validate()?;
        if let Some((i, q)) = self.robot.limit_violation(&self.initial_q) {
            return Err(Error::validation(
                format!("sim.initial_q[{i}]"),
                format!("{q} rad lies outside the joint limits"),
            ));
        }
        Ok(())
    }

    /// Number of ticks that fit in `duration_max`.
    pub fn max_ticks(&self) -> u64 {
        (self.duration_max / self.dt - 1e-9).ceil().max(0.0) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub joints: JointState,
    pub tcp: Pose,
    /// Last commanded TCP velocity, used as v_R.
    pub v_tcp: Vector3<f64>,
    pub mode: Mode,
    pub hand: Vector3<f64>,
    pub d_ro: f64,
    pub active_waypoint: usize,
}

/// One logged tick. Position, distance and mode describe the state at `t`;
/// `v_cmd` is the command applied over `[t, t + dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub q: JointVector,
    pub tcp: Vector3<f64>,
    pub v_cmd: Vector3<f64>,
    pub mode: Mode,
    pub d_ro: f64,
    pub class: Option<ObstacleKind>,
    /// Magnitudes of the three repulsive terms (zero outside avoidance).
    pub forces: [f64; 3],
    pub waypoint: usize,
    /// Hand position used for this tick; not stored in log files.
    pub hand: Option<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub dt: f64,
    pub records: Vec<TickRecord>,
}

/// A tick that failed after its command was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub record: TickRecord,
    pub error: Error,
}

/// A run that stopped early, with everything logged up to the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub error: Error,
    pub log: TrajectoryLog,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} ticks)", self.error, self.log.records.len())
    }
}

impl std::error::Error for RunError {}

struct Observation {
    hand: Vector3<f64>,
    d_ro: f64,
    class: Option<ObstacleKind>,
    mode: Mode,
}

pub struct Simulator {
    cfg: SimConfig,
    track: ObstacleTrack,
    plan: TaskPlan,
    state: SimState,
    tick: u64,
    dwell_left: u64,
    complete: bool,
    live_hand: Option<Vector3<f64>>,
    drag: Option<Vector3<f64>>,
}

impl Simulator {
    pub fn new(cfg: SimConfig, track: ObstacleTrack, plan: TaskPlan) -> Result<Self> {
        cfg.validate()?;
        track.validate()?;
        plan.validate()?;
        let q = cfg.initial_q;
        let tcp = forward_kinematics(&cfg.robot, &q);
        let hand = track.sample(0.0);
        let state = SimState {
            t: 0.0,
            joints: JointState { q, q_dot: JointVector::zeros() },
            tcp,
            v_tcp: Vector3::zeros(),
            mode: Mode::Position,
            hand,
            d_ro: (tcp.position - hand).norm(),
            active_waypoint: 0,
        };
        Ok(Self {
            cfg,
            track,
            plan,
            state,
            tick: 0,
            dwell_left: 0,
            complete: false,
            live_hand: None,
            drag: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &TaskPlan {
        &self.plan
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    /// True once a non-cycling plan has reached (and dwelt at) its last waypoint.
    pub fn is_complete(&self) -> bool {
        self.complete
    }

    /// Latest operator input for a live track. A drag velocity stays in
    /// effect until replaced while the robot is in free-drive; outside
    /// free-drive it is discarded at the next tick.
    pub fn set_live_input(&mut self, hand: Vector3<f64>, drag: Option<Vector3<f64>>) {
        self.live_hand = Some(hand);
        self.drag = drag;
    }

    fn hand_at(&self, t: f64) -> Vector3<f64> {
        match (&self.track, self.live_hand) {
            (ObstacleTrack::Live { .. }, Some(h)) => h,
            (track, _) => track.sample(t),
        }
    }

    fn time_of(&self, tick: u64) -> f64 {
        tick as f64 * self.cfg.dt
    }

    fn observe(&self, t: f64) -> Observation {
        let hand = self.hand_at(t);
        let x_r = self.state.tcp.position;
        let d_ro = (x_r - hand).norm();
        let class = classify_obstacle(&self.state.v_tcp, &x_r, &hand, self.cfg.gains.theta_obs)
            .ok()
            .map(|c| c.kind);
        let kind = class.unwrap_or(ObstacleKind::Type2NonImminent);
        let mode = step_mode(self.state.mode, d_ro, kind, &self.cfg.thresholds);
        Observation { hand, d_ro, class, mode }
    }

    fn goal_index(&self) -> usize {
        self.state.active_waypoint.min(self.plan.waypoints.len() - 1)
    }

    /// Advances one tick and returns its record.
    pub fn step(&mut self) -> Result<TickRecord, Box<StepFailure>> {
        let t = self.time_of(self.tick);
        let obs = self.observe(t);
        let x_r = self.state.tcp.position;
        let goal = self.plan.waypoints[self.goal_index()];

        let mut record = TickRecord {
            t,
            q: self.state.joints.q,
            tcp: x_r,
            v_cmd: Vector3::zeros(),
            mode: obs.mode,
            d_ro: obs.d_ro,
            class: obs.class,
            forces: [0.0; 3],
            waypoint: self.state.active_waypoint,
            hand: Some(obs.hand),
        };

        if obs.mode != Mode::FreeDrive {
            self.drag = None;
        }
        let command = match obs.mode.control_law() {
            None => Ok(free_drive_velocity(
                self.drag,
                self.cfg.freedrive_compliance,
                self.cfg.gains.v_max,
            )),
            Some(law) => {
                let inputs = ControlInputs {
                    x_r,
                    v_r: self.state.v_tcp,
                    x_g: goal,
                    xdot_g: Vector3::zeros(),
                    x_o: obs.hand,
                };
                control_tick(&inputs, &self.cfg.gains, law).map(|(v, b)| {
                    if let Some(b) = b {
                        record.forces = [b.f_rep1.norm(), b.f_rep2.norm(), b.f_rep3.norm()];
                    }
                    v
                })
            }
        };
        let v_cmd = match command {
            Ok(v) => v,
            Err(error) => return Err(Box::new(StepFailure { record, error })),
        };
        record.v_cmd = v_cmd;

        let q = self.state.joints.q;
        let j = jacobian(&self.cfg.robot, &q);
        let twist = Vector6::new(v_cmd.x, v_cmd.y, v_cmd.z, 0.0, 0.0, 0.0);
        let mut q_dot = match solve_joint_rates(&j, &twist, self.cfg.damping) {
            Ok(q_dot) => q_dot,
            Err(error) => return Err(Box::new(StepFailure { record, error })),
        };
        for (rate, limit) in q_dot.iter_mut().zip(self.cfg.robot.rate_limits) {
            *rate = rate.clamp(-limit, limit);
        }
        let q_next = q + q_dot * self.cfg.dt;
        let t_next = self.time_of(self.tick + 1);
        if let Some((joint, value)) = self.cfg.robot.limit_violation(&q_next) {
            let lim = self.cfg.robot.joint_limits[joint];
            let error = Error::JointLimitViolation {
                joint: joint + 1,
                value,
                min: lim.min,
                max: lim.max,
                t: t_next,
            };
            return Err(Box::new(StepFailure { record, error }));
        }

        let tcp = forward_kinematics(&self.cfg.robot, &q_next);
        self.tick += 1;
        self.state.t = t_next;
        self.state.joints = JointState { q: q_next, q_dot };
        self.state.tcp = tcp;
        self.state.v_tcp = v_cmd;
        self.state.mode = obs.mode;
        self.state.hand = self.hand_at(t_next);
        self.state.d_ro = (tcp.position - self.state.hand).norm();
        self.advance_waypoint();
        Ok(record)
    }

    fn advance_waypoint(&mut self) {
        if self.complete {
            return;
        }
        let n = self.plan.waypoints.len();
        if self.dwell_left == 0 {
            let target = self.plan.waypoints[self.state.active_waypoint];
            if (self.state.tcp.position - target).norm() >= self.plan.arrival_tolerance {
                return;
            }
            self.dwell_left = (self.plan.dwell_s / self.cfg.dt).round() as u64 + 1;
        }
        self.dwell_left -= 1;
        if self.dwell_left > 0 {
            return;
        }
        let next = self.state.active_waypoint + 1;
        if next < n {
            self.state.active_waypoint = next;
        } else if self.plan.cycle {
            self.state.active_waypoint = 0;
        } else {
            self.state.active_waypoint = n;
            self.complete = true;
        }
    }

    /// Record describing the current state with no command applied.
    pub fn terminal_record(&self) -> TickRecord {
        let t = self.time_of(self.tick);
        let obs = self.observe(t);
        TickRecord {
            t,
            q: self.state.joints.q,
            tcp: self.state.tcp.position,
            v_cmd: Vector3::zeros(),
            mode: obs.mode,
            d_ro: obs.d_ro,
            class: obs.class,
            forces: [0.0; 3],
            waypoint: self.state.active_waypoint,
            hand: Some(obs.hand),
        }
    }

    /// Runs to plan completion (plus one terminal record) or `duration_max`.
    pub fn run_to_end(&mut self) -> Result<TrajectoryLog, RunError> {
        let mut log = TrajectoryLog {
            dt: self.cfg.dt,
            records: Vec::with_capacity(self.cfg.max_ticks() as usize + 1),
        };
        let max_ticks = self.cfg.max_ticks();
        while self.tick < max_ticks && !self.complete {
            match self.step() {
                Ok(record) => log.records.push(record),
                Err(failure) => {
                    log.records.push(failure.record);
                    return Err(RunError { error: failure.error, log });
                }
            }
        }
        if self.complete {
            log.records.push(self.terminal_record());
        }
        Ok(log)
    }
}

pub fn run(cfg: SimConfig, track: ObstacleTrack, plan: TaskPlan) -> Result<TrajectoryLog, RunError> {
    let mut sim = Simulator::new(cfg, track, plan).map_err(|error| RunError {
        error,
        log: TrajectoryLog::default(),
    })?;
    sim.run_to_end()
}

/// Finite-difference TCP velocity between two consecutive positions.
pub fn tcp_velocity_estimate(prev_tcp: &Vector3<f64>, cur_tcp: &Vector3<f64>, dt: f64) -> Vector3<f64> {
    (cur_tcp - prev_tcp) / dt
}
