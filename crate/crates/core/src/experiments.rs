//! Scripted experiments: parameter sweeps on the straight A-to-B move, the
//! triangle task, the pick-and-place task, and randomized operator tracks.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logio::write_log_file;
use crate::metrics::{compute_metrics, MetricsReport};
use crate::scenario::{parse_toml, Origin, Scenario, ScenarioFile};
use crate::simulator::{run, ObstacleTrack, RunError, TaskPlan, TrajectoryLog};
use crate::tracks::ReachRetract;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "theta_obs_deg")]
    ThetaObs,
    #[serde(rename = "d_at_m")]
    DAt,
}

impl SweepParameter {
    pub fn key(self) -> &'static str {
        match self {
            SweepParameter::ThetaObs => "theta_obs_deg",
            SweepParameter::DAt => "d_at_m",
        }
    }

    /// Copy of `file` with the parameter set to `value`.
    pub fn apply(self, file: &ScenarioFile, value: f64) -> ScenarioFile {
        let mut file = file.clone();
        match self {
            SweepParameter::ThetaObs => file.gains.theta_obs_deg = value,
            SweepParameter::DAt => file.thresholds.d_at_m = value,
        }
        file
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    scenario: String,
    parameter: SweepParameter,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub base: Scenario,
}

impl SweepSpec {
    /// Builds a sweep, checking every value against the scenario's own
    /// validation rules.
    pub fn new(parameter: SweepParameter, values: Vec<f64>, base: Scenario) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("values", "needs at least one value"));
        }
        for v in &values {
            base.reresolve(parameter.apply(&base.file, *v))
                .map_err(|e| match e {
                    Error::Validation { field, constraint } => {
                        Error::validation(field, format!("{constraint} (sweep value {v})"))
                    }
                    other => other,
                })?;
        }
        Ok(Self { parameter, values, base })
    }

    pub fn load(origin: &Origin) -> Result<Self> {
        let text = origin.read()?;
        let file: SweepFile = parse_toml(&text, origin)?;
        if file.values.len() < 2 {
            return Err(Error::validation("values", "a sweep needs at least two values"));
        }
        let base = Scenario::load(&origin.join(&file.scenario))?;
        Self::new(file.parameter, file.values, base)
    }

    pub fn scenario_for(&self, value: f64) -> Result<Scenario> {
        self.base.reresolve(self.parameter.apply(&self.base.file, value))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub report: MetricsReport,
    pub log: TrajectoryLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub value: f64,
    pub outcome: RunOutcome,
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunOutcome, RunError> {
    let log = run(scenario.config.clone(), scenario.track.clone(), scenario.plan.clone())?;
    let report = compute_metrics(&log).map_err(|error| RunError { error, log: log.clone() })?;
    Ok(RunOutcome {
        scenario: scenario.clone(),
        report,
        log,
    })
}

/// Runs every sweep value in parallel; results keep the input order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRun>, RunError> {
    spec.values
        .par_iter()
        .map(|&value| {
            let scenario = spec.scenario_for(value).map_err(|error| RunError {
                error,
                log: TrajectoryLog::default(),
            })?;
            run_scenario(&scenario).map(|outcome| SweepRun { value, outcome })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn builtin(name: &str) -> Result<Scenario, RunError> {
    Scenario::builtin(name).map_err(|error| RunError {
        error,
        log: TrajectoryLog::default(),
    })
}

fn config_error(error: Error) -> RunError {
    RunError {
        error,
        log: TrajectoryLog::default(),
    }
}

/// θ_OBS sweep on the shipped A-to-B scenario with d_AT held at 0.2 m.
pub fn run_theta_sweep(values_deg: &[f64]) -> Result<Vec<SweepRun>, RunError> {
    let base = builtin("calibration")?;
    let mut file = base.file.clone();
    file.thresholds.d_at_m = 0.2;
    let base = base.reresolve(file).map_err(config_error)?;
    let spec = SweepSpec::new(SweepParameter::ThetaObs, values_deg.to_vec(), base).map_err(config_error)?;
    run_sweep(&spec)
}

/// d_AT sweep on the shipped A-to-B scenario with θ_OBS held at 45°.
pub fn run_dat_sweep(values_m: &[f64]) -> Result<Vec<SweepRun>, RunError> {
    let base = builtin("calibration")?;
    let mut file = base.file.clone();
    file.gains.theta_obs_deg = 45.0;
    let base = base.reresolve(file).map_err(config_error)?;
    let spec = SweepSpec::new(SweepParameter::DAt, values_m.to_vec(), base).map_err(config_error)?;
    run_sweep(&spec)
}

/// The triangle task with the given hand track.
pub fn run_triangle_task(track: &ObstacleTrack) -> Result<RunOutcome, RunError> {
    let scenario = builtin("triangle")?.with_track(track).map_err(config_error)?;
    run_scenario(&scenario)
}

/// Waypoints per pick-and-place sub-plan: one pick pose, one place pose.
pub const SUBPLAN_WAYPOINTS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PickPlaceOutcome {
    pub outcome: RunOutcome,
    /// Metrics for the ticks spent on each sub-plan, in order.
    pub subplans: Vec<MetricsReport>,
    pub completed_subplans: usize,
}

/// Splits a pick-and-place log into sub-plans by active waypoint.
pub fn split_subplans(log: &TrajectoryLog, waypoint_count: usize) -> (Vec<MetricsReport>, usize) {
    let groups = waypoint_count.div_ceil(SUBPLAN_WAYPOINTS);
    let mut reports = Vec::new();
    for g in 0..groups {
        let range = g * SUBPLAN_WAYPOINTS..(g + 1) * SUBPLAN_WAYPOINTS;
        let records: Vec<_> = log
            .records
            .iter()
            .filter(|r| range.contains(&r.waypoint))
            .cloned()
            .collect();
        if let Ok(m) = compute_metrics(&TrajectoryLog { dt: log.dt, records }) {
            reports.push(m);
        }
    }
    let reached = log.records.iter().map(|r| r.waypoint).max().unwrap_or(0);
    let completed = (reached / SUBPLAN_WAYPOINTS).min(groups);
    (reports, completed)
}

/// Whether a plan reads as pick/place pairs: an even number of waypoints,
/// at least two pairs, and a dwell standing in for gripping.
pub fn has_subplans(plan: &TaskPlan) -> bool {
    let n = plan.waypoints.len();
    plan.dwell_s > 0.0 && !plan.cycle && n >= 2 * SUBPLAN_WAYPOINTS && n.is_multiple_of(SUBPLAN_WAYPOINTS)
}

pub fn run_pick_place(scenario: &Scenario) -> Result<PickPlaceOutcome, RunError> {
    let outcome = run_scenario(scenario)?;
    let (subplans, completed_subplans) = split_subplans(&outcome.log, scenario.plan.waypoints.len());
    Ok(PickPlaceOutcome {
        outcome,
        subplans,
        completed_subplans,
    })
}

/// The pick-and-place task with the given hand track.
pub fn run_pick_place_task(track: &ObstacleTrack) -> Result<PickPlaceOutcome, RunError> {
    let scenario = builtin("pick_place")?.with_track(track).map_err(config_error)?;
    run_pick_place(&scenario)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyRun {
    pub seed: u64,
    pub min_d_ro: f64,
    /// `None` when the run failed before producing metrics.
    pub report: Option<MetricsReport>,
    pub error: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyOutcome {
    pub clearance: f64,
    pub runs: Vec<SafetyRun>,
    /// Replayable scenarios for runs that came closer than `clearance` or failed.
    pub counterexamples: Vec<(u64, Scenario)>,
}

impl SafetyOutcome {
    pub fn safe_fraction(&self) -> f64 {
        let safe = self
            .runs
            .iter()
            .filter(|r| r.error.is_none() && r.min_d_ro > self.clearance)
            .count();
        safe as f64 / self.runs.len().max(1) as f64
    }
}

/// Runs `count` seeded reach-and-retract tracks (seeds `first_seed..`)
/// against `base`.
pub fn random_safety(
    base: &Scenario,
    model: &ReachRetract,
    first_seed: u64,
    count: usize,
    clearance: f64,
) -> Result<SafetyOutcome> {
    let duration = base.config.duration_max;
    let results: Vec<(SafetyRun, Option<Scenario>)> = (0..count as u64)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let seed = first_seed + i;
            let scenario = base.with_knots(&model.knots(seed, duration))?;
            let (min_d_ro, report, error) = match run_scenario(&scenario) {
                Ok(o) => (o.report.min_d_ro, Some(o.report), None),
                Err(e) => {
                    let min = e.log.records.iter().map(|r| r.d_ro).fold(f64::INFINITY, f64::min);
                    (min, None, Some(e.error))
                }
            };
            let unsafe_run = error.is_some() || min_d_ro <= clearance;
            Ok((
                SafetyRun {
                    seed,
                    min_d_ro,
                    report,
                    error,
                },
                unsafe_run.then_some(scenario),
            ))
        })
        .collect::<Result<_>>()?;
    let mut runs = Vec::with_capacity(results.len());
    let mut counterexamples = Vec::new();
    for (run, cex) in results {
        if let Some(s) = cex {
            counterexamples.push((run.seed, s));
        }
        runs.push(run);
    }
    Ok(SafetyOutcome {
        clearance,
        runs,
        counterexamples,
    })
}

/// Report document: metrics plus the exact scenario that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subplans: Vec<MetricsReport>,
    pub config: ScenarioFile,
}

impl RunReport {
    pub fn new(outcome: &RunOutcome) -> Self {
        Self {
            scenario: outcome.scenario.name.clone(),
            parameter: None,
            value: None,
            metrics: outcome.report.clone(),
            subplans: Vec::new(),
            config: outcome.scenario.file.clone(),
        }
    }

    /// Report with per-sub-plan metrics filled in when the plan has them.
    pub fn with_subplans(outcome: &RunOutcome) -> Self {
        let mut report = Self::new(outcome);
        let plan = &outcome.scenario.plan;
        if has_subplans(plan) {
            report.subplans = split_subplans(&outcome.log, plan.waypoints.len()).0;
        }
        report
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report values are always representable")
    }
}

/// `t,x,y` per tick, for top-down path plots.
pub fn xy_csv(log: &TrajectoryLog) -> String {
    let mut s = String::from("t,x,y\n");
    for r in &log.records {
        s.push_str(&format!("{},{},{}\n", r.t, r.tcp.x, r.tcp.y));
    }
    s
}

/// Writes `<stem>.report.toml`, `<stem>.log.csv` and `<stem>.xy.csv` into `dir`.
pub fn write_outputs(dir: &Path, stem: &str, report: &RunReport, log: &TrajectoryLog) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report_path = dir.join(format!("{stem}.report.toml"));
    std::fs::write(&report_path, report.to_toml()).map_err(|e| Error::io(&report_path, e))?;
    write_log_file(log, &dir.join(format!("{stem}.log.csv")))?;
    let xy_path = dir.join(format!("{stem}.xy.csv"));
    std::fs::write(&xy_path, xy_csv(log)).map_err(|e| Error::io(&xy_path, e))
}

/// File-name stem for one sweep value, e.g. `calibration_theta_obs_deg_35`.
pub fn sweep_stem(scenario: &str, parameter: SweepParameter, value: f64) -> String {
    format!("{scenario}_{}_{value}", parameter.key())
}
