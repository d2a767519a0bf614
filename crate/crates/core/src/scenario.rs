//! Scenario and robot description files (TOML).
//!
//! Relative paths inside a file resolve against that file's directory. A
//! path starting with `builtin:` names one of the files shipped in `data/`.

use std::path::{Component, Path, PathBuf};

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::ControlGains;
use crate::error::{Error, Result};
use crate::kinematics::{FixedTransform, JointLimit, JointSpec, JointVector, RobotModel, JOINT_COUNT};
use crate::logio::parse_track_csv;
use crate::simulator::{ObstacleTrack, SimConfig, TaskPlan, DEFAULT_DAMPING, DEFAULT_DT, DEFAULT_TOLERANCE};
use crate::supervisor::Thresholds;
use crate::tracks::ReachRetract;

pub const BUILTIN_PREFIX: &str = "builtin:";

macro_rules! builtin_files {
    ($($name:literal),* $(,)?) => {
        /// Files shipped with the crate, keyed by their path under `data/`.
        pub const BUILTIN_FILES: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../data/", $name))),)*
        ];
    };
}

builtin_files!(
    "robots/ur10_like.toml",
    "scenarios/calibration.toml",
    "scenarios/triangle.toml",
    "scenarios/triangle_baseline.toml",
    "scenarios/pick_place.toml",
    "scenarios/pick_place_baseline.toml",
    "scenarios/live.toml",
    "scenarios/triangle_random.toml",
    "sweeps/theta.toml",
    "sweeps/dat.toml",
    "tracks/triangle_intrusion.csv",
    "tracks/pick_place_operator.csv",
);

pub fn builtin_file(path: &str) -> Option<&'static str> {
    BUILTIN_FILES.iter().find(|(p, _)| *p == path).map(|(_, text)| *text)
}

/// Where a configuration file came from; used to resolve the paths it
/// mentions.
#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    File(PathBuf),
    Builtin(String),
}

impl Origin {
    pub fn parse(spec: &str) -> Self {
        match spec.strip_prefix(BUILTIN_PREFIX) {
            Some(rest) => Origin::Builtin(rest.to_string()),
            None => Origin::File(PathBuf::from(spec)),
        }
    }

    pub fn read(&self) -> Result<String> {
        match self {
            Origin::File(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path, e)),
            Origin::Builtin(name) => builtin_file(name).map(str::to_string).ok_or_else(|| Error::Io {
                path: format!("{BUILTIN_PREFIX}{name}"),
                message: "no such built-in file".into(),
            }),
        }
    }

    /// Resolves `reference` relative to this file.
    pub fn join(&self, reference: &str) -> Origin {
        if reference.starts_with(BUILTIN_PREFIX) {
            return Origin::parse(reference);
        }
        match self {
            Origin::File(path) => {
                let base = path.parent().unwrap_or(Path::new(""));
                Origin::File(base.join(reference))
            }
            Origin::Builtin(name) => {
                let mut parts: Vec<&str> = name.split('/').collect();
                parts.pop();
                for comp in Path::new(reference).components() {
                    match comp {
                        Component::ParentDir => {
                            parts.pop();
                        }
                        Component::Normal(s) => parts.push(s.to_str().unwrap_or("")),
                        _ => {}
                    }
                }
                Origin::Builtin(parts.join("/"))
            }
        }
    }

    pub fn display(&self) -> String {
        match self {
            Origin::File(p) => p.display().to_string(),
            Origin::Builtin(n) => format!("{BUILTIN_PREFIX}{n}"),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, origin: &Origin) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        Error::Parse {
            line,
            column,
            message: format!("{}: {}", origin.display(), e.message()),
        }
    })
}

fn default_zero3() -> [f64; 3] {
    [0.0; 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformEntry {
    pub translation_m: [f64; 3],
    #[serde(default = "default_zero3")]
    pub rotation_rpy_rad: [f64; 3],
}

impl TransformEntry {
    fn to_fixed(&self) -> FixedTransform {
        FixedTransform {
            translation: Vector3::from(self.translation_m),
            rpy: Vector3::from(self.rotation_rpy_rad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    pub axis: [f64; 3],
    pub translation_m: [f64; 3],
    #[serde(default = "default_zero3")]
    pub rotation_rpy_rad: [f64; 3],
}

/// Robot description file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotFile {
    pub joint_limits_rad: Vec<[f64; 2]>,
    pub rate_limits_rad_s: Vec<f64>,
    pub tcp_offset: TransformEntry,
    pub joints: Vec<JointEntry>,
}

impl RobotFile {
    pub fn to_model(&self) -> Result<RobotModel> {
        let six = |field: &str, n: usize| {
            if n == JOINT_COUNT {
                Ok(())
            } else {
                Err(Error::validation(format!("robot.{field}"), format!("needs exactly 6 entries, found {n}")))
            }
        };
        six("joints", self.joints.len())?;
        six("joint_limits_rad", self.joint_limits_rad.len())?;
        six("rate_limits_rad_s", self.rate_limits_rad_s.len())?;
        let mut joints = [JointSpec {
            axis: Vector3::z_axis(),
            origin: FixedTransform::identity(),
        }; JOINT_COUNT];
        for (i, (spec, entry)) in joints.iter_mut().zip(&self.joints).enumerate() {
            let axis = Vector3::from(entry.axis);
            spec.axis = Unit::try_new(axis, 1e-9).ok_or_else(|| {
                Error::validation(format!("robot.joints[{i}].axis"), "must be a non-zero vector")
            })?;
            spec.origin = FixedTransform {
                translation: Vector3::from(entry.translation_m),
                rpy: Vector3::from(entry.rotation_rpy_rad),
            };
        }
        let limits: [JointLimit; JOINT_COUNT] =
            std::array::from_fn(|i| JointLimit { min: self.joint_limits_rad[i][0], max: self.joint_limits_rad[i][1] });
        let rates: [f64; JOINT_COUNT] = std::array::from_fn(|i| self.rate_limits_rad_s[i]);
        RobotModel::new(joints, limits, rates, self.tcp_offset.to_fixed()).map_err(|e| match e {
            Error::Validation { field, constraint } => Error::validation(format!("robot.{field}"), constraint),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RobotRef {
    Path(String),
    Inline(RobotFile),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsEntry {
    pub k_pc1: f64,
    pub k_pc2: f64,
    pub k_ca1: f64,
    pub k_ca2: f64,
    pub k_ca3: f64,
    pub k_rep: f64,
    pub tau_per_m: f64,
    pub theta_obs_deg: f64,
    pub v_max_m_s: f64,
}

impl Default for GainsEntry {
    fn default() -> Self {
        let g = ControlGains::default();
        Self {
            k_pc1: g.k_pc1,
            k_pc2: g.k_pc2,
            k_ca1: g.k_ca1,
            k_ca2: g.k_ca2,
            k_ca3: g.k_ca3,
            k_rep: g.k_rep,
            tau_per_m: g.tau,
            theta_obs_deg: 45.0,
            v_max_m_s: g.v_max,
        }
    }
}

impl GainsEntry {
    pub fn to_gains(&self) -> ControlGains {
        ControlGains {
            k_pc1: self.k_pc1,
            k_pc2: self.k_pc2,
            k_ca1: self.k_ca1,
            k_ca2: self.k_ca2,
            k_ca3: self.k_ca3,
            k_rep: self.k_rep,
            tau: self.tau_per_m,
            theta_obs: self.theta_obs_deg.to_radians(),
            v_max: self.v_max_m_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdsEntry {
    pub d_at_m: f64,
    pub d_act_m: f64,
    pub d_dct_m: f64,
}

impl Default for ThresholdsEntry {
    fn default() -> Self {
        let t = Thresholds::default();
        Self {
            d_at_m: t.d_at,
            d_act_m: t.d_act,
            d_dct_m: t.d_dct,
        }
    }
}

impl ThresholdsEntry {
    pub fn to_thresholds(&self) -> Thresholds {
        Thresholds {
            d_at: self.d_at_m,
            d_act: self.d_act_m,
            d_dct: self.d_dct_m,
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_damping() -> f64 {
    DEFAULT_DAMPING
}
fn default_compliance() -> f64 {
    1.0
}
fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}
fn far_away() -> [f64; 3] {
    [10.0; 3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimEntry {
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration_max: f64,
    pub initial_q: [f64; 6],
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_compliance")]
    pub freedrive_compliance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub waypoints: Vec<[f64; 3]>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub cycle: bool,
    #[serde(default)]
    pub dwell_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrackEntry {
    Static {
        position: [f64; 3],
    },
    /// Either inline `[t, x, y, z]` knots or a `t,x,y,z` CSV file.
    Piecewise {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        knots: Option<Vec<[f64; 4]>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        file: Option<String>,
    },
    Live {
        #[serde(default = "far_away")]
        position: [f64; 3],
    },
    /// Seeded reach-and-retract operator; covers `duration_max`.
    Random {
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<ReachRetract>,
    },
}

/// A scenario file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub gains: GainsEntry,
    #[serde(default)]
    pub thresholds: ThresholdsEntry,
    pub sim: SimEntry,
    pub plan: PlanEntry,
    pub track: TrackEntry,
    pub robot: RobotRef,
}

/// A fully resolved and validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: SimConfig,
    pub track: ObstacleTrack,
    pub plan: TaskPlan,
    /// Self-contained source: robot inlined, file references expanded.
    pub file: ScenarioFile,
}

fn knots_from(rows: &[[f64; 4]]) -> Vec<(f64, Vector3<f64>)> {
    rows.iter().map(|r| (r[0], Vector3::new(r[1], r[2], r[3]))).collect()
}

fn rows_from(knots: &[(f64, Vector3<f64>)]) -> Vec<[f64; 4]> {
    knots.iter().map(|(t, p)| [*t, p.x, p.y, p.z]).collect()
}

impl ScenarioFile {
    pub fn from_toml(text: &str, origin: &Origin) -> Result<Self> {
        parse_toml(text, origin)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario values are always representable")
    }

    /// Replaces file references with their contents.
    pub fn inline(mut self, origin: &Origin) -> Result<Self> {
        if let RobotRef::Path(p) = &self.robot {
            let robot_origin = origin.join(p);
            let text = robot_origin.read()?;
            self.robot = RobotRef::Inline(parse_toml(&text, &robot_origin)?);
        }
        if let TrackEntry::Piecewise { knots, file } = &self.track {
            match (knots, file) {
                (Some(_), None) => {}
                (None, Some(f)) => {
                    let track_origin = origin.join(f);
                    let text = track_origin.read()?;
                    let knots = parse_track_csv(&text).map_err(|e| match e {
                        Error::Parse { line, column, message } => Error::Parse {
                            line,
                            column,
                            message: format!("{}: {message}", track_origin.display()),
                        },
                        other => other,
                    })?;
                    self.track = TrackEntry::Piecewise {
                        knots: Some(rows_from(&knots)),
                        file: None,
                    };
                }
                _ => {
                    return Err(Error::validation(
                        "track",
                        "a piecewise track needs exactly one of `knots` or `file`",
                    ))
                }
            }
        }
        Ok(self)
    }

    /// Resolves references and validates everything.
    pub fn resolve(self, origin: &Origin) -> Result<Scenario> {
        let file = self.inline(origin)?;
        let robot = match &file.robot {
            RobotRef::Inline(r) => r.to_model()?,
            RobotRef::Path(_) => unreachable!("inlined above"),
        };
        let mut config = SimConfig::new(robot, JointVector::from(file.sim.initial_q));
        config.dt = file.sim.dt;
        config.duration_max = file.sim.duration_max;
        config.damping = file.sim.damping;
        config.freedrive_compliance = file.sim.freedrive_compliance;
        config.gains = file.gains.to_gains();
        config.thresholds = file.thresholds.to_thresholds();
        config.validate()?;

        let plan = TaskPlan {
            waypoints: file.plan.waypoints.iter().map(|w| Vector3::from(*w)).collect(),
            arrival_tolerance: file.plan.tolerance,
            cycle: file.plan.cycle,
            dwell_s: file.plan.dwell_s,
        };
        plan.validate()?;

        let track = match &file.track {
            TrackEntry::Static { position } => ObstacleTrack::Static(Vector3::from(*position)),
            TrackEntry::Live { position } => ObstacleTrack::Live {
                initial: Vector3::from(*position),
            },
            TrackEntry::Piecewise { knots, .. } => {
                ObstacleTrack::PiecewiseLinear(knots_from(knots.as_deref().unwrap_or_default()))
            }
            TrackEntry::Random { seed, model } => {
                model.unwrap_or_default().track(*seed, config.duration_max)
            }
        };
        track.validate()?;

        let name = file.name.clone().unwrap_or_else(|| match origin {
            Origin::File(p) => p.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned()),
            Origin::Builtin(n) => Path::new(n)
                .file_stem()
                .map_or("scenario".into(), |s| s.to_string_lossy().into_owned()),
        });
        Ok(Scenario {
            name,
            config,
            track,
            plan,
            file,
        })
    }
}

impl Scenario {
    pub fn load(origin: &Origin) -> Result<Self> {
        let text = origin.read()?;
        ScenarioFile::from_toml(&text, origin)?.resolve(origin)
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        Self::load(&Origin::File(path.to_path_buf()))
    }

    pub fn builtin(name: &str) -> Result<Self> {
        Self::load(&Origin::Builtin(format!("scenarios/{name}.toml")))
    }

    pub fn from_toml(text: &str, origin: &Origin) -> Result<Self> {
        ScenarioFile::from_toml(text, origin)?.resolve(origin)
    }

    /// Self-contained TOML for this scenario.
    pub fn to_toml(&self) -> String {
        self.file.to_toml()
    }

    /// Copy with a fixed piecewise track in place of the current one, e.g.
    /// to freeze a generated track into a replayable file.
    pub fn with_knots(&self, knots: &[(f64, Vector3<f64>)]) -> Result<Self> {
        self.with_track(&ObstacleTrack::PiecewiseLinear(knots.to_vec()))
    }

    /// Copy with a different hand track.
    pub fn with_track(&self, track: &ObstacleTrack) -> Result<Self> {
        let mut file = self.file.clone();
        file.track = match track {
            ObstacleTrack::Static(p) => TrackEntry::Static { position: (*p).into() },
            ObstacleTrack::Live { initial } => TrackEntry::Live { position: (*initial).into() },
            ObstacleTrack::PiecewiseLinear(knots) => TrackEntry::Piecewise {
                knots: Some(rows_from(knots)),
                file: None,
            },
        };
        self.reresolve(file)
    }

    /// Copy with the time step replaced.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        let mut file = self.file.clone();
        file.sim.dt = dt;
        self.reresolve(file)
    }

    /// Copy with the seed of a random track replaced.
    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        let mut file = self.file.clone();
        match &mut file.track {
            TrackEntry::Random { seed: s, .. } => *s = seed,
            _ => return Err(Error::validation("track.seed", "only random tracks take a seed")),
        }
        self.reresolve(file)
    }

    pub fn reresolve(&self, mut file: ScenarioFile) -> Result<Self> {
        if file.name.is_none() {
            file.name = Some(self.name.clone());
        }
        file.resolve(&Origin::Builtin(String::new()))
    }
}

/// Loads a standalone robot description.
pub fn load_robot(origin: &Origin) -> Result<RobotModel> {
    let text = origin.read()?;
    parse_toml::<RobotFile>(&text, origin)?.to_model()
}

pub fn default_robot() -> RobotModel {
    load_robot(&Origin::Builtin("robots/ur10_like.toml".into())).expect("shipped robot file is valid")
}
