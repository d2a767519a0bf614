//! CSV trajectory logs and hand-track files.
//!
//! Floats are written in Rust's shortest round-trip form, so a log read back
//! reproduces the in-memory values bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::controller::ObstacleKind;
use crate::error::{Error, Result};
use crate::kinematics::JointVector;
use crate::simulator::{TickRecord, TrajectoryLog};

pub const LOG_COLUMNS: [&str; 20] = [
    "t", "q1", "q2", "q3", "q4", "q5", "q6", "x", "y", "z", "vx", "vy", "vz", "mode", "d_ro",
    "class", "f1", "f2", "f3", "waypoint",
];

pub fn class_name(class: Option<ObstacleKind>) -> &'static str {
    match class {
        Some(ObstacleKind::Type1Imminent) => "type1",
        Some(ObstacleKind::Type2NonImminent) => "type2",
        None => "none",
    }
}

fn parse_class(s: &str) -> Option<Option<ObstacleKind>> {
    match s {
        "type1" => Some(Some(ObstacleKind::Type1Imminent)),
        "type2" => Some(Some(ObstacleKind::Type2NonImminent)),
        "none" => Some(None),
        _ => None,
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        column: 1,
        message: e.to_string(),
    }
}

pub fn write_log<W: Write>(log: &TrajectoryLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io {
        path: "<log>".into(),
        message: e.to_string(),
    };
    w.write_record(LOG_COLUMNS).map_err(io)?;
    for r in &log.records {
        let mut row: Vec<String> = Vec::with_capacity(20);
        row.push(r.t.to_string());
        row.extend(r.q.iter().map(f64::to_string));
        row.extend(r.tcp.iter().map(f64::to_string));
        row.extend(r.v_cmd.iter().map(f64::to_string));
        row.push(r.mode.as_str().into());
        row.push(r.d_ro.to_string());
        row.push(class_name(r.class).into());
        row.extend(r.forces.iter().map(f64::to_string));
        row.push(r.waypoint.to_string());
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<log>".into(),
        message: e.to_string(),
    })
}

pub fn write_log_file(log: &TrajectoryLog, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_log(log, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Io { message, .. } => Error::io(path, message),
        other => other,
    })
}

/// Reads a log. The time step is taken from the first two timestamps, or
/// from `dt` when given (needed for single-record logs).
pub fn read_log<R: Read>(input: R, dt: Option<f64>) -> Result<TrajectoryLog> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.iter().collect::<Vec<_>>() != LOG_COLUMNS {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!("expected header `{}`", LOG_COLUMNS.join(",")),
        });
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let line = i + 2;
        let num = |col: usize| -> Result<f64> {
            row[col].parse::<f64>().map_err(|e| Error::Parse {
                line,
                column: col + 1,
                message: format!("column `{}`: {e}", LOG_COLUMNS[col]),
            })
        };
        let bad = |col: usize, what: &str| Error::Parse {
            line,
            column: col + 1,
            message: format!("column `{}`: {what}", LOG_COLUMNS[col]),
        };
        let mut q = JointVector::zeros();
        for j in 0..6 {
            q[j] = num(1 + j)?;
        }
        records.push(TickRecord {
            t: num(0)?,
            q,
            tcp: Vector3::new(num(7)?, num(8)?, num(9)?),
            v_cmd: Vector3::new(num(10)?, num(11)?, num(12)?),
            mode: row[13].parse().map_err(|e: String| bad(13, &e))?,
            d_ro: num(14)?,
            class: parse_class(&row[15]).ok_or_else(|| bad(15, "expected type1, type2 or none"))?,
            forces: [num(16)?, num(17)?, num(18)?],
            waypoint: row[19].parse().map_err(|_| bad(19, "expected a non-negative integer"))?,
            hand: None,
        });
    }
    let dt = match (dt, records.first(), records.get(1)) {
        (Some(dt), _, _) => dt,
        (None, Some(a), Some(b)) => b.t - a.t,
        (None, Some(_), None) => {
            return Err(Error::validation("dt", "a single-record log needs an explicit time step"))
        }
        (None, None, _) => return Err(Error::EmptyLog),
    };
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::validation("dt", "must be finite and > 0"));
    }
    Ok(TrajectoryLog { dt, records })
}

pub fn read_log_file(path: &Path, dt: Option<f64>) -> Result<TrajectoryLog> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_log(std::io::BufReader::new(file), dt)
}

/// Hand-track knots as `t,x,y,z` rows.
pub fn parse_track_csv(text: &str) -> Result<Vec<(f64, Vector3<f64>)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "x", "y", "z"] {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "expected header `t,x,y,z`".into(),
        });
    }
    let mut knots = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let mut v = [0.0; 4];
        for (c, slot) in v.iter_mut().enumerate() {
            *slot = row
                .get(c)
                .ok_or_else(|| Error::Parse {
                    line: i + 2,
                    column: c + 1,
                    message: "missing value".into(),
                })?
                .parse()
                .map_err(|e| Error::Parse {
                    line: i + 2,
                    column: c + 1,
                    message: format!("{e}"),
                })?;
        }
        knots.push((v[0], Vector3::new(v[1], v[2], v[3])));
    }
    Ok(knots)
}

pub fn track_csv(knots: &[(f64, Vector3<f64>)]) -> String {
    let mut s = String::from("t,x,y,z\n");
    for (t, p) in knots {
        s.push_str(&format!("{t},{},{},{}\n", p.x, p.y, p.z));
    }
    s
}
