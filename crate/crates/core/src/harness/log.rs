//! Per-slot run records and their CSV / JSON-lines forms.
//!
//! CSV columns, in order:
//!
//! ```text
//! slot, x, y, z, vx, vy, vz, p_fly, p_beam, p_an,
//! rate_user_1..K, eaves_1..K, secrecy_sum, flags, p_fly_phys, objective
//! ```
//!
//! `x, y, z` is the measured position at the start of the slot and
//! `vx, vy, vz` the velocity applied during it. `p_fly` is the raw
//! propulsion model value, `p_fly_phys` the same clamped at zero. `flags`
//! is a `|`-separated list (empty when nothing happened).

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mpc::{ObjectiveTrace, Scheme};
use crate::rates::BeamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlotFlag {
    /// Logged rates miss the rate targets by more than the check tolerance.
    Restoring,
    /// A slack variable was active in some subproblem.
    Slack,
    /// A subproblem failed and the previous plan was reused.
    HoldLastPlan,
    /// A rank-one loop hit its iteration cap.
    RankLoopCap,
    /// A round was rejected because it raised the objective.
    RoundRejected,
}

impl SlotFlag {
    pub const ALL: [SlotFlag; 5] = [
        SlotFlag::Restoring,
        SlotFlag::Slack,
        SlotFlag::HoldLastPlan,
        SlotFlag::RankLoopCap,
        SlotFlag::RoundRejected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SlotFlag::Restoring => "restoring",
            SlotFlag::Slack => "slack",
            SlotFlag::HoldLastPlan => "hold",
            SlotFlag::RankLoopCap => "rank-cap",
            SlotFlag::RoundRejected => "round-rejected",
        }
    }
}

impl fmt::Display for SlotFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SlotFlag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SlotFlag::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown flag '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub q: Vec3,
    pub v: Vec3,
    pub p_fly: f64,
    pub p_beam: f64,
    pub p_an: f64,
    pub rate_user: Vec<f64>,
    pub eaves: Vec<f64>,
    pub secrecy_sum: f64,
    pub flags: Vec<SlotFlag>,
    pub p_fly_phys: f64,
    /// Final objective value of the slot's window.
    pub objective: f64,
}

impl SlotRecord {
    pub fn total_power(&self) -> f64 {
        self.p_fly + self.p_beam + self.p_an
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Arrival,
    Timeout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub scheme: Scheme,
    pub rows: Vec<SlotRecord>,
    /// Objective after each round, per slot.
    pub trace: ObjectiveTrace,
    /// Beams applied in each slot (not persisted).
    pub applied_beams: Vec<BeamSet>,
    pub final_position: Vec3,
    pub termination: Termination,
}

impl RunLog {
    pub fn new(scheme: Scheme, start: Vec3) -> Self {
        Self {
            scheme,
            rows: Vec::new(),
            trace: ObjectiveTrace::default(),
            applied_beams: Vec::new(),
            final_position: start,
            termination: Termination::Timeout,
        }
    }

    pub fn user_count(&self) -> usize {
        self.rows.first().map(|r| r.rate_user.len()).unwrap_or(0)
    }

    pub fn terminal_error(&self, goal: &Vec3) -> f64 {
        (self.final_position - goal).norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
    JsonLines,
}

impl LogFormat {
    /// `.jsonl` / `.json` select JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => LogFormat::JsonLines,
            _ => LogFormat::Csv,
        }
    }
}

pub fn csv_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "slot", "x", "y", "z", "vx", "vy", "vz", "p_fly", "p_beam", "p_an",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=k).map(|i| format!("rate_user_{i}")));
    h.extend((1..=k).map(|i| format!("eaves_{i}")));
    h.extend(["secrecy_sum", "flags", "p_fly_phys", "objective"].map(String::from));
    h
}

fn flags_text(flags: &[SlotFlag]) -> String {
    flags.iter().map(|f| f.name()).collect::<Vec<_>>().join("|")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: Some(path.to_path_buf()),
        message: e.to_string(),
    }
}

/// Writes the rows of `log`. `k` fixes the header for empty logs.
pub fn write_log(log: &RunLog, k: usize, path: &Path, format: LogFormat) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut out = std::io::BufWriter::new(file);
    match format {
        LogFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(csv_header(k))
                .map_err(|e| csv_err(path, e))?;
            for r in &log.rows {
                let mut rec = vec![r.slot.to_string()];
                rec.extend(r.q.iter().chain(r.v.iter()).map(|x| x.to_string()));
                rec.extend([r.p_fly, r.p_beam, r.p_an].map(|x| x.to_string()));
                rec.extend(r.rate_user.iter().chain(&r.eaves).map(|x| x.to_string()));
                rec.push(r.secrecy_sum.to_string());
                rec.push(flags_text(&r.flags));
                rec.push(r.p_fly_phys.to_string());
                rec.push(r.objective.to_string());
                w.write_record(&rec).map_err(|e| csv_err(path, e))?;
            }
            w.flush().map_err(io_err(path))?;
        }
        LogFormat::JsonLines => {
            for r in &log.rows {
                let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
                writeln!(out, "{line}").map_err(io_err(path))?;
            }
            out.flush().map_err(io_err(path))?;
        }
    }
    Ok(())
}

/// Reads rows written by [`write_log`].
pub fn read_rows(path: &Path, format: LogFormat) -> Result<Vec<SlotRecord>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    match format {
        LogFormat::JsonLines => std::io::BufReader::new(file)
            .lines()
            .filter(|l| l.as_ref().map(|l| !l.trim().is_empty()).unwrap_or(true))
            .map(|l| {
                let l = l.map_err(io_err(path))?;
                serde_json::from_str(&l).map_err(|e| Error::Parse {
                    path: Some(path.to_path_buf()),
                    message: e.to_string(),
                })
            })
            .collect(),
        LogFormat::Csv => {
            let mut rd = csv::Reader::from_reader(file);
            let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
            let k = header
                .iter()
                .filter(|h| h.starts_with("rate_user_"))
                .count();
            if header.iter().collect::<Vec<_>>() != csv_header(k) {
                return Err(Error::Parse {
                    path: Some(path.to_path_buf()),
                    message: "unexpected CSV header".into(),
                });
            }
            let bad = |m: String| Error::Parse {
                path: Some(path.to_path_buf()),
                message: m,
            };
            let mut rows = Vec::new();
            for rec in rd.records() {
                let rec = rec.map_err(|e| csv_err(path, e))?;
                let num = |i: usize| -> Result<f64> {
                    rec[i]
                        .parse::<f64>()
                        .map_err(|e| bad(format!("column {}: {e}", header[i].to_owned())))
                };
                let flags_col = 11 + 2 * k;
                let flags = if rec[flags_col].is_empty() {
                    Vec::new()
                } else {
                    rec[flags_col]
                        .split('|')
                        .map(SlotFlag::from_str)
                        .collect::<Result<Vec<_>>>()?
                };
                rows.push(SlotRecord {
                    slot: rec[0].parse().map_err(|e| bad(format!("slot: {e}")))?,
                    q: Vec3::new(num(1)?, num(2)?, num(3)?),
                    v: Vec3::new(num(4)?, num(5)?, num(6)?),
                    p_fly: num(7)?,
                    p_beam: num(8)?,
                    p_an: num(9)?,
                    rate_user: (0..k).map(|i| num(10 + i)).collect::<Result<_>>()?,
                    eaves: (0..k).map(|i| num(10 + k + i)).collect::<Result<_>>()?,
                    secrecy_sum: num(10 + 2 * k)?,
                    flags,
                    p_fly_phys: num(12 + 2 * k)?,
                    objective: num(13 + 2 * k)?,
                });
            }
            Ok(rows)
        }
    }
}
