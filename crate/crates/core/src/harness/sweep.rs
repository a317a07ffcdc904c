//! Monte-Carlo sweeps over seeds, disturbance levels, horizons and user
//! counts.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::log::{RunLog, Termination};
use crate::harness::scenario::Scenario;
use crate::mpc::{run_scheme, DisturbanceKind, DisturbanceModel, Scheme};

/// Grid of runs; every combination of the lists is executed.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    pub sigmas: Vec<f64>,
    pub horizons: Vec<usize>,
    pub users: Vec<usize>,
}

impl SweepSpec {
    /// Single-point grid taken from the scenario itself.
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            schemes: vec![s.mpc.scheme],
            seeds: vec![s.mpc.disturbance.seed],
            sigmas: vec![s.mpc.disturbance.sigma],
            horizons: vec![s.mpc.horizon],
            users: vec![s.k()],
        }
    }

    fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &scheme in &self.schemes {
            for &users in &self.users {
                for &horizon in &self.horizons {
                    for &sigma in &self.sigmas {
                        for &seed in &self.seeds {
                            out.push(SweepPoint {
                                scheme,
                                users,
                                horizon,
                                sigma,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub scheme: Scheme,
    pub users: usize,
    pub horizon: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl SweepPoint {
    /// The base scenario specialised to this grid point.
    pub fn apply(&self, base: &Scenario) -> Result<Scenario> {
        let mut s = if self.users == base.k() {
            base.clone()
        } else {
            base.clone().with_users(self.users)
        };
        s.mpc.scheme = self.scheme;
        s.mpc.horizon = self.horizon;
        s.mpc.disturbance = match base.mpc.disturbance.kind {
            DisturbanceKind::FixedSequence => base.mpc.disturbance.clone(),
            _ => DisturbanceModel::gaussian(self.sigma, self.seed),
        };
        Ok(s)
    }
}

/// Summary of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub point: SweepPoint,
    pub slots: usize,
    pub arrived: bool,
    pub terminal_error: f64,
    /// Mean over slots of propulsion + beam + AN power.
    pub mean_total_power: f64,
    /// Mean over slots of beam + AN power.
    pub mean_radiated_power: f64,
    pub mean_secrecy: f64,
}

impl RunSummary {
    pub fn from_log(point: SweepPoint, log: &RunLog, scenario: &Scenario) -> Self {
        let n = log.rows.len().max(1) as f64;
        let mean = |f: &dyn Fn(&crate::SlotRecord) -> f64| log.rows.iter().map(f).sum::<f64>() / n;
        Self {
            point,
            slots: log.rows.len(),
            arrived: log.termination == Termination::Arrival
                && log.terminal_error(&scenario.goal) <= scenario.mpc.eps,
            terminal_error: log.terminal_error(&scenario.goal),
            mean_total_power: mean(&|r| r.total_power()),
            mean_radiated_power: mean(&|r| r.p_beam + r.p_an),
            mean_secrecy: mean(&|r| r.secrecy_sum),
        }
    }
}

/// Runs every grid point in parallel; the result is ordered like the grid.
pub fn run_sweep(base: &Scenario, spec: &SweepSpec) -> Result<Vec<RunSummary>> {
    spec.points()
        .into_par_iter()
        .map(|p| {
            let s = p.apply(base)?;
            let log = run_scheme(&s)?;
            Ok(RunSummary::from_log(p, &log, &s))
        })
        .collect()
}

/// Means over seeds for one (scheme, users, horizon, sigma) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scheme: Scheme,
    pub users: usize,
    pub horizon: usize,
    pub sigma: f64,
    pub runs: usize,
    pub arrival_rate: f64,
    pub mean_terminal_error: f64,
    pub mean_total_power: f64,
    pub mean_radiated_power: f64,
    pub mean_secrecy: f64,
}

/// Groups run summaries by everything but the seed, keeping first-seen
/// order.
pub fn aggregate(runs: &[RunSummary]) -> Vec<AggregateRow> {
    let mut rows: Vec<(SweepPoint, Vec<&RunSummary>)> = Vec::new();
    for r in runs {
        let p = r.point;
        let same = |q: &SweepPoint| {
            q.scheme == p.scheme
                && q.users == p.users
                && q.horizon == p.horizon
                && q.sigma == p.sigma
        };
        match rows.iter_mut().find(|(q, _)| same(q)) {
            Some((_, v)) => v.push(r),
            None => rows.push((p, vec![r])),
        }
    }
    rows.into_iter()
        .map(|(p, v)| {
            let n = v.len() as f64;
            let mean = |f: &dyn Fn(&RunSummary) -> f64| v.iter().map(|r| f(r)).sum::<f64>() / n;
            AggregateRow {
                scheme: p.scheme,
                users: p.users,
                horizon: p.horizon,
                sigma: p.sigma,
                runs: v.len(),
                arrival_rate: mean(&|r| if r.arrived { 1.0 } else { 0.0 }),
                mean_terminal_error: mean(&|r| r.terminal_error),
                mean_total_power: mean(&|r| r.mean_total_power),
                mean_radiated_power: mean(&|r| r.mean_radiated_power),
                mean_secrecy: mean(&|r| r.mean_secrecy),
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Parse {
            path: Some(path.to_path_buf()),
            message: format!("{other:?}"),
        },
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_runs(runs: &[RunSummary], path: &Path) -> Result<()> {
    // flattened structs are not supported by the csv serializer
    #[derive(Serialize)]
    struct Flat {
        scheme: Scheme,
        users: usize,
        horizon: usize,
        sigma: f64,
        seed: u64,
        slots: usize,
        arrived: bool,
        terminal_error: f64,
        mean_total_power: f64,
        mean_radiated_power: f64,
        mean_secrecy: f64,
    }
    let flat: Vec<Flat> = runs
        .iter()
        .map(|r| Flat {
            scheme: r.point.scheme,
            users: r.point.users,
            horizon: r.point.horizon,
            sigma: r.point.sigma,
            seed: r.point.seed,
            slots: r.slots,
            arrived: r.arrived,
            terminal_error: r.terminal_error,
            mean_total_power: r.mean_total_power,
            mean_radiated_power: r.mean_radiated_power,
            mean_secrecy: r.mean_secrecy,
        })
        .collect();
    write_csv(&flat, path)
}

pub fn write_aggregate(rows: &[AggregateRow], path: &Path) -> Result<()> {
    write_csv(rows, path)
}
