//! Rolling-horizon engine: per-slot alternating optimisation of trajectory,
//! beams and AN, disturbance injection and the benchmark schemes.

mod engine;
mod init;

pub use engine::{
    evaluate_objective, first_plan, run, run_bcd_openloop, run_offline_mpc, run_scheme,
    RoundOutcome,
};
pub use init::{cruise_speed, initial_plan, shift_plan};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{UavState, Vec3};
use crate::rates::BeamSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Replan every slot from the measured state.
    MpcOnline,
    /// Replan every slot from a state rolled forward with the forecast
    /// disturbance.
    MpcOffline,
    /// Plan once over the whole flight and execute open loop.
    #[serde(rename = "bcd")]
    BcdOpenLoop,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mpc-online" => Ok(Scheme::MpcOnline),
            "mpc-offline" => Ok(Scheme::MpcOffline),
            "bcd" | "bcd-openloop" => Ok(Scheme::BcdOpenLoop),
            other => Err(Error::invalid(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::MpcOnline => "mpc-online",
            Scheme::MpcOffline => "mpc-offline",
            Scheme::BcdOpenLoop => "bcd",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceKind {
    None,
    Gaussian,
    FixedSequence,
}

/// Additive position disturbance applied after each slot.
///
/// Gaussian draws for slot `i` come from stream `i` of a generator seeded
/// with `seed`, so every scheme sees the same sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceModel {
    pub kind: DisturbanceKind,
    /// Per-axis standard deviation in meters.
    pub sigma: f64,
    /// Per-slot offsets; slots past the end get zero.
    pub sequence: Vec<Vec3>,
    pub seed: u64,
}

impl Default for DisturbanceModel {
    fn default() -> Self {
        Self::none()
    }
}

impl DisturbanceModel {
    pub fn none() -> Self {
        Self {
            kind: DisturbanceKind::None,
            sigma: 0.0,
            sequence: Vec::new(),
            seed: 0,
        }
    }

    pub fn gaussian(sigma: f64, seed: u64) -> Self {
        Self {
            kind: DisturbanceKind::Gaussian,
            sigma,
            sequence: Vec::new(),
            seed,
        }
    }

    pub fn fixed(sequence: Vec<Vec3>) -> Self {
        Self {
            kind: DisturbanceKind::FixedSequence,
            sigma: 0.0,
            sequence,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::config(
                "disturbance.sigma",
                "must be finite and >= 0",
            ));
        }
        if self
            .sequence
            .iter()
            .any(|v| !v.iter().all(|x| x.is_finite()))
        {
            return Err(Error::config(
                "disturbance.sequence",
                "entries must be finite",
            ));
        }
        Ok(())
    }

    pub fn sample(&self, slot: usize) -> Vec3 {
        match self.kind {
            DisturbanceKind::None => Vec3::zeros(),
            DisturbanceKind::FixedSequence => {
                self.sequence.get(slot).copied().unwrap_or_else(Vec3::zeros)
            }
            DisturbanceKind::Gaussian => {
                if self.sigma == 0.0 {
                    return Vec3::zeros();
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(slot as u64);
                let n = Normal::new(0.0, self.sigma).expect("sigma validated");
                Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Prediction steps; the window covers `horizon + 1` slots.
    pub horizon: usize,
    /// Alternating rounds per slot.
    pub tau: usize,
    /// Arrival radius in meters.
    pub eps: f64,
    pub max_slots: usize,
    /// Relative objective change that ends the rounds of a slot early.
    pub round_tol: f64,
    pub scheme: Scheme,
    pub disturbance: DisturbanceModel,
    /// Disturbance assumed by the offline scheme.
    pub forecast: DisturbanceModel,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            tau: 5,
            eps: 50.0,
            max_slots: 60,
            round_tol: 1e-3,
            scheme: Scheme::MpcOnline,
            disturbance: DisturbanceModel::none(),
            forecast: DisturbanceModel::none(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::config("mpc.horizon", "must be >= 1"));
        }
        if self.tau < 1 {
            return Err(Error::config("mpc.tau", "must be >= 1"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config("mpc.eps", "must be > 0"));
        }
        if self.max_slots < 1 {
            return Err(Error::config("mpc.max_slots", "must be >= 1"));
        }
        if !(self.round_tol >= 0.0) {
            return Err(Error::config("mpc.round_tol", "must be >= 0"));
        }
        self.disturbance.validate()?;
        self.forecast.validate()
    }
}

/// Per-slot plan over the prediction window.
///
/// `states[0]` holds the measured position of the current slot;
/// `states[j].v` is the velocity commanded during slot `i + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonPlan {
    pub states: Vec<UavState>,
    pub beams: Vec<BeamSet>,
    /// Anchors of the propulsion bound, one per slot.
    pub power_anchors: Vec<Vec3>,
}

impl HorizonPlan {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Objective values after each round, grouped by slot.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTrace {
    pub slots: Vec<Vec<f64>>,
}

/// First increase beyond the relative slack, as `(slot, step)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceViolation {
    pub slot: usize,
    pub step: usize,
    pub before: f64,
    pub after: f64,
}

impl ObjectiveTrace {
    pub fn check(&self, rel_slack: f64) -> std::result::Result<(), TraceViolation> {
        for (slot, vals) in self.slots.iter().enumerate() {
            for (step, w) in vals.windows(2).enumerate() {
                if w[1] > w[0] + rel_slack * w[0].abs().max(1e-12) {
                    return Err(TraceViolation {
                        slot,
                        step: step + 1,
                        before: w[0],
                        after: w[1],
                    });
                }
            }
        }
        Ok(())
    }
}

/// Checks a trace with the default `1e-6` relative slack.
pub fn objective_trace_check(trace: &ObjectiveTrace) -> std::result::Result<(), TraceViolation> {
    trace.check(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_check_examples() {
        let t = ObjectiveTrace {
            slots: vec![vec![3.0, 3.0, 3.0]],
        };
        assert!(objective_trace_check(&t).is_ok());
        let t = ObjectiveTrace {
            slots: vec![vec![3.0, 2.0, 1.0], vec![-1.0, -2.0]],
        };
        assert!(objective_trace_check(&t).is_ok());
        let t = ObjectiveTrace {
            slots: vec![vec![3.0, 2.0], vec![5.0, 4.0, 4.1]],
        };
        let v = objective_trace_check(&t).unwrap_err();
        assert_eq!((v.slot, v.step), (1, 2));
    }

    #[test]
    fn gaussian_draws_are_per_slot_and_repeatable() {
        let d = DisturbanceModel::gaussian(5.0, 42);
        assert_eq!(d.sample(3), d.sample(3));
        assert_ne!(d.sample(3), d.sample(4));
        assert_ne!(d.sample(3), DisturbanceModel::gaussian(5.0, 43).sample(3));
        assert_eq!(DisturbanceModel::gaussian(0.0, 1).sample(0), Vec3::zeros());
    }

    #[test]
    fn fixed_sequence_runs_out_to_zero() {
        let d = DisturbanceModel::fixed(vec![Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(d.sample(0), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(d.sample(1), Vec3::zeros());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [Scheme::MpcOnline, Scheme::MpcOffline, Scheme::BcdOpenLoop] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("mpc-fast".parse::<Scheme>().is_err());
    }
}
