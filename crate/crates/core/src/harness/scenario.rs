//! Immutable world description and its TOML form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{NodeSite, PropagationParams};
use crate::dc::DcSchedule;
use crate::error::{Error, Result};
use crate::geometry::{hover_power, AirframeParams, KinematicLimits, Vec3};
use crate::mpc::MpcConfig;
use crate::rates::NoisePowers;

/// Objective weights on squared distance to the goal, propulsion power and
/// secrecy sum rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub distance: f64,
    pub power: f64,
    pub secrecy: f64,
}

impl Weights {
    pub fn secrecy_priority() -> Self {
        Self {
            distance: 1e-4,
            power: 1e-2,
            secrecy: 1.0,
        }
    }

    pub fn speed_priority() -> Self {
        Self {
            distance: 1.0,
            power: 1e-2,
            secrecy: 0.0,
        }
    }
}

impl Default for Weights {
    fn default() -> Self {
        Self::secrecy_priority()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Secrecy,
    Speed,
}

impl Preset {
    pub fn weights(self) -> Weights {
        match self {
            Preset::Secrecy => Weights::secrecy_priority(),
            Preset::Speed => Weights::speed_priority(),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "secrecy" => Ok(Preset::Secrecy),
            "speed" => Ok(Preset::Speed),
            other => Err(Error::invalid(format!("unknown preset '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budgets {
    /// Total power cap in watts (propulsion plus radiated).
    pub p_max: f64,
    /// Minimum rate per user, bps/Hz.
    pub r_min: f64,
    /// Maximum eavesdropping rate per user, bps/Hz.
    pub r_max: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            p_max: 400.0,
            r_min: 1.0,
            r_max: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Noise power at every user unless `users` lists them individually.
    pub user: f64,
    pub users: Option<Vec<f64>>,
    pub eve: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            user: 1e-11,
            users: None,
            eve: 1e-11,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AirframeSpec {
    pub weight: f64,
    pub rho: f64,
    pub disc_area: f64,
    pub zeta: f64,
}

impl Default for AirframeSpec {
    fn default() -> Self {
        let a = AirframeParams::default();
        Self {
            weight: a.weight(),
            rho: a.rho(),
            disc_area: a.disc_area(),
            zeta: a.zeta(),
        }
    }
}

impl AirframeSpec {
    pub fn build(&self) -> Result<AirframeParams> {
        AirframeParams::new(self.weight, self.rho, self.disc_area, self.zeta)
    }
}

/// Numerical knobs of the subproblem solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverKnobs {
    /// Relative gap and feasibility tolerance of the conic backend.
    pub tol: f64,
    pub max_iter: u32,
    pub sca_max_iters: usize,
    pub sca_tol: f64,
    /// Slack penalty multiplier (times the secrecy weight) in restoration.
    pub restoration_penalty: f64,
    /// Measure every interference term at the victim's own distance in the
    /// trajectory surrogate.
    pub interference_at_own_distance: bool,
    /// Drop the rank-one requirement on the AN covariance.
    pub an_rank_free: bool,
    /// Pin the AN power to this value in watts.
    pub an_power_fixed: Option<f64>,
    /// Fraction of the power headroom given to beams at initialisation.
    pub init_beam_share: f64,
    /// AN power at initialisation as a fraction of beam power.
    pub init_an_ratio: f64,
    /// Initial cruise speed cap as a fraction of the horizontal speed cap.
    pub init_speed_fraction: f64,
    /// Initial cruise power cap as a fraction of the power budget.
    pub init_power_fraction: f64,
}

impl Default for SolverKnobs {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200,
            sca_max_iters: 10,
            sca_tol: 1e-4,
            restoration_penalty: 1e3,
            interference_at_own_distance: false,
            an_rank_free: false,
            an_power_fixed: None,
            init_beam_share: 0.6,
            init_an_ratio: 0.1,
            init_speed_fraction: 0.8,
            init_power_fraction: 0.75,
        }
    }
}

mod site_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub mod users {
        use super::*;
        pub fn serialize<S: Serializer>(
            u: &[NodeSite],
            s: S,
        ) -> std::result::Result<S::Ok, S::Error> {
            let xy: Vec<[f64; 2]> = u.iter().map(|n| [n.position.x, n.position.y]).collect();
            xy.serialize(s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<Vec<NodeSite>, D::Error> {
            let xy: Vec<[f64; 2]> = Vec::deserialize(d)?;
            Ok(xy.into_iter().map(|[x, y]| NodeSite::user(x, y)).collect())
        }
    }

    pub mod eve {
        use super::*;
        pub fn serialize<S: Serializer>(
            e: &NodeSite,
            s: S,
        ) -> std::result::Result<S::Ok, S::Error> {
            e.position.serialize(s)
        }
        pub fn deserialize<'de, D: Deserializer<'de>>(
            d: D,
        ) -> std::result::Result<NodeSite, D::Error> {
            Ok(NodeSite::eavesdropper(Vec3::deserialize(d)?))
        }
    }
}

/// Everything a run needs.
///
/// Every section can be omitted from a file; missing values take the
/// built-in defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub start: Vec3,
    pub goal: Vec3,
    /// Ground users as `[x, y]`.
    #[serde(with = "site_serde::users")]
    pub users: Vec<NodeSite>,
    #[serde(with = "site_serde::eve")]
    pub eavesdropper: NodeSite,
    pub airframe: AirframeSpec,
    pub limits: KinematicLimits,
    pub propagation: PropagationParams,
    pub noise: NoiseSpec,
    pub budgets: Budgets,
    pub weights: Weights,
    pub mpc: MpcConfig,
    pub dc: DcSchedule,
    pub solver: SolverKnobs,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            start: Vec3::new(0.0, 0.0, 700.0),
            goal: Vec3::new(6000.0, 0.0, 700.0),
            users: vec![
                NodeSite::user(3000.0, 600.0),
                NodeSite::user(3000.0, 1400.0),
            ],
            eavesdropper: NodeSite::eavesdropper(Vec3::new(4500.0, -800.0, 0.0)),
            airframe: AirframeSpec::default(),
            limits: KinematicLimits::default(),
            propagation: PropagationParams::default(),
            noise: NoiseSpec::default(),
            budgets: Budgets::default(),
            weights: Weights::default(),
            mpc: MpcConfig::default(),
            dc: DcSchedule::default(),
            solver: SolverKnobs::default(),
        }
    }
}

/// Extra user sites used when a scenario asks for more users than the
/// default layout has.
pub const USER_LAYOUT: [[f64; 2]; 4] = [
    [3000.0, 600.0],
    [3000.0, 1400.0],
    [3000.0, 2200.0],
    [3000.0, -200.0],
];

impl Scenario {
    pub fn with_preset(preset: Preset) -> Self {
        Self {
            weights: preset.weights(),
            ..Self::default()
        }
    }

    /// Replaces the users with the first `k` sites of the default layout.
    pub fn with_users(mut self, k: usize) -> Self {
        self.users = USER_LAYOUT
            .iter()
            .take(k)
            .map(|[x, y]| NodeSite::user(*x, *y))
            .collect();
        self
    }

    pub fn airframe(&self) -> AirframeParams {
        self.airframe.build().expect("validated scenario")
    }

    pub fn noise_powers(&self) -> NoisePowers {
        NoisePowers {
            users: self
                .noise
                .users
                .clone()
                .unwrap_or_else(|| vec![self.noise.user; self.users.len()]),
            eve: self.noise.eve,
        }
    }

    pub fn k(&self) -> usize {
        self.users.len()
    }

    pub fn n(&self) -> usize {
        self.propagation.antennas
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !finite(&self.start) || !finite(&self.goal) {
            return Err(Error::config("start/goal", "must be finite"));
        }
        if (self.start - self.goal).norm() == 0.0 {
            return Err(Error::config("goal", "must differ from start"));
        }
        if self.users.is_empty() {
            return Err(Error::config("users", "need at least one user"));
        }
        for u in &self.users {
            u.validate()
                .map_err(|e| Error::config("users", e.to_string()))?;
        }
        self.eavesdropper
            .validate()
            .map_err(|e| Error::config("eavesdropper", e.to_string()))?;
        let air = self.airframe.build()?;
        self.limits.validate()?;
        self.propagation.validate()?;
        if let Some(u) = &self.noise.users {
            if u.len() != self.users.len() {
                return Err(Error::config(
                    "noise.users",
                    format!(
                        "need one value per user ({} given, {} users)",
                        u.len(),
                        self.users.len()
                    ),
                ));
            }
        }
        self.noise_powers().validate()?;
        let b = &self.budgets;
        if !(b.p_max.is_finite() && b.p_max > 0.0) || !(b.r_min >= 0.0) || !(b.r_max >= 0.0) {
            return Err(Error::config(
                "budgets",
                "need p_max > 0 and non-negative rate bounds",
            ));
        }
        let hover = hover_power(&air);
        if b.p_max <= hover {
            return Err(Error::config(
                "budgets.p_max",
                format!("must exceed hover power {hover:.1} W (got {})", b.p_max),
            ));
        }
        if b.r_min <= b.r_max {
            log::warn!(
                "r_min ({}) <= r_max ({}): secrecy may be zero at the constraint boundary",
                b.r_min,
                b.r_max
            );
        }
        let w = &self.weights;
        if [w.distance, w.power, w.secrecy]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(Error::config("weights", "must be finite and >= 0"));
        }
        self.mpc.validate()?;
        self.dc.validate()?;
        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol < 1.0)
            || s.max_iter == 0
            || s.sca_max_iters == 0
            || !(s.sca_tol > 0.0)
        {
            return Err(Error::config(
                "solver",
                "tolerances must be in (0, 1) and iteration caps >= 1",
            ));
        }
        if !(s.restoration_penalty > 0.0) {
            return Err(Error::config("solver.restoration_penalty", "must be > 0"));
        }
        if let Some(p) = s.an_power_fixed {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::config("solver.an_power_fixed", "must be >= 0"));
            }
        }
        for (name, f) in [
            ("init_beam_share", s.init_beam_share),
            ("init_an_ratio", s.init_an_ratio),
            ("init_speed_fraction", s.init_speed_fraction),
            ("init_power_fraction", s.init_power_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!("solver.{name}"), "must be in (0, 1]"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: None,
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::invalid(format!("scenario serialisation failed: {e}")))
    }

    /// Reads a scenario file, or the built-in scenario for `"default"`.
    pub fn load(path: &Path) -> Result<Self> {
        if path.as_os_str() == "default" {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: Some(path.to_path_buf()),
                message,
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    Scenario::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_takes_table_defaults() {
        let s = Scenario::from_toml_str("").unwrap();
        assert_eq!(s.limits.t_c, 10.0);
        assert_eq!(s.propagation.alpha_user, 2.3);
        assert_eq!(s.propagation.alpha_eve, 2.5);
        let a = s.airframe();
        assert_eq!(
            (a.weight(), a.rho(), a.disc_area(), a.zeta()),
            (39.2, 1.225, 1.0, 0.08)
        );
        assert_eq!(s.limits.v_max, 120.0);
        assert_eq!(s.limits.u_max, 30.0);
        assert_eq!(s.limits.a_max, 8.0);
        assert_eq!((s.limits.z_min, s.limits.z_max), (500.0, 900.0));
    }

    #[test]
    fn inverted_band_rejected() {
        let e = Scenario::from_toml_str("[limits]\nz_min = 900.0\nz_max = 500.0\n").unwrap_err();
        assert!(matches!(e, Error::Config { .. }), "{e}");
    }

    #[test]
    fn budget_below_hover_rejected() {
        let e = Scenario::from_toml_str("[budgets]\np_max = 100.0\n").unwrap_err();
        assert!(e.to_string().contains("hover"), "{e}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Scenario::from_toml_str("[budgets]\npmax = 500.0\n").is_err());
        assert!(Scenario::from_toml_str("colour = 1\n").is_err());
    }

    #[test]
    fn write_load_fixpoint() {
        let mut s = Scenario::with_preset(Preset::Speed).with_users(3);
        s.mpc.disturbance = crate::mpc::DisturbanceModel::gaussian(5.0, 7);
        s.solver.an_power_fixed = Some(12.5);
        let text = s.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_toml_string().unwrap(), text);
    }

    #[test]
    fn defaults_are_valid() {
        Scenario::default().validate().unwrap();
        assert_eq!(Scenario::default().noise_powers().users.len(), 2);
    }
}
