//! Line-of-sight array channels between the vehicle and ground nodes.

use std::f64::consts::PI;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::{CMat, CVec, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    User,
    Eavesdropper,
}

/// A ground receiver. Users sit at zero altitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSite {
    pub position: Vec3,
    pub role: NodeRole,
}

impl NodeSite {
    pub fn user(x: f64, y: f64) -> Self {
        Self {
            position: Vec3::new(x, y, 0.0),
            role: NodeRole::User,
        }
    }

    pub fn eavesdropper(position: Vec3) -> Self {
        Self {
            position,
            role: NodeRole::Eavesdropper,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("node position must be finite"));
        }
        if self.role == NodeRole::User && self.position.z != 0.0 {
            return Err(Error::invalid(format!(
                "user altitude must be 0 (got {})",
                self.position.z
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationParams {
    /// Linear power gain at 1 m.
    pub g0: f64,
    /// Path-loss exponent toward users.
    pub alpha_user: f64,
    /// Path-loss exponent toward the eavesdropper.
    pub alpha_eve: f64,
    pub antennas: usize,
    pub spacing: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            g0: 1e-3,
            alpha_user: 2.3,
            alpha_eve: 2.5,
            antennas: 4,
            spacing: 0.5,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.g0.is_finite() && self.g0 > 0.0) {
            return Err(Error::config("propagation.g0", "must be > 0"));
        }
        for (name, a) in [
            ("alpha_user", self.alpha_user),
            ("alpha_eve", self.alpha_eve),
        ] {
            if !(a.is_finite() && a >= 2.0) {
                return Err(Error::config(
                    format!("propagation.{name}"),
                    format!("must be >= 2 (got {a})"),
                ));
            }
        }
        if self.antennas == 0 {
            return Err(Error::config("propagation.antennas", "must be >= 1"));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(Error::config("propagation.spacing", "must be > 0"));
        }
        Ok(())
    }

    pub fn exponent(&self, role: NodeRole) -> f64 {
        match role {
            NodeRole::User => self.alpha_user,
            NodeRole::Eavesdropper => self.alpha_eve,
        }
    }

    /// Large-scale power gain `g0 d^-alpha` at distance `d`.
    pub fn path_gain(&self, role: NodeRole, distance: f64) -> f64 {
        self.g0 * distance.powf(-self.exponent(role))
    }
}

/// Row channel from the array to one node.
///
/// `|row . w|^2` is the received signal power for beamformer `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelVector {
    pub entries: CVec,
}

impl ChannelVector {
    pub fn norm_squared(&self) -> f64 {
        self.entries.norm_squared()
    }

    /// Received power `|row . w|^2`.
    pub fn gain(&self, w: &CVec) -> f64 {
        self.entries
            .iter()
            .zip(w.iter())
            .map(|(h, x)| h * x)
            .sum::<C64>()
            .norm_sqr()
    }
}

/// Elevation sine of the departure angle from the vehicle to a node.
pub fn aod_sine(uav_q: &Vec3, node: &NodeSite) -> Result<f64> {
    let d = uav_q - node.position;
    let n = d.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::invalid("vehicle and node coincide"));
    }
    Ok((d.z / n).clamp(-1.0, 1.0))
}

pub fn steering_vector(sin_angle: f64, params: &PropagationParams) -> Result<CVec> {
    if !(sin_angle.abs() <= 1.0) {
        return Err(Error::invalid(format!(
            "angle sine out of range: {sin_angle}"
        )));
    }
    let phase = -2.0 * PI * params.spacing * sin_angle;
    Ok(CVec::from_fn(params.antennas, |n, _| {
        Complex::from_polar(1.0, phase * n as f64)
    }))
}

pub fn channel_vector(
    uav_q: &Vec3,
    node: &NodeSite,
    params: &PropagationParams,
) -> Result<ChannelVector> {
    let distance = (uav_q - node.position).norm();
    let sine = aod_sine(uav_q, node)?;
    let scale = params.path_gain(node.role, distance).sqrt();
    Ok(ChannelVector {
        entries: steering_vector(sine, params)? * C64::from(scale),
    })
}

/// Hermitian rank-one matrix `H` with `Tr(H w w^H) = |row . w|^2`.
pub fn lift(ch: &ChannelVector) -> CMat {
    let h = ch.entries.map(|x| x.conj());
    &h * h.adjoint()
}
