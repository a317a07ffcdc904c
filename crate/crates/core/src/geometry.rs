//! Vehicle kinematics, flight-envelope checks and the rotary-wing
//! propulsion power model.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-component vector in meters or meters/second.
pub type Vec3 = Vector3<f64>;

/// Absolute tolerance used when reporting envelope violations.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Position and velocity of the vehicle at one slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub q: Vec3,
    pub v: Vec3,
}

impl UavState {
    pub fn new(q: Vec3, v: Vec3) -> Self {
        Self { q, v }
    }

    pub fn at_rest(q: Vec3) -> Self {
        Self {
            q,
            v: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// Flight envelope and slot length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KinematicLimits {
    pub z_min: f64,
    pub z_max: f64,
    /// Horizontal speed cap.
    pub v_max: f64,
    /// Vertical speed cap.
    pub u_max: f64,
    /// Acceleration cap; consecutive velocities may differ by `a_max * t_c`.
    pub a_max: f64,
    /// Slot length in seconds.
    pub t_c: f64,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        Self {
            z_min: 500.0,
            z_max: 900.0,
            v_max: 120.0,
            u_max: 30.0,
            a_max: 8.0,
            t_c: 10.0,
        }
    }
}

impl KinematicLimits {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("z_min", self.z_min),
            ("z_max", self.z_max),
            ("v_max", self.v_max),
            ("u_max", self.u_max),
            ("a_max", self.a_max),
            ("t_c", self.t_c),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(
                    format!("limits.{name}"),
                    format!("must be finite and > 0 (got {value})"),
                ));
            }
        }
        if self.z_min >= self.z_max {
            return Err(Error::config(
                "limits.z_min",
                format!("must be below z_max ({} >= {})", self.z_min, self.z_max),
            ));
        }
        Ok(())
    }

    /// Largest velocity change allowed between consecutive slots.
    pub fn max_velocity_step(&self) -> f64 {
        self.a_max * self.t_c
    }
}

/// Airframe constants of the propulsion model.
///
/// `weight` is used as the force term of the model, so it carries the
/// numeric value that makes the hover parameter come out in m/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AirframeParams {
    weight: f64,
    rho: f64,
    disc_area: f64,
    zeta: f64,
    v_hover: f64,
}

impl Default for AirframeParams {
    fn default() -> Self {
        Self::new(39.2, 1.225, 1.0, 0.08).expect("default airframe is valid")
    }
}

impl AirframeParams {
    pub fn new(weight: f64, rho: f64, disc_area: f64, zeta: f64) -> Result<Self> {
        for (name, value) in [
            ("weight", weight),
            ("rho", rho),
            ("disc_area", disc_area),
            ("zeta", zeta),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(
                    format!("airframe.{name}"),
                    format!("must be finite and > 0 (got {value})"),
                ));
            }
        }
        Ok(Self {
            weight,
            rho,
            disc_area,
            zeta,
            v_hover: (weight / (2.0 * rho * disc_area)).sqrt(),
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }
    pub fn disc_area(&self) -> f64 {
        self.disc_area
    }
    pub fn zeta(&self) -> f64 {
        self.zeta
    }
    /// Hover parameter `sqrt(W / (2 rho S))`.
    pub fn v_hover(&self) -> f64 {
        self.v_hover
    }

    /// Scale of the induced term, `W^2 / (sqrt(2) rho S)`.
    pub fn induced_scale(&self) -> f64 {
        self.weight * self.weight / (std::f64::consts::SQRT_2 * self.rho * self.disc_area)
    }

    /// Coefficient of the cubic profile term, `zeta rho S / 8`.
    pub fn profile_scale(&self) -> f64 {
        self.zeta * self.rho * self.disc_area / 8.0
    }

    fn four_vh4(&self) -> f64 {
        4.0 * self.v_hover.powi(4)
    }
}

/// Envelope violation reported by [`check_feasible`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Violation {
    NonFinite,
    Altitude { z: f64 },
    HorizontalSpeed { speed: f64 },
    VerticalSpeed { speed: f64 },
    Acceleration { delta_v: f64 },
}

pub fn horizontal(v: &Vec3) -> Vector2<f64> {
    Vector2::new(v.x, v.y)
}

/// Rolls the state one slot forward under a commanded velocity.
pub fn propagate(state: &UavState, v_cmd: &Vec3, t_c: f64) -> Result<UavState> {
    if !state.is_finite() || !v_cmd.iter().all(|x| x.is_finite()) || !t_c.is_finite() {
        return Err(Error::invalid("propagate: non-finite input"));
    }
    Ok(UavState {
        q: state.q + v_cmd * t_c,
        v: *v_cmd,
    })
}

/// Lists every envelope violation of the transition `prev -> next`.
pub fn check_feasible(
    prev: &UavState,
    next: &UavState,
    limits: &KinematicLimits,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if !prev.is_finite() || !next.is_finite() {
        out.push(Violation::NonFinite);
        return out;
    }
    let z = next.q.z;
    if z < limits.z_min - FEASIBILITY_TOL || z > limits.z_max + FEASIBILITY_TOL {
        out.push(Violation::Altitude { z });
    }
    let vh = horizontal(&next.v).norm();
    if vh > limits.v_max + FEASIBILITY_TOL {
        out.push(Violation::HorizontalSpeed { speed: vh });
    }
    if next.v.z.abs() > limits.u_max + FEASIBILITY_TOL {
        out.push(Violation::VerticalSpeed { speed: next.v.z });
    }
    let dv = (next.v - prev.v).norm();
    if dv > limits.max_velocity_step() + FEASIBILITY_TOL {
        out.push(Violation::Acceleration { delta_v: dv });
    }
    out
}

/// Propulsion power of the rotary-wing model at velocity `v`.
///
/// Steep descents make the climb term dominate and the value negative; the
/// raw value is returned.
pub fn power(v: &Vec3, air: &AirframeParams) -> f64 {
    let vh2 = horizontal(v).norm_squared();
    let induced = air.induced_scale() * (vh2 + (vh2 * vh2 + air.four_vh4()).sqrt()).powf(-0.5);
    induced + air.weight * v.z + air.profile_scale() * vh2.powf(1.5)
}

/// Power at rest.
pub fn hover_power(air: &AirframeParams) -> f64 {
    power(&Vec3::zeros(), air)
}

/// Affine lower model of the induced-term argument around an anchor.
///
/// `f(v_h) = offset + slope . v_h` never exceeds
/// `|v_h|^2 + sqrt(|v_h|^4 + 4 V_h^4)` once the anchor's horizontal speed is
/// at least 1 m/s, which turns the induced term into a convex majorant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InducedBound {
    pub offset: f64,
    pub slope: Vector2<f64>,
}

impl InducedBound {
    pub fn at(&self, vh: &Vector2<f64>) -> f64 {
        self.offset + self.slope.dot(vh)
    }
}

/// Builds the affine induced-term model for `anchor`.
pub fn induced_bound(anchor: &Vec3, air: &AirframeParams) -> Result<InducedBound> {
    let an = horizontal(anchor);
    let b2 = an.norm_squared();
    if !(b2.is_finite() && b2 >= 1.0) {
        return Err(Error::invalid(format!(
            "power bound anchor needs horizontal speed >= 1 m/s (got {})",
            b2.sqrt()
        )));
    }
    let c = (b2 * b2 + air.four_vh4()).powf(-0.5);
    Ok(InducedBound {
        offset: c * (air.four_vh4() - b2) - b2,
        slope: an * (2.0 * (c + 1.0)),
    })
}

/// Convex upper bound of [`power`] around `anchor`.
///
/// Returns `+inf` where the affine induced argument is not positive.
pub fn power_upper_bound(v: &Vec3, anchor: &Vec3, air: &AirframeParams) -> Result<f64> {
    let bound = induced_bound(anchor, air)?;
    let vh = horizontal(v);
    let f = bound.at(&vh);
    if f <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(air.induced_scale() * f.powf(-0.5)
        + air.weight * v.z
        + air.profile_scale() * vh.norm_squared().powf(1.5))
}

/// Raises an anchor's horizontal speed to at least 1 m/s.
///
/// A zero horizontal component takes the direction `fallback` (or +x).
pub fn floor_anchor(anchor: &Vec3, fallback: &Vector2<f64>) -> Vec3 {
    let vh = horizontal(anchor);
    let n = vh.norm();
    if n >= 1.0 {
        return *anchor;
    }
    let dir = if n > 1e-9 {
        vh / n
    } else if fallback.norm() > 1e-12 {
        fallback.normalize()
    } else {
        Vector2::new(1.0, 0.0)
    };
    Vec3::new(dir.x, dir.y, anchor.z)
}

/// Picks the anchor along `v`'s horizontal direction that makes the bound
/// tightest at `v`, never doing worse than `previous`.
///
/// Keeping the bound at the current point no larger than under the previous
/// anchor keeps the previous iterate feasible for the next convex subproblem.
pub fn tightest_anchor(
    v: &Vec3,
    previous: Option<&Vec3>,
    fallback: &Vector2<f64>,
    air: &AirframeParams,
) -> Vec3 {
    let vh = horizontal(v);
    let a = vh.norm();
    let dir = if a > 1e-9 {
        vh / a
    } else {
        let f = horizontal(&floor_anchor(&Vec3::zeros(), fallback));
        f / f.norm()
    };
    let value = |b: f64| {
        let b2 = b * b;
        let c = (b2 * b2 + air.four_vh4()).powf(-0.5);
        let cross = 2.0 * a * b - b2;
        c * (air.four_vh4() + cross) + cross
    };
    // coarse scan then golden-section refinement
    let hi = 2.0 * a.max(1.0) + 4.0 * air.v_hover;
    let n = 64;
    let mut best_b = 1.0;
    let mut best = value(1.0);
    for i in 1..=n {
        let b = 1.0 + (hi - 1.0) * i as f64 / n as f64;
        let f = value(b);
        if f > best {
            best = f;
            best_b = b;
        }
    }
    let step = (hi - 1.0) / n as f64;
    let (mut lo, mut up) = ((best_b - step).max(1.0), best_b + step);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let m1 = up - g * (up - lo);
        let m2 = lo + g * (up - lo);
        if value(m1) < value(m2) {
            lo = m1;
        } else {
            up = m2;
        }
    }
    let refined = 0.5 * (lo + up);
    if value(refined) > best {
        best_b = refined;
    }
    let candidate = Vec3::new(dir.x * best_b, dir.y * best_b, 0.0);
    match previous {
        Some(p) => {
            let p = floor_anchor(p, fallback);
            let pick = |anchor: &Vec3| {
                induced_bound(anchor, air)
                    .map(|b| b.at(&vh))
                    .unwrap_or(f64::NEG_INFINITY)
            };
            if pick(&p) > pick(&candidate) {
                p
            } else {
                candidate
            }
        }
        None => candidate,
    }
}
