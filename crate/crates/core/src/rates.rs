//! Achievable, eavesdropping and secrecy rates.
//!
//! Two families live here. The exact trace forms evaluate rates from lifted
//! channels and are what every log reports. The isotropic position forms
//! replace `Tr(H W)` by `Tr(W) g0 d^-alpha N`; they only drive the
//! trajectory step. Each family comes with the first-order surrogates the
//! convex subproblems are built from.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{channel_vector, lift, NodeSite, PropagationParams};
use crate::dc::{ensure_hermitian, inner};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::CMat;

/// Receiver noise powers in watts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePowers {
    pub users: Vec<f64>,
    pub eve: f64,
}

impl NoisePowers {
    pub fn uniform(k: usize, sigma2: f64) -> Self {
        Self {
            users: vec![sigma2; k],
            eve: sigma2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .users
            .iter()
            .chain(std::iter::once(&self.eve))
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(Error::config(
                "noise",
                "noise powers must be finite and > 0",
            ));
        }
        Ok(())
    }
}

/// Lifted beamformers for every user plus the AN covariance of one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamSet {
    pub w: Vec<CMat>,
    pub m: CMat,
}

impl BeamSet {
    pub fn zeros(users: usize, antennas: usize) -> Self {
        Self {
            w: vec![CMat::zeros(antennas, antennas); users],
            m: CMat::zeros(antennas, antennas),
        }
    }

    pub fn antennas(&self) -> usize {
        self.m.nrows()
    }

    pub fn beam_power(&self) -> f64 {
        self.w.iter().map(|w| w.trace().re).sum()
    }

    pub fn an_power(&self) -> f64 {
        self.m.trace().re
    }

    pub fn total_power(&self) -> f64 {
        self.beam_power() + self.an_power()
    }

    pub fn beam_traces(&self) -> Vec<f64> {
        self.w.iter().map(|w| w.trace().re).collect()
    }

    /// Checks shape, Hermitian symmetry and the PSD floor of every matrix.
    pub fn validate(&self, herm_tol: f64, psd_floor: f64) -> Result<()> {
        let n = self.antennas();
        for (i, a) in self.w.iter().chain(std::iter::once(&self.m)).enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::invalid(format!("beam matrix {i} has wrong shape")));
            }
            ensure_hermitian(a, herm_tol)?;
            let lmin = crate::dc::hermitian_eigen(a).values[n - 1];
            if lmin < psd_floor {
                return Err(Error::invalid(format!(
                    "beam matrix {i} is not PSD (min eigenvalue {lmin})"
                )));
            }
        }
        Ok(())
    }
}

/// Lifted channels of every user and the eavesdropper at one position.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotChannels {
    pub users: Vec<CMat>,
    pub eve: CMat,
}

impl SlotChannels {
    pub fn at(
        q: &Vec3,
        users: &[NodeSite],
        eve: &NodeSite,
        params: &PropagationParams,
    ) -> Result<Self> {
        let users = users
            .iter()
            .map(|u| channel_vector(q, u, params).map(|h| lift(&h)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            users,
            eve: lift(&channel_vector(q, eve, params)?),
        })
    }
}

/// Per-user rates of one slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub user: Vec<f64>,
    pub eaves: Vec<f64>,
    pub secrecy: Vec<f64>,
    pub secrecy_sum: f64,
}

/// Interference-plus-noise seen by user `k`.
pub fn user_interference(h_k: &CMat, beams: &BeamSet, k: usize, noise: &NoisePowers) -> f64 {
    let inter: f64 = beams
        .w
        .iter()
        .enumerate()
        .filter(|(r, _)| *r != k)
        .map(|(_, w)| inner(h_k, w))
        .sum();
    inter + inner(h_k, &beams.m) + noise.users[k]
}

pub fn user_rate(h_k: &CMat, beams: &BeamSet, k: usize, noise: &NoisePowers) -> f64 {
    let signal = inner(h_k, &beams.w[k]);
    (1.0 + signal / user_interference(h_k, beams, k, noise)).log2()
}

pub fn eaves_rate(g_e: &CMat, beams: &BeamSet, k: usize, noise: &NoisePowers) -> f64 {
    let signal = inner(g_e, &beams.w[k]);
    (1.0 + signal / (inner(g_e, &beams.m) + noise.eve)).log2()
}

pub fn secrecy_rate(r: f64, c: f64) -> f64 {
    (r - c).max(0.0)
}

pub fn rate_report(ch: &SlotChannels, beams: &BeamSet, noise: &NoisePowers) -> RateReport {
    let k = beams.w.len();
    let user: Vec<f64> = (0..k)
        .map(|i| user_rate(&ch.users[i], beams, i, noise))
        .collect();
    let eaves: Vec<f64> = (0..k)
        .map(|i| eaves_rate(&ch.eve, beams, i, noise))
        .collect();
    let secrecy: Vec<f64> = user
        .iter()
        .zip(&eaves)
        .map(|(r, c)| secrecy_rate(*r, *c))
        .collect();
    RateReport {
        secrecy_sum: secrecy.iter().sum(),
        user,
        eaves,
        secrecy,
    }
}

// ---------------------------------------------------------------------------
// Position family

/// One `coef * |q - site|^-alpha` term inside a position log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LawTerm {
    pub site: Vec3,
    pub coef: f64,
}

/// `log2(sum_j coef_j |q - p_j|^-alpha + floor)`.
///
/// In squared distances `z_j` the function is convex and non-increasing,
/// which is what makes the bound-valid surrogates below work.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerLawLog {
    pub terms: Vec<LawTerm>,
    pub alpha: f64,
    pub floor: f64,
}

impl PowerLawLog {
    fn inside(&self, q: &Vec3) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * (q - t.site).norm().powf(-self.alpha))
            .sum::<f64>()
            + self.floor
    }

    pub fn value(&self, q: &Vec3) -> f64 {
        self.inside(q).log2()
    }

    /// Closed-form position gradient.
    pub fn gradient(&self, q: &Vec3) -> Vec3 {
        let num: Vec3 = self
            .terms
            .iter()
            .map(|t| {
                let d = q - t.site;
                d * (t.coef * d.norm().powf(-self.alpha - 2.0))
            })
            .sum();
        num * (-self.alpha / (LN_2 * self.inside(q)))
    }

    /// Value as a function of squared distances, `+inf` outside the domain.
    pub fn value_sq(&self, z: &[f64]) -> f64 {
        if z.iter().any(|&x| !(x > 0.0)) {
            return f64::INFINITY;
        }
        let inside: f64 = self
            .terms
            .iter()
            .zip(z)
            .map(|(t, &x)| t.coef * x.powf(-0.5 * self.alpha))
            .sum::<f64>()
            + self.floor;
        inside.log2()
    }

    /// Partial derivatives with respect to the squared distances.
    pub fn grad_sq(&self, z: &[f64]) -> Vec<f64> {
        let inside: f64 = self
            .terms
            .iter()
            .zip(z)
            .map(|(t, &x)| t.coef * x.powf(-0.5 * self.alpha))
            .sum::<f64>()
            + self.floor;
        self.terms
            .iter()
            .zip(z)
            .map(|(t, &x)| {
                -0.5 * self.alpha * t.coef * x.powf(-0.5 * self.alpha - 1.0) / (LN_2 * inside)
            })
            .collect()
    }

    pub fn sq_distances(&self, q: &Vec3) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| (q - t.site).norm_squared())
            .collect()
    }

    /// Affine first-order expansion in `q` at `anchor`.
    pub fn tangent(&self, anchor: &Vec3) -> AffineQ {
        AffineQ {
            anchor: *anchor,
            value: self.value(anchor),
            slope: self.gradient(anchor),
        }
    }

    /// Concave minorant tangent at `anchor`, linear in the squared distances.
    pub fn minorant(&self, anchor: &Vec3) -> SqDistanceMinorant {
        let z0 = self.sq_distances(anchor);
        SqDistanceMinorant {
            sites: self.terms.iter().map(|t| t.site).collect(),
            base: self.value_sq(&z0),
            weights: self.grad_sq(&z0),
            z0,
        }
    }

    /// Convex majorant tangent at `anchor`: the log evaluated at the
    /// tangent planes of the squared distances.
    pub fn majorant_at(&self, anchor: &Vec3, q: &Vec3) -> f64 {
        let z: Vec<f64> = self
            .terms
            .iter()
            .map(|t| chord_sq_distance(anchor, &t.site, q))
            .collect();
        self.value_sq(&z)
    }
}

/// Tangent plane of `|q - site|^2` at `anchor`, a global under-estimate.
pub fn chord_sq_distance(anchor: &Vec3, site: &Vec3, q: &Vec3) -> f64 {
    let d0 = anchor - site;
    d0.norm_squared() + 2.0 * d0.dot(&(q - anchor))
}

/// `value + slope . (q - anchor)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineQ {
    pub anchor: Vec3,
    pub value: f64,
    pub slope: Vec3,
}

impl AffineQ {
    pub fn at(&self, q: &Vec3) -> f64 {
        self.value + self.slope.dot(&(q - self.anchor))
    }
}

/// `base + sum_j weights_j (|q - p_j|^2 - z0_j)` with non-positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SqDistanceMinorant {
    pub sites: Vec<Vec3>,
    pub z0: Vec<f64>,
    pub base: f64,
    pub weights: Vec<f64>,
}

impl SqDistanceMinorant {
    pub fn at(&self, q: &Vec3) -> f64 {
        self.base
            + self
                .sites
                .iter()
                .zip(&self.z0)
                .zip(&self.weights)
                .map(|((p, z0), w)| w * ((q - p).norm_squared() - z0))
                .sum::<f64>()
    }
}

/// Fixed transmit-power inputs of the position family.
#[derive(Clone, Debug, PartialEq)]
pub struct IsoPowers {
    pub beam_traces: Vec<f64>,
    pub an_trace: f64,
    /// Measure interference toward user `k` at user `k`'s own distance
    /// instead of at each interferer's intended receiver.
    pub interference_at_own_distance: bool,
}

impl IsoPowers {
    pub fn from_beams(beams: &BeamSet, interference_at_own_distance: bool) -> Self {
        Self {
            beam_traces: beams.beam_traces(),
            an_trace: beams.an_power(),
            interference_at_own_distance,
        }
    }
}

/// Signal-plus-interference log and interference log of user `k`.
pub fn user_rate_logs(
    k: usize,
    powers: &IsoPowers,
    users: &[NodeSite],
    params: &PropagationParams,
    noise: &NoisePowers,
) -> (PowerLawLog, PowerLawLog) {
    let scale = params.g0 * params.antennas as f64;
    let own = users[k].position;
    let site = |r: usize| {
        if powers.interference_at_own_distance {
            own
        } else {
            users[r].position
        }
    };
    // terms at the same site are merged so each node contributes once
    let mut first: Vec<LawTerm> = Vec::new();
    let mut second: Vec<LawTerm> = Vec::new();
    let push = |list: &mut Vec<LawTerm>, at: Vec3, coef: f64| {
        if let Some(t) = list.iter_mut().find(|t| t.site == at) {
            t.coef += coef;
        } else {
            list.push(LawTerm { site: at, coef });
        }
    };
    for (r, &tr) in powers.beam_traces.iter().enumerate() {
        let at = if r == k { own } else { site(r) };
        push(&mut first, at, tr * scale);
        if r != k {
            push(&mut second, at, tr * scale);
        }
    }
    push(&mut first, own, powers.an_trace * scale);
    push(&mut second, own, powers.an_trace * scale);
    let mk = |terms| PowerLawLog {
        terms,
        alpha: params.alpha_user,
        floor: noise.users[k],
    };
    (mk(first), mk(second))
}

/// Leaked-signal-plus-AN log and AN-only log at the eavesdropper for user `k`.
pub fn eaves_rate_logs(
    k: usize,
    powers: &IsoPowers,
    eve: &NodeSite,
    params: &PropagationParams,
    noise: &NoisePowers,
) -> (PowerLawLog, PowerLawLog) {
    let scale = params.g0 * params.antennas as f64;
    let mk = |coef: f64| PowerLawLog {
        terms: vec![LawTerm {
            site: eve.position,
            coef,
        }],
        alpha: params.alpha_eve,
        floor: noise.eve,
    };
    (
        mk((powers.beam_traces[k] + powers.an_trace) * scale),
        mk(powers.an_trace * scale),
    )
}

/// Rate together with the two logs it is the difference of.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogSplit {
    pub first: f64,
    pub second: f64,
}

impl LogSplit {
    pub fn rate(&self) -> f64 {
        self.first - self.second
    }
}

fn check_distinct(q: &Vec3, sites: impl IntoIterator<Item = Vec3>) -> Result<()> {
    for p in sites {
        if (q - p).norm() <= 0.0 {
            return Err(Error::invalid("position coincides with a node"));
        }
    }
    Ok(())
}

pub fn iso_user_rate(
    q: &Vec3,
    k: usize,
    powers: &IsoPowers,
    users: &[NodeSite],
    params: &PropagationParams,
    noise: &NoisePowers,
) -> Result<LogSplit> {
    check_distinct(q, users.iter().map(|u| u.position))?;
    let (a, b) = user_rate_logs(k, powers, users, params, noise);
    Ok(LogSplit {
        first: a.value(q),
        second: b.value(q),
    })
}

pub fn iso_eaves_rate(
    q: &Vec3,
    k: usize,
    powers: &IsoPowers,
    eve: &NodeSite,
    params: &PropagationParams,
    noise: &NoisePowers,
) -> Result<LogSplit> {
    check_distinct(q, [eve.position])?;
    let (a, b) = eaves_rate_logs(k, powers, eve, params, noise);
    Ok(LogSplit {
        first: a.value(q),
        second: b.value(q),
    })
}

/// Position gradient of user `k`'s interference log.
pub fn grad_interference_position(
    q: &Vec3,
    k: usize,
    powers: &IsoPowers,
    users: &[NodeSite],
    params: &PropagationParams,
    noise: &NoisePowers,
) -> Vec3 {
    user_rate_logs(k, powers, users, params, noise)
        .1
        .gradient(q)
}

/// Position gradient of the eavesdropper's signal-plus-AN log for user `k`.
pub fn grad_leakage_position(
    q: &Vec3,
    k: usize,
    powers: &IsoPowers,
    eve: &NodeSite,
    params: &PropagationParams,
    noise: &NoisePowers,
) -> Vec3 {
    eaves_rate_logs(k, powers, eve, params, noise).0.gradient(q)
}

/// Surrogates of user `k`'s isotropic rates around a position anchor.
///
/// `interference_tangent` and `leakage_tangent` are the plain first-order
/// expansions of the subtracted logs. Because those logs are not concave
/// in position, the bound-valid surrogates `user_lower` / `eaves_upper`
/// expand in squared distance instead; both touch the true rates at the
/// anchor with matching gradient.
#[derive(Clone, Debug)]
pub struct PositionSurrogates {
    pub anchor: Vec3,
    pub interference_tangent: AffineQ,
    pub leakage_tangent: AffineQ,
    pub signal_minorant: SqDistanceMinorant,
    pub interference: PowerLawLog,
    pub leakage: PowerLawLog,
    pub an_minorant: SqDistanceMinorant,
}

impl PositionSurrogates {
    pub fn user_lower(&self, q: &Vec3) -> f64 {
        self.signal_minorant.at(q) - self.interference.majorant_at(&self.anchor, q)
    }

    pub fn eaves_upper(&self, q: &Vec3) -> f64 {
        self.leakage.majorant_at(&self.anchor, q) - self.an_minorant.at(q)
    }

    pub fn secrecy(&self, q: &Vec3) -> f64 {
        self.user_lower(q) - self.eaves_upper(q)
    }
}

pub fn linearize_position_surrogates(
    anchor: &Vec3,
    k: usize,
    powers: &IsoPowers,
    users: &[NodeSite],
    eve: &NodeSite,
    params: &PropagationParams,
    noise: &NoisePowers,
) -> Result<PositionSurrogates> {
    check_distinct(
        anchor,
        users.iter().map(|u| u.position).chain([eve.position]),
    )?;
    let (signal, interference) = user_rate_logs(k, powers, users, params, noise);
    let (leakage, an) = eaves_rate_logs(k, powers, eve, params, noise);
    Ok(PositionSurrogates {
        anchor: *anchor,
        interference_tangent: interference.tangent(anchor),
        leakage_tangent: leakage.tangent(anchor),
        signal_minorant: signal.minorant(anchor),
        an_minorant: an.minorant(anchor),
        interference,
        leakage,
    })
}

// ---------------------------------------------------------------------------
// Matrix family

/// `log2(<A, X> + c)` linearized at `X0`: value and matrix gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceLogTangent {
    pub anchor: CMat,
    pub value: f64,
    pub grad: CMat,
}

impl TraceLogTangent {
    pub fn at(&self, x: &CMat) -> f64 {
        self.value + inner(&self.grad, &(x - &self.anchor))
    }
}

/// Gradient of `log2(<A, X> + rest)` in `X`: `A / (ln2 (<A, X> + rest))`.
fn trace_log_grad(a: &CMat, denom: f64) -> CMat {
    a * crate::C64::from(1.0 / (LN_2 * denom))
}

/// Gradient of the eavesdropping rate with respect to user `k`'s beam.
pub fn grad_eaves_wrt_beam(g_e: &CMat, beams: &BeamSet, k: usize, noise: &NoisePowers) -> CMat {
    let d = inner(g_e, &beams.m) + inner(g_e, &beams.w[k]) + noise.eve;
    trace_log_grad(g_e, d)
}

/// Gradient of user `k`'s interference log with respect to the AN matrix.
pub fn grad_interference_wrt_an(
    h_k: &CMat,
    beams: &BeamSet,
    k: usize,
    noise: &NoisePowers,
) -> CMat {
    trace_log_grad(h_k, user_interference(h_k, beams, k, noise))
}

/// Gradient of the eavesdropper's leaked-signal log with respect to the AN
/// matrix.
pub fn grad_leakage_wrt_an(g_e: &CMat, beams: &BeamSet, k: usize, noise: &NoisePowers) -> CMat {
    grad_eaves_wrt_beam(g_e, beams, k, noise)
}

/// Beam-step majorant of the eavesdropping rate in `W_k`.
pub fn eaves_majorant_in_beam(
    g_e: &CMat,
    anchor: &BeamSet,
    k: usize,
    noise: &NoisePowers,
) -> Result<TraceLogTangent> {
    ensure_hermitian(&anchor.w[k], 1e-8)?;
    let d = inner(g_e, &anchor.m) + inner(g_e, &anchor.w[k]) + noise.eve;
    Ok(TraceLogTangent {
        anchor: anchor.w[k].clone(),
        value: d.log2(),
        grad: grad_eaves_wrt_beam(g_e, anchor, k, noise),
    })
}

/// Evaluates the beam-step majorant of user `k`'s eavesdropping rate.
pub fn eaves_beam_surrogate(
    t: &TraceLogTangent,
    g_e: &CMat,
    m: &CMat,
    w_k: &CMat,
    noise: &NoisePowers,
) -> f64 {
    t.at(w_k) - (inner(g_e, m) + noise.eve).log2()
}

/// Beam-step minorant of user `k`'s rate: the interference log is
/// linearized in every other user's beam.
#[derive(Clone, Debug)]
pub struct UserBeamMinorant {
    pub k: usize,
    pub base: f64,
    /// Gradient with respect to each interfering `W_r` (zero for `r == k`).
    pub grad: CMat,
    pub anchors: Vec<CMat>,
}

impl UserBeamMinorant {
    pub fn new(h_k: &CMat, anchor: &BeamSet, k: usize, noise: &NoisePowers) -> Result<Self> {
        for w in &anchor.w {
            ensure_hermitian(w, 1e-8)?;
        }
        let d = user_interference(h_k, anchor, k, noise);
        Ok(Self {
            k,
            base: d.log2(),
            grad: trace_log_grad(h_k, d),
            anchors: anchor.w.clone(),
        })
    }

    pub fn interference_upper(&self, w: &[CMat]) -> f64 {
        self.base
            + w.iter()
                .zip(&self.anchors)
                .enumerate()
                .filter(|(r, _)| *r != self.k)
                .map(|(_, (x, x0))| inner(&self.grad, &(x - x0)))
                .sum::<f64>()
    }

    pub fn at(&self, h_k: &CMat, beams: &BeamSet, noise: &NoisePowers) -> f64 {
        let total: f64 = beams.w.iter().map(|w| inner(h_k, w)).sum::<f64>()
            + inner(h_k, &beams.m)
            + noise.users[self.k];
        total.log2() - self.interference_upper(&beams.w)
    }
}

/// AN-step surrogates of user `k`'s rates, both linear in the AN matrix
/// where the exact log is concave.
#[derive(Clone, Debug)]
pub struct AnSurrogates {
    pub k: usize,
    pub interference: TraceLogTangent,
    pub leakage: TraceLogTangent,
}

impl AnSurrogates {
    pub fn new(
        h_k: &CMat,
        g_e: &CMat,
        anchor: &BeamSet,
        k: usize,
        noise: &NoisePowers,
    ) -> Result<Self> {
        ensure_hermitian(&anchor.m, 1e-8)?;
        let di = user_interference(h_k, anchor, k, noise);
        let dl = inner(g_e, &anchor.m) + inner(g_e, &anchor.w[k]) + noise.eve;
        Ok(Self {
            k,
            interference: TraceLogTangent {
                anchor: anchor.m.clone(),
                value: di.log2(),
                grad: grad_interference_wrt_an(h_k, anchor, k, noise),
            },
            leakage: TraceLogTangent {
                anchor: anchor.m.clone(),
                value: dl.log2(),
                grad: grad_leakage_wrt_an(g_e, anchor, k, noise),
            },
        })
    }

    /// Minorant of the user rate at AN matrix `m`.
    pub fn user_lower(&self, h_k: &CMat, beams: &BeamSet, noise: &NoisePowers) -> f64 {
        let total: f64 = beams.w.iter().map(|w| inner(h_k, w)).sum::<f64>()
            + inner(h_k, &beams.m)
            + noise.users[self.k];
        total.log2() - self.interference.at(&beams.m)
    }

    /// Majorant of the eavesdropping rate at AN matrix `m`.
    pub fn eaves_upper(&self, g_e: &CMat, beams: &BeamSet, noise: &NoisePowers) -> f64 {
        self.leakage.at(&beams.m) - (inner(g_e, &beams.m) + noise.eve).log2()
    }
}
