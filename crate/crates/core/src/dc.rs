//! Hermitian matrix helpers shared by the rank-one penalty loops:
//! sorted eigen-decomposition, the spectral-norm subgradient, rank-one
//! extraction and the penalty weight schedule.

use nalgebra::{DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{CMat, CVec, C64};

/// Relative eigen-gap under which the top eigenvalue counts as repeated.
const TIE_GAP: f64 = 1e-9;

/// Eigenpairs of a Hermitian matrix, largest eigenvalue first.
#[derive(Clone, Debug)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    /// Unit eigenvectors as columns, in the order of `values`.
    pub vectors: CMat,
}

pub fn hermitian_eigen(a: &CMat) -> HermitianEigen {
    let n = a.nrows();
    let sym = (a + a.adjoint()) * C64::from(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    HermitianEigen {
        values: DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]),
        vectors: CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]),
    }
}

/// Largest absolute entry of `A - A^H`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    (a - a.adjoint())
        .iter()
        .map(|x| x.norm())
        .fold(0.0, f64::max)
}

pub fn ensure_hermitian(a: &CMat, tol: f64) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::invalid("matrix is not square"));
    }
    let scale = a.iter().map(|x| x.norm()).fold(1.0, f64::max);
    if !a.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    if hermitian_defect(a) > tol * scale {
        return Err(Error::invalid("matrix is not Hermitian"));
    }
    Ok(())
}

/// Rotates `u` so its first non-negligible entry is real and positive.
fn phase_normalize(u: &CVec) -> CVec {
    let scale = u.iter().map(|x| x.norm()).fold(0.0, f64::max);
    match u.iter().find(|x| x.norm() > 1e-8 * scale) {
        Some(first) => u * (first.conj() / first.norm()),
        None => u.clone(),
    }
}

/// Unit dominant eigenvector with a deterministic choice on ties.
///
/// Within a repeated top eigenspace the candidates are the phase-normalized
/// basis vectors; the one whose real parts are lexicographically largest
/// wins.
pub fn dominant_eigvec(a: &CMat) -> (f64, CVec) {
    let eig = hermitian_eigen(a);
    let n = a.nrows();
    let top = eig.values[0];
    let tied = (1..n)
        .take_while(|&i| top - eig.values[i] < TIE_GAP * top.abs())
        .count();
    let candidates = (0..=tied).map(|i| phase_normalize(&eig.vectors.column(i).into_owned()));
    let best = candidates
        .reduce(|best, c| {
            for (x, y) in c.iter().zip(best.iter()) {
                if (x.re - y.re).abs() > 1e-12 {
                    return if x.re > y.re { c } else { best };
                }
            }
            best
        })
        .expect("non-empty matrix");
    (top, best)
}

/// `u u^H` for a unit dominant eigenvector `u`; `<G, A> = ||A||_2` for PSD `A`.
pub fn spectral_subgradient(a: &CMat) -> CMat {
    let (_, u) = dominant_eigvec(a);
    &u * u.adjoint()
}

/// `sqrt(lambda_1) u_1`, the best rank-one factor of a PSD matrix.
pub fn rank_one_factor(a: &CMat) -> CVec {
    let (l, u) = dominant_eigvec(a);
    u * C64::from(l.max(0.0).sqrt())
}

/// `lambda_2 / lambda_1`, zero for the zero matrix.
pub fn eigen_ratio(a: &CMat) -> f64 {
    let eig = hermitian_eigen(a);
    if eig.values.len() < 2 || eig.values[0] <= 0.0 {
        return 0.0;
    }
    eig.values[1].max(0.0) / eig.values[0]
}

/// `Tr(A) - ||A||_2`, non-negative for PSD `A` and zero exactly at rank one.
pub fn rank_residual(a: &CMat) -> f64 {
    let eig = hermitian_eigen(a);
    a.trace().re - eig.values[0].max(0.0)
}

/// Real inner product `Re Tr(A^H B)` of two matrices.
pub fn inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Penalty weight schedule for the rank-one loops.
///
/// Weights are multiples of a base scale supplied by the caller.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcSchedule {
    pub initial: f64,
    pub growth: f64,
    pub cap: f64,
    /// Relative residual decrease below which the weight grows.
    pub stall: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub objective_tol: f64,
    /// Solve the first iteration without the penalty (the semidefinite
    /// relaxation) so the loop starts from the relaxed optimum.
    pub relaxed_start: bool,
}

impl Default for DcSchedule {
    fn default() -> Self {
        Self {
            initial: 10.0,
            growth: 2.0,
            cap: 1e4,
            stall: 0.1,
            max_iters: 30,
            residual_tol: 1e-6,
            objective_tol: 1e-4,
            relaxed_start: true,
        }
    }
}

impl DcSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial > 0.0
            && self.growth >= 1.0
            && self.cap >= self.initial
            && (0.0..1.0).contains(&self.stall)
            && self.max_iters >= 1
            && self.residual_tol > 0.0
            && self.objective_tol > 0.0;
        if !ok {
            return Err(Error::config(
                "dc",
                "need initial > 0, growth >= 1, cap >= initial, 0 <= stall < 1, max_iters >= 1, positive tolerances",
            ));
        }
        Ok(())
    }
}

/// Mutable state of one rank-one penalty loop.
#[derive(Clone, Debug)]
pub struct DcPenaltyState {
    pub delta: f64,
    pub iteration: usize,
    cap: f64,
    last_residual: Option<f64>,
}

impl DcPenaltyState {
    pub fn new(schedule: &DcSchedule, scale: f64) -> Self {
        Self {
            delta: schedule.initial * scale,
            iteration: 0,
            cap: schedule.cap * scale,
            last_residual: None,
        }
    }

    /// Records a residual and grows the weight when it stalled.
    pub fn update(&mut self, residual: f64, schedule: &DcSchedule) {
        if let Some(prev) = self.last_residual {
            if residual > (1.0 - schedule.stall) * prev {
                self.delta = (self.delta * schedule.growth).min(self.cap);
            }
        }
        self.last_residual = Some(residual);
        self.iteration += 1;
    }
}
