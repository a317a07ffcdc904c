//! A small modelling layer over the Clarabel interior-point solver.
//!
//! Problems are built from scalar variables and Hermitian matrix
//! variables, affine expressions, and membership constraints in the zero,
//! non-negative, second-order, exponential, power and PSD cones. Hermitian
//! PSD constraints go to the backend through the real embedding
//! `[[Re X, -Im X], [Im X, Re X]]`.

use std::path::Path;
use std::time::{Duration, Instant};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{CMat, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Var(pub usize);

/// `sum coef * x_var + constant`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(v: Var) -> Self {
        Self {
            terms: vec![(v.0, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(v: Var, coef: f64) -> Self {
        Self {
            terms: vec![(v.0, coef)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, v: Var, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((v.0, coef));
        }
        self
    }

    pub fn add_const(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    pub fn add_scaled(&mut self, other: &Affine, scale: f64) -> &mut Self {
        for &(v, c) in &other.terms {
            self.terms.push((v, c * scale));
        }
        self.constant += other.constant * scale;
        self
    }

    pub fn plus(mut self, other: &Affine) -> Self {
        self.add_scaled(other, 1.0);
        self
    }

    pub fn minus(mut self, other: &Affine) -> Self {
        self.add_scaled(other, -1.0);
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn offset(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + self.constant
    }
}

impl From<Var> for Affine {
    fn from(v: Var) -> Self {
        Affine::var(v)
    }
}

/// An `n x n` Hermitian matrix variable stored as `n^2` real unknowns:
/// the diagonal, then real and imaginary parts of each upper entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HermVar {
    pub n: usize,
    pub offset: usize,
}

impl HermVar {
    fn upper_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        // position of (i, j) among the row-major strict upper triangle
        let before = i * self.n - i * (i + 1) / 2;
        before + (j - i - 1)
    }

    pub fn re(&self, i: usize, j: usize) -> Affine {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => Affine::var(Var(self.offset + i)),
            std::cmp::Ordering::Less => {
                Affine::var(Var(self.offset + self.n + 2 * self.upper_index(i, j)))
            }
            std::cmp::Ordering::Greater => self.re(j, i),
        }
    }

    pub fn im(&self, i: usize, j: usize) -> Affine {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => Affine::default(),
            std::cmp::Ordering::Less => {
                Affine::var(Var(self.offset + self.n + 2 * self.upper_index(i, j) + 1))
            }
            std::cmp::Ordering::Greater => self.im(j, i).scaled(-1.0),
        }
    }

    pub fn trace(&self) -> Affine {
        let mut e = Affine::default();
        for i in 0..self.n {
            e.add_term(Var(self.offset + i), 1.0);
        }
        e
    }

    /// `Tr(A X)` for a Hermitian coefficient matrix `A`.
    pub fn trace_with(&self, a: &CMat) -> Affine {
        let mut e = Affine::default();
        for i in 0..self.n {
            e.add_term(Var(self.offset + i), a[(i, i)].re);
            for j in i + 1..self.n {
                let base = self.offset + self.n + 2 * self.upper_index(i, j);
                e.add_term(Var(base), 2.0 * a[(i, j)].re);
                e.add_term(Var(base + 1), 2.0 * a[(i, j)].im);
            }
        }
        e
    }

    pub fn value(&self, x: &[f64]) -> CMat {
        CMat::from_fn(self.n, self.n, |i, j| {
            C64::new(self.re(i, j).eval(x), self.im(i, j).eval(x))
        })
    }

    /// Writes a Hermitian matrix into a primal vector (for warm checks).
    pub fn store(&self, a: &CMat, x: &mut [f64]) {
        for i in 0..self.n {
            x[self.offset + i] = a[(i, i)].re;
            for j in i + 1..self.n {
                let base = self.offset + self.n + 2 * self.upper_index(i, j);
                x[base] = a[(i, j)].re;
                x[base + 1] = a[(i, j)].im;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Cone {
    Zero,
    Nonneg,
    /// First row bounds the norm of the rest.
    SecondOrder,
    /// `(x, y, z)` with `y exp(x / y) <= z`.
    Exp,
    /// `(x, y, z)` with `x^a y^(1-a) >= |z|`.
    Power(f64),
    /// Upper triangle (column-major, off-diagonals times sqrt 2) of a real
    /// symmetric matrix of the given order.
    PsdTriangle(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeBlock {
    pub cone: Cone,
    pub rows: Vec<Affine>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub n_vars: usize,
    pub blocks: Vec<ConeBlock>,
    pub objective: Affine,
    /// Quadratic objective entries `(i, j, value)` of `1/2 x^T P x`.
    pub quadratic: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_usable(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: f64,
    /// Primal assignment, present only for usable statuses.
    pub x: Option<Vec<f64>>,
    pub iterations: u32,
    pub wall_time: Duration,
}

impl SolveResult {
    pub fn primal(&self) -> Result<&[f64]> {
        self.x
            .as_deref()
            .ok_or_else(|| Error::Solver(format!("no solution ({:?})", self.status)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200,
        }
    }
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(&mut self) -> Var {
        self.n_vars += 1;
        Var(self.n_vars - 1)
    }

    pub fn vars(&mut self, n: usize) -> Vec<Var> {
        (0..n).map(|_| self.var()).collect()
    }

    pub fn hermitian(&mut self, n: usize) -> HermVar {
        let h = HermVar {
            n,
            offset: self.n_vars,
        };
        self.n_vars += n * n;
        h
    }

    fn push(&mut self, cone: Cone, rows: Vec<Affine>) {
        self.blocks.push(ConeBlock { cone, rows });
    }

    /// `e == 0`.
    pub fn eq_zero(&mut self, e: Affine) {
        self.push(Cone::Zero, vec![e]);
    }

    /// `e >= 0`.
    pub fn nonneg(&mut self, e: Affine) {
        self.push(Cone::Nonneg, vec![e]);
    }

    /// `a <= b`.
    pub fn le(&mut self, a: Affine, b: Affine) {
        self.nonneg(b.minus(&a));
    }

    /// `||rest|| <= t`.
    pub fn soc(&mut self, t: Affine, rest: Vec<Affine>) {
        let mut rows = vec![t];
        rows.extend(rest);
        self.push(Cone::SecondOrder, rows);
    }

    /// `y exp(x / y) <= z`.
    pub fn exp_cone(&mut self, x: Affine, y: Affine, z: Affine) {
        self.push(Cone::Exp, vec![x, y, z]);
    }

    /// `t <= ln(z)`.
    pub fn log_hypograph(&mut self, t: Affine, z: Affine) {
        self.exp_cone(t, Affine::constant(1.0), z);
    }

    /// `exp(x) <= z`.
    pub fn exp_epigraph(&mut self, x: Affine, z: Affine) {
        self.exp_cone(x, Affine::constant(1.0), z);
    }

    /// `x^a y^(1-a) >= |z|`.
    pub fn power_cone(&mut self, x: Affine, y: Affine, z: Affine, a: f64) {
        self.push(Cone::Power(a), vec![x, y, z]);
    }

    /// `x^2 <= y * w` with `y, w >= 0` as a second-order cone.
    pub fn rotated_soc(&mut self, x: Vec<Affine>, y: Affine, w: Affine) {
        // ||(2x, y - w)|| <= y + w
        let mut rest: Vec<Affine> = x.into_iter().map(|e| e.scaled(2.0)).collect();
        rest.push(y.clone().minus(&w));
        self.soc(y.plus(&w), rest);
    }

    /// Hermitian PSD membership of `h`.
    pub fn psd(&mut self, h: &HermVar) {
        let n = h.n;
        let entry = |a: usize, b: usize| -> Affine {
            match (a < n, b < n) {
                (true, true) => h.re(a, b),
                (true, false) => h.im(a, b - n).scaled(-1.0),
                (false, true) => h.im(a - n, b),
                (false, false) => h.re(a - n, b - n),
            }
        };
        let mut rows = Vec::with_capacity(n * (2 * n + 1));
        for j in 0..2 * n {
            for i in 0..=j {
                let e = entry(i, j);
                rows.push(if i == j {
                    e
                } else {
                    e.scaled(std::f64::consts::SQRT_2)
                });
            }
        }
        self.push(Cone::PsdTriangle(2 * n), rows);
    }

    pub fn minimize(&mut self, objective: Affine) {
        self.objective = objective;
    }

    /// Adds `coef * x_i * x_j` (symmetrised) to the objective.
    pub fn add_quadratic(&mut self, i: Var, j: Var, coef: f64) {
        if i == j {
            self.quadratic.push((i.0, i.0, 2.0 * coef));
        } else {
            let (a, b) = if i.0 < j.0 { (i.0, j.0) } else { (j.0, i.0) };
            self.quadratic.push((a, b, coef));
        }
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let quad: f64 = self
            .quadratic
            .iter()
            .map(|&(i, j, v)| {
                if i == j {
                    0.5 * v * x[i] * x[i]
                } else {
                    v * x[i] * x[j]
                }
            })
            .sum();
        self.objective.eval(x) + quad
    }

    pub fn dump(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Solver(format!("problem dump failed: {e}")))?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    fn check(&self) -> Result<()> {
        for b in &self.blocks {
            let want = match b.cone {
                Cone::Exp | Cone::Power(_) => Some(3),
                Cone::PsdTriangle(n) => Some(n * (n + 1) / 2),
                _ => None,
            };
            if want.is_some_and(|w| w != b.rows.len()) || b.rows.is_empty() {
                return Err(Error::invalid(format!(
                    "cone block {:?} has wrong size",
                    b.cone
                )));
            }
            if b.rows
                .iter()
                .flat_map(|r| r.terms.iter())
                .any(|&(v, c)| v >= self.n_vars || !c.is_finite())
                || b.rows.iter().any(|r| !r.constant.is_finite())
            {
                return Err(Error::invalid(
                    "constraint references an undeclared variable or a non-finite value",
                ));
            }
        }
        Ok(())
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<SolveResult> {
        self.check()?;
        let n = self.n_vars;

        // blocks of the same kind are merged where the backend allows it
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut b = Vec::new();
        let mut row = 0;
        for blk in &self.blocks {
            let merged = match (blk.cone, cones.last_mut()) {
                (Cone::Zero, Some(SupportedConeT::ZeroConeT(k))) => {
                    *k += blk.rows.len();
                    true
                }
                (Cone::Nonneg, Some(SupportedConeT::NonnegativeConeT(k))) => {
                    *k += blk.rows.len();
                    true
                }
                _ => false,
            };
            if !merged {
                cones.push(match blk.cone {
                    Cone::Zero => SupportedConeT::ZeroConeT(blk.rows.len()),
                    Cone::Nonneg => SupportedConeT::NonnegativeConeT(blk.rows.len()),
                    Cone::SecondOrder => SupportedConeT::SecondOrderConeT(blk.rows.len()),
                    Cone::Exp => SupportedConeT::ExponentialConeT(),
                    Cone::Power(a) => SupportedConeT::PowerConeT(a),
                    Cone::PsdTriangle(k) => SupportedConeT::PSDTriangleConeT(k),
                });
            }
            for r in &blk.rows {
                for &(v, c) in &r.terms {
                    triplets.push((row, v, -c));
                }
                b.push(r.constant);
                row += 1;
            }
        }
        let a = csc(row, n, triplets);
        let mut q = vec![0.0; n];
        for &(v, c) in &self.objective.terms {
            q[v] += c;
        }
        let p = csc(n, n, self.quadratic.clone());

        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(opts.max_iter)
            .tol_gap_abs(opts.tol)
            .tol_gap_rel(opts.tol)
            .tol_feas(opts.tol)
            .build()
            .map_err(|e| Error::Solver(format!("bad solver settings: {e:?}")))?;
        let start = Instant::now();
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::Solver(format!("solver setup failed: {e:?}")))?;
        // the PSD cone panics when its eigen decomposition fails
        let solved =
            std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| solver.solve())).is_ok();
        if !solved {
            log::warn!("solver aborted in a cone projection");
        }
        let sol = &solver.solution;
        let status = match sol.status {
            _ if !solved => SolveStatus::NumericalFailure,
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::NearOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            _ => SolveStatus::NumericalFailure,
        };
        let x = status.is_usable().then(|| sol.x.clone());
        let objective = x.as_ref().map(|x| self.objective_at(x)).unwrap_or(f64::NAN);
        Ok(SolveResult {
            status,
            objective,
            x,
            iterations: sol.iterations,
            wall_time: start.elapsed(),
        })
    }
}

/// Builds a CSC matrix from triplets, summing duplicates.
fn csc(m: usize, n: usize, mut t: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    t.sort_by(|x, y| (x.1, x.0).cmp(&(y.1, y.0)));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(t.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(t.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in t {
        if last == Some((r, c)) {
            *nzval.last_mut().expect("duplicate follows an entry") += v;
            continue;
        }
        rowval.push(r);
        nzval.push(v);
        colptr[c + 1] += 1;
        last = Some((r, c));
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lp_corner() {
        let mut p = ConicProblem::new();
        let x = p.var();
        p.le(Affine::constant(3.0), x.into());
        p.minimize(x.into());
        let r = p.solve(&SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.primal().unwrap()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn identity_forced_by_psd() {
        let mut p = ConicProblem::new();
        let x = p.hermitian(2);
        // X - I is a second Hermitian variable constrained PSD
        let y = p.hermitian(2);
        for i in 0..2 {
            for j in 0..2 {
                let d = if i == j { 1.0 } else { 0.0 };
                p.eq_zero(y.re(i, j).minus(&x.re(i, j)).offset(d));
                if i < j {
                    p.eq_zero(y.im(i, j).minus(&x.im(i, j)));
                }
            }
        }
        p.psd(&y);
        p.psd(&x);
        p.minimize(x.trace());
        let r = p.solve(&SolveOptions::default()).unwrap();
        assert!(r.status.is_usable());
        assert_relative_eq!(r.objective, 2.0, epsilon = 1e-6);
        let v = x.value(r.primal().unwrap());
        assert!((v - CMat::identity(2, 2)).iter().all(|e| e.norm() < 1e-5));
    }

    #[test]
    fn trust_region_qp() {
        // min (x-3)^2 + (y-4)^2 s.t. ||(x, y)|| <= 1  ->  (0.6, 0.8)
        let mut p = ConicProblem::new();
        let x = p.var();
        let y = p.var();
        p.soc(Affine::constant(1.0), vec![x.into(), y.into()]);
        p.add_quadratic(x, x, 1.0);
        p.add_quadratic(y, y, 1.0);
        p.minimize(
            Affine::term(x, -6.0)
                .plus(&Affine::term(y, -8.0))
                .offset(25.0),
        );
        let r = p.solve(&SolveOptions::default()).unwrap();
        let s = r.primal().unwrap();
        assert!((s[0] - 0.6).abs() < 1e-6 && (s[1] - 0.8).abs() < 1e-6);
        assert_relative_eq!(r.objective, 16.0, epsilon = 1e-6);
    }

    #[test]
    fn complex_psd_embedding() {
        // maximise Re X01 + Im X01 with diag fixed to 1: optimum |X01| = 1
        let mut p = ConicProblem::new();
        let x = p.hermitian(2);
        p.eq_zero(x.re(0, 0).offset(-1.0));
        p.eq_zero(x.re(1, 1).offset(-1.0));
        p.psd(&x);
        p.minimize(x.re(0, 1).plus(&x.im(0, 1)).scaled(-1.0));
        let r = p.solve(&SolveOptions::default()).unwrap();
        let v = x.value(r.primal().unwrap());
        assert_relative_eq!(v[(0, 1)].re, 0.5f64.sqrt(), epsilon = 1e-6);
        assert_relative_eq!(v[(0, 1)].im, 0.5f64.sqrt(), epsilon = 1e-6);
        let eig = crate::dc::hermitian_eigen(&v);
        assert!(eig.values[1] >= -1e-6);
    }

    #[test]
    fn trace_with_matches_direct_product() {
        let mut p = ConicProblem::new();
        let x = p.hermitian(3);
        let a = CMat::from_fn(3, 3, |i, j| {
            C64::new((i + 2 * j) as f64, i as f64 - j as f64)
        });
        let a = (&a + a.adjoint()) * C64::from(0.5);
        let xv = CMat::from_fn(3, 3, |i, j| {
            C64::new((i * j) as f64 + 1.0, j as f64 - i as f64)
        });
        let xv = (&xv + xv.adjoint()) * C64::from(0.5);
        let mut buf = vec![0.0; p.n_vars];
        x.store(&xv, &mut buf);
        assert_relative_eq!(
            x.trace_with(&a).eval(&buf),
            (&a * &xv).trace().re,
            epsilon = 1e-12
        );
        assert_eq!(x.value(&buf), xv);
    }

    #[test]
    fn log_and_power_cones() {
        let mut p = ConicProblem::new();
        let t = p.var();
        p.log_hypograph(t.into(), Affine::constant(5.0));
        p.minimize(Affine::term(t, -1.0));
        let r = p.solve(&SolveOptions::default()).unwrap();
        assert!((r.primal().unwrap()[0] - 5f64.ln()).abs() < 1e-6);

        let mut p = ConicProblem::new();
        let t = p.var();
        p.power_cone(
            t.into(),
            Affine::constant(1.0),
            Affine::constant(2.0),
            1.0 / 3.0,
        );
        p.minimize(t.into());
        let r = p.solve(&SolveOptions::default()).unwrap();
        assert!((r.primal().unwrap()[0] - 8.0).abs() < 1e-5);
    }

    #[test]
    fn infeasible_is_reported() {
        let mut p = ConicProblem::new();
        let x = p.var();
        p.le(x.into(), Affine::constant(-1.0));
        p.nonneg(x.into());
        p.minimize(x.into());
        let r = p.solve(&SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
        assert!(r.x.is_none());
    }

    #[test]
    fn undeclared_variable_rejected() {
        let mut p = ConicProblem::new();
        p.nonneg(Affine::var(Var(3)));
        assert!(p.solve(&SolveOptions::default()).is_err());
    }

    #[test]
    fn dump_round_trips() {
        let mut p = ConicProblem::new();
        let x = p.var();
        p.nonneg(x.into());
        p.minimize(x.into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.dump(&path).unwrap();
        let back: ConicProblem =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
