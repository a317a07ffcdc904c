//! Beamforming step: lifted beams of one slot with the trajectory and AN
//! covariance held fixed, solved as a sequence of SDPs with a rank-one
//! penalty.

use std::f64::consts::LN_2;

use crate::conic::{Affine, ConicProblem, HermVar, SolveOptions};
use crate::dc::{
    dominant_eigvec, hermitian_eigen, inner, rank_residual, spectral_subgradient, DcPenaltyState,
};
use crate::error::Result;
use crate::harness::scenario::Scenario;
use crate::rates::{
    eaves_rate, grad_eaves_wrt_beam, user_interference, user_rate, BeamSet, NoisePowers,
    SlotChannels,
};
use crate::{CMat, C64};

/// Fixed data of one slot's beam or AN step.
pub struct SlotInputs<'a> {
    pub scenario: &'a Scenario,
    pub channels: &'a SlotChannels,
    pub noise: &'a NoisePowers,
    /// Propulsion power charged against the budget (the bound in use).
    pub fly_power: f64,
}

impl SlotInputs<'_> {
    pub(crate) fn weight(&self) -> f64 {
        self.scenario.weights.secrecy
    }

    /// Base scale of the rank penalty and slack weights.
    pub(crate) fn scale(&self) -> f64 {
        if self.weight() > 0.0 {
            self.weight()
        } else {
            1.0
        }
    }

    pub(crate) fn slack_penalty(&self) -> f64 {
        self.scenario.solver.restoration_penalty * self.scale()
    }

    pub(crate) fn options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.scenario.solver.tol,
            max_iter: self.scenario.solver.max_iter,
        }
    }

    /// Total rate-constraint violation of `beams` in exact rates.
    pub fn violation(&self, beams: &BeamSet) -> f64 {
        let b = &self.scenario.budgets;
        (0..beams.w.len())
            .map(|k| {
                let r = user_rate(&self.channels.users[k], beams, k, self.noise);
                let c = eaves_rate(&self.channels.eve, beams, k, self.noise);
                (b.r_min - r).max(0.0) + (c - b.r_max).max(0.0)
            })
            .sum()
    }

    /// Unclamped secrecy sum in exact rates.
    pub fn secrecy(&self, beams: &BeamSet) -> f64 {
        (0..beams.w.len())
            .map(|k| {
                user_rate(&self.channels.users[k], beams, k, self.noise)
                    - eaves_rate(&self.channels.eve, beams, k, self.noise)
            })
            .sum()
    }

    /// Power left for radiation after propulsion.
    pub fn radiated_budget(&self) -> f64 {
        self.scenario.budgets.p_max - self.fly_power
    }
}

/// Result of a rank-one penalty loop.
#[derive(Clone, Debug)]
pub struct DcOutcome {
    pub beams: BeamSet,
    /// Penalised objective before and after each accepted iteration,
    /// evaluated at the weight used in that iteration.
    pub steps: Vec<(f64, f64)>,
    pub iterations: usize,
    pub converged: bool,
    pub slack: bool,
    /// The anchor violated the rate constraints and was replaced by the
    /// joint minimum-power point before the loop.
    pub restored: bool,
    /// The first subproblem failed and the input was returned.
    pub infeasible: bool,
}

/// Exact penalised objective of the beam step.
pub fn beam_objective(inp: &SlotInputs, beams: &BeamSet, delta: f64) -> f64 {
    let rank: f64 = beams.w.iter().map(rank_residual).sum();
    inp.weight() * inp.secrecy(beams) - delta * rank - inp.slack_penalty() * inp.violation(beams)
}

/// Adds `t <= ln(aff)` and returns `t`.
pub(crate) fn log_of(p: &mut ConicProblem, aff: Affine) -> Affine {
    let t = p.var();
    p.log_hypograph(Affine::var(t), aff);
    Affine::var(t)
}

/// `W_k` forced to zero (used when the budget is exhausted).
fn zero_beams(beams: &BeamSet) -> BeamSet {
    BeamSet::zeros(beams.w.len(), beams.antennas()).with_an(beams.m.clone())
}

impl BeamSet {
    pub fn with_an(mut self, m: CMat) -> Self {
        self.m = m;
        self
    }
}

/// One convex beam subproblem around `anchor` with subgradient anchors
/// `subgrads`. Returns `None` if the backend fails.
pub fn solve_beamforming(
    inp: &SlotInputs,
    anchor: &BeamSet,
    subgrads: &[CMat],
    delta: f64,
    slack: bool,
) -> Result<Option<Vec<CMat>>> {
    let s = inp.scenario;
    let k_users = anchor.w.len();
    let n = anchor.antennas();
    let nz = inp.noise;
    let ch = inp.channels;
    let mut p = ConicProblem::new();
    let w: Vec<HermVar> = (0..k_users).map(|_| p.hermitian(n)).collect();
    for x in &w {
        p.psd(x);
    }
    let mut budget = Affine::constant(inp.radiated_budget() - anchor.an_power());
    for x in &w {
        budget.add_scaled(&x.trace(), -1.0);
    }
    p.nonneg(budget);

    let mut objective = Affine::default();
    for k in 0..k_users {
        let hn = &ch.users[k] * C64::from(1.0 / nz.users[k]);
        let mut total = Affine::constant(1.0 + inner(&hn, &anchor.m));
        for x in &w {
            total.add_scaled(&x.trace_with(&hn), 1.0);
        }
        let t = log_of(&mut p, total);
        // interference log linearised in the other users' beams
        let d = user_interference(&ch.users[k], anchor, k, nz);
        let g = &ch.users[k] * C64::from(1.0 / (LN_2 * d));
        let mut interf = Affine::constant(d.log2());
        for (r, x) in w.iter().enumerate().filter(|(r, _)| *r != k) {
            interf.add_scaled(&x.trace_with(&g), 1.0);
            interf.add_const(-inner(&g, &anchor.w[r]));
        }
        let r_lo = t
            .scaled(1.0 / LN_2)
            .offset(nz.users[k].log2())
            .minus(&interf);

        // eavesdropping rate linearised in W_k
        let de = inner(&ch.eve, &anchor.m) + inner(&ch.eve, &anchor.w[k]) + nz.eve;
        let ge = grad_eaves_wrt_beam(&ch.eve, anchor, k, nz);
        let c_hi = w[k].trace_with(&ge).offset(
            de.log2() - inner(&ge, &anchor.w[k]) - (inner(&ch.eve, &anchor.m) + nz.eve).log2(),
        );

        objective.add_scaled(&r_lo, -inp.weight());
        objective.add_scaled(&c_hi, inp.weight());
        if slack {
            let xi = p.var();
            let xe = p.var();
            p.nonneg(Affine::var(xi));
            p.nonneg(Affine::var(xe));
            p.le(
                Affine::constant(s.budgets.r_min),
                r_lo.plus(&Affine::var(xi)),
            );
            p.le(
                c_hi.minus(&Affine::var(xe)),
                Affine::constant(s.budgets.r_max),
            );
            objective.add_term(xi, inp.slack_penalty());
            objective.add_term(xe, inp.slack_penalty());
        }
        // rank penalty delta (Tr W - <u u^H, W>)
        let pen = w[k].trace().minus(&w[k].trace_with(&subgrads[k]));
        objective.add_scaled(&pen, delta);
    }
    if !slack {
        add_rate_constraints(
            &mut p,
            inp,
            |a, r| w[r].trace_with(a),
            |a| Affine::constant(inner(a, &anchor.m)),
        );
    }
    p.minimize(objective);
    let res = p.solve(&inp.options())?;
    Ok(res
        .x
        .as_ref()
        .map(|x| w.iter().map(|v| v.value(x)).map(hermitize).collect()))
}

/// Exact rate constraints in SINR form, linear in the beams and the AN
/// matrix. `beam(A, r)` and `an(A)` give `Tr(A W_r)` and `Tr(A M)`.
pub(crate) fn add_rate_constraints(
    p: &mut ConicProblem,
    inp: &SlotInputs,
    beam: impl Fn(&CMat, usize) -> Affine,
    an: impl Fn(&CMat) -> Affine,
) {
    let b = &inp.scenario.budgets;
    let nz = inp.noise;
    let g_user = 2f64.powf(b.r_min) - 1.0;
    let g_eve = 2f64.powf(b.r_max) - 1.0;
    let ge = &inp.channels.eve * C64::from(1.0 / nz.eve);
    let k_users = inp.channels.users.len();
    for k in 0..k_users {
        let hn = &inp.channels.users[k] * C64::from(1.0 / nz.users[k]);
        let mut rest = an(&hn).offset(1.0);
        for r in (0..k_users).filter(|&r| r != k) {
            rest.add_scaled(&beam(&hn, r), 1.0);
        }
        p.le(rest.scaled(g_user), beam(&hn, k));
        p.le(beam(&ge, k), an(&ge).offset(1.0).scaled(g_eve));
    }
}

/// Joint minimum-power beams and AN meeting every rate constraint within
/// the radiated budget, or `None` when no such point exists.
pub fn restore_feasibility(inp: &SlotInputs, anchor: &BeamSet) -> Result<Option<BeamSet>> {
    let budget = inp.radiated_budget();
    if budget <= 0.0 {
        return Ok(None);
    }
    let n = anchor.antennas();
    let mut p = ConicProblem::new();
    let w: Vec<HermVar> = (0..anchor.w.len()).map(|_| p.hermitian(n)).collect();
    let m = p.hermitian(n);
    for x in w.iter().chain([&m]) {
        p.psd(x);
    }
    let mut total = m.trace();
    for x in &w {
        total.add_scaled(&x.trace(), 1.0);
    }
    p.le(total.clone(), Affine::constant(budget));
    if let Some(pw) = inp.scenario.solver.an_power_fixed {
        p.eq_zero(m.trace().offset(-pw));
    }
    add_rate_constraints(&mut p, inp, |a, r| w[r].trace_with(a), |a| m.trace_with(a));
    p.minimize(total.scaled(1.0 / budget));
    let res = p.solve(&inp.options())?;
    let Some(x) = res.x.as_ref() else {
        return Ok(None);
    };
    let out = BeamSet {
        w: w.iter().map(|v| hermitize(v.value(x))).collect(),
        m: hermitize(m.value(x)),
    };
    Ok((inp.violation(&out) <= VIOLATION_TOL).then_some(out))
}

/// Radiated power, in watts, below which a matrix is solver noise.
pub const NEGLIGIBLE_POWER: f64 = 1e-6;

/// Share of a slot's radiated power below which a matrix is cut to its
/// dominant rank-one part.
pub const MINOR_SHARE: f64 = 1e-4;

/// Largest `|lambda_i| / lambda_1`, `i >= 2`, treated as interior-point
/// noise around a rank-one matrix.
pub const RANK_NOISE: f64 = 1e-5;

/// Rank one once eigenvalues below `floor` are discounted.
fn rank_one_up_to_noise(m: &CMat, floor: f64) -> bool {
    let eig = hermitian_eigen(m);
    let top = eig.values[0];
    let tol = (RANK_NOISE * top).max(floor);
    top > 0.0 && eig.values.iter().skip(1).all(|l| l.abs() <= tol)
}

/// Zeroes beams and AN carrying negligible power and cuts minor ones, and
/// ones that are rank one up to solver noise, to their dominant part, unless
/// that breaks a rate constraint. The rank loop cannot resolve the
/// eigenvalues of a matrix that barely affects its objective.
pub(crate) fn drop_negligible(inp: &SlotInputs, beams: BeamSet) -> BeamSet {
    let n = beams.antennas();
    let minor = (MINOR_SHARE * beams.total_power()).max(NEGLIGIBLE_POWER);
    // eigenvalues the solver cannot resolve at this power scale
    let floor = inp.scenario.solver.tol * beams.total_power();
    let touch = |m: &CMat| {
        *m != CMat::zeros(n, n)
            && (m.trace().re < minor || (rank_one_up_to_noise(m, floor) && rank_residual(m) != 0.0))
    };
    if !beams.w.iter().chain([&beams.m]).any(touch) {
        return beams;
    }
    let allowed = inp.violation(&beams).max(VIOLATION_TOL);
    // the dominant part alone, or carrying the whole trace
    for keep_trace in [false, true] {
        let mut out = beams.clone();
        for m in out.w.iter_mut().chain([&mut out.m]) {
            if !touch(m) {
                continue;
            }
            let power = m.trace().re;
            *m = if power < NEGLIGIBLE_POWER {
                CMat::zeros(n, n)
            } else {
                let (lambda, u) = dominant_eigvec(m);
                let p = if keep_trace { power } else { lambda.max(0.0) };
                &u * u.adjoint() * C64::from(p)
            };
        }
        if inp.violation(&out) <= allowed {
            return out;
        }
    }
    beams
}

/// Rate violation, in bits, below which a point counts as feasible.
pub const VIOLATION_TOL: f64 = 1e-6;

pub(crate) fn hermitize(a: CMat) -> CMat {
    (&a + a.adjoint()) * C64::from(0.5)
}

/// Scales beams down so they fit in `budget`.
fn fit_budget(w: &mut [CMat], budget: f64) {
    let used: f64 = w.iter().map(|x| x.trace().re).sum();
    if used > budget && used > 0.0 {
        let f = (budget.max(0.0) / used) * (1.0 - 1e-9);
        for x in w.iter_mut() {
            *x *= C64::from(f);
        }
    }
}

/// Iterates [`solve_beamforming`] with refreshed linearisations and
/// subgradients until the beams are rank one and the objective settles.
pub fn dc_beam_loop(inp: &SlotInputs, start: &BeamSet) -> Result<DcOutcome> {
    let sch = &inp.scenario.dc;
    let mut beams = start.clone();
    let budget = inp.radiated_budget() - beams.an_power();
    if budget <= 0.0 {
        return Ok(DcOutcome {
            beams: zero_beams(&beams),
            steps: Vec::new(),
            iterations: 0,
            converged: true,
            slack: inp.violation(&zero_beams(&beams)) > VIOLATION_TOL,
            restored: false,
            infeasible: false,
        });
    }
    fit_budget(&mut beams.w, budget);
    let mut restored = false;
    if inp.violation(&beams) > VIOLATION_TOL {
        if let Some(b) = restore_feasibility(inp, &beams)? {
            beams = b;
            restored = true;
        }
    }
    let mut state = DcPenaltyState::new(sch, inp.scale());
    let mut steps = Vec::new();
    let mut slack_used = false;
    let mut converged = false;
    let mut infeasible = false;
    let mut iterations = 0;
    let mut relaxed = sch.relaxed_start;
    for it in 0..sch.max_iters {
        iterations = it + 1;
        let slack = inp.violation(&beams) > VIOLATION_TOL;
        slack_used |= slack;
        let subgrads: Vec<CMat> = beams.w.iter().map(spectral_subgradient).collect();
        let delta = if relaxed { 0.0 } else { state.delta };
        let before = beam_objective(inp, &beams, delta);
        let Some(w) = solve_beamforming(inp, &beams, &subgrads, delta, slack)? else {
            infeasible = it == 0;
            break;
        };
        let next = BeamSet {
            w,
            m: beams.m.clone(),
        };
        let after = beam_objective(inp, &next, delta);
        if after < before - 1e-7 * before.abs().max(1.0) {
            log::debug!("beam step lost ground ({before} -> {after}); stopping");
            break;
        }
        let residual: f64 = next.w.iter().map(rank_residual).sum();
        let power = next.beam_power().max(1e-300);
        let change = (after - before).abs() / before.abs().max(1e-12);
        beams = next;
        steps.push((before, after));
        if residual <= sch.residual_tol * power && change < sch.objective_tol {
            converged = true;
            break;
        }
        if relaxed {
            relaxed = change >= sch.objective_tol && 2 * (it + 1) < sch.max_iters;
            continue;
        }
        state.update(residual, sch);
    }
    if !converged && !infeasible {
        let residual: f64 = beams.w.iter().map(rank_residual).sum();
        converged = residual <= sch.residual_tol * beams.beam_power().max(1e-300);
    }
    let beams = drop_negligible(inp, beams);
    Ok(DcOutcome {
        beams,
        steps,
        iterations,
        converged,
        slack: slack_used,
        restored,
        infeasible,
    })
}
