//! Artificial-noise step: the AN covariance of one slot with trajectory and
//! beams held fixed.

use std::f64::consts::LN_2;

use crate::beam::{
    add_rate_constraints, drop_negligible, hermitize, log_of, DcOutcome, SlotInputs, VIOLATION_TOL,
};
use crate::conic::{Affine, ConicProblem};
use crate::dc::{inner, rank_residual, spectral_subgradient, DcPenaltyState};
use crate::error::Result;
use crate::rates::{grad_interference_wrt_an, grad_leakage_wrt_an, user_interference, BeamSet};
use crate::{CMat, CVec, C64};

/// Exact penalised objective of the AN step.
pub fn an_objective(inp: &SlotInputs, beams: &BeamSet, delta: f64) -> f64 {
    inp.weight() * inp.secrecy(beams)
        - delta * rank_residual(&beams.m)
        - inp.slack_penalty() * inp.violation(beams)
}

/// One convex AN subproblem around `anchor`. `fixed_power` pins the AN
/// trace. Returns `None` if the backend fails.
pub fn solve_an(
    inp: &SlotInputs,
    anchor: &BeamSet,
    subgrad: &CMat,
    delta: f64,
    slack: bool,
    fixed_power: Option<f64>,
) -> Result<Option<CMat>> {
    let s = inp.scenario;
    let nz = inp.noise;
    let ch = inp.channels;
    let n = anchor.antennas();
    let mut p = ConicProblem::new();
    let m = p.hermitian(n);
    p.psd(&m);
    match fixed_power {
        Some(pw) => p.eq_zero(m.trace().offset(-pw)),
        None => p.nonneg(
            Affine::constant(inp.radiated_budget() - anchor.beam_power()).minus(&m.trace()),
        ),
    }
    let ge = &ch.eve * C64::from(1.0 / nz.eve);
    let t_e = log_of(&mut p, m.trace_with(&ge).offset(1.0));
    let an_log = t_e.scaled(1.0 / LN_2).offset(nz.eve.log2());

    let mut objective = Affine::default();
    for k in 0..anchor.w.len() {
        let hn = &ch.users[k] * C64::from(1.0 / nz.users[k]);
        let signal: f64 = anchor.w.iter().map(|w| inner(&hn, w)).sum();
        let t = log_of(&mut p, m.trace_with(&hn).offset(1.0 + signal));
        let total_log = t.scaled(1.0 / LN_2).offset(nz.users[k].log2());

        let di = user_interference(&ch.users[k], anchor, k, nz);
        let gi = grad_interference_wrt_an(&ch.users[k], anchor, k, nz);
        let interf = m.trace_with(&gi).offset(di.log2() - inner(&gi, &anchor.m));
        let r_lo = total_log.minus(&interf);

        let dl = inner(&ch.eve, &anchor.m) + inner(&ch.eve, &anchor.w[k]) + nz.eve;
        let gl = grad_leakage_wrt_an(&ch.eve, anchor, k, nz);
        let leak = m.trace_with(&gl).offset(dl.log2() - inner(&gl, &anchor.m));
        let c_hi = leak.minus(&an_log);

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
    }
    if !slack {
        add_rate_constraints(
            &mut p,
            inp,
            |a, r| Affine::constant(inner(a, &anchor.w[r])),
            |a| m.trace_with(a),
        );
    }
    if delta > 0.0 {
        objective.add_scaled(&m.trace().minus(&m.trace_with(subgrad)), delta);
    }
    p.minimize(objective);
    let res = p.solve(&inp.options())?;
    Ok(res.x.as_ref().map(|x| hermitize(m.value(x))))
}

/// Rank-one AN covariance along `dir` carrying `power`.
pub fn rank_one_an(dir: &CVec, power: f64) -> CMat {
    let nrm = dir.norm();
    if nrm == 0.0 || power <= 0.0 {
        return CMat::zeros(dir.len(), dir.len());
    }
    let u = dir / C64::from(nrm);
    &u * u.adjoint() * C64::from(power)
}

/// Iterates [`solve_an`] with refreshed linearisations. With `rank_free`
/// the rank penalty is dropped and the loop stops on the objective alone.
pub fn dc_an_loop(inp: &SlotInputs, start: &BeamSet) -> Result<DcOutcome> {
    let sch = &inp.scenario.dc;
    let rank_free = inp.scenario.solver.an_rank_free;
    let fixed = inp.scenario.solver.an_power_fixed;
    let mut beams = start.clone();
    let budget = inp.radiated_budget() - beams.beam_power();
    if let Some(pw) = fixed {
        let cur = beams.an_power();
        if cur > 0.0 {
            beams.m *= C64::from(pw / cur);
        }
    } else if beams.an_power() > budget {
        let f = budget.max(0.0) / beams.an_power() * (1.0 - 1e-9);
        beams.m *= C64::from(f);
    }
    if fixed.is_none() && budget <= 0.0 {
        beams.m = CMat::zeros(beams.antennas(), beams.antennas());
        return Ok(DcOutcome {
            slack: inp.violation(&beams) > VIOLATION_TOL,
            beams,
            steps: Vec::new(),
            iterations: 0,
            converged: true,
            restored: false,
            infeasible: false,
        });
    }
    let mut state = DcPenaltyState::new(sch, inp.scale());
    if rank_free {
        state.delta = 0.0;
    }
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
        let u = spectral_subgradient(&beams.m);
        let delta = if relaxed { 0.0 } else { state.delta };
        let before = an_objective(inp, &beams, delta);
        let Some(m) = solve_an(inp, &beams, &u, delta, slack, fixed)? else {
            infeasible = it == 0;
            break;
        };
        let next = BeamSet {
            w: beams.w.clone(),
            m,
        };
        let after = an_objective(inp, &next, delta);
        if after < before - 1e-7 * before.abs().max(1.0) {
            log::debug!("AN step lost ground ({before} -> {after}); stopping");
            break;
        }
        let residual = rank_residual(&next.m);
        let power = next.an_power();
        let change = (after - before).abs() / before.abs().max(1e-12);
        beams = next;
        steps.push((before, after));
        let rank_ok =
            rank_free || residual <= sch.residual_tol * power.max(1e-300) || power <= 1e-12;
        if rank_ok && change < sch.objective_tol {
            converged = true;
            break;
        }
        if relaxed {
            relaxed = change >= sch.objective_tol && 2 * (it + 1) < sch.max_iters;
            continue;
        }
        if !rank_free {
            state.update(residual, sch);
        }
    }
    let beams = drop_negligible(inp, beams);
    Ok(DcOutcome {
        beams,
        steps,
        iterations,
        converged,
        slack: slack_used,
        restored: false,
        infeasible,
    })
}
