use crate::an::rank_one_an;
use crate::dc::dominant_eigvec;
use crate::error::Result;
use crate::geometry::{power, power_upper_bound, tightest_anchor, AirframeParams, UavState, Vec3};
use crate::harness::scenario::Scenario;
use crate::rates::{BeamSet, SlotChannels};
use crate::trajectory::fallback_heading;

use super::HorizonPlan;

fn level_power(speed: f64, air: &AirframeParams) -> f64 {
    power(&Vec3::new(speed, 0.0, 0.0), air)
}

/// Largest level speed at or below `fraction * v_max` whose propulsion
/// power stays within `power_cap`. Falls back to the minimum-power speed
/// when no speed qualifies.
pub fn cruise_speed(scenario: &Scenario) -> f64 {
    let air = scenario.airframe();
    let sol = &scenario.solver;
    let cap = sol.init_speed_fraction * scenario.limits.v_max;
    let limit = sol.init_power_fraction * scenario.budgets.p_max;
    if level_power(cap, &air) <= limit {
        return cap;
    }
    // minimum-power speed by golden section; power is unimodal in speed
    let (mut a, mut b) = (0.0, cap);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if level_power(c, &air) < level_power(d, &air) {
            b = d;
        } else {
            a = c;
        }
    }
    let v_min = 0.5 * (a + b);
    if level_power(v_min, &air) > limit {
        return v_min;
    }
    let (mut lo, mut hi) = (v_min, cap);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if level_power(mid, &air) <= limit {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Velocity that heads for the goal at cruise speed, stops on it, and
/// respects the acceleration and envelope limits relative to `v_prev`.
fn toward_goal(q: &Vec3, v_prev: &Vec3, scenario: &Scenario, cruise: f64) -> Vec3 {
    let lim = &scenario.limits;
    let gap = scenario.goal - q;
    let dist = gap.norm();
    let mut want = if dist > 1e-9 {
        gap * ((cruise * lim.t_c).min(dist) / (dist * lim.t_c))
    } else {
        Vec3::zeros()
    };
    want.z = want.z.clamp(-lim.u_max, lim.u_max);
    let dv = want - v_prev;
    let step = lim.max_velocity_step();
    let mut v = if dv.norm() > step {
        v_prev + dv * (step / dv.norm())
    } else {
        want
    };
    // keep the next altitude inside the band
    let z_next = q.z + v.z * lim.t_c;
    if z_next < lim.z_min || z_next > lim.z_max {
        v.z = (z_next.clamp(lim.z_min, lim.z_max) - q.z) / lim.t_c;
    }
    v
}

/// Beams matched to each user sharing `share` of the radiated budget, plus
/// rank-one AN along the eavesdropper's channel.
pub(crate) fn initial_beams(scenario: &Scenario, q: &Vec3, fly_power: f64) -> Result<BeamSet> {
    let ch = SlotChannels::at(
        q,
        &scenario.users,
        &scenario.eavesdropper,
        &scenario.propagation,
    )?;
    let sol = &scenario.solver;
    let k = scenario.k();
    let budget = (scenario.budgets.p_max - fly_power).max(0.0);
    let an_share = sol.an_power_fixed.map(|p| p.min(budget));
    let beam_total = match an_share {
        Some(p) => (sol.init_beam_share * budget).min(budget - p),
        None => sol.init_beam_share * budget,
    };
    let mut beams = BeamSet::zeros(k, scenario.n());
    for (kk, h) in ch.users.iter().enumerate() {
        let (_, u) = dominant_eigvec(h);
        beams.w[kk] = rank_one_an(&u, beam_total / k as f64);
    }
    let (_, e) = dominant_eigvec(&ch.eve);
    beams.m = rank_one_an(&e, an_share.unwrap_or(sol.init_an_ratio * beam_total));
    Ok(beams)
}

/// Straight-line plan toward the goal over `len` slots starting at `state`.
pub fn initial_plan(scenario: &Scenario, state: &UavState, len: usize) -> Result<HorizonPlan> {
    let air = scenario.airframe();
    let cruise = cruise_speed(scenario);
    let mut states = Vec::with_capacity(len);
    let mut q = state.q;
    let mut v_prev = state.v;
    for _ in 0..len {
        let v = toward_goal(&q, &v_prev, scenario, cruise);
        states.push(UavState::new(q, v));
        q += v * scenario.limits.t_c;
        v_prev = v;
    }
    complete_plan(scenario, states, &air)
}

fn complete_plan(
    scenario: &Scenario,
    states: Vec<UavState>,
    air: &AirframeParams,
) -> Result<HorizonPlan> {
    let mut beams = Vec::with_capacity(states.len());
    let mut anchors = Vec::with_capacity(states.len());
    for st in &states {
        let a = tightest_anchor(&st.v, None, &fallback_heading(&st.q, &scenario.goal), air);
        let fly = power_upper_bound(&st.v, &a, air)?;
        beams.push(initial_beams(scenario, &st.q, fly)?);
        anchors.push(a);
    }
    Ok(HorizonPlan {
        states,
        beams,
        power_anchors: anchors,
    })
}

/// Warm start for the next slot: drops the applied slot, re-rolls the
/// positions from the measured `q`, and repeats the last slot at the tail.
pub fn shift_plan(plan: &HorizonPlan, q: &Vec3, t_c: f64) -> HorizonPlan {
    let n = plan.len();
    let pick = |j: usize| (j + 1).min(n - 1);
    let mut states = Vec::with_capacity(n);
    let mut pos = *q;
    for j in 0..n {
        let v = plan.states[pick(j)].v;
        states.push(UavState::new(pos, v));
        pos += v * t_c;
    }
    HorizonPlan {
        states,
        beams: (0..n).map(|j| plan.beams[pick(j)].clone()).collect(),
        power_anchors: (0..n).map(|j| plan.power_anchors[pick(j)]).collect(),
    }
}
