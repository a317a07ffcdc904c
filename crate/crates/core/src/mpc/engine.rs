use crate::an::dc_an_loop;
use crate::beam::{dc_beam_loop, drop_negligible, restore_feasibility, DcOutcome, SlotInputs};
use crate::error::{Error, Result};
use crate::geometry::{horizontal, power, power_upper_bound, AirframeParams, UavState, Vec3};
use crate::harness::log::{RunLog, SlotFlag, SlotRecord, Termination};
use crate::harness::scenario::Scenario;
use crate::rates::{rate_report, BeamSet, NoisePowers, SlotChannels};
use crate::trajectory::{reanchor, sca_trajectory_loop, TrajectoryAnchor, TrajectoryInputs};
use crate::C64;

use super::init::{cruise_speed, initial_plan, shift_plan};
use super::{DisturbanceModel, HorizonPlan, Scheme};

/// Relative slack allowed when comparing a step's objective with the
/// value it replaces.
const STEP_SLACK: f64 = 1e-9;

/// Bookkeeping of one alternating round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundOutcome {
    pub before: f64,
    pub after: f64,
    /// Steps whose result raised the objective and were discarded.
    pub rejected: usize,
    /// A subproblem failed outright.
    pub infeasible: bool,
    /// The applied slot's beam or AN step ran with relaxed rate constraints.
    pub slack: bool,
    /// The applied slot's rank-one loop hit its iteration cap.
    pub rank_cap: bool,
}

struct Ctx<'a> {
    s: &'a Scenario,
    air: AirframeParams,
    noise: NoisePowers,
}

impl<'a> Ctx<'a> {
    fn new(s: &'a Scenario) -> Result<Self> {
        s.validate()?;
        Ok(Self {
            s,
            air: s.airframe(),
            noise: s.noise_powers(),
        })
    }

    fn penalty(&self) -> f64 {
        let w = self.s.weights.secrecy;
        self.s.solver.restoration_penalty * if w > 0.0 { w } else { 1.0 }
    }

    fn channels(&self, q: &Vec3) -> Result<SlotChannels> {
        SlotChannels::at(q, &self.s.users, &self.s.eavesdropper, &self.s.propagation)
    }

    /// Objective contribution and rate-constraint violation of one slot.
    fn slot_terms(&self, st: &UavState, beams: &BeamSet) -> Result<(f64, f64)> {
        let w = &self.s.weights;
        let b = &self.s.budgets;
        let ch = self.channels(&st.q)?;
        let rep = rate_report(&ch, beams, &self.noise);
        let viol: f64 = rep
            .user
            .iter()
            .zip(&rep.eaves)
            .map(|(r, c)| (b.r_min - r).max(0.0) + (c - b.r_max).max(0.0))
            .sum();
        let value = w.distance * (st.q - self.s.goal).norm_squared()
            + w.power * power(&st.v, &self.air)
            - w.secrecy * rep.secrecy_sum;
        Ok((value, viol))
    }

    /// Slot `j` of `plan` with `beams`: objective plus the exact penalty on
    /// violated rate constraints and on power above the cap (in watts).
    fn slot_merit(&self, plan: &HorizonPlan, j: usize, beams: &BeamSet) -> Result<f64> {
        let (v, viol) = self.slot_terms(&plan.states[j], beams)?;
        let over = (self.fly_power(plan, j)? + beams.total_power() - self.s.budgets.p_max).max(0.0);
        Ok(v + self.penalty() * (viol + over))
    }

    /// Window merit; equals the objective on feasible windows.
    fn merit(&self, plan: &HorizonPlan) -> Result<f64> {
        (0..plan.len())
            .map(|j| self.slot_merit(plan, j, &plan.beams[j]))
            .sum()
    }

    fn fly_power(&self, plan: &HorizonPlan, j: usize) -> Result<f64> {
        // a steep descent drives the bound below zero; it never funds radiation
        Ok(power_upper_bound(&plan.states[j].v, &plan.power_anchors[j], &self.air)?.max(0.0))
    }

    /// Pulls solver output onto the envelope and re-rolls positions so the
    /// window obeys the dynamics exactly.
    fn project(&self, states: &mut [UavState], v_prev: &Vec3) {
        let lim = &self.s.limits;
        let step = lim.max_velocity_step();
        let mut prev = *v_prev;
        for j in 0..states.len() {
            if j > 0 {
                states[j].q = states[j - 1].q + states[j - 1].v * lim.t_c;
            }
            let mut v = states[j].v;
            let vh = horizontal(&v).norm();
            if vh > lim.v_max {
                let f = lim.v_max / vh;
                v.x *= f;
                v.y *= f;
            }
            v.z = v.z.clamp(-lim.u_max, lim.u_max);
            let z_next = states[j].q.z + v.z * lim.t_c;
            if z_next < lim.z_min || z_next > lim.z_max {
                v.z = (z_next.clamp(lim.z_min, lim.z_max) - states[j].q.z) / lim.t_c;
            }
            let dv = v - prev;
            if dv.norm() > step {
                v = prev + dv * (step / dv.norm());
            }
            states[j].v = v;
            prev = v;
        }
    }

    /// [`Self::project`] followed by fresh propulsion anchors: anchors left
    /// over from before the projection can make the bound needlessly loose.
    fn project_plan(&self, plan: &mut HorizonPlan, v_prev: &Vec3) {
        self.project(&mut plan.states, v_prev);
        plan.power_anchors = reanchor(&plan.states, &plan.power_anchors, &self.s.goal, &self.air);
    }

    /// Propulsion alone fits the power cap in every slot.
    fn within_propulsion_budget(&self, plan: &HorizonPlan) -> Result<bool> {
        for j in 0..plan.len() {
            if self.fly_power(plan, j)? > self.s.budgets.p_max + 1e-6 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Runs one slot's alternating rounds on `plan`.
    fn optimise(
        &self,
        plan: &mut HorizonPlan,
        v_prev: &Vec3,
    ) -> Result<(Vec<f64>, Vec<RoundOutcome>)> {
        let mut trace = vec![self.merit(plan)?];
        let mut rounds = Vec::new();
        for _ in 0..self.s.mpc.tau {
            let out = self.round(plan, v_prev)?;
            let change = (out.before - out.after).abs() / out.before.abs().max(1e-12);
            trace.push(out.after);
            rounds.push(out);
            if change < self.s.mpc.round_tol {
                break;
            }
        }
        Ok((trace, rounds))
    }

    /// One alternating round. The trajectory move is judged together with
    /// the beam and AN steps that follow it: moved slots usually break the
    /// rate constraints of the old beams, so a move is kept only if the
    /// whole round does not raise the merit; otherwise the round is redone
    /// on the unmoved plan.
    fn round(&self, plan: &mut HorizonPlan, v_prev: &Vec3) -> Result<RoundOutcome> {
        let before = self.merit(plan)?;
        let mut out = RoundOutcome {
            before,
            ..Default::default()
        };

        let mut inp = TrajectoryInputs::new(self.s, &plan.beams, *v_prev);
        inp.radiated = self.radiated_reserve(plan)?;
        let start = TrajectoryAnchor {
            states: plan.states.clone(),
            power_anchors: plan.power_anchors.clone(),
        };
        let traj = sca_trajectory_loop(&inp, &start)?;
        if traj.infeasible {
            log::debug!("trajectory step infeasible");
            out.infeasible = true;
        } else {
            let mut cand = HorizonPlan {
                states: traj.anchor.states,
                beams: plan.beams.clone(),
                power_anchors: traj.anchor.power_anchors,
            };
            self.project_plan(&mut cand, v_prev);
            if self.within_propulsion_budget(&cand)? {
                for j in 0..cand.len() {
                    self.fit_power(&mut cand, j)?;
                }
                let mut moved = out.clone();
                self.beam_pass(&mut cand, &mut moved)?;
                let value = self.merit(&cand)?;
                if value <= before + STEP_SLACK * before.abs().max(1.0) {
                    *plan = cand;
                    moved.after = value;
                    return Ok(moved);
                }
                log::debug!("move rejected: merit {before} -> {value}");
            } else {
                log::debug!("moved plan exceeds the propulsion budget");
            }
            out.rejected += 1;
        }
        self.beam_pass(plan, &mut out)?;
        out.after = self.merit(plan)?;
        Ok(out)
    }

    /// Radiated power the trajectory step must leave free in each slot: the
    /// least power meeting the rate constraints at the current positions,
    /// or the current power where no power does. Reserving the current
    /// power instead would pin the airframe to whatever propulsion the
    /// beams left over, or starve the beams when flight took it all.
    fn radiated_reserve(&self, plan: &HorizonPlan) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(plan.len());
        for j in 0..plan.len() {
            let ch = self.channels(&plan.states[j].q)?;
            let inp = SlotInputs {
                scenario: self.s,
                channels: &ch,
                noise: &self.noise,
                fly_power: 0.0,
            };
            let current = plan.beams[j].total_power();
            out.push(
                restore_feasibility(&inp, &plan.beams[j])?.map_or(current, |b| b.total_power()),
            );
        }
        Ok(out)
    }

    /// Beam step on every slot, then AN step on every slot, each kept only
    /// if it does not raise that slot's merit.
    fn beam_pass(&self, plan: &mut HorizonPlan, out: &mut RoundOutcome) -> Result<()> {
        for an_step in [false, true] {
            for j in 0..plan.len() {
                let ch = self.channels(&plan.states[j].q)?;
                let inp = SlotInputs {
                    scenario: self.s,
                    channels: &ch,
                    noise: &self.noise,
                    fly_power: self.fly_power(plan, j)?,
                };
                let res: DcOutcome = if an_step {
                    dc_an_loop(&inp, &plan.beams[j])?
                } else {
                    dc_beam_loop(&inp, &plan.beams[j])?
                };
                if j == 0 {
                    out.infeasible |= res.infeasible;
                    out.slack |= res.slack;
                    out.rank_cap |= !res.converged;
                }
                if res.infeasible {
                    continue;
                }
                let old = self.slot_merit(plan, j, &plan.beams[j])?;
                let new = self.slot_merit(plan, j, &res.beams)?;
                if new <= old + STEP_SLACK * old.abs().max(1.0) {
                    plan.beams[j] = res.beams;
                } else {
                    out.rejected += 1;
                }
            }
        }
        Ok(())
    }

    /// Scales the radiated powers of slot `j` down by any solver overshoot
    /// of the power budget.
    /// Prepares slot `j` for execution: power fitted, minor matrices cut.
    fn finalize(&self, plan: &mut HorizonPlan, j: usize) -> Result<()> {
        self.fit_power(plan, j)?;
        let ch = self.channels(&plan.states[j].q)?;
        let inp = SlotInputs {
            scenario: self.s,
            channels: &ch,
            noise: &self.noise,
            fly_power: self.fly_power(plan, j)?,
        };
        plan.beams[j] = drop_negligible(&inp, plan.beams[j].clone());
        Ok(())
    }

    fn fit_power(&self, plan: &mut HorizonPlan, j: usize) -> Result<()> {
        let room = self.s.budgets.p_max - self.fly_power(plan, j)?;
        let used = plan.beams[j].total_power();
        if used > room && used > 0.0 {
            let f = C64::from(room.max(0.0) / used);
            let b = &mut plan.beams[j];
            b.w.iter_mut().for_each(|w| *w *= f);
            b.m *= f;
        }
        Ok(())
    }

    /// Log row for executing slot `j` of `plan` at the realised position `q`.
    fn record(
        &self,
        slot: usize,
        q: &Vec3,
        plan: &HorizonPlan,
        j: usize,
        mut flags: Vec<SlotFlag>,
        objective: f64,
    ) -> Result<SlotRecord> {
        let v = plan.states[j].v;
        let beams = &plan.beams[j];
        let ch = self.channels(q)?;
        let rep = rate_report(&ch, beams, &self.noise);
        let b = &self.s.budgets;
        let violated = rep
            .user
            .iter()
            .zip(&rep.eaves)
            .any(|(r, c)| *r < b.r_min - 1e-4 || *c > b.r_max + 1e-4);
        if violated && !flags.contains(&SlotFlag::Restoring) {
            flags.push(SlotFlag::Restoring);
        }
        Ok(SlotRecord {
            slot,
            q: *q,
            v,
            p_fly: self.fly_power(plan, j)?,
            p_beam: beams.beam_power(),
            p_an: beams.an_power(),
            rate_user: rep.user,
            eaves: rep.eaves,
            secrecy_sum: rep.secrecy_sum,
            flags,
            p_fly_phys: power(&v, &self.air),
            objective,
        })
    }

    fn objective(&self, plan: &HorizonPlan) -> Result<f64> {
        plan.states
            .iter()
            .zip(&plan.beams)
            .map(|(st, b)| self.slot_terms(st, b).map(|t| t.0))
            .sum()
    }
}

fn round_flags(rounds: &[RoundOutcome]) -> Vec<SlotFlag> {
    let mut flags = Vec::new();
    if rounds.iter().any(|r| r.slack) {
        flags.push(SlotFlag::Slack);
    }
    if rounds.iter().any(|r| r.infeasible) {
        flags.push(SlotFlag::HoldLastPlan);
    }
    if rounds.last().is_some_and(|r| r.rank_cap) {
        flags.push(SlotFlag::RankLoopCap);
    }
    if rounds.iter().any(|r| r.rejected > 0) {
        flags.push(SlotFlag::RoundRejected);
    }
    flags
}

/// Objective of a window: distance to goal, propulsion power and clamped
/// secrecy rates summed over its slots, all in exact form.
pub fn evaluate_objective(scenario: &Scenario, plan: &HorizonPlan) -> Result<f64> {
    Ctx::new(scenario)?.objective(plan)
}

/// Receding-horizon loop. With `forecast` set the planner tracks its own
/// estimate of the position, rolled with the forecast disturbance and
/// re-synchronised with the measurement once per window length.
fn receding(
    scenario: &Scenario,
    forecast: Option<&DisturbanceModel>,
    scheme: Scheme,
) -> Result<RunLog> {
    let ctx = Ctx::new(scenario)?;
    let mpc = &scenario.mpc;
    let t_c = scenario.limits.t_c;
    let len = mpc.horizon + 1;
    let mut q = scenario.start;
    let mut q_hat = scenario.start;
    let mut v_prev = Vec3::zeros();
    let mut plan: Option<HorizonPlan> = None;
    let mut log = RunLog::new(scheme, q);
    let mut arrived = false;
    for slot in 0..mpc.max_slots {
        let belief = if forecast.is_some() { q_hat } else { q };
        if (belief - scenario.goal).norm() <= mpc.eps {
            arrived = true;
            break;
        }
        let mut p = match plan.take() {
            None => initial_plan(scenario, &UavState::new(belief, v_prev), len)?,
            Some(prev) => shift_plan(&prev, &belief, t_c),
        };
        ctx.project_plan(&mut p, &v_prev);
        log::debug!("slot {slot} at {belief:?}");
        let (trace, rounds) = ctx.optimise(&mut p, &v_prev)?;
        ctx.finalize(&mut p, 0)?;
        let objective = ctx.objective(&p)?;
        log.rows
            .push(ctx.record(slot, &q, &p, 0, round_flags(&rounds), objective)?);
        log.applied_beams.push(p.beams[0].clone());
        log.trace.slots.push(trace);

        let v0 = p.states[0].v;
        q += v0 * t_c + mpc.disturbance.sample(slot);
        if let Some(f) = forecast {
            q_hat += v0 * t_c + f.sample(slot);
            if (slot + 1) % len == 0 {
                q_hat = q;
            }
        }
        v_prev = v0;
        plan = Some(p);
    }
    if !arrived {
        let belief = if forecast.is_some() { q_hat } else { q };
        arrived = (belief - scenario.goal).norm() <= mpc.eps;
    }
    log.final_position = q;
    log.termination = if arrived {
        Termination::Arrival
    } else {
        Termination::Timeout
    };
    Ok(log)
}

/// Online receding-horizon control: every slot is planned from the
/// measured position.
pub fn run(scenario: &Scenario) -> Result<RunLog> {
    receding(scenario, None, Scheme::MpcOnline)
}

/// Receding-horizon control that plans from a position rolled forward with
/// `forecast` instead of the measured disturbance.
pub fn run_offline_mpc(scenario: &Scenario, forecast: &DisturbanceModel) -> Result<RunLog> {
    forecast.validate()?;
    receding(scenario, Some(forecast), Scheme::MpcOffline)
}

/// Slots a straight flight at cruise speed needs to reach the goal.
fn flight_slots(scenario: &Scenario) -> usize {
    let d = (scenario.goal - scenario.start).norm();
    (d / (cruise_speed(scenario) * scenario.limits.t_c))
        .ceil()
        .max(1.0) as usize
}

/// Plans the whole flight once from the start and executes it open loop.
pub fn run_bcd_openloop(scenario: &Scenario) -> Result<RunLog> {
    let ctx = Ctx::new(scenario)?;
    let mpc = &scenario.mpc;
    let t_c = scenario.limits.t_c;
    let len = flight_slots(scenario) + 2;
    let mut plan = initial_plan(scenario, &UavState::at_rest(scenario.start), len)?;
    let (trace, rounds) = ctx.optimise(&mut plan, &Vec3::zeros())?;
    let objective = ctx.objective(&plan)?;
    let mut log = RunLog::new(Scheme::BcdOpenLoop, scenario.start);
    log.trace.slots.push(trace);
    let mut q = scenario.start;
    let mut arrived = false;
    // without feedback the only position estimate is the plan itself
    for slot in 0..len.min(mpc.max_slots) {
        if (plan.states[slot].q - scenario.goal).norm() <= mpc.eps {
            arrived = true;
            break;
        }
        ctx.finalize(&mut plan, slot)?;
        let flags = if slot == 0 {
            round_flags(&rounds)
        } else {
            Vec::new()
        };
        log.rows
            .push(ctx.record(slot, &q, &plan, slot, flags, objective)?);
        log.applied_beams.push(plan.beams[slot].clone());
        q += plan.states[slot].v * t_c + mpc.disturbance.sample(slot);
    }
    let last = plan.states.len().min(mpc.max_slots) - 1;
    arrived |= (plan.states[last].q + plan.states[last].v * t_c - scenario.goal).norm() <= mpc.eps;
    log.final_position = q;
    log.termination = if arrived {
        Termination::Arrival
    } else {
        Termination::Timeout
    };
    Ok(log)
}

/// Runs the scheme selected in the scenario.
pub fn run_scheme(scenario: &Scenario) -> Result<RunLog> {
    match scenario.mpc.scheme {
        Scheme::MpcOnline => run(scenario),
        Scheme::MpcOffline => run_offline_mpc(scenario, &scenario.mpc.forecast),
        Scheme::BcdOpenLoop => run_bcd_openloop(scenario),
    }
}

/// First planned window of a scheme, for comparing schemes before any
/// feedback acts.
pub fn first_plan(scenario: &Scenario, len: usize) -> Result<HorizonPlan> {
    if len == 0 {
        return Err(Error::invalid("window length must be positive"));
    }
    let ctx = Ctx::new(scenario)?;
    let mut plan = initial_plan(scenario, &UavState::at_rest(scenario.start), len)?;
    ctx.optimise(&mut plan, &Vec3::zeros())?;
    Ok(plan)
}
