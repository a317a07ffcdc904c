//! Trajectory step: positions and velocities over the window with beams
//! held fixed, solved by successive convex approximation.
//!
//! Inside the conic model positions are in kilometres and squared
//! distances in square kilometres; velocities stay in m/s.

use std::collections::HashMap;
use std::f64::consts::LN_2;

use crate::channel::NodeSite;
use crate::conic::{Affine, ConicProblem, SolveOptions, Var};
use crate::error::{Error, Result};
use crate::geometry::{
    horizontal, induced_bound, power_upper_bound, tightest_anchor, AirframeParams, UavState, Vec3,
};
use crate::harness::scenario::Scenario;
use crate::rates::{
    eaves_rate_logs, iso_eaves_rate, iso_user_rate, user_rate_logs, IsoPowers, PowerLawLog,
};
use crate::rates::{BeamSet, NoisePowers};

const KM: f64 = 1000.0;
/// Scale of the horizontal speed inside the cubic profile-power cone.
const CUBE_SCALE: f64 = 10.0;

/// Anchor positions, velocities and propulsion-bound anchors of a window.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryAnchor {
    pub states: Vec<UavState>,
    pub power_anchors: Vec<Vec3>,
}

#[derive(Clone, Debug)]
pub struct TrajectoryOutcome {
    pub anchor: TrajectoryAnchor,
    /// Surrogate objective after each accepted iterate, starting with the
    /// initial anchor.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    /// The anchor violated the isotropic rate targets, so they were dropped
    /// for this step.
    pub slack: bool,
    /// The first subproblem failed; the anchor is returned unchanged.
    pub infeasible: bool,
}

impl TrajectoryOutcome {
    pub fn objective(&self) -> f64 {
        *self
            .objective_history
            .last()
            .expect("history starts with the anchor")
    }
}

/// Everything the step needs besides the anchor.
pub struct TrajectoryInputs<'a> {
    pub scenario: &'a Scenario,
    pub air: AirframeParams,
    pub noise: NoisePowers,
    /// Beams of every window slot (held fixed).
    pub beams: &'a [BeamSet],
    /// Velocity applied in the slot before the window.
    pub v_prev: Vec3,
    /// Radiated power reserved in each slot's power budget; defaults to the
    /// power of the fixed beams.
    pub radiated: Vec<f64>,
}

impl<'a> TrajectoryInputs<'a> {
    pub fn new(scenario: &'a Scenario, beams: &'a [BeamSet], v_prev: Vec3) -> Self {
        Self {
            scenario,
            air: scenario.airframe(),
            noise: scenario.noise_powers(),
            beams,
            v_prev,
            radiated: beams.iter().map(BeamSet::total_power).collect(),
        }
    }

    fn rates_active(&self) -> bool {
        self.scenario.weights.secrecy > 0.0
    }

    fn iso_powers(&self, j: usize) -> IsoPowers {
        IsoPowers::from_beams(
            &self.beams[j],
            self.scenario.solver.interference_at_own_distance,
        )
    }
}

/// Isotropic-rate violation summed over window slots after the first.
pub fn iso_violation(inp: &TrajectoryInputs, states: &[UavState]) -> Result<f64> {
    let s = inp.scenario;
    let mut v = 0.0;
    for (j, st) in states.iter().enumerate().skip(1) {
        let pw = inp.iso_powers(j);
        for k in 0..s.k() {
            let r = iso_user_rate(&st.q, k, &pw, &s.users, &s.propagation, &inp.noise)?.rate();
            let c =
                iso_eaves_rate(&st.q, k, &pw, &s.eavesdropper, &s.propagation, &inp.noise)?.rate();
            v += (s.budgets.r_min - r).max(0.0) + (c - s.budgets.r_max).max(0.0);
        }
    }
    Ok(v)
}

/// Step objective with the isotropic rates and the propulsion bound at the
/// given anchors.
pub fn surrogate_objective(inp: &TrajectoryInputs, anchor: &TrajectoryAnchor) -> Result<f64> {
    let s = inp.scenario;
    let w = &s.weights;
    let mut total = 0.0;
    for (j, st) in anchor.states.iter().enumerate() {
        total += w.power * power_upper_bound(&st.v, &anchor.power_anchors[j], &inp.air)?;
        if j == 0 {
            continue;
        }
        total += w.distance * (st.q - s.goal).norm_squared();
        if inp.rates_active() {
            let pw = inp.iso_powers(j);
            for k in 0..s.k() {
                let r = iso_user_rate(&st.q, k, &pw, &s.users, &s.propagation, &inp.noise)?.rate();
                let c = iso_eaves_rate(&st.q, k, &pw, &s.eavesdropper, &s.propagation, &inp.noise)?
                    .rate();
                total -= w.secrecy * (r - c);
            }
        }
    }
    Ok(total)
}

/// Builder state for one convex trajectory subproblem.
struct Model<'a> {
    p: ConicProblem,
    objective: Affine,
    x: Vec<[Affine; 3]>,
    v: Vec<[Var; 3]>,
    anchor: &'a TrajectoryAnchor,
    sites: Vec<Vec3>,
    sq_dist: HashMap<(usize, usize), Var>,
    log_chord: HashMap<(usize, usize), Var>,
}

impl<'a> Model<'a> {
    fn site_index(&self, p: &Vec3) -> usize {
        self.sites
            .iter()
            .position(|s| s == p)
            .expect("every log term sits on a known node")
    }

    /// `u >= |x_j - site|^2` in km^2.
    fn sq_dist(&mut self, j: usize, site: usize) -> Var {
        if let Some(v) = self.sq_dist.get(&(j, site)) {
            return *v;
        }
        let u = self.p.var();
        let c = self.sites[site] / KM;
        let diff: Vec<Affine> = (0..3).map(|a| self.x[j][a].clone().offset(-c[a])).collect();
        self.p
            .rotated_soc(diff, Affine::var(u), Affine::constant(1.0));
        self.sq_dist.insert((j, site), u);
        u
    }

    /// `y <= ln(chord)` where chord is the anchor tangent plane of the
    /// squared distance, in km^2.
    fn log_chord(&mut self, j: usize, site: usize) -> Var {
        if let Some(v) = self.log_chord.get(&(j, site)) {
            return *v;
        }
        let y = self.p.var();
        let q0 = self.anchor.states[j].q;
        let d0 = q0 - self.sites[site];
        // |q0 - p|^2 + 2 d0 . (1000 x - q0), all over 1e6
        let mut chord = Affine::constant((d0.norm_squared() - 2.0 * d0.dot(&q0)) / (KM * KM));
        for a in 0..3 {
            chord.add_scaled(&self.x[j][a], 2.0 * d0[a] / KM);
        }
        self.p.log_hypograph(Affine::var(y), chord);
        self.log_chord.insert((j, site), y);
        y
    }

    /// Affine lower bound, in bits, of a position log around the anchor.
    fn minorant(&mut self, j: usize, log: &PowerLawLog) -> Affine {
        let q0 = self.anchor.states[j].q;
        let m = log.minorant(&q0);
        let mut e = Affine::constant(m.base);
        for ((site, z0), w) in m.sites.iter().zip(&m.z0).zip(&m.weights) {
            if *w == 0.0 {
                continue;
            }
            let idx = self.site_index(site);
            let u = self.sq_dist(j, idx);
            e.add_term(u, w * KM * KM);
            e.add_const(-w * z0);
        }
        e
    }

    /// Variable bounding a position log from above, in bits, through the
    /// chord majorant.
    fn majorant(&mut self, j: usize, log: &PowerLawLog) -> Affine {
        let beta = 0.5 * log.alpha;
        let terms: Vec<(usize, f64)> = log
            .terms
            .iter()
            .filter(|t| t.coef > 0.0)
            .map(|t| {
                (
                    self.site_index(&t.site),
                    t.coef * KM.powf(-2.0 * beta) / log.floor,
                )
            })
            .collect();
        let base = log.floor.log2();
        if terms.is_empty() {
            return Affine::constant(base);
        }
        // s >= ln(sum_t c_t exp(-beta y_t) + 1)
        let s = self.p.var();
        let mut budget = Affine::constant(1.0);
        for (site, c) in terms {
            let y = self.log_chord(j, site);
            let tau = self.p.var();
            let arg = Affine::constant(c.ln())
                .plus(&Affine::term(y, -beta))
                .plus(&Affine::term(s, -1.0));
            self.p.exp_epigraph(arg, Affine::var(tau));
            budget.add_term(tau, -1.0);
        }
        let tau0 = self.p.var();
        self.p
            .exp_epigraph(Affine::term(s, -1.0), Affine::var(tau0));
        budget.add_term(tau0, -1.0);
        self.p.nonneg(budget);
        Affine::term(s, 1.0 / LN_2).offset(base)
    }
}

fn build_and_solve(
    inp: &TrajectoryInputs,
    anchor: &TrajectoryAnchor,
    slack: bool,
) -> Result<Option<Vec<UavState>>> {
    let s = inp.scenario;
    let lim = &s.limits;
    let w = &s.weights;
    let air = &inp.air;
    let len = anchor.states.len();
    let mut sites: Vec<Vec3> = s.users.iter().map(|u| u.position).collect();
    sites.push(s.eavesdropper.position);

    let mut m = Model {
        p: ConicProblem::new(),
        objective: Affine::default(),
        x: Vec::new(),
        v: Vec::new(),
        anchor,
        sites,
        sq_dist: HashMap::new(),
        log_chord: HashMap::new(),
    };
    let scale = 1.0 / surrogate_objective(inp, anchor)?.abs().max(1.0);

    for _ in 0..len {
        let v = [m.p.var(), m.p.var(), m.p.var()];
        m.v.push(v);
    }
    let q0 = anchor.states[0].q / KM;
    m.x.push([0, 1, 2].map(|a| Affine::constant(q0[a])));
    for j in 0..len - 1 {
        let next = [0, 1, 2].map(|a| {
            m.x[j][a]
                .clone()
                .plus(&Affine::term(m.v[j][a], lim.t_c / KM))
        });
        m.x.push(next);
    }

    let step = lim.max_velocity_step();
    for j in 0..len {
        let v = m.v[j];
        m.p.soc(Affine::constant(lim.v_max), vec![v[0].into(), v[1].into()]);
        m.p.le(Affine::var(v[2]), Affine::constant(lim.u_max));
        m.p.le(Affine::constant(-lim.u_max), Affine::var(v[2]));
        let prev: [Affine; 3] = if j == 0 {
            [0, 1, 2].map(|a| Affine::constant(inp.v_prev[a]))
        } else {
            [0, 1, 2].map(|a| Affine::var(m.v[j - 1][a]))
        };
        let diff = (0..3).map(|a| Affine::var(v[a]).minus(&prev[a])).collect();
        m.p.soc(Affine::constant(step), diff);
        // the altitude each command leads to stays in the band
        let z_next = m.x[j][2].clone().plus(&Affine::term(v[2], lim.t_c / KM));
        m.p.le(Affine::constant(lim.z_min / KM), z_next.clone());
        m.p.le(z_next, Affine::constant(lim.z_max / KM));

        // propulsion bound: induced + climb + profile
        let bound = induced_bound(&anchor.power_anchors[j], air)?;
        let f = Affine::constant(bound.offset)
            .plus(&Affine::term(v[0], bound.slope.x))
            .plus(&Affine::term(v[1], bound.slope.y));
        let t_ind = m.p.var();
        m.p.power_cone(
            Affine::var(t_ind),
            f,
            Affine::constant(air.induced_scale().powf(2.0 / 3.0)),
            2.0 / 3.0,
        );
        let sh = m.p.var();
        m.p.soc(
            Affine::var(sh),
            vec![
                Affine::term(v[0], 1.0 / CUBE_SCALE),
                Affine::term(v[1], 1.0 / CUBE_SCALE),
            ],
        );
        let t_cub = m.p.var();
        m.p.power_cone(
            Affine::var(t_cub),
            Affine::constant(1.0),
            Affine::var(sh),
            1.0 / 3.0,
        );
        let p_ub = Affine::var(t_ind)
            .plus(&Affine::term(v[2], air.weight()))
            .plus(&Affine::term(
                t_cub,
                air.profile_scale() * CUBE_SCALE.powi(3),
            ));
        m.p.le(
            p_ub.clone(),
            Affine::constant(s.budgets.p_max - inp.radiated[j]),
        );
        m.objective.add_scaled(&p_ub, w.power);

        if j >= 1 && w.distance > 0.0 {
            // w1 |1000 x - goal|^2
            let g = s.goal / KM;
            let c = w.distance * KM * KM;
            for a in 0..3 {
                // (x_a - g_a)^2 with x_a affine in the velocities
                let lin = m.x[j][a].clone().offset(-g[a]);
                for (i, &(vi, ci)) in lin.terms.iter().enumerate() {
                    m.p.add_quadratic(Var(vi), Var(vi), c * ci * ci);
                    for &(vk, ck) in &lin.terms[i + 1..] {
                        m.p.add_quadratic(Var(vi), Var(vk), 2.0 * c * ci * ck);
                    }
                    m.objective.add_term(Var(vi), 2.0 * c * ci * lin.constant);
                }
                m.objective.add_const(c * lin.constant * lin.constant);
            }
        }

        if j >= 1 && inp.rates_active() {
            let pw = inp.iso_powers(j);
            for k in 0..s.k() {
                let (sig, interf) = user_rate_logs(k, &pw, &s.users, &s.propagation, &inp.noise);
                let (leak, an) =
                    eaves_rate_logs(k, &pw, &s.eavesdropper, &s.propagation, &inp.noise);
                let r_lo = m.minorant(j, &sig).minus(&m.majorant(j, &interf));
                let c_hi = m.majorant(j, &leak).minus(&m.minorant(j, &an));
                m.objective.add_scaled(&r_lo, -w.secrecy);
                m.objective.add_scaled(&c_hi, w.secrecy);
                // an anchor that already violates the rate targets keeps
                // only the objective terms
                if !slack {
                    m.p.le(Affine::constant(s.budgets.r_min), r_lo);
                    m.p.le(c_hi, Affine::constant(s.budgets.r_max));
                }
            }
        }
    }

    let objective = m.objective.clone().scaled(scale);
    m.p.quadratic.iter_mut().for_each(|t| t.2 *= scale);
    m.p.minimize(objective);
    let opts = SolveOptions {
        tol: s.solver.tol,
        max_iter: s.solver.max_iter,
    };
    let res = m.p.solve(&opts)?;
    let Some(sol) = res.x.as_ref() else {
        log::debug!("trajectory subproblem: {:?}", res.status);
        return Ok(None);
    };
    let mut states = Vec::with_capacity(len);
    for j in 0..len {
        let q = Vec3::from_fn(|a, _| m.x[j][a].eval(sol) * KM);
        let v = Vec3::from_fn(|a, _| sol[m.v[j][a].0]);
        states.push(UavState::new(q, v));
    }
    // the first position is fixed; keep it bit-exact
    states[0].q = anchor.states[0].q;
    Ok(Some(states))
}

/// One convex trajectory subproblem around `anchor`.
///
/// Returns the new states, or `None` when the backend reports
/// infeasibility or a numerical failure.
pub fn solve_trajectory(
    inp: &TrajectoryInputs,
    anchor: &TrajectoryAnchor,
    slack: bool,
) -> Result<Option<Vec<UavState>>> {
    let len = anchor.states.len();
    if len != inp.beams.len() || len != anchor.power_anchors.len() || len != inp.radiated.len() {
        return Err(Error::invalid("window lengths disagree"));
    }
    build_and_solve(inp, anchor, slack)
}

/// Horizontal direction used for propulsion anchors when hovering.
pub fn fallback_heading(q: &Vec3, goal: &Vec3) -> nalgebra::Vector2<f64> {
    horizontal(&(goal - q))
}

/// Re-anchors every propulsion bound at its tightest point.
pub fn reanchor(
    states: &[UavState],
    previous: &[Vec3],
    goal: &Vec3,
    air: &AirframeParams,
) -> Vec<Vec3> {
    states
        .iter()
        .zip(previous)
        .map(|(st, prev)| tightest_anchor(&st.v, Some(prev), &fallback_heading(&st.q, goal), air))
        .collect()
}

/// Repeats the convex step, re-anchoring each time, until the surrogate
/// objective stalls.
///
/// An iterate is kept only when it does not raise the surrogate objective,
/// so the history is non-increasing.
pub fn sca_trajectory_loop(
    inp: &TrajectoryInputs,
    start: &TrajectoryAnchor,
) -> Result<TrajectoryOutcome> {
    let s = inp.scenario;
    let slack = inp.rates_active() && iso_violation(inp, &start.states)? > 0.0;
    let mut anchor = TrajectoryAnchor {
        states: start.states.clone(),
        power_anchors: reanchor(&start.states, &start.power_anchors, &s.goal, &inp.air),
    };
    let mut current = surrogate_objective(inp, &anchor)?;
    let mut history = vec![current];
    let mut infeasible = false;
    let mut iterations = 0;
    for it in 0..s.solver.sca_max_iters {
        iterations = it + 1;
        let Some(states) = solve_trajectory(inp, &anchor, slack)? else {
            infeasible = it == 0;
            break;
        };
        let next = TrajectoryAnchor {
            power_anchors: reanchor(&states, &anchor.power_anchors, &s.goal, &inp.air),
            states,
        };
        let value = surrogate_objective(inp, &next)?;
        if !(value <= current + 1e-9 * current.abs().max(1.0)) {
            break;
        }
        let change = (current - value).abs() / current.abs().max(1e-12);
        anchor = next;
        current = value;
        history.push(value);
        if change < s.solver.sca_tol {
            break;
        }
    }
    Ok(TrajectoryOutcome {
        anchor,
        objective_history: history,
        iterations,
        slack,
        infeasible,
    })
}

/// Sites a window's rates depend on, in the order used by the model.
pub fn node_sites(users: &[NodeSite], eve: &NodeSite) -> Vec<Vec3> {
    users
        .iter()
        .map(|u| u.position)
        .chain([eve.position])
        .collect()
}
