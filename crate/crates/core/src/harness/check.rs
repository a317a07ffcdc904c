//! Invariant checks on a finished run log.

use std::fmt;

use crate::geometry::{horizontal, FEASIBILITY_TOL};
use crate::harness::log::SlotRecord;
use crate::harness::scenario::Scenario;

/// Tolerance on rate constraints at applied slots.
pub const RATE_TOL: f64 = 1e-4;
/// Tolerance on the total power budget.
pub const POWER_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum CheckKind {
    NonFinite,
    SlotOrder,
    Power,
    UserRate,
    EavesRate,
    Speed,
    Climb,
    Acceleration,
    Altitude,
    ColumnCount,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckFailure {
    pub slot: usize,
    pub kind: CheckKind,
    pub detail: String,
}

impl fmt::Display for CheckFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "slot {}: {:?}: {}", self.slot, self.kind, self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckReport {
    pub rows: usize,
    pub failures: Vec<CheckFailure>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks power, rate and envelope constraints of every logged slot.
///
/// Kinematics are checked on the commanded velocities: speed and climb
/// limits, the velocity change between consecutive slots, and the altitude
/// the command leads to before any disturbance.
pub fn check_rows(rows: &[SlotRecord], scenario: &Scenario) -> CheckReport {
    let mut failures = Vec::new();
    let b = &scenario.budgets;
    let lim = &scenario.limits;
    let k = scenario.k();
    let mut fail = |slot: usize, kind: CheckKind, detail: String| {
        failures.push(CheckFailure { slot, kind, detail })
    };
    let mut prev_v = crate::geometry::Vec3::zeros();
    for (i, r) in rows.iter().enumerate() {
        let s = r.slot;
        let finite = r.q.iter().chain(r.v.iter()).all(|x| x.is_finite())
            && [r.p_fly, r.p_beam, r.p_an, r.secrecy_sum]
                .iter()
                .all(|x| x.is_finite())
            && r.rate_user.iter().chain(&r.eaves).all(|x| x.is_finite());
        if !finite {
            fail(s, CheckKind::NonFinite, "non-finite entry".into());
            continue;
        }
        if s != i {
            fail(s, CheckKind::SlotOrder, format!("row {i} has slot {s}"));
        }
        if r.rate_user.len() != k || r.eaves.len() != k {
            fail(s, CheckKind::ColumnCount, format!("expected {k} users"));
            continue;
        }
        let total = r.total_power();
        if total > b.p_max + POWER_TOL {
            fail(s, CheckKind::Power, format!("{total:.9} W > {} W", b.p_max));
        }
        for (u, (rr, c)) in r.rate_user.iter().zip(&r.eaves).enumerate() {
            if *rr < b.r_min - RATE_TOL {
                fail(
                    s,
                    CheckKind::UserRate,
                    format!("user {} rate {rr:.6} < {}", u + 1, b.r_min),
                );
            }
            if *c > b.r_max + RATE_TOL {
                fail(
                    s,
                    CheckKind::EavesRate,
                    format!("user {} leakage {c:.6} > {}", u + 1, b.r_max),
                );
            }
        }
        let vh = horizontal(&r.v).norm();
        if vh > lim.v_max + FEASIBILITY_TOL {
            fail(s, CheckKind::Speed, format!("{vh:.6} m/s"));
        }
        if r.v.z.abs() > lim.u_max + FEASIBILITY_TOL {
            fail(s, CheckKind::Climb, format!("{:.6} m/s", r.v.z));
        }
        let dv = (r.v - prev_v).norm();
        if dv > lim.max_velocity_step() + FEASIBILITY_TOL {
            fail(
                s,
                CheckKind::Acceleration,
                format!("velocity change {dv:.6} m/s"),
            );
        }
        let z = r.q.z + r.v.z * lim.t_c;
        if z < lim.z_min - FEASIBILITY_TOL || z > lim.z_max + FEASIBILITY_TOL {
            fail(
                s,
                CheckKind::Altitude,
                format!("commanded altitude {z:.6} m"),
            );
        }
        prev_v = r.v;
    }
    CheckReport {
        rows: rows.len(),
        failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    fn row(slot: usize) -> SlotRecord {
        SlotRecord {
            slot,
            q: Vec3::new(100.0 * slot as f64, 0.0, 700.0),
            v: Vec3::new(10.0, 0.0, 0.0),
            p_fly: 200.0,
            p_beam: 100.0,
            p_an: 10.0,
            rate_user: vec![1.5, 1.2],
            eaves: vec![0.2, 0.4],
            secrecy_sum: 2.1,
            flags: Vec::new(),
            p_fly_phys: 190.0,
            objective: 0.0,
        }
    }

    #[test]
    fn clean_rows_pass() {
        let s = Scenario::default();
        let rep = check_rows(&[row(0), row(1)], &s);
        assert!(rep.passed(), "{:?}", rep.failures);
    }

    #[test]
    fn each_violation_is_reported() {
        let s = Scenario::default();
        let mut r = row(0);
        r.p_beam = 200.0;
        r.rate_user[1] = 0.5;
        r.eaves[0] = 0.7;
        r.v = Vec3::new(0.0, 0.0, 31.0);
        let rep = check_rows(&[r], &s);
        let kinds: Vec<_> = rep.failures.iter().map(|f| f.kind.clone()).collect();
        for k in [
            CheckKind::Power,
            CheckKind::UserRate,
            CheckKind::EavesRate,
            CheckKind::Climb,
        ] {
            assert!(kinds.contains(&k), "{k:?} missing from {kinds:?}");
        }
    }

    #[test]
    fn tolerances_are_inclusive() {
        let s = Scenario::default();
        let mut r = row(0);
        r.p_beam = s.budgets.p_max - r.p_fly - r.p_an + 0.5 * POWER_TOL;
        r.rate_user[0] = s.budgets.r_min - 0.5 * RATE_TOL;
        assert!(check_rows(&[r], &s).passed());
    }

    #[test]
    fn slot_gaps_are_reported() {
        let s = Scenario::default();
        let rep = check_rows(&[row(0), row(2)], &s);
        assert_eq!(rep.failures[0].kind, CheckKind::SlotOrder);
    }
}
