//! End-to-end runs through the public API.

use uavsec_core::harness::check::check_rows;
use uavsec_core::harness::log::{read_rows, write_log, LogFormat, SlotFlag, Termination};
use uavsec_core::mpc::{self, objective_trace_check, DisturbanceModel, Scheme};
use uavsec_core::{Scenario, Vec3};

fn short_scenario() -> Scenario {
    let mut s = Scenario::default();
    s.goal = Vec3::new(2500.0, 0.0, 700.0);
    s.users.truncate(1);
    s.mpc.horizon = 1;
    s
}

#[test]
fn start_inside_goal_region_logs_nothing() {
    let mut s = Scenario::default();
    s.goal = s.start + Vec3::new(20.0, 0.0, 0.0);
    let log = mpc::run(&s).unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(log.termination, Termination::Arrival);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    write_log(&log, s.k(), &path, LogFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn short_flight_arrives_and_checks_clean() {
    let s = short_scenario();
    let log = mpc::run(&s).unwrap();
    assert_eq!(log.termination, Termination::Arrival);
    assert!(log.terminal_error(&s.goal) <= s.mpc.eps);
    assert_eq!(log.rows.len(), log.applied_beams.len());
    assert_eq!(log.rows.len(), log.trace.slots.len());
    let rep = check_rows(&log.rows, &s);
    assert!(rep.passed(), "{:?}", rep.failures);
    assert!(objective_trace_check(&log.trace).is_ok());
    assert!(log
        .rows
        .iter()
        .all(|r| !r.flags.contains(&SlotFlag::Restoring)));
}

#[test]
fn logs_survive_both_formats() {
    let mut s = short_scenario();
    s.mpc.disturbance = DisturbanceModel::gaussian(3.0, 11);
    let log = mpc::run(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, fmt) in [("l.jsonl", LogFormat::JsonLines), ("l.csv", LogFormat::Csv)] {
        let path = dir.path().join(name);
        write_log(&log, s.k(), &path, fmt).unwrap();
        let back = read_rows(&path, fmt).unwrap();
        assert_eq!(back.len(), log.rows.len());
        if fmt == LogFormat::JsonLines {
            assert_eq!(back, log.rows);
        }
        for (a, b) in back.iter().zip(&log.rows) {
            assert_eq!(a.flags, b.flags);
            assert!((a.q - b.q).norm() < 1e-9);
        }
    }
}

#[test]
fn every_scheme_runs_on_the_same_disturbance() {
    let mut s = short_scenario();
    s.mpc.disturbance = DisturbanceModel::gaussian(5.0, 2);
    let mut first = Vec::new();
    for scheme in [Scheme::MpcOnline, Scheme::MpcOffline, Scheme::BcdOpenLoop] {
        s.mpc.scheme = scheme;
        let log = mpc::run_scheme(&s).unwrap();
        assert_eq!(log.scheme, scheme);
        assert!(!log.rows.is_empty());
        first.push(log.rows[0].q);
    }
    // nothing has been disturbed before the first slot
    assert!(first.iter().all(|q| (q - s.start).norm() < 1e-9));
}

#[test]
fn scenario_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    let mut s = Scenario::default().with_users(3);
    s.mpc.disturbance = DisturbanceModel::gaussian(2.0, 5);
    s.save(&path).unwrap();
    let back = Scenario::load(&path).unwrap();
    assert_eq!(back, s);
    back.save(&path).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        s.to_toml_string().unwrap()
    );
}
