use std::path::Path;
use std::process::{Command, Output};

fn uavsec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavsec"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_log_that_checks_clean_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = uavsec(&[
            "run",
            "--config",
            "default",
            "--scheme",
            "mpc-online",
            "--seed",
            "1",
            "--sigma",
            "5",
            "--np",
            "1",
            "--out",
            path(out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("slot,x,y,z,vx,vy,vz,p_fly,p_beam,p_an,rate_user_1,rate_user_2,"));
    assert!(text.lines().count() > 5);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let o = uavsec(&["check", path(&a)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    // push one slot over the power budget
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[2].split(',').map(String::from).collect();
    cells[8] = "1000".into();
    lines[2] = cells.join(",");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let o = uavsec(&["check", path(&bad)]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Power"));
}

#[test]
fn unknown_scheme_is_a_usage_error() {
    let o = uavsec(&["run", "--scheme", "greedy", "--out", "x.csv"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&uavsec(&["frobnicate"])), 1);
    assert_eq!(code(&uavsec(&["--help"])), 0);
}

#[test]
fn bad_configs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[budgets]\np_maximum = 3\n").unwrap();
    let out = dir.path().join("o.csv");
    let o = uavsec(&["run", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(code(&o), 2);

    std::fs::write(&cfg, "[budgets]\np_max = -1\n").unwrap();
    assert_eq!(
        code(&uavsec(&[
            "run",
            "--config",
            path(&cfg),
            "--out",
            path(&out)
        ])),
        2
    );
    assert_eq!(
        code(&uavsec(&[
            "run",
            "--config",
            "/nonexistent.toml",
            "--out",
            path(&out)
        ])),
        2
    );
    assert!(!out.exists());
}

#[test]
fn presets_round_trip_through_run_config() {
    let dir = tempfile::tempdir().unwrap();
    let speed = dir.path().join("speed.toml");
    assert_eq!(
        code(&uavsec(&["preset", "speed", "--out", path(&speed)])),
        0
    );
    let o = uavsec(&["preset", "speed"]);
    assert_eq!(code(&o), 0);
    assert_eq!(o.stdout, std::fs::read(&speed).unwrap());

    let secrecy = uavsec(&["preset", "secrecy"]);
    assert_ne!(secrecy.stdout, o.stdout);
    assert_eq!(
        code(&uavsec(&["check", "--config", path(&speed), path(&speed)])),
        2
    );
}

#[test]
fn sweep_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = uavsec(&[
        "sweep",
        "--seeds",
        "0,1",
        "--sigma",
        "2",
        "--np",
        "1",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 2);
    assert!(agg
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("mpc-online,2,1,2.0,2,"));
}
