//! `uavsec` command-line driver.
//!
//! Exit codes: 0 success, 1 usage, 2 invalid configuration or unreadable
//! input, 3 solver failure, 4 invariant-check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use uavsec_core::harness::check::check_rows;
use uavsec_core::harness::log::{read_rows, write_log, LogFormat};
use uavsec_core::harness::scenario::Preset;
use uavsec_core::harness::sweep::{aggregate, run_sweep, write_aggregate, write_runs, SweepSpec};
use uavsec_core::mpc::{run_scheme, DisturbanceKind, DisturbanceModel};
use uavsec_core::{Error, Scenario, Scheme};

#[derive(Parser)]
#[command(name = "uavsec", version, about = "Secure UAV downlink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one flight and write its per-slot log.
    Run(RunArgs),
    /// Run a grid of flights and write per-run and aggregate tables.
    Sweep(SweepArgs),
    /// Check a finished log against the scenario's constraints.
    Check(CheckArgs),
    /// Print or save a preset scenario file.
    Preset(PresetArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchemeArg {
    /// Open-loop plan solved once at the start.
    Bcd,
    /// Receding horizon on forecast positions.
    MpcOffline,
    /// Receding horizon on measured positions.
    MpcOnline,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Bcd => Scheme::BcdOpenLoop,
            SchemeArg::MpcOffline => Scheme::MpcOffline,
            SchemeArg::MpcOnline => Scheme::MpcOnline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Speed,
    Secrecy,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or `default` for the built-in scenario.
    #[arg(long, default_value = "default")]
    config: PathBuf,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Disturbance seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output log; `.jsonl` writes JSON lines, anything else CSV.
    #[arg(long)]
    out: PathBuf,
    /// Prediction horizon.
    #[arg(long)]
    np: Option<usize>,
    /// Per-axis disturbance standard deviation in meters.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "default")]
    config: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mpc-online")]
    schemes: Vec<SchemeArg>,
    /// Seeds as a list (`1,2,3`) or a half-open range (`0..20`).
    #[arg(long, default_value = "0..10", value_parser = parse_seeds)]
    seeds: SeedList,
    #[arg(long, value_delimiter = ',')]
    sigma: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    np: Vec<usize>,
    /// User counts, taken from the default user layout.
    #[arg(long, value_delimiter = ',')]
    users: Vec<usize>,
    /// Directory receiving `runs.csv` and `aggregate.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Log written by `run`.
    log: PathBuf,
    #[arg(long, default_value = "default")]
    config: PathBuf,
}

#[derive(Args)]
struct PresetArgs {
    #[arg(value_enum)]
    name: PresetArg,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
        if b <= a {
            return Err(format!("empty seed range {s}"));
        }
        return Ok(SeedList((a..b).collect()));
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|e| format!("{x}: {e}")))
        .collect::<Result<_, _>>()
        .map(SeedList)
}

/// Error carrying the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Solver(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            error: e.into(),
        }
    }
}

fn load(config: &Path) -> Result<Scenario, Failure> {
    Ok(Scenario::load(config)?)
}

fn apply_disturbance(s: &mut Scenario, sigma: Option<f64>, seed: Option<u64>) {
    let d = &mut s.mpc.disturbance;
    match (sigma, d.kind) {
        (Some(sigma), _) if sigma > 0.0 => {
            *d = DisturbanceModel::gaussian(sigma, seed.unwrap_or(d.seed))
        }
        (Some(_), _) => *d = DisturbanceModel::none(),
        (None, DisturbanceKind::Gaussian) => d.seed = seed.unwrap_or(d.seed),
        (None, _) => {}
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut s = load(&args.config)?;
    if let Some(scheme) = args.scheme {
        s.mpc.scheme = scheme.into();
    }
    if let Some(np) = args.np {
        s.mpc.horizon = np;
    }
    apply_disturbance(&mut s, args.sigma, args.seed);
    s.validate()?;
    let log = run_scheme(&s)?;
    write_log(&log, s.k(), &args.out, LogFormat::from_path(&args.out))?;
    log::info!(
        "{} slots, {:?}, terminal error {:.2} m",
        log.rows.len(),
        log.termination,
        log.terminal_error(&s.goal)
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let base = load(&args.config)?;
    let mut spec = SweepSpec::from_scenario(&base);
    spec.schemes = args.schemes.into_iter().map(Scheme::from).collect();
    spec.seeds = args.seeds.0;
    if !args.sigma.is_empty() {
        spec.sigmas = args.sigma;
    }
    if !args.np.is_empty() {
        spec.horizons = args.np;
    }
    if !args.users.is_empty() {
        spec.users = args.users;
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(|error| Failure { code: 2, error })?;
    let runs = run_sweep(&base, &spec)?;
    let agg = aggregate(&runs);
    write_runs(&runs, &args.out.join("runs.csv"))?;
    write_aggregate(&agg, &args.out.join("aggregate.csv"))?;
    for row in &agg {
        log::info!(
            "{:?} K={} Np={} sigma={}: arrival {:.2}, error {:.2} m, power {:.2} W",
            row.scheme,
            row.users,
            row.horizon,
            row.sigma,
            row.arrival_rate,
            row.mean_terminal_error,
            row.mean_total_power
        );
    }
    Ok(())
}

fn check(args: CheckArgs) -> Result<(), Failure> {
    let s = load(&args.config)?;
    let rows = read_rows(&args.log, LogFormat::from_path(&args.log))?;
    let report = check_rows(&rows, &s);
    if report.passed() {
        println!("{} rows: ok", report.rows);
        return Ok(());
    }
    for f in &report.failures {
        println!("{f}");
    }
    Err(Failure {
        code: 4,
        error: anyhow!("{} of {} rows failed", report.failures.len(), report.rows),
    })
}

fn preset(args: PresetArgs) -> Result<(), Failure> {
    let s = Scenario::with_preset(match args.name {
        PresetArg::Speed => Preset::Speed,
        PresetArg::Secrecy => Preset::Secrecy,
    });
    match args.out {
        Some(path) => s.save(&path)?,
        None => print!("{}", s.to_toml_string()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            eprint!("{text}");
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(1);
        }
    };
    let out = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Check(a) => check(a),
        Command::Preset(a) => preset(a),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
