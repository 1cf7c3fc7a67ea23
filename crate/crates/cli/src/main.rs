use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use armguide::checks::{run_checks, CheckOptions};
use armguide::esdf::build_esdf;
use armguide::export::write_json;
use armguide::sim_harness::{
    compare, run_scenario, thread_limit_from_env, write_arm_times_csv, write_metrics_csv,
    write_run_artifacts, Mode, Scenario, ScenarioError, SuiteSpec, THREADS_ENV,
};
use clap::{Args, Parser, Subcommand};

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_COMPARE: u8 = 3;
const EXIT_CHECK: u8 = 4;

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  1  configuration, usage or I/O error
  2  plan: infeasible or failed verification
  3  compare: at least one run failed
  4  check: at least one check failed

Results go to stdout, logs to stderr. RINGO_THREADS caps the compare worker count.";

#[derive(Parser, Debug)]
#[command(name = "armguide", version, about = "Multi-rotor and arm trajectory planner", after_help = EXIT_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Debug logging and per-iteration optimizer records.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plan one scenario and write the artifact bundle.
    Plan(ScenarioArgs),
    /// Run a suite of scenarios in both modes and write the metrics table.
    Compare(CompareArgs),
    /// Build the distance field of a scenario map and dump it.
    Map(ScenarioArgs),
    /// Run the gradient, hull containment and distance field checks.
    Check(CheckArgs),
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Name of a shipped scenario (ring, corridor, narrow_gap, suite_a, suite_b, suite_c).
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the scenario's mode.
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Suite TOML file; defaults to the shipped three-scenario suite.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides every scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run a single mode instead of the suite's modes.
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Flip the sign of every analytic gradient (negative control).
    #[arg(long)]
    perturb_gradient: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Self::config(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .target(env_logger::Target::Stderr)
        .init();

    let result = match cli.command {
        Command::Plan(a) => plan(a, cli.verbose),
        Command::Compare(a) => run_compare(a, cli.verbose),
        Command::Map(a) => map(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_scenario(a: &ScenarioArgs, verbose: bool) -> Result<Scenario, Failure> {
    let mut sc = match (&a.config, &a.scenario) {
        (Some(path), _) => Scenario::load(path)?,
        (None, Some(name)) => Scenario::builtin(name)?,
        (None, None) => return Err(Failure::config("one of --config or --scenario is required")),
    };
    if let Some(seed) = a.seed {
        sc.seed = seed;
    }
    if let Some(mode) = a.mode {
        sc.mode = mode;
    }
    sc.ee.trace_iterations |= verbose;
    Ok(sc)
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))
}

fn create_file(path: &Path) -> Result<io::BufWriter<fs::File>, Failure> {
    fs::File::create(path)
        .map(io::BufWriter::new)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn plan(a: ScenarioArgs, verbose: bool) -> Result<(), Failure> {
    let sc = load_scenario(&a, verbose)?;
    create_out(&a.out)?;
    log::info!("planning {} in {} mode", sc.name, sc.mode);
    let outcome = run_scenario(&sc, sc.mode)?;
    write_run_artifacts(&outcome, &a.out)?;
    let m = &outcome.metrics;
    write_json(m, io::stdout().lock()).map_err(Failure::config)?;
    println!();
    log::info!("artifacts written to {}", a.out.display());
    if m.success && m.collision_ok && m.workspace_ok != Some(false) {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_INFEASIBLE,
            message: m
                .failure
                .clone()
                .unwrap_or_else(|| "plan failed verification".into()),
        })
    }
}

fn run_compare(a: CompareArgs, verbose: bool) -> Result<(), Failure> {
    let (suite, base) = match &a.config {
        Some(path) => (SuiteSpec::load(path)?, path.parent().map(Path::to_path_buf)),
        None => (SuiteSpec::default_suite(), None),
    };
    let mut scenarios = suite.resolve(base.as_deref())?;
    for sc in &mut scenarios {
        if let Some(seed) = a.seed {
            sc.seed = seed;
        }
        sc.ee.trace_iterations |= verbose;
    }
    let modes = a.mode.map_or(suite.modes.clone(), |m| vec![m]);
    create_out(&a.out)?;
    let threads = thread_limit_from_env();
    if let Some(n) = threads {
        log::info!("{THREADS_ENV}={n}");
    }
    let cmp = compare(&scenarios, &modes, threads)?;
    write_metrics_csv(&cmp.rows, create_file(&a.out.join("metrics.csv"))?)?;
    write_arm_times_csv(&cmp.arm_times, create_file(&a.out.join("arm_times.csv"))?)?;
    write_json(&cmp.summary, create_file(&a.out.join("summary.json"))?).map_err(Failure::config)?;
    write_metrics_csv(&cmp.rows, io::stdout().lock())?;

    let s = &cmp.summary;
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    log::info!(
        "{} runs, {} failed; arm compute mean {} ms, max {} ms; multi-rotor mean {:.3} ms, max {:.3} ms",
        s.runs,
        s.failed,
        fmt(s.mean_arm_ms),
        fmt(s.max_arm_ms),
        s.mean_multi_ms,
        s.max_multi_ms
    );
    if cmp.all_succeeded() {
        Ok(())
    } else {
        let failed: Vec<String> = cmp
            .rows
            .iter()
            .filter(|r| !r.success)
            .map(|r| format!("{}/{}", r.scenario, r.mode))
            .collect();
        Err(Failure {
            code: EXIT_COMPARE,
            message: format!("failed runs: {}", failed.join(", ")),
        })
    }
}

fn map(a: ScenarioArgs) -> Result<(), Failure> {
    let sc = load_scenario(&a, false)?;
    create_out(&a.out)?;
    let grid = sc.build_map()?;
    let esdf = build_esdf(&grid, sc.map.sentinel);
    let path = a.out.join("esdf.bin");
    let mut w = create_file(&path)?;
    esdf.write_dump(&mut w).map_err(Failure::config)?;
    w.flush().map_err(Failure::config)?;
    let g = esdf.geometry();
    println!(
        "dims {} {} {} resolution {} occupied {} path {}",
        g.dims[0],
        g.dims[1],
        g.dims[2],
        g.resolution,
        grid.occupied_count(),
        path.display()
    );
    Ok(())
}

fn check(a: CheckArgs) -> Result<(), Failure> {
    let mut opts = CheckOptions {
        perturb_gradient: a.perturb_gradient,
        ..CheckOptions::default()
    };
    if let Some(seed) = a.seed {
        opts.seed = seed;
    }
    let report = run_checks(&opts);
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .lines
            .iter()
            .filter(|l| !l.passed)
            .map(|l| l.name)
            .collect();
        Err(Failure {
            code: EXIT_CHECK,
            message: format!("failed checks: {}", failed.join(", ")),
        })
    }
}
