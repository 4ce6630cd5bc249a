//! `lpm`: simulate measurements, solve them, benchmark the solvers and
//! regenerate figure data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Parser, Subcommand};

use lpm_core::harness::bench::{compare, Comparison, DEFAULT_REPETITIONS};
use lpm_core::harness::figures::{reproduce, FIGURES};
use lpm_core::harness::io::{read_measurements, write_fixes, write_measurements};
use lpm_core::harness::{run, Method, SolveOptions};
use lpm_core::simulate::{build_stations, circular_path, synthesize, ScenarioSpec};
use lpm_core::Execution;

const SEED_VAR: &str = "LPM_SEED";

#[derive(Parser, Debug)]
#[command(name = "lpm", version, about = "Pseudo-range multilateration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the measurement CSV of a scenario.
    Simulate { scenario: PathBuf, out: PathBuf },
    /// Solve a measurement CSV; prints the run report as JSON.
    Solve {
        measurements: PathBuf,
        scenario: PathBuf,
        fixes: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Time filtered-linear against LM-TDOA on the same filtered data.
    Bench {
        scenario: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        pivot: usize,
        /// Print the comparison as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Regenerate the data series of one figure into `outdir`.
    Reproduce {
        #[arg(long, value_parser = parse_figure)]
        figure: u32,
        outdir: PathBuf,
    },
}

#[derive(clap::Args, Debug)]
struct SolverArgs {
    #[arg(long, default_value = "linear", value_parser = method_parser())]
    method: Method,
    #[arg(long, default_value_t = 0)]
    pivot: usize,
    /// Box filter length, odd.
    #[arg(long = "filter-N")]
    filter_n: Option<usize>,
    #[arg(long)]
    passes: Option<usize>,
    /// Use ground-truth differences instead of the moving average.
    #[arg(long)]
    oracle_filter: bool,
    /// Solve frames on a single thread.
    #[arg(long)]
    sequential: bool,
}

fn method_parser() -> impl TypedValueParser<Value = Method> {
    PossibleValuesParser::new(Method::ALL.map(Method::name)).map(|s| s.parse().expect("listed name"))
}

fn parse_figure(s: &str) -> Result<u32, String> {
    s.parse()
        .ok()
        .filter(|f| FIGURES.contains(f))
        .ok_or_else(|| format!("expected one of {FIGURES:?}"))
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<lpm_core::Error> for Failure {
    fn from(e: lpm_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

type CliResult<T> = Result<T, Failure>;

fn seed_override() -> CliResult<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("{SEED_VAR} must be an unsigned integer, got {v:?}"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Failure::Usage(format!("{SEED_VAR}: {e}"))),
    }
}

fn load_scenario(path: &Path) -> CliResult<ScenarioSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))?;
    let mut spec = ScenarioSpec::from_json(&text)
        .with_context(|| format!("parsing scenario {}", path.display()))?;
    if let Some(seed) = seed_override()? {
        spec.seed = seed;
    }
    Ok(spec)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn simulate(scenario: &Path, out: &Path) -> CliResult<()> {
    let spec = load_scenario(scenario)?;
    let traj = synthesize(&spec)?;
    let mut w = create(out)?;
    write_measurements(&mut w, &traj)?;
    w.flush().with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn solve(measurements: &Path, scenario: &Path, fixes: &Path, args: &SolverArgs) -> CliResult<()> {
    let spec = load_scenario(scenario)?;
    let mut filter = spec.filter;
    if let Some(n) = args.filter_n {
        filter.window = n;
    }
    if let Some(p) = args.passes {
        filter.passes = p;
    }
    filter.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let stations = build_stations(&spec)?;
    if args.pivot >= stations.len() {
        return Err(Failure::Usage(format!(
            "--pivot {} out of range for {} stations",
            args.pivot,
            stations.len()
        )));
    }
    if args.oracle_filter && !args.method.filtered() {
        return Err(Failure::Usage(format!(
            "--oracle-filter needs a filtered method, not {}",
            args.method
        )));
    }

    let file = File::open(measurements).with_context(|| format!("opening {}", measurements.display()))?;
    let mut traj = read_measurements(BufReader::new(file), stations.len())
        .with_context(|| format!("reading {}", measurements.display()))?;
    let path = circular_path(&spec);
    if path.len() == traj.len() {
        traj.truth = Some(path);
    } else if args.oracle_filter {
        return Err(Failure::Data(anyhow!(
            "--oracle-filter needs ground truth: scenario has {} frames, measurements {}",
            path.len(),
            traj.len()
        )));
    }

    let opts = SolveOptions {
        pivot: args.pivot,
        filter,
        oracle_filter: args.oracle_filter,
        execution: if args.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        ..SolveOptions::new(args.method)
    };
    let report = run(&traj, &stations, &opts)?;
    let mut w = create(fixes)?;
    write_fixes(&mut w, &report.fixes, stations.dim())?;
    w.flush().with_context(|| format!("writing {}", fixes.display()))?;
    print_json(&report)
}

fn print_table(c: &Comparison) {
    println!("frames {}  repetitions {}", c.frames, c.repetitions);
    println!("{:<16} {:>12} {:>14}", "method", "median_ms", "mean_error_m");
    for t in [&c.linear, &c.nonlinear] {
        let err = t
            .mean_path_error
            .map_or_else(|| "-".to_string(), |e| format!("{:.6}", e.mean_m));
        println!("{:<16} {:>12.3} {:>14}", t.method.name(), t.median_ms, err);
    }
    println!("time ratio {:.3}", c.time_ratio);
}

fn bench(scenario: &Path, repetitions: usize, pivot: usize, json: bool) -> CliResult<()> {
    if repetitions == 0 {
        return Err(Failure::Usage("--repetitions must be at least 1".into()));
    }
    let spec = load_scenario(scenario)?;
    let traj = synthesize(&spec)?;
    let stations = build_stations(&spec)?;
    if pivot >= stations.len() {
        return Err(Failure::Usage(format!(
            "--pivot {pivot} out of range for {} stations",
            stations.len()
        )));
    }
    let base = SolveOptions {
        pivot,
        filter: spec.filter,
        ..SolveOptions::new(Method::LinearFiltered)
    };
    let c = compare(&traj, &stations, &base, repetitions)?;
    if json {
        print_json(&c)
    } else {
        print_table(&c);
        Ok(())
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    serde_json::to_writer_pretty(&mut out, value).context("writing report")?;
    writeln!(out).context("writing report")?;
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { scenario, out } => simulate(&scenario, &out),
        Command::Solve {
            measurements,
            scenario,
            fixes,
            solver,
        } => solve(&measurements, &scenario, &fixes, &solver),
        Command::Bench {
            scenario,
            repetitions,
            pivot,
            json,
        } => bench(&scenario, repetitions, pivot, json),
        Command::Reproduce { figure, outdir } => {
            let out = reproduce(figure, &outdir, seed_override()?)?;
            print_json(&out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
