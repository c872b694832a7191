//! `smafem`: run simulations, compare solution strategies and run the verification
//! suite.
//!
//! Exit codes: 0 success, 1 usage/config/io error, 2 solver non-convergence,
//! 3 verification check failed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use smafem::local::LocalScheme;
use smafem::sim::{self, SimConfig};
use smafem::solver::Strategy;
use smafem::verify::suite;
use smafem::Error;

#[derive(Parser)]
#[command(name = "smafem", version, about = "Shape-memory-alloy finite-element solver")]
struct Cli {
    /// Print the fully populated configuration as TOML and exit.
    #[arg(long, value_name = "CONFIG")]
    dump_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured load path and write the results table and summary.
    Run {
        config: PathBuf,
        /// Directory for relative output paths (default: current directory).
        #[arg(long, short)]
        output_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
    },
    /// Compare strategies and local schemes on the configured problem.
    Bench {
        config: PathBuf,
        /// Run both strategies (default: only the configured one).
        #[arg(long)]
        compare: bool,
        /// `all` or a comma-separated list of schemes.
        #[arg(long, value_name = "all|SCHEME,...")]
        schemes: Option<String>,
        #[arg(long, short)]
        output_dir: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the verification suite and print one line per check.
    Verify {
        /// Also write the checks as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    ReturnMapping,
    ParallelProjection,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    NewtonRaphson,
    RadialReturn,
    ClosestPoint,
    CuttingPlane,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::ReturnMapping => Strategy::ReturnMapping,
            StrategyArg::ParallelProjection => Strategy::ParallelProjection,
        }
    }
}

impl From<SchemeArg> for LocalScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::NewtonRaphson => LocalScheme::NewtonRaphson,
            SchemeArg::RadialReturn => LocalScheme::RadialReturn,
            SchemeArg::ClosestPoint => LocalScheme::ClosestPoint,
            SchemeArg::CuttingPlane => LocalScheme::CuttingPlane,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Config(String),
    Io(String),
    Solver(String),
    Verification(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Config(_) | Failure::Io(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Verification(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Config(_) => "config",
            Failure::Io(_) => "io",
            Failure::Solver(_) => "solver",
            Failure::Verification(_) => "verification",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) | Failure::Config(m) | Failure::Io(m) | Failure::Solver(m) => m.clone(),
            Failure::Verification(n) => format!("{n} verification check(s) failed"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_solver_failure() {
            Failure::Solver(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
    exit_code: u8,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn load_config(path: &Path) -> Result<SimConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    SimConfig::from_toml(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

/// Writes every file to a temporary sibling first and renames only once all of them
/// were written, so a failure leaves no partial outputs.
fn write_atomically(files: &[(PathBuf, String)]) -> Result<(), Failure> {
    let mut staged = Vec::new();
    for (path, content) in files {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io_error(&dir, e))?;
        tmp.write_all(content.as_bytes()).map_err(|e| io_error(path, e))?;
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    }
    Ok(())
}

fn parse_schemes(arg: &str) -> Result<Vec<LocalScheme>, Failure> {
    if arg == "all" {
        return Ok(LocalScheme::ALL.to_vec());
    }
    arg.split(',')
        .map(|s| {
            let s = s.trim();
            LocalScheme::ALL
                .into_iter()
                .find(|k| k.name() == s)
                .ok_or_else(|| Failure::Usage(format!("unknown scheme `{s}` (expected all or newton_raphson, radial_return, closest_point, cutting_plane)")))
        })
        .collect()
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn run(
    config: &Path,
    output_dir: Option<&Path>,
    strategy: Option<StrategyArg>,
    scheme: Option<SchemeArg>,
) -> Result<(), Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = strategy {
        cfg.solver.strategy = s.into();
    }
    if let Some(s) = scheme {
        cfg.solver.scheme = s.into();
    }
    let columns = cfg.output.columns()?;
    let out = sim::run(&cfg)?;
    let results = resolve(output_dir, &cfg.output.results);
    let summary = resolve(output_dir, &cfg.output.summary);
    #[derive(Serialize)]
    struct Doc<'a> {
        config: String,
        summary: &'a sim::RunSummary,
    }
    let doc = Doc { config: config.display().to_string(), summary: &out.summary };
    write_atomically(&[(results.clone(), sim::results_table(&out.rows, &columns)), (summary.clone(), json(&doc))])?;
    let s = &out.summary;
    println!(
        "{} steps, {} / {}, converged: {}, outer iterations {}, local updates {}, wall time {:.3} s",
        s.steps,
        s.strategy.name(),
        s.scheme.name(),
        s.converged,
        s.outer_iterations,
        s.local_updates,
        s.wall_time
    );
    println!("probe: xi {:.9} displacement {:?}", s.probe.xi, s.probe.displacement);
    println!("wrote {} and {}", results.display(), summary.display());
    Ok(())
}

fn bench(
    config: &Path,
    compare: bool,
    schemes: Option<&str>,
    output_dir: Option<&Path>,
    json_path: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let schemes = schemes.map(parse_schemes).transpose()?;
    let report = sim::bench(&cfg, schemes.as_deref(), compare)?;
    let table = report.table();
    print!("{table}");
    if compare {
        let mut seen = Vec::new();
        for scheme in report.rows.iter().map(|r| r.scheme) {
            if seen.contains(&scheme) {
                continue;
            }
            seen.push(scheme);
            let updates = report.ratio(scheme, |r| r.local_updates as f64);
            let time = report.ratio(scheme, |r| r.wall_time);
            let step = report.ratio(scheme, |r| r.step_search.as_ref().map_or(f64::NAN, |s| s.largest));
            let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!(
                "# {}: parallel/return ratios: local updates {}, wall time {}, max step {}",
                scheme.name(),
                show(updates),
                show(time),
                show(step)
            );
        }
    }
    let mut files = Vec::new();
    if let Some(p) = &cfg.output.bench {
        files.push((resolve(output_dir, p), table));
    }
    if let Some(p) = json_path {
        files.push((p.to_path_buf(), json(&report)));
    }
    write_atomically(&files)?;
    match report.rows.iter().find(|r| r.error.is_some()) {
        Some(r) => Err(Failure::Solver(format!(
            "{} / {}: {}",
            r.strategy.name(),
            r.scheme.name(),
            r.error.as_deref().unwrap_or_default()
        ))),
        None => Ok(()),
    }
}

fn verify(json_path: Option<&Path>) -> Result<(), Failure> {
    let checks = suite::suite();
    for c in &checks {
        println!("{} {} measured {:.3e} limit {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.measured, c.limit);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{}/{} checks passed", checks.len() - failed, checks.len());
    if let Some(p) = json_path {
        write_atomically(&[(p.to_path_buf(), json(&checks))])?;
    }
    if failed > 0 {
        return Err(Failure::Verification(failed));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Some(path) = &cli.dump_config {
        let cfg = load_config(path)?;
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    match cli.command {
        Some(Command::Run { config, output_dir, strategy, scheme }) => run(&config, output_dir.as_deref(), strategy, scheme),
        Some(Command::Bench { config, compare, schemes, output_dir, json }) => {
            bench(&config, compare, schemes.as_deref(), output_dir.as_deref(), json.as_deref())
        }
        Some(Command::Verify { json }) => verify(json.as_deref()),
        None => Err(Failure::Usage("a subcommand or --dump-config is required (see --help)".into())),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return report(Failure::Usage(e.kind().to_string()));
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> ExitCode {
    let record = ErrorRecord { error: f.kind(), message: f.message(), exit_code: f.code() };
    eprintln!("{}", serde_json::to_string(&record).expect("record serializes"));
    ExitCode::from(f.code())
}
