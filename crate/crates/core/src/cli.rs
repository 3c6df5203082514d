//! Command-line front end.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or configuration error,
//! 3 I/O error.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::analysis::{CheckSuite, Checker, CheckerKind, MajorityChecker};
use crate::config::{ConfigError, ConfigFile};
use crate::engine::replay;
use crate::sweep::{
    aggregate, read_runs_jsonl, summarize_run, sweep, write_aggregate_csv, write_aggregate_text,
    write_runs_jsonl, write_series_csv,
};
use crate::trace::{JsonlWriter, Trace};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "byzline",
    version,
    about = "Byzantine-tolerant robot convergence on a line"
)]
pub struct Cli {
    /// Default directory for outputs not given explicitly.
    #[arg(
        long,
        env = "BYZLINE_OUT_DIR",
        default_value = "byzline-out",
        global = true
    )]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its trace and summary.
    Run {
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace file (line-delimited JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary file (JSON).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run every grid point of the config's experiments table over many seeds.
    Sweep {
        config: PathBuf,
        /// Seeds per grid point; defaults to `experiments.seeds`, else 1.
        #[arg(long)]
        seeds: Option<u64>,
        /// Output directory for runs.jsonl and aggregate.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a trace with the property checkers.
    Check {
        trace: PathBuf,
        /// Comma-separated checker names, or `all`.
        #[arg(long, default_value = "all")]
        checkers: String,
        /// Minimum events each non-vacuous checker must examine.
        #[arg(long, default_value_t = 0)]
        min_events: u64,
        /// Fringe width for the majority checker; defaults to a tenth of the
        /// initial UD-diameter.
        #[arg(long)]
        b: Option<f64>,
        /// Also re-run the trace and require a bit-identical result.
        #[arg(long)]
        replay: bool,
    },
    /// Merge sweep summaries into one table.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export every run's diameter series as CSV.
        #[arg(long)]
        series: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Text,
}

/// A failure mapped to its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(format!("invalid configuration: {e}"))
    }
}

type Outcome = Result<u8, Failure>;

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(execute(cli))
}

/// Runs a parsed command line and returns its exit code.
pub fn execute(cli: Cli) -> u8 {
    let out_dir = cli.out_dir;
    let outcome = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            summary,
        } => cmd_run(&config, seed, out, summary, &out_dir),
        Command::Sweep { config, seeds, out } => cmd_sweep(&config, seeds, out, &out_dir),
        Command::Check {
            trace,
            checkers,
            min_events,
            b,
            replay,
        } => cmd_check(&trace, &checkers, min_events, b, replay),
        Command::Report {
            dir,
            format,
            out,
            series,
        } => cmd_report(&dir, format, out, series),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn load_config(path: &Path) -> Result<ConfigFile, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    Ok(ConfigFile::parse(&text)?)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(path, e))
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    summary: Option<PathBuf>,
    out_dir: &Path,
) -> Outcome {
    let mut sim = load_config(config)?.sim;
    if let Some(s) = seed {
        sim.seed = s;
    }
    sim.validate()?;
    let trace_path = out.unwrap_or_else(|| out_dir.join(format!("trace-{}.jsonl", sim.seed)));
    let summary_path =
        summary.unwrap_or_else(|| out_dir.join(format!("summary-{}.json", sim.seed)));
    let mut writer = JsonlWriter::new(create(&trace_path)?);
    let mut summary_out = create(&summary_path)?;
    let result = summarize_run("run", &sim, &mut writer);
    if let Some(e) = &result.error {
        return Err(Failure::usage(e.clone()));
    }
    writer.finish().map_err(|e| Failure::io(&trace_path, e))?;
    serde_json::to_writer_pretty(&mut summary_out, &result)
        .map_err(io::Error::from)
        .and_then(|()| writeln!(summary_out))
        .and_then(|()| summary_out.flush())
        .map_err(|e| Failure::io(&summary_path, e))?;
    match result.t_epsilon {
        Some(t) => println!("converged at step {t} (seed {})", sim.seed),
        None => println!(
            "not converged after {} steps, UD-diameter {} (seed {})",
            result.steps,
            result.final_ud_diameter.unwrap_or(f64::NAN),
            sim.seed
        ),
    }
    println!("trace: {}", trace_path.display());
    println!("summary: {}", summary_path.display());
    Ok(EXIT_OK)
}

fn cmd_sweep(config: &Path, seeds: Option<u64>, out: Option<PathBuf>, out_dir: &Path) -> Outcome {
    let file = load_config(config)?;
    let seeds = seeds.or(file.experiments.seeds).unwrap_or(1);
    if seeds == 0 {
        return Err(Failure::usage("at least one seed is required"));
    }
    let dir = out.unwrap_or_else(|| out_dir.to_path_buf());
    let runs_path = dir.join("runs.jsonl");
    let agg_path = dir.join("aggregate.csv");
    let runs_out = create(&runs_path)?;
    let agg_out = create(&agg_path)?;
    let result = sweep(&file.sim, seeds, &file.experiments.grid);
    write_runs_jsonl(&result.runs, runs_out).map_err(|e| Failure::io(&runs_path, e))?;
    write_aggregate_csv(&result.aggregate, agg_out).map_err(|e| Failure::io(&agg_path, e))?;
    write_aggregate_text(&result.aggregate, io::stdout().lock())
        .map_err(|e| Failure::io(Path::new("<stdout>"), e))?;
    let failed = result.runs.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!(
            "warning: {failed} of {} runs could not be carried out",
            result.runs.len()
        );
    }
    println!("runs: {}", runs_path.display());
    println!("aggregate: {}", agg_path.display());
    Ok(EXIT_OK)
}

fn parse_checkers(list: &str) -> Result<Vec<CheckerKind>, Failure> {
    if list.trim() == "all" {
        return Ok(CheckerKind::ALL.to_vec());
    }
    list.split(',')
        .map(|s| s.trim().parse::<CheckerKind>().map_err(Failure::usage))
        .collect()
}

fn cmd_check(
    path: &Path,
    list: &str,
    min_events: u64,
    b: Option<f64>,
    with_replay: bool,
) -> Outcome {
    let kinds = parse_checkers(list)?;
    let file = File::open(path).map_err(|e| Failure::io(path, e))?;
    let trace = Trace::read_jsonl(BufReader::new(file)).map_err(|e| Failure::io(path, e))?;
    let checkers: Vec<Box<dyn Checker>> = kinds
        .iter()
        .map(|&k| match k {
            CheckerKind::Majority => Box::new(MajorityChecker::new(b)) as Box<dyn Checker>,
            other => other.build(),
        })
        .collect();
    let mut failed = false;
    for report in CheckSuite::from_checkers(checkers).check(&trace) {
        println!("{report}");
        if report.is_failure() {
            failed = true;
        }
        if !report.informational
            && report.events_examined > 0
            && report.events_examined < min_events
        {
            println!(
                "    coverage: examined {} events, at least {min_events} required",
                report.events_examined
            );
            failed = true;
        }
    }
    if with_replay {
        match replay(&trace) {
            Ok(r) => {
                for w in r.warnings {
                    println!("replay warning: {w}");
                }
                println!("replay                 pass");
            }
            Err(e) => {
                println!("replay                 FAIL {e}");
                failed = true;
            }
        }
    }
    Ok(if failed { EXIT_VIOLATION } else { EXIT_OK })
}

fn cmd_report(
    dir: &Path,
    format: Format,
    out: Option<PathBuf>,
    series: Option<PathBuf>,
) -> Outcome {
    let entries = fs::read_dir(dir).map_err(|e| Failure::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut runs = Vec::new();
    for f in &files {
        let reader = BufReader::new(File::open(f).map_err(|e| Failure::io(f, e))?);
        runs.extend(read_runs_jsonl(reader).map_err(|e| Failure::io(f, e))?);
    }
    if runs.is_empty() {
        return Err(Failure::usage(format!(
            "no run summaries in {}",
            dir.display()
        )));
    }
    let rows = aggregate(&runs);
    let write = |w: &mut dyn Write| match format {
        Format::Csv => write_aggregate_csv(&rows, w),
        Format::Text => write_aggregate_text(&rows, w),
    };
    match &out {
        Some(path) => write(&mut create(path)?).map_err(|e| Failure::io(path, e))?,
        None => {
            write(&mut io::stdout().lock()).map_err(|e| Failure::io(Path::new("<stdout>"), e))?
        }
    }
    if let Some(path) = series {
        write_series_csv(&runs, create(&path)?).map_err(|e| Failure::io(&path, e))?;
    }
    if rows.iter().any(|g| g.mixed_versions()) {
        eprintln!("warning: summaries come from more than one code version");
    }
    Ok(EXIT_OK)
}
