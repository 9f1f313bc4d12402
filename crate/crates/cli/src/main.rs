use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use hrsci_core::config::ConfigError;
use hrsci_core::exec;
use hrsci_core::indexes::grid::GridLevel;
use hrsci_core::indexes::Metric;
use hrsci_core::pipeline::{ErrorKind, Pipeline, PipelineError, RunOptions, Stage, StageReport};
use hrsci_core::synth::{self, SynthConfig};
use hrsci_core::util::parse_date;
use hrsci_core::{Execution, StudyConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "hrsci",
    version,
    about = "Contact and search-risk indexes from GPS and web-search logs"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Study configuration (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Results directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Override a config key, e.g. `--set risk_threshold_k=4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate and normalize the raw logs.
    Ingest,
    /// Sessionize queries and mark high-risk users.
    Risk,
    /// Estimate homes and daily population.
    Homes,
    /// Count contacts per interval.
    Contacts {
        /// Also write per-user counts for this interval index.
        #[arg(long = "debug-interval", value_name = "N")]
        debug_intervals: Vec<u32>,
    },
    /// Regional SCI, HRU and HR-SCI series.
    Indexes,
    /// Coarse and refined grid scores.
    Grid {
        /// Comma-separated subset of SCI,HRU,HRSCI.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        /// coarse or fine; both when omitted.
        #[arg(long)]
        level: Option<String>,
        /// Aggregation period as START..END (inclusive dates).
        #[arg(long)]
        period: Option<String>,
    },
    /// Weekly rankings of refined cells.
    Rank,
    /// Lagged correlation against daily cases.
    Lag,
    /// Synthetic data.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Every stage in order, reusing up-to-date outputs.
    All,
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Generate a synthetic world and write its logs.
    Generate,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        error: error.into(),
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.kind() {
            ErrorKind::Usage => EXIT_USAGE,
            ErrorKind::Data => EXIT_DATA,
            ErrorKind::Internal => EXIT_INTERNAL,
        };
        Failure { code, error: e.into() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let threads = cli.global.threads;
    match exec::with_threads(threads, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = cli.global;
    let out = g
        .out
        .clone()
        .ok_or_else(|| usage(anyhow::anyhow!("--out is required")))?;
    if let Command::Synth {
        command: SynthCommand::Generate,
    } = cli.command
    {
        return synth_generate(g.config.as_deref(), &out);
    }

    let config_path = g.config.ok_or_else(|| usage(anyhow::anyhow!("--config is required")))?;
    let cfg = StudyConfig::load(&config_path, &g.overrides).map_err(config_failure)?;
    let mut opts = RunOptions {
        exec: Execution::Parallel,
        ..RunOptions::default()
    };
    let stage = match cli.command {
        Command::Ingest => Some(Stage::Ingest),
        Command::Risk => Some(Stage::Risk),
        Command::Homes => Some(Stage::Homes),
        Command::Contacts { debug_intervals } => {
            opts.debug_intervals = debug_intervals;
            Some(Stage::Contacts)
        }
        Command::Indexes => Some(Stage::Indexes),
        Command::Grid { metrics, level, period } => {
            if !metrics.is_empty() {
                opts.metrics = metrics
                    .iter()
                    .map(|m| Metric::parse(m.trim()).ok_or_else(|| usage(anyhow::anyhow!("unknown metric `{m}`"))))
                    .collect::<Result<_, _>>()?;
            }
            if let Some(l) = level {
                opts.level =
                    Some(GridLevel::parse(&l).ok_or_else(|| usage(anyhow::anyhow!("unknown grid level `{l}`")))?);
            }
            if let Some(p) = period {
                opts.period = Some(
                    parse_period(&p).ok_or_else(|| usage(anyhow::anyhow!("bad period `{p}`, expected START..END")))?,
                );
            }
            Some(Stage::Grid)
        }
        Command::Rank => Some(Stage::Rank),
        Command::Lag => Some(Stage::Lag),
        Command::All => None,
        Command::Synth { .. } => unreachable!("handled above"),
    };

    let pipeline = Pipeline::new(cfg, out, opts)?;
    let reports = match stage {
        Some(s) => vec![pipeline.run(s)?],
        None => pipeline.run_all()?,
    };
    for r in &reports {
        print_report(r);
    }
    Ok(())
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut text = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !text.contains(&c) {
            text = format!("{text}: {c}");
        }
    }
    text
}

fn print_report(r: &StageReport) {
    let status = if r.reused { "up to date" } else { "done" };
    println!("{:<9} {}", r.stage.name(), status);
    for o in &r.outputs {
        println!("          {o}");
    }
}

fn parse_period(raw: &str) -> Option<(chrono::NaiveDate, chrono::NaiveDate)> {
    let (a, b) = raw.split_once("..")?;
    let (a, b) = (parse_date(a.trim())?, parse_date(b.trim())?);
    (a <= b).then_some((a, b))
}

fn config_failure(e: ConfigError) -> Failure {
    match e {
        ConfigError::Io { .. } => Failure {
            code: EXIT_DATA,
            error: e.into(),
        },
        _ => usage(e),
    }
}

fn synth_generate(config: Option<&std::path::Path>, out: &std::path::Path) -> Result<(), Failure> {
    let cfg = match config {
        Some(p) => SynthConfig::load(p).map_err(|e| match e {
            synth::SynthError::Io(_) => Failure {
                code: EXIT_DATA,
                error: e.into(),
            },
            _ => usage(e),
        })?,
        None => SynthConfig::default(),
    };
    let world = synth::generate_world(&cfg).map_err(usage)?;
    let summary = synth::emit_logs(&world, out, Execution::Parallel)
        .with_context(|| format!("writing synthetic logs to {}", out.display()))
        .map_err(|error| Failure {
            code: EXIT_INTERNAL,
            error,
        })?;
    println!(
        "{} users, {} trajectory rows, {} queries",
        world.user_count(),
        summary.trajectory_rows,
        summary.query_rows
    );
    for f in &summary.files {
        println!("  {}", f.display());
    }
    Ok(())
}
