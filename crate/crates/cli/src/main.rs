use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use foggyedge::config::{parse_rates, ConfigError, Mode, ScenarioConfig};
use foggyedge::harness::{
    plot_svg, report_text, run_scenario, stats_text, sweep, write_csv, RunReport,
};
use foggyedge::sim::SimError;
use foggyedge::trace::{diff_traces, TraceDiff};

const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "foggyedge-sim",
    version,
    about = "Named-data computation offloading simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        #[command(flatten)]
        common: Common,
        /// FoggyEdge, EdgeOnly or CloudOnly; overrides scenario.mode.
        #[arg(long)]
        mode: Option<Mode>,
        /// Overrides scenario.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for summary.csv, trace.bin and report.txt.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every mode at every rate.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `1..10`, `1,2,5` or one rate; overrides scenario.rates.
        #[arg(long)]
        rates: Option<String>,
        /// Overrides scenario.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for summary.csv, trace.bin and report.txt.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Report the first record at which two traces differ.
    TraceDiff { a: PathBuf, b: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Scenario file of `section.key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Extra `section.key=value` overrides applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Also write plot.svg from the summary.
    #[arg(long)]
    emit_plot: bool,
}

fn load(common: &Common) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    for kv in &common.sets {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::BadValue {
            key: kv.clone(),
            why: "expected KEY=VALUE".into(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if !cfg.set(k, v)? {
            return Err(ConfigError::UnknownKey {
                line: 0,
                key: k.to_string(),
            });
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(dir: &Path, file: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(file);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: &Path, reports: &[RunReport], trace: &[u8], plot: bool) -> Result<Vec<String>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rows: Vec<_> = reports.iter().map(RunReport::row).collect();
    let violations: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.violations
                .iter()
                .map(move |v| format!("{} @ {}: {v}", r.mode, r.rate))
        })
        .collect();
    let mut report = report_text(&rows, &violations);
    if let [single] = reports {
        report.push('\n');
        report.push_str(&stats_text(single));
    }
    write(out, "summary.csv", write_csv(&rows))?;
    write(out, "report.txt", &report)?;
    write(out, "trace.bin", trace)?;
    if plot {
        write(out, "plot.svg", plot_svg(&rows))?;
    }
    print!("{report}");
    Ok(violations)
}

/// Errors that map to a dedicated exit code.
enum Failure {
    Config(String),
    Other(anyhow::Error),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn execute(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run {
            common,
            mode,
            seed,
            out,
        } => {
            let mut cfg = load(&common)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run_scenario(&cfg)?;
            let trace = report.trace.clone();
            let violations = emit(
                &out,
                std::slice::from_ref(&report),
                &trace,
                common.emit_plot,
            )?;
            Ok(if violations.is_empty() {
                0
            } else {
                EXIT_INVARIANT
            })
        }
        Command::Sweep {
            common,
            rates,
            seed,
            out,
        } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let rates = match rates {
                Some(r) => parse_rates(&r).map_err(|why| ConfigError::BadValue {
                    key: "--rates".into(),
                    why,
                })?,
                None => cfg.rates.clone(),
            };
            let result = sweep(&cfg, &rates)?;
            // The sweep's trace is the concatenation of its cells in row order.
            let mut trace = Vec::new();
            for (idx, r) in result.reports.iter().enumerate() {
                trace.extend_from_slice(if idx == 0 {
                    &r.trace[..]
                } else {
                    &r.trace[8..]
                });
            }
            let violations = emit(&out, &result.reports, &trace, common.emit_plot)?;
            Ok(if violations.is_empty() {
                0
            } else {
                EXIT_INVARIANT
            })
        }
        Command::TraceDiff { a, b } => {
            let read =
                |p: &PathBuf| std::fs::read(p).with_context(|| format!("reading {}", p.display()));
            let d = diff_traces(&read(&a)?, &read(&b)?).context("parsing traces")?;
            println!("{d}");
            Ok(if matches!(d, TraceDiff::Identical { .. }) {
                0
            } else {
                1
            })
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
