use std::path::PathBuf;
use std::process::ExitCode;

use aberrant_cli::config::{ReportFormat, RunConfig};
use aberrant_cli::io::{read_results, write_calibration, write_results, write_text, ResultRecord};
use aberrant_cli::report::render;
use aberrant_cli::run::{run_calibrate, run_detect};
use aberrant_cli::CliResult;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aberrant", version, about = "Outbreak detection for surveillance count series")]
struct Cli {
    /// Seed for simulation-based steps; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a detector over the configured series.
    Detect {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads for per-series runs.
        #[arg(long)]
        jobs: Option<usize>,
        /// Exit with status 1 when any alarm is raised.
        #[arg(long)]
        fail_on_alarm: bool,
    },
    /// Compute false-alarm probabilities over a threshold grid.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Render a detection output file as a table.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_enum)]
        format: TableFormat,
        /// Write here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Latex,
    Text,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn execute(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Detect { config, jobs, fail_on_alarm } => {
            let cfg = RunConfig::load(&config)?;
            let out = run_detect(&cfg, jobs.unwrap_or_else(default_jobs))?;
            write_results(&cfg.output, &out.rows)?;
            if let Some(report) = &cfg.report {
                let records: Vec<ResultRecord> = out.rows.iter().map(ResultRecord::from).collect();
                write_text(&report.path, &render(&records, report.format))?;
            }
            for note in &out.notes {
                eprintln!("note: {note}");
            }
            for (unit, msg) in &out.failures {
                eprintln!("warning: {unit} skipped: {msg}");
            }
            let alarms = out.alarm_count();
            println!("{} rows, {alarms} alarms -> {}", out.rows.len(), cfg.output.display());
            Ok(if fail_on_alarm && alarms > 0 { 1 } else { 0 })
        }
        Command::Calibrate { config, jobs } => {
            let cfg = RunConfig::load(&config)?;
            let seed = cli.seed.or(cfg.seed).unwrap_or(0);
            let out = run_calibrate(&cfg, seed, jobs.unwrap_or_else(default_jobs))?;
            write_calibration(&cfg.output, &out.rows)?;
            if out.met {
                println!("h* = {}", out.h_star);
            } else {
                println!("h* = {} (target not met on grid)", out.h_star);
            }
            Ok(0)
        }
        Command::Report { results, format, output } => {
            let records = read_results(&results)?;
            let format = match format {
                TableFormat::Latex => ReportFormat::Latex,
                TableFormat::Text => ReportFormat::Text,
            };
            let text = render(&records, format);
            match output {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
