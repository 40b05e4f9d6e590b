//! `trace` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 backend unavailable.

mod config;
mod error;
mod evaluate;
mod inspect;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{split_overrides, RunConfig};
use crate::error::{usage, CliResult};
use crate::evaluate::{cmd_eval, cmd_report, EvalArgs};
use crate::inspect::{cmd_align, cmd_summarize, InspectArgs};

#[derive(Parser)]
#[command(
    name = "trace",
    version,
    about = "Context-aware activity inference over smart-home sensor streams"
)]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline for every configured home (and fold).
    ///
    /// Any config field can be set with `--key=value`; dotted keys reach
    /// into tables, e.g. `--backend.kind=http`.
    Run {
        /// TOML run configuration.
        config: Option<PathBuf>,
        /// Homes or folds processed in parallel.
        #[arg(short, long)]
        jobs: Option<usize>,
    },
    /// Score a predicted timeline against ground truth.
    Eval {
        /// Timeline CSV (`start,end,label[,version]`).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth CSV (`start,end,label`).
        #[arg(long)]
        gt: PathBuf,
        /// Map for ground-truth labels: `aruba`, `milan`, `kyoto7` or a TOML file.
        #[arg(long)]
        label_map: Option<String>,
        /// Map for predicted labels.
        #[arg(long)]
        pred_label_map: Option<String>,
        /// Fixed label space, comma separated; absent classes score 0.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long, default_value_t = 60.0)]
        unit_seconds: f64,
        #[arg(long, short, default_value = "trace-eval")]
        out: PathBuf,
        /// Also write a timeline strip plot and a short-segment histogram.
        #[arg(long)]
        svg: bool,
    },
    /// Print per-interval observation summaries.
    Summarize {
        #[command(flatten)]
        inputs: InspectOpts,
    },
    /// Print aligned evidence bundles.
    Align {
        #[command(flatten)]
        inputs: InspectOpts,
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        wear: Option<PathBuf>,
    },
    /// Aggregate every eval.json under a run directory.
    Report { dir: PathBuf },
}

#[derive(Args)]
struct InspectOpts {
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    unit_seconds: f64,
    /// Write the JSON into this directory instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn emit(text: &str, out: &Option<PathBuf>, file_name: &str) -> CliResult<()> {
    match out {
        None => {
            println!("{text}");
            Ok(())
        }
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
            fs::write(dir.join(file_name), format!("{text}\n")).map_err(|e| usage(e.to_string()))
        }
    }
}

fn dispatch(cli: Cli, overrides: Vec<(String, String)>) -> CliResult<()> {
    match cli.command {
        Command::Run { config, jobs } => {
            let mut overrides = overrides;
            if let Some(j) = jobs {
                overrides.push(("jobs".into(), j.to_string()));
            }
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let summary = run::cmd_run(&cfg)?;
            println!(
                "wrote {} (backend calls: {}, cache hits: {})",
                cfg.output_dir.display(),
                summary.backend_calls,
                summary.cache_hits
            );
            Ok(())
        }
        Command::Eval {
            pred,
            gt,
            label_map,
            pred_label_map,
            labels,
            unit_seconds,
            out,
            svg,
        } => {
            let args = EvalArgs {
                pred,
                gt,
                label_map,
                pred_label_map,
                labels,
                unit_seconds,
                out,
                svg,
            };
            let report = cmd_eval(&args)?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Summarize { inputs } => {
            let args = InspectArgs {
                events: inputs.events,
                metadata: inputs.metadata,
                env: None,
                wear: None,
                unit_seconds: inputs.unit_seconds,
            };
            emit(&cmd_summarize(&args)?, &inputs.out, "summaries.json")
        }
        Command::Align { inputs, env, wear } => {
            let args = InspectArgs {
                events: inputs.events,
                metadata: inputs.metadata,
                env,
                wear,
                unit_seconds: inputs.unit_seconds,
            };
            emit(&cmd_align(&args)?, &inputs.out, "bundles.json")
        }
        Command::Report { dir } => {
            let (_, table) = cmd_report(&dir)?;
            print!("{table}");
            Ok(())
        }
    }
}

/// Pulls `--key=value` config overrides out of the arguments after `run`.
fn preprocess(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    match args.iter().position(|a| a == "run") {
        Some(i) => {
            let (rest, overrides) = split_overrides(&args[i + 1..]);
            let mut kept = args[..=i].to_vec();
            kept.extend(rest);
            (kept, overrides)
        }
        None => (args, Vec::new()),
    }
}

fn main() -> ExitCode {
    let (args, overrides) = preprocess(std::env::args().collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}
