use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rostlab_cli::config::{ExperimentConfig, EXPERIMENTS};
use rostlab_cli::report::{emit_plotdata, Report};
use rostlab_cli::run_experiment;

/// Sampling and statistical verification of random overlap structures.
#[derive(Parser)]
#[command(name = "rostlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment (any of the configured pipelines).
    #[command(arg_required_else_help = true)]
    Run {
        /// Experiment name.
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENTS))]
        experiment: String,
        /// TOML config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Root seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Replica count override.
        #[arg(long)]
        replicas: Option<usize>,
        /// Output directory for the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Extract a named table from a report as CSV.
    PlotData {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        table: String,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default TOML config for an experiment.
    PrintConfig {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENTS))]
        experiment: String,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            experiment,
            config,
            seed,
            replicas,
            out,
            threads,
        } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default_for(&experiment, seed.unwrap_or(0))?,
            };
            if cfg.experiment != experiment {
                anyhow::bail!(
                    "config is for experiment '{}', requested '{experiment}'",
                    cfg.experiment
                );
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = replicas {
                cfg.replicas = Some(r);
            }
            if let Some(dir) = out {
                cfg.out_dir = Some(dir);
            }
            if let Some(t) = threads.or(cfg.threads) {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build_global()
                    .ok();
            }

            let report = run_experiment(&cfg)?;
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
            let path = report.write(&dir)?;
            println!("experiment : {}", report.body.experiment);
            println!("seed       : {}", report.body.seed);
            println!("config hash: {}", report.body.config_hash);
            if let Some(v) = &report.body.verdict {
                println!("verdict    : {v}");
            }
            println!("report     : {}", path.display());
            Ok(match report.body.verdict.as_deref() {
                Some("reject") => ExitCode::from(1),
                _ => ExitCode::SUCCESS,
            })
        }
        Command::PlotData { report, table, out } => {
            let report = Report::load(&report)?;
            let csv = emit_plotdata(&report, &table)?;
            match out {
                Some(path) => std::fs::write(&path, csv)?,
                None => print!("{csv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::PrintConfig { experiment } => {
            let cfg = ExperimentConfig::default_for(&experiment, 0)?;
            print!("{}", cfg.to_toml_string()?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
