use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use simee::config_file::{load_config, parse_schemes};
use simee::experiment::run_experiment;
use simee::gradcheck::gradcheck;
use simee::summary::summarize;
use simee::CliError;

#[derive(Parser)]
#[command(name = "simee", version, about = "Energy-efficient hybrid precoding for SIM-assisted downlinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte-Carlo experiment described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Comma-separated subset of hybrid-sdp, hybrid-pga, digital-pre, wave-sim.
        #[arg(long)]
        schemes: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write every solution as JSON under OUT/solutions.
        #[arg(long)]
        dump_solutions: bool,
    },
    /// Median, mean and 10/90 percentiles per sweep point and scheme.
    Summarize {
        csv: PathBuf,
        /// Defaults to `<csv stem>.summary.csv` beside the input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the analytic phase gradient with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Run {
            config,
            out,
            schemes,
            trials,
            seed,
            dump_solutions,
        } => {
            let mut run = load_config(&config)?;
            if let Some(s) = schemes {
                run.schemes = parse_schemes(&s)?;
            }
            if let Some(t) = trials {
                run.trials = t;
            }
            if let Some(s) = seed {
                run.seed = s;
            }
            for output in run_experiment(&run, &out, dump_solutions)? {
                println!("{} ({} rows)", output.csv.display(), output.rows);
            }
        }
        Command::Summarize { csv, out } => {
            let summary = summarize(&csv)?;
            let out = out.unwrap_or_else(|| csv.with_extension("summary.csv"));
            summary.write(&out)?;
            print!("{}", std::fs::read_to_string(&out)?);
        }
        Command::Gradcheck {
            instances,
            seed,
            tolerance,
        } => {
            let report = gradcheck(instances, seed)?;
            println!("instances: {}", report.instances.len());
            println!("max relative error: {:.3e}", report.max_error);
            if !(report.max_error <= tolerance) {
                println!("FAIL: above tolerance {tolerance:e}");
                return Ok(ExitCode::FAILURE);
            }
            println!("ok");
        }
    }
    Ok(ExitCode::SUCCESS)
}
