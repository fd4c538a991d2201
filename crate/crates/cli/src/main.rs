use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use lmpcq::harness::{self, RunOptions};

#[derive(Parser)]
#[command(name = "lmpcq", version, about = "Learning MPC for a simulated quadrotor racing a corridor track")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Task configuration (TOML, or JSON by extension). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the number of learning iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Overrides the plant process-noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
}

impl From<RunArgs> for RunOptions {
    fn from(a: RunArgs) -> Self {
        RunOptions { config: a.config, out: a.out, seed: a.seed, iterations: a.iterations, noise: a.noise }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Bootstrap lap followed by the learning iterations.
    Run(RunArgs),
    /// Bootstrap lap only.
    Bootstrap(RunArgs),
    /// Re-validate a stored record and re-emit its plot data.
    Replay {
        /// Run directory or safety-set directory.
        dir: PathBuf,
        #[arg(long)]
        iteration: usize,
        /// Where the plot data goes (default: <dir>/replay).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lap-time matrix across runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// CSV copy of the table.
        #[arg(long, default_value = "lap_report.csv")]
        csv: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let out = args.out.clone();
            let m = harness::cli_run(&args.into()).context("run failed")?;
            print!("{}", std::fs::read_to_string(out.join(&m.lap_text))?);
            println!("artifacts written to {}", out.display());
            Ok(true)
        }
        Command::Bootstrap(args) => {
            let out = args.out.clone();
            let m = harness::cli_bootstrap(&args.into()).context("bootstrap failed")?;
            println!("bootstrap lap {:.2} s, written to {}", m.best_time, out.display());
            Ok(true)
        }
        Command::Replay { dir, iteration, out } => {
            let out = out.unwrap_or_else(|| dir.join("replay"));
            let r = harness::cli_replay(&dir, iteration, &out).context("replay failed")?;
            println!("iteration {} travel time {:.2} s", r.iteration, r.travel_time);
            match r.telescoping {
                Some((i, e)) => println!("cost-to-go telescoping violated first at index {i} (error {e:.3e})"),
                None => println!("cost-to-go telescoping ok"),
            }
            match r.corridor {
                Some((i, v)) => println!("corridor violated first at index {i} ({v:.3e} m)"),
                None => println!("corridor ok (max violation {:.3e} m)", r.max_corridor_violation),
            }
            println!("plot data written to {}", out.display());
            Ok(r.is_clean())
        }
        Command::Report { runs, csv } => {
            let table = harness::cli_report(&runs).context("report failed")?;
            print!("{}", table.to_text());
            table.write_csv(&csv).with_context(|| format!("writing {}", csv.display()))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LMPCQ_LOG", "warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
