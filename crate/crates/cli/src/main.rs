use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use swarmlab_cli::bench;
use swarmlab_cli::run::{sim_run, succeeded, RunArgs};
use swarmlab_cli::{load_config, serve, CliError, Exit};
use swarmlab_core::config::ClockMode;

#[derive(Parser)]
#[command(name = "swarmlab", version, about = "Simulated multi-drone testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Headless simulation runs.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Latency, video and localizer benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Run the fleet behind the operator API until interrupted.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: String,
        #[arg(long, value_enum, default_value_t = Clock::Wall)]
        clock: Clock,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum SimCommand {
    /// Fly the configured mission and write the artifacts directory.
    Run {
        #[command(flatten)]
        common: Common,
        /// Simulated seconds; defaults to the mission timeout.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value = "run-out")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// One-way latency per hop and end to end.
    Latency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        probes: Option<usize>,
        /// Which relay/drone path to probe.
        #[arg(long, default_value_t = 0)]
        relay: usize,
        #[arg(long)]
        json: bool,
    },
    /// Video latency, bitrate and frame rate over one mission.
    Video {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        json: bool,
    },
    /// Success rate of per-frame vs sequential localization.
    SlamCompare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Clock {
    Wall,
    Virtual,
}

fn emit<T: serde::Serialize>(json: bool, value: &T, text: String) -> Result<(), CliError> {
    if json {
        let doc = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
        println!("{doc}");
    } else {
        print!("{text}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<Exit, CliError> {
    match cli.command {
        Command::Sim(SimCommand::Run { common, duration, out }) => {
            let config = load_config(&common.config, common.seed)?;
            let report = sim_run(&config, &RunArgs { out: out.clone(), duration })?;
            print!("{}", report.to_text());
            println!("artifacts: {}", out.display());
            Ok(if succeeded(&report) { Exit::Ok } else { Exit::Runtime })
        }
        Command::Bench(BenchCommand::Latency { common, probes, relay, json }) => {
            let config = load_config(&common.config, common.seed)?;
            let hops = bench::latency(&config, probes.unwrap_or(config.bench.probes), relay)?;
            emit(json, &hops, bench::latency_text(&hops))?;
            Ok(Exit::Ok)
        }
        Command::Bench(BenchCommand::Video { common, json }) => {
            let config = load_config(&common.config, common.seed)?;
            let v = bench::video(&config)?;
            emit(json, &v, bench::video_text(&v))?;
            Ok(Exit::Ok)
        }
        Command::Bench(BenchCommand::SlamCompare { common, trials, json }) => {
            let config = load_config(&common.config, common.seed)?;
            let c = bench::slam_compare(&config, trials.unwrap_or(config.bench.trials))?;
            emit(json, &c, bench::slam_compare_text(&c))?;
            Ok(Exit::Ok)
        }
        Command::Serve { common, listen, clock } => {
            let config = load_config(&common.config, common.seed)?;
            let clock = match clock {
                Clock::Wall => ClockMode::Wall,
                Clock::Virtual => ClockMode::Virtual,
            };
            let summary = serve::serve(&config, &listen, clock)?;
            println!(
                "shutdown: land_all {} at t={:.2}s, {} still airborne",
                if summary.land_all.accepted { "issued" } else { "rejected" },
                summary.t,
                summary.airborne_after
            );
            Ok(Exit::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { Exit::Usage } else { Exit::Ok };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit as u8)
        }
    }
}
