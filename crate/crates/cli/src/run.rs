//! `sim run`: one headless mission with its artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use swarmlab_core::config::{ClockMode, FleetConfig};
use swarmlab_core::localization::write_trajectory;
use swarmlab_core::sim::{Finish, RunReport, SimOptions, Simulation};

pub struct RunArgs {
    pub out: PathBuf,
    pub duration: Option<f64>,
}

/// Runs the configured mission and writes
/// `report.txt`, `events.log`, `fleet-events.jsonl`, `effective-config.cfg` and
/// `trajectories/drone<i>.{est,ref}.txt` under `args.out`.
pub fn sim_run(config: &FleetConfig, args: &RunArgs) -> Result<RunReport, crate::CliError> {
    let duration = args.duration.unwrap_or(config.mission.timeout_s);
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(crate::CliError::usage(format!("--duration {duration} must be positive")));
    }
    let mut sim = Simulation::new(config, config.seed, SimOptions::mission()).map_err(|e| crate::CliError::usage(e.to_string()))?;
    let started = Instant::now();
    let end_tick = (duration * swarmlab_core::sim::BASE_RATE_HZ).round() as u64;
    let mut notices = Vec::new();
    let mut ticks = 0u64;
    while sim.finished().is_none() && ticks < end_tick {
        sim.step();
        ticks += 1;
        notices.extend(sim.drain_notices());
        if config.clock == ClockMode::Wall {
            let due = Duration::from_secs_f64(sim.now());
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    }
    let report = sim.report();
    write_artifacts(&args.out, config, &sim, &report, &notices)?;
    Ok(report)
}

fn write_artifacts(
    out: &Path,
    config: &FleetConfig,
    sim: &Simulation,
    report: &RunReport,
    notices: &[swarmlab_core::fleet::FleetNotice],
) -> std::io::Result<()> {
    let traj = out.join("trajectories");
    fs::create_dir_all(&traj)?;
    fs::write(out.join("report.txt"), report.to_text())?;
    fs::write(out.join("effective-config.cfg"), config.to_toml())?;
    sim.write_fabric_log(BufWriter::new(fs::File::create(out.join("events.log"))?))?;
    let mut jl = BufWriter::new(fs::File::create(out.join("fleet-events.jsonl"))?);
    for n in notices {
        serde_json::to_writer(&mut jl, n)?;
        jl.write_all(b"\n")?;
    }
    jl.flush()?;
    for i in 0..config.drones.count {
        write_trajectory(BufWriter::new(fs::File::create(traj.join(format!("drone{i}.est.txt")))?), sim.estimated_trajectory(i))?;
        write_trajectory(BufWriter::new(fs::File::create(traj.join(format!("drone{i}.ref.txt")))?), sim.reference_trajectory(i))?;
    }
    Ok(())
}

pub fn succeeded(report: &RunReport) -> bool {
    report.finish == Finish::Complete
}
