//! `bench latency`, `bench video` and `bench slam-compare`.

use serde::Serialize;
use swarmlab_core::config::FleetConfig;
use swarmlab_core::fabric::{build_fabric, probe_one_way, ProbePath, ProbeSpec};
use swarmlab_core::metrics::{
    compare_localizers, comparison_table, latency_stats, latency_table, stream_table, ComparisonRow, LatencyReport,
    LatencyRow, SuccessReport,
};
use swarmlab_core::sim::{run_simulation, SimOptions};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct HopReport {
    pub component: String,
    pub protocol: String,
    pub report: LatencyReport,
}

/// One-way latency per hop of relay `relay`'s path, plus the full fleet-to-drone path.
pub fn latency(config: &FleetConfig, probes: usize, relay: usize) -> Result<Vec<HopReport>, CliError> {
    if probes == 0 {
        return Err(CliError::usage("--probes must be at least 1"));
    }
    if relay >= config.drones.count {
        return Err(CliError::usage(format!("--relay {relay} out of range for {} drones", config.drones.count)));
    }
    let fabric = build_fabric(&config.topology(), config.seed).map_err(|e| CliError::usage(e.to_string()))?;
    let spec = ProbeSpec {
        count: probes,
        interval_s: config.bench.probe_interval_s,
        payload_bytes: config.bench.probe_payload_bytes,
        start_s: 0.0,
    };
    let hops = [
        ("fleet <-> relay link", "UDP/Ethernet", ProbePath::Wired(relay)),
        ("relay forwarding", "NAT forward", ProbePath::Forward(relay)),
        ("relay <-> drone link", "UDP/Wi-Fi", ProbePath::Wireless(relay)),
        ("fleet -> drone end-to-end", "UDP", ProbePath::EndToEnd(relay)),
    ];
    hops.iter()
        .map(|(component, protocol, path)| {
            let samples = probe_one_way(&fabric, *path, &spec, config.seed).map_err(|e| CliError::runtime(e.to_string()))?;
            let report = latency_stats(&samples).map_err(|e| CliError::runtime(format!("{component}: {e}")))?;
            Ok(HopReport { component: component.to_string(), protocol: protocol.to_string(), report })
        })
        .collect()
}

pub fn latency_text(hops: &[HopReport]) -> String {
    let rows: Vec<LatencyRow> = hops
        .iter()
        .map(|h| LatencyRow { component: h.component.clone(), protocol: h.protocol.clone(), report: h.report })
        .collect();
    latency_table(&rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct VideoReport {
    /// Capture-to-reassembly latency of every completed frame, ms.
    pub latency_ms: LatencyReport,
    /// Per-drone bitrate over whole seconds of the run, Mbps.
    pub bitrate_mbps: LatencyReport,
    pub fps: f64,
}

/// Video stream statistics over one mission run, all drones pooled.
pub fn video(config: &FleetConfig) -> Result<VideoReport, CliError> {
    let (sim, report) = run_simulation(config, config.seed, SimOptions::mission(), config.mission.timeout_s)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let mut latency = Vec::new();
    let mut bitrate = Vec::new();
    let end = report.duration_s.floor() as u64;
    for s in sim.stats() {
        latency.extend_from_slice(&s.frame_latency_ms);
        let first = s.first_video_t.map_or(end, |t| t.ceil() as u64);
        // whole seconds only: the first and last partial seconds are skipped
        for sec in first..end {
            let bytes = s.video_bytes_per_s.get(&sec).copied().unwrap_or(0);
            bitrate.push(bytes as f64 * 8.0 / 1e6);
        }
    }
    let no_video = || CliError::runtime("no video reached the fleet host");
    Ok(VideoReport {
        latency_ms: latency_stats(&latency).map_err(|_| no_video())?,
        bitrate_mbps: latency_stats(&bitrate).map_err(|_| no_video())?,
        fps: config.drones.video_fps,
    })
}

pub fn video_text(v: &VideoReport) -> String {
    stream_table(&v.latency_ms, &v.bitrate_mbps, v.fps)
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub mle: SuccessReport,
    pub map: SuccessReport,
}

pub fn slam_compare(config: &FleetConfig, trials: usize) -> Result<Comparison, CliError> {
    if trials == 0 {
        return Err(CliError::usage("--trials must be at least 1"));
    }
    let (mle, map) = compare_localizers(config, trials, config.seed).map_err(|e| CliError::usage(e.to_string()))?;
    Ok(Comparison { mle, map })
}

pub fn slam_compare_text(c: &Comparison) -> String {
    let mut out = comparison_table(&[
        ComparisonRow { method: "sequential (MAP)".into(), report: &c.map },
        ComparisonRow { method: "per-frame (MLE)".into(), report: &c.mle },
    ]);
    out.push('\n');
    for r in [&c.map, &c.mle] {
        let failures: Vec<String> = r.failures.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        let failures = if failures.is_empty() { "none".to_string() } else { failures.join(", ") };
        out.push_str(&format!("{} {}/{} succeeded; failures: {failures}\n", r.mode.label(), r.successes, r.trials));
    }
    out
}
