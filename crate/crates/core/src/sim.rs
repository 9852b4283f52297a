//! Closed-loop simulation on a virtual clock.
//!
//! Every base tick (1/120 s) the drones advance and emit datagrams, the fabric
//! releases due deliveries, and the fleet side decodes them: replies and
//! telemetry go to the sessions, video fragments are reassembled into frames
//! and fed to the localizer. Every control period the fleet ticks and its
//! commands go back out through the fabric.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::SocketAddrV4;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, FleetConfig};
use crate::control::RcCommand;
use crate::endpoint::{DroneEndpoint, Reply, VideoSource};
use crate::fabric::{build_fabric, Datagram, Fabric, FabricError, FabricStats, NodeId, DRONE_SIDE_ADDR};
use crate::fleet::{Fleet, FleetNotice, FleetSettings, OperatorCommand, Outbound, SessionEvent, SessionFsm, Snapshot};
use crate::localization::{
    frame_rng, gaussian, map_step, mle_fix, FrameArrival, LocalizationMode, MapEstimatorState, MapStatus, PoseFix,
    RateCap, TrajectorySample,
};
use crate::metrics::{associate, compute_ape, ApeStats};
use crate::state::{BodyVelocityCmd, Pose4};
use crate::wire::{encode_command, parse_frame, parse_telemetry, CommandMsg, FrameAssembler, VideoFragment};

pub const BASE_RATE_HZ: f64 = 120.0;

/// Frames older than this many ids are forgotten by the reassembler and truth cache.
const FRAME_WINDOW: u32 = 64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fabric: {0}")]
    Fabric(#[from] FabricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Connect, take off, fly the configured mission and land without an operator.
    pub autopilot: bool,
    /// End the run as soon as the mission completes instead of landing.
    pub stop_at_mission_end: bool,
    /// End the run as soon as any estimator fails globally.
    pub abort_on_global_failure: bool,
    pub record_fabric_log: bool,
    pub record_trajectories: bool,
}

impl SimOptions {
    /// Full headless mission with artifacts.
    pub fn mission() -> Self {
        Self {
            autopilot: true,
            stop_at_mission_end: false,
            abort_on_global_failure: false,
            record_fabric_log: true,
            record_trajectories: true,
        }
    }

    /// One experiment trial: stop as soon as the outcome is known.
    pub fn trial() -> Self {
        Self {
            autopilot: true,
            stop_at_mission_end: true,
            abort_on_global_failure: true,
            record_fabric_log: false,
            record_trajectories: true,
        }
    }

    /// Operator-driven: sessions connect, everything else waits for commands.
    pub fn live() -> Self {
        Self {
            autopilot: false,
            stop_at_mission_end: false,
            abort_on_global_failure: false,
            record_fabric_log: false,
            record_trajectories: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Finish {
    /// Mission complete (and landed, unless the run stops at mission end).
    Complete,
    /// A drone left the air before the mission completed.
    Aborted,
    GlobalFailure,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Connecting,
    TakingOff,
    Flying,
    Mission,
    Landing,
    Done,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DroneStats {
    pub frames_completed: u64,
    pub fixes_admitted: u64,
    pub fixes_valid: u64,
    /// Video chunk bytes delivered to the fleet host (fragment headers excluded).
    pub video_bytes: u64,
    pub first_video_t: Option<f64>,
    pub last_video_t: f64,
    /// Capture-to-reassembly latency of every completed frame, ms.
    #[serde(skip)]
    pub frame_latency_ms: Vec<f64>,
    /// Video chunk bytes per whole second of simulated time.
    #[serde(skip)]
    pub video_bytes_per_s: BTreeMap<u64, u64>,
    pub max_loc_error: f64,
    pub ever_fixed: bool,
    pub failed_global: bool,
    pub rc_sent: u64,
    pub rc_outside_flying: u64,
}

impl DroneStats {
    fn video_window(&self, t_end: f64) -> f64 {
        self.first_video_t.map_or(0.0, |t0| (t_end - t0).max(0.0))
    }

    pub fn bitrate_mbps(&self, t_end: f64) -> f64 {
        let w = self.video_window(t_end);
        if w > 0.0 {
            self.video_bytes as f64 * 8.0 / w / 1e6
        } else {
            0.0
        }
    }

    pub fn fix_rate_hz(&self, t_end: f64) -> f64 {
        let w = self.video_window(t_end);
        if w > 0.0 {
            self.fixes_admitted as f64 / w
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneReport {
    pub drone_id: u32,
    pub final_fsm: SessionFsm,
    pub ape: Option<ApeStats>,
    pub max_loc_error: f64,
    pub fix_rate_hz: f64,
    pub bitrate_mbps: f64,
    pub battery_end: f64,
    pub ever_fixed: bool,
    pub failed_global: bool,
    pub waypoints_done: usize,
    pub rc_outside_flying: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub mode: LocalizationMode,
    pub finish: Finish,
    pub duration_s: f64,
    pub mission_complete_t: Option<f64>,
    pub drones: Vec<DroneReport>,
    pub datagrams_sent: u64,
    pub datagrams_delivered: u64,
    pub datagrams_dropped: u64,
}

impl RunReport {
    pub fn mission_complete(&self) -> bool {
        self.mission_complete_t.is_some()
    }

    /// Plain-text report; identical runs produce identical text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("seed            {}\n", self.seed));
        s.push_str(&format!("localization    {}\n", self.mode.label()));
        s.push_str(&format!("finish          {:?}\n", self.finish));
        s.push_str(&format!("duration_s      {:.3}\n", self.duration_s));
        match self.mission_complete_t {
            Some(t) => s.push_str(&format!("mission_done_s  {t:.3}\n")),
            None => s.push_str("mission_done_s  -\n"),
        }
        s.push_str(&format!(
            "datagrams       sent {} delivered {} dropped {}\n\n",
            self.datagrams_sent, self.datagrams_delivered, self.datagrams_dropped
        ));
        s.push_str("drone  fsm         ape_rmse_cm  max_err_cm  fix_hz  video_mbps  battery  waypoints\n");
        for d in &self.drones {
            let ape = d.ape.map_or("-".to_string(), |a| format!("{:.2}", a.rmse * 100.0));
            s.push_str(&format!(
                "{:<6} {:<11} {:>11}  {:>10.2}  {:>6.2}  {:>10.3}  {:>7.1}  {:>9}\n",
                d.drone_id,
                d.final_fsm.as_str(),
                ape,
                d.max_loc_error * 100.0,
                d.fix_rate_hz,
                d.bitrate_mbps,
                d.battery_end,
                d.waypoints_done
            ));
        }
        s
    }
}

struct Localizer {
    assembler: FrameAssembler,
    cap: RateCap,
    truth: BTreeMap<u32, Pose4>,
    pending: Vec<PoseFix>,
    map: Option<MapEstimatorState>,
    map_fix: Option<PoseFix>,
    rng: ChaCha8Rng,
}

pub struct Simulation {
    config: FleetConfig,
    seed: u64,
    opts: SimOptions,
    fabric: Fabric,
    endpoints: Vec<DroneEndpoint>,
    fleet: Fleet,
    loc: Vec<Localizer>,
    stats: Vec<DroneStats>,
    fleet_cmd_addr: SocketAddrV4,
    tick: u64,
    control_every: u64,
    phase: Phase,
    mission_complete_t: Option<f64>,
    finish: Option<Finish>,
    notices: Vec<FleetNotice>,
    est_traj: Vec<Vec<TrajectorySample>>,
    ref_traj: Vec<Vec<TrajectorySample>>,
}

fn base_dt() -> f64 {
    1.0 / BASE_RATE_HZ
}

impl Simulation {
    pub fn new(config: &FleetConfig, seed: u64, opts: SimOptions) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.drones.count;
        let mut fabric = build_fabric(&config.topology(), seed)?;
        if opts.record_fabric_log {
            fabric.enable_log();
        }
        let geometry = &config.mission.geometry;
        let endpoints = (0..n)
            .map(|i| {
                DroneEndpoint::new(
                    geometry.start_pose(i),
                    config.drones.plant,
                    config.drones.ports,
                    VideoSource::new(config.drones.video_fps, config.drones.frame_bytes),
                )
            })
            .collect();
        let addrs: Vec<SocketAddrV4> =
            (0..n).map(|i| fabric.fleet_addr_of(i, config.drones.ports.command).expect("command port mapped")).collect();
        let settings = FleetSettings {
            controller: config.controller,
            thresholds: config.mission.thresholds,
            geofence: config.mission.geofence,
        };
        let mut fleet = Fleet::new(&addrs, settings, 0.0);
        fleet
            .add_plan(config.mission_plan()?)
            .map_err(|e| ConfigError::Invalid(format!("mission: {e}")))?;
        let loc = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c6f_6361_6c69_7a65);
                rng.set_stream(i as u64);
                Localizer {
                    assembler: FrameAssembler::new(FRAME_WINDOW),
                    cap: RateCap::new(config.localization.rate_cap_hz),
                    truth: BTreeMap::new(),
                    pending: Vec::new(),
                    map: None,
                    map_fix: None,
                    rng,
                }
            })
            .collect();
        let control_every = (BASE_RATE_HZ / config.controller.rate_hz).round().max(1.0) as u64;
        let fleet_cmd_addr = SocketAddrV4::new(fabric.fleet_host(), config.drones.ports.command);
        let mut sim = Self {
            config: config.clone(),
            seed,
            opts,
            fabric,
            endpoints,
            fleet,
            loc,
            stats: vec![DroneStats::default(); n],
            fleet_cmd_addr,
            tick: 0,
            control_every,
            phase: Phase::Connecting,
            mission_complete_t: None,
            finish: None,
            notices: Vec::new(),
            est_traj: vec![Vec::new(); n],
            ref_traj: vec![Vec::new(); n],
        };
        let out = sim.fleet.connect_all(0.0);
        sim.dispatch(out, 0.0);
        Ok(sim)
    }

    pub fn now(&self) -> f64 {
        self.tick as f64 * base_dt()
    }

    pub fn config(&self) -> &FleetConfig {
        &self.config
    }

    pub fn fleet(&self) -> &Fleet {
        &self.fleet
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn endpoints(&self) -> &[DroneEndpoint] {
        &self.endpoints
    }

    pub fn stats(&self) -> &[DroneStats] {
        &self.stats
    }

    pub fn finished(&self) -> Option<Finish> {
        self.finish
    }

    pub fn snapshot(&self) -> Snapshot {
        self.fleet.snapshot()
    }

    /// Coordinator notices since the last call (transitions, alerts, mission events, commands).
    pub fn drain_notices(&mut self) -> Vec<FleetNotice> {
        let mut out = std::mem::take(&mut self.notices);
        out.extend(self.fleet.drain_notices());
        out
    }

    /// Injects an operator command at the current time.
    pub fn command(&mut self, cmd: &OperatorCommand) -> crate::fleet::CommandAck {
        let t = self.now();
        let (ack, out) = self.fleet.apply(cmd, t);
        self.dispatch(out, t);
        ack
    }

    fn dispatch(&mut self, out: Vec<Outbound>, t: f64) {
        for Outbound { drone, msg } in out {
            if let CommandMsg::Rc(_) = msg {
                self.stats[drone].rc_sent += 1;
                if self.fleet.sessions()[drone].fsm != SessionFsm::Flying {
                    self.stats[drone].rc_outside_flying += 1;
                }
            }
            let Ok(payload) = encode_command(&msg) else { continue };
            let dst = self.fleet.sessions()[drone].fleet_addr;
            let datagram = Datagram { src: self.fleet_cmd_addr, dst, payload };
            self.fabric.send(NodeId::Fleet, datagram, t).expect("fleet addresses come from the fabric");
        }
    }

    /// Advances one base tick.
    pub fn step(&mut self) {
        self.tick += 1;
        let t = self.now();
        let dt = base_dt();

        for i in 0..self.endpoints.len() {
            let out = self.endpoints[i].tick(dt);
            let truth = self.endpoints[i].plant().pose;
            if self.opts.record_trajectories {
                self.ref_traj[i].push(TrajectorySample { pose: truth, valid: true });
            }
            for o in out {
                if o.src_port == self.config.drones.ports.video {
                    if let Ok(stub) = parse_frame(&o.payload) {
                        let loc = &mut self.loc[i];
                        loc.truth.entry(stub.frame_id).or_insert(truth.with_t(stub.capture_t as f64 / 1000.0));
                    }
                }
                let datagram = Datagram { src: SocketAddrV4::new(DRONE_SIDE_ADDR, o.src_port), dst: o.dst, payload: o.payload };
                self.fabric.send(NodeId::Drone(i), datagram, t).expect("drones only talk to the fleet host");
            }
        }

        for d in self.fabric.poll(t) {
            match d.to {
                NodeId::Drone(i) => {
                    let dg = &d.datagram;
                    let replies = self.endpoints[i].on_datagram(dg.src, dg.dst.port(), &dg.payload, d.deliver_at);
                    for o in replies {
                        let datagram =
                            Datagram { src: SocketAddrV4::new(DRONE_SIDE_ADDR, o.src_port), dst: o.dst, payload: o.payload };
                        self.fabric.send(NodeId::Drone(i), datagram, t).expect("drones only talk to the fleet host");
                    }
                }
                NodeId::Fleet => self.on_fleet_datagram(&d.datagram, d.deliver_at),
                NodeId::Relay(_) => {}
            }
        }

        if self.config.localization.mode == LocalizationMode::Mle {
            for i in 0..self.loc.len() {
                let loc = &mut self.loc[i];
                if loc.pending.is_empty() {
                    continue;
                }
                let mut due: Vec<PoseFix> = Vec::new();
                loc.pending.retain(|f| {
                    if f.fix_t <= t {
                        due.push(*f);
                        false
                    } else {
                        true
                    }
                });
                due.sort_by(|a, b| a.fix_t.total_cmp(&b.fix_t));
                for fix in due {
                    self.record_estimate(i, &fix, None);
                    let out = self.fleet.on_event(i, SessionEvent::Fix(fix));
                    self.dispatch(out, t);
                }
            }
        }

        if self.tick % self.control_every == 0 {
            self.control_tick(t);
        }
    }

    fn on_fleet_datagram(&mut self, dg: &Datagram, at: f64) {
        let Some(i) = self.fabric.drone_behind(*dg.src.ip()) else { return };
        let ports = self.config.drones.ports;
        let port = dg.dst.port();
        if port == ports.command {
            let out = self.fleet.on_event(i, SessionEvent::Reply { t: at, reply: Reply::parse(&dg.payload) });
            self.dispatch(out, self.now());
        } else if port == ports.telemetry {
            if let Ok(msg) = parse_telemetry(&dg.payload) {
                let out = self.fleet.on_event(i, SessionEvent::Telemetry { t: at, msg });
                self.dispatch(out, self.now());
            }
        } else if port == ports.video {
            let Ok(frag) = parse_frame(&dg.payload).and_then(|s| VideoFragment::from_stub(&s)) else { return };
            let stats = &mut self.stats[i];
            stats.video_bytes += frag.chunk.len() as u64;
            *stats.video_bytes_per_s.entry(at.floor() as u64).or_default() += frag.chunk.len() as u64;
            stats.first_video_t.get_or_insert(at);
            stats.last_video_t = at;
            let Some(frame) = self.loc[i].assembler.push(&frag) else { return };
            stats.frames_completed += 1;
            let capture_t = frame.capture_t as f64 / 1000.0;
            stats.frame_latency_ms.push((at - capture_t) * 1000.0);
            self.on_frame(i, FrameArrival { drone_id: i as u32, frame_id: frame.frame_id, capture_t, arrival_t: at });
        }
    }

    fn on_frame(&mut self, i: usize, frame: FrameArrival) {
        let loc = &mut self.loc[i];
        if let Some(&newest) = loc.truth.keys().next_back() {
            let floor = newest.saturating_sub(FRAME_WINDOW);
            loc.truth = loc.truth.split_off(&floor);
        }
        if !loc.cap.admit(frame.arrival_t) {
            return;
        }
        self.stats[i].fixes_admitted += 1;
        let Some(truth) = loc.truth.get(&frame.frame_id).copied() else { return };
        let mut rng = frame_rng(self.seed, frame.drone_id, frame.frame_id);
        let Some(fix) = mle_fix(&truth, &frame, &self.config.localization.noise, &mut rng) else { return };
        self.stats[i].fixes_valid += 1;
        self.stats[i].ever_fixed = true;
        loc.pending.push(fix);
    }

    fn record_estimate(&mut self, i: usize, fix: &PoseFix, truth: Option<Pose4>) {
        if !fix.valid {
            return;
        }
        let truth = match truth {
            Some(t) => t,
            None => match self.loc[i].truth.get(&fix.frame_id) {
                Some(t) => *t,
                None => return,
            },
        };
        let err = fix.pose.distance(&truth);
        let stats = &mut self.stats[i];
        stats.max_loc_error = stats.max_loc_error.max(err);
        if self.opts.record_trajectories {
            self.est_traj[i].push(TrajectorySample { pose: fix.pose, valid: true });
        }
    }

    fn map_tick(&mut self, t: f64) {
        let dt = self.control_every as f64 * base_dt();
        let loc_cfg = self.config.localization.clone();
        for i in 0..self.loc.len() {
            let truth = self.endpoints[i].plant().pose;
            let vel = self.endpoints[i].plant().vel_body;
            let loc = &mut self.loc[i];
            let mut due: Vec<PoseFix> = Vec::new();
            loc.pending.retain(|f| {
                if f.fix_t <= t {
                    due.push(*f);
                    false
                } else {
                    true
                }
            });
            if let Some(newest) = due.into_iter().max_by(|a, b| a.fix_t.total_cmp(&b.fix_t)) {
                loc.map_fix = Some(newest);
            }
            let fix = loc.map_fix.take();
            let next = match loc.map {
                None => fix.map(|f| MapEstimatorState::new(f.pose.with_t(t))),
                Some(state) => {
                    let odom = BodyVelocityCmd::new(
                        vel.vx_b + gaussian(&mut loc.rng, loc_cfg.odom_noise),
                        vel.vy_b + gaussian(&mut loc.rng, loc_cfg.odom_noise),
                        vel.vz_b + gaussian(&mut loc.rng, loc_cfg.odom_noise),
                        vel.yaw_rate,
                    );
                    Some(map_step(&state, dt, &odom, fix.as_ref(), &loc_cfg.map, &mut loc.rng).expect("dt positive"))
                }
            };
            let Some(next) = next else { continue };
            loc.map = Some(next);
            if next.status == MapStatus::FailedGlobal {
                self.stats[i].failed_global = true;
            }
            let out_fix = next.as_fix(i as u32);
            if out_fix.valid {
                self.record_estimate(i, &out_fix, Some(truth.with_t(t)));
                let out = self.fleet.on_event(i, SessionEvent::Fix(out_fix));
                self.dispatch(out, t);
            }
        }
    }

    fn control_tick(&mut self, t: f64) {
        if self.config.localization.mode == LocalizationMode::Map {
            self.map_tick(t);
        }
        let out = self.fleet.tick(t);
        self.dispatch(out, t);
        self.collect_notices();
        if self.opts.autopilot {
            self.autopilot();
        }
        self.check_finish(t);
    }

    fn collect_notices(&mut self) {
        for notice in self.fleet.drain_notices() {
            if let FleetNotice::Mission(crate::fleet::MissionEvent::MissionComplete { t }) = &notice {
                self.mission_complete_t.get_or_insert(*t);
            }
            self.notices.push(notice);
        }
    }

    fn all_in(&self, fsm: SessionFsm) -> bool {
        self.fleet.sessions().iter().all(|s| s.fsm == fsm)
    }

    fn autopilot(&mut self) {
        let next = match self.phase {
            Phase::Connecting if self.all_in(SessionFsm::Ready) => {
                self.command(&OperatorCommand::TakeoffAll);
                Phase::TakingOff
            }
            Phase::TakingOff if self.all_in(SessionFsm::Flying) => Phase::Flying,
            Phase::Flying => {
                let name = self.config.mission.name.clone();
                if self.command(&OperatorCommand::StartMission { name }).accepted {
                    Phase::Mission
                } else {
                    Phase::Flying
                }
            }
            Phase::Mission if self.mission_complete_t.is_some() => {
                if !self.opts.stop_at_mission_end {
                    self.command(&OperatorCommand::LandAll);
                }
                Phase::Landing
            }
            Phase::Landing if self.all_in(SessionFsm::Landed) => Phase::Done,
            p => p,
        };
        self.phase = next;
        self.collect_notices();
    }

    fn check_finish(&mut self, t: f64) {
        if self.finish.is_some() {
            return;
        }
        if self.opts.abort_on_global_failure && self.stats.iter().any(|s| s.failed_global) {
            self.finish = Some(Finish::GlobalFailure);
            return;
        }
        if !self.opts.autopilot {
            return;
        }
        let done = match self.phase {
            Phase::Landing if self.opts.stop_at_mission_end => true,
            Phase::Done => true,
            _ => false,
        };
        if done {
            self.finish = Some(Finish::Complete);
            return;
        }
        if self.phase == Phase::Mission
            && self.fleet.sessions().iter().any(|s| matches!(s.fsm, SessionFsm::Landing | SessionFsm::Landed | SessionFsm::Emergency))
        {
            self.finish = Some(Finish::Aborted);
            return;
        }
        if t >= self.config.mission.timeout_s {
            self.finish = Some(Finish::Timeout);
        }
    }

    /// Steps until the run finishes or `max_duration` elapses.
    pub fn run(&mut self, max_duration: f64) -> RunReport {
        let end_tick = (max_duration * BASE_RATE_HZ).round() as u64;
        while self.finish.is_none() && self.tick < end_tick {
            self.step();
        }
        if self.finish.is_none() {
            self.finish = Some(Finish::Timeout);
        }
        self.report()
    }

    pub fn report(&self) -> RunReport {
        let t_end = self.now();
        let tol = self.config.mission.assoc_tol_ms;
        let drones = self
            .fleet
            .sessions()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let st = &self.stats[i];
                let est: Vec<Pose4> = self.est_traj[i].iter().map(|x| x.pose).collect();
                let reference: Vec<Pose4> = self.ref_traj[i].iter().map(|x| x.pose).collect();
                let ape = associate(&est, &reference, tol).ok().map(|pair| compute_ape(&pair));
                DroneReport {
                    drone_id: s.drone_id,
                    final_fsm: s.fsm,
                    ape,
                    max_loc_error: st.max_loc_error,
                    fix_rate_hz: st.fix_rate_hz(t_end),
                    bitrate_mbps: st.bitrate_mbps(t_end),
                    battery_end: self.endpoints[i].plant().battery_pct,
                    ever_fixed: st.ever_fixed,
                    failed_global: st.failed_global,
                    waypoints_done: self.fleet.mission().map_or(0, |m| {
                        let p = m.progress[i];
                        p.index + usize::from(p.done)
                    }),
                    rc_outside_flying: st.rc_outside_flying,
                }
            })
            .collect();
        let fs: &FabricStats = self.fabric.stats();
        RunReport {
            seed: self.seed,
            mode: self.config.localization.mode,
            finish: self.finish.unwrap_or(Finish::Timeout),
            duration_s: t_end,
            mission_complete_t: self.mission_complete_t,
            drones,
            datagrams_sent: fs.sent,
            datagrams_delivered: fs.delivered,
            datagrams_dropped: fs.dropped_total(),
        }
    }

    pub fn estimated_trajectory(&self, i: usize) -> &[TrajectorySample] {
        &self.est_traj[i]
    }

    pub fn reference_trajectory(&self, i: usize) -> &[TrajectorySample] {
        &self.ref_traj[i]
    }

    /// Writes the fabric log (requires `record_fabric_log`).
    pub fn write_fabric_log<W: Write>(&self, out: W) -> io::Result<()> {
        self.fabric.write_log(out)
    }

    /// Sends a raw rc to drone `i`, bypassing the session. Test hook for leakage checks.
    #[doc(hidden)]
    pub fn inject_rc(&mut self, i: usize, rc: RcCommand) {
        let t = self.now();
        self.dispatch(vec![Outbound { drone: i, msg: CommandMsg::Rc(rc) }], t);
    }
}

/// Runs one full configured simulation and returns its report.
pub fn run_simulation(config: &FleetConfig, seed: u64, opts: SimOptions, max_duration: f64) -> Result<(Simulation, RunReport), SimError> {
    let mut sim = Simulation::new(config, seed, opts)?;
    let report = sim.run(max_duration);
    Ok((sim, report))
}

/// How the step-response plant is driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDrive {
    /// Through the saturated integer command, as on the wire.
    Rc,
    /// Directly with the pre-saturation body command.
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    pub t: Vec<f64>,
    pub pose: Vec<Pose4>,
    /// Pre-saturation body command of every control step.
    pub body: Vec<BodyVelocityCmd>,
    /// Position error norm at every control step.
    pub error: Vec<f64>,
    pub final_error: f64,
    /// Largest travel past the target along the step direction, as a fraction of the step.
    pub overshoot: f64,
}

/// Flies one airborne drone from `start` towards `target` with perfect pose feedback.
pub fn step_response(
    controller: &crate::control::ControllerConfig,
    plant: &crate::endpoint::PlantParams,
    start: Pose4,
    target: Pose4,
    duration: f64,
    drive: StepDrive,
) -> StepResponse {
    use crate::control::{step_controller, ControllerState};
    use crate::endpoint::{dynamics_step_with, FlightMode, PlantState};

    let mut state = PlantState { flight_mode: FlightMode::Airborne, ..PlantState::grounded_at(start) };
    let mut ctrl = ControllerState::starting_at(start.t);
    let sub = (BASE_RATE_HZ / controller.rate_hz).round().max(1.0) as usize;
    let dt = 1.0 / BASE_RATE_HZ;
    let period = sub as f64 * dt;
    let dir = [target.x - start.x, target.y - start.y, target.z - start.z];
    let step_len = (dir.iter().map(|d| d * d).sum::<f64>()).sqrt();
    let mut out = StepResponse { t: vec![], pose: vec![], body: vec![], error: vec![], final_error: 0.0, overshoot: 0.0 };
    let steps = (duration / period).round() as usize;
    for _ in 0..steps {
        let step = step_controller(&ctrl, &state.pose, &target, period, controller).expect("finite poses and valid config");
        ctrl = step.state;
        let u = match drive {
            StepDrive::Rc => plant.rc_to_velocity(&step.rc),
            StepDrive::Continuous => step.body,
        };
        for _ in 0..sub {
            state = dynamics_step_with(&state, &u, dt, plant);
        }
        let p = state.pose;
        out.t.push(p.t);
        out.pose.push(p);
        out.body.push(step.body);
        out.error.push(p.distance(&target));
        if step_len > 0.0 {
            let along = ((p.x - start.x) * dir[0] + (p.y - start.y) * dir[1] + (p.z - start.z) * dir[2]) / step_len;
            out.overshoot = out.overshoot.max((along - step_len) / step_len);
        }
    }
    out.final_error = out.error.last().copied().unwrap_or_else(|| start.distance(&target));
    out
}
