//! A virtual SDK drone: first-order kinematic plant plus a protocol server on
//! three logical ports (command, telemetry, video).

use std::net::SocketAddrV4;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use crate::control::{body_to_world, RcCommand};
use crate::state::{wrap_deg, BodyVelocityCmd, Pose4};
use crate::wire::{
    encode_frame, encode_telemetry, fragment_frame, parse_command, CommandMsg, FrameStub, QueryKind,
    TelemetryMsg, DEFAULT_FRAME_BYTES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlightMode {
    Grounded,
    TakingOff,
    Airborne,
    Landing,
    Emergency,
}

impl FlightMode {
    pub fn motors_on(self) -> bool {
        matches!(self, FlightMode::TakingOff | FlightMode::Airborne | FlightMode::Landing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Velocity lag, s.
    pub tau_v: f64,
    /// Yaw-rate lag, s.
    pub tau_w: f64,
    /// m/s per 100 rc units.
    pub v_scale: f64,
    /// deg/s per 100 rc units.
    pub w_scale: f64,
    pub takeoff_alt: f64,
    /// %/min while motors run.
    pub battery_rate: f64,
    pub rc_timeout: f64,
    pub takeoff_time: f64,
    pub land_time: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            tau_v: 0.4,
            tau_w: 0.25,
            v_scale: 1.0,
            w_scale: 100.0,
            takeoff_alt: 1.0,
            battery_rate: 8.0,
            rc_timeout: 0.5,
            takeoff_time: 2.0,
            land_time: 2.0,
        }
    }
}

impl PlantParams {
    pub fn is_valid(&self) -> bool {
        [
            self.tau_v,
            self.tau_w,
            self.v_scale,
            self.w_scale,
            self.takeoff_alt,
            self.battery_rate,
            self.rc_timeout,
            self.takeoff_time,
            self.land_time,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0)
    }

    /// Body velocity the plant tracks for a given rc command.
    pub fn rc_to_velocity(&self, rc: &RcCommand) -> BodyVelocityCmd {
        BodyVelocityCmd {
            vx_b: rc.b as f64 / 100.0 * self.v_scale,
            vy_b: -(rc.a as f64) / 100.0 * self.v_scale,
            vz_b: rc.c as f64 / 100.0 * self.v_scale,
            yaw_rate: -(rc.d as f64) / 100.0 * self.w_scale,
        }
    }
}

/// Reply datagrams a drone can produce on its command port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Ok,
    Error,
    Value(String),
}

impl Reply {
    pub fn to_bytes(&self) -> Bytes {
        match self {
            Reply::Ok => Bytes::from_static(b"ok"),
            Reply::Error => Bytes::from_static(b"error"),
            Reply::Value(v) => Bytes::from(v.clone()),
        }
    }

    pub fn parse(bytes: &[u8]) -> Reply {
        match bytes.trim_ascii() {
            b"ok" => Reply::Ok,
            b"error" => Reply::Error,
            other => Reply::Value(String::from_utf8_lossy(other).into_owned()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Reply::Ok => "ok",
            Reply::Error => "error",
            Reply::Value(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    /// Ground truth; `pose.t` is the plant clock.
    pub pose: Pose4,
    pub vel_body: BodyVelocityCmd,
    pub battery_pct: f64,
    pub flight_mode: FlightMode,
    pub last_rc: RcCommand,
    pub last_rc_t: f64,
    /// Deferred reply for a takeoff or land that just completed.
    #[serde(skip)]
    pub pending_reply: Option<Reply>,
}

impl PlantState {
    pub fn grounded_at(pose: Pose4) -> Self {
        Self {
            pose: Pose4 { z: 0.0, ..pose },
            vel_body: BodyVelocityCmd::ZERO,
            battery_pct: 100.0,
            flight_mode: FlightMode::Grounded,
            last_rc: RcCommand::ZERO,
            last_rc_t: f64::NEG_INFINITY,
            pending_reply: None,
        }
    }

    fn cut_motors(&mut self) {
        self.vel_body = BodyVelocityCmd::ZERO;
        self.pose.z = 0.0;
    }
}

fn relax(v: f64, target: f64, dt: f64, tau: f64) -> f64 {
    v + dt * (target - v) / tau
}

/// Integrates a body velocity over `dt` using the yaw at the start of the step.
fn integrate(pose: &mut Pose4, vel: &BodyVelocityCmd, dt: f64) {
    let [wx, wy] = body_to_world(pose.yaw, [vel.vx_b, vel.vy_b]);
    pose.x += dt * wx;
    pose.y += dt * wy;
    pose.z = (pose.z + dt * vel.vz_b).max(0.0);
    pose.yaw = wrap_deg(pose.yaw + dt * vel.yaw_rate);
}

/// Advances the plant by `dt` seconds under its stored rc command.
///
/// Explicit Euler; keep `dt <= 0.05` for accuracy against `tau_v`.
pub fn dynamics_step(state: &PlantState, dt: f64, params: &PlantParams) -> PlantState {
    let now = state.pose.t;
    let u = if now - state.last_rc_t > params.rc_timeout {
        BodyVelocityCmd::ZERO
    } else {
        params.rc_to_velocity(&state.last_rc)
    };
    dynamics_step_with(state, &u, dt, params)
}

/// Like [`dynamics_step`] but tracking an explicit continuous body command.
pub fn dynamics_step_with(state: &PlantState, u: &BodyVelocityCmd, dt: f64, params: &PlantParams) -> PlantState {
    debug_assert!(dt > 0.0, "dt {dt} must be positive");
    let mut next = state.clone();
    next.pose.t = state.pose.t + dt;
    if state.flight_mode.motors_on() {
        next.battery_pct = (state.battery_pct - params.battery_rate / 60.0 * dt).max(0.0);
    }
    match state.flight_mode {
        FlightMode::Grounded => {
            next.vel_body = BodyVelocityCmd::ZERO;
            next.pose.z = 0.0;
        }
        FlightMode::Emergency => next.cut_motors(),
        FlightMode::TakingOff => {
            let climb = params.takeoff_alt / params.takeoff_time;
            next.vel_body = BodyVelocityCmd::new(0.0, 0.0, climb, 0.0);
            integrate(&mut next.pose, &next.vel_body, dt);
            if next.pose.z >= params.takeoff_alt {
                next.pose.z = params.takeoff_alt;
                next.vel_body = BodyVelocityCmd::ZERO;
                next.flight_mode = FlightMode::Airborne;
                next.pending_reply = Some(Reply::Ok);
            }
        }
        FlightMode::Landing => {
            let sink = params.takeoff_alt / params.land_time;
            next.vel_body = BodyVelocityCmd {
                vx_b: relax(state.vel_body.vx_b, 0.0, dt, params.tau_v),
                vy_b: relax(state.vel_body.vy_b, 0.0, dt, params.tau_v),
                vz_b: -sink,
                yaw_rate: relax(state.vel_body.yaw_rate, 0.0, dt, params.tau_w),
            };
            integrate(&mut next.pose, &next.vel_body, dt);
            if next.pose.z <= 0.0 {
                next.pose.z = 0.0;
                next.vel_body = BodyVelocityCmd::ZERO;
                next.flight_mode = FlightMode::Grounded;
                next.pending_reply = Some(Reply::Ok);
            }
        }
        FlightMode::Airborne => {
            next.vel_body = BodyVelocityCmd {
                vx_b: relax(state.vel_body.vx_b, u.vx_b, dt, params.tau_v),
                vy_b: relax(state.vel_body.vy_b, u.vy_b, dt, params.tau_v),
                vz_b: relax(state.vel_body.vz_b, u.vz_b, dt, params.tau_v),
                yaw_rate: relax(state.vel_body.yaw_rate, u.yaw_rate, dt, params.tau_w),
            };
            integrate(&mut next.pose, &next.vel_body, dt);
            if next.battery_pct <= 0.0 {
                next.flight_mode = FlightMode::Landing;
            }
        }
    }
    next
}

/// Applies one SDK command at time `t`; returns the new state and an immediate reply, if any.
pub fn handle_command(state: &PlantState, msg: &CommandMsg, t: f64) -> (PlantState, Option<Reply>) {
    let mut next = state.clone();
    if state.flight_mode == FlightMode::Emergency {
        return match msg {
            // "command" is the explicit reset out of EMERGENCY
            CommandMsg::Enter => {
                next.flight_mode = FlightMode::Grounded;
                next.cut_motors();
                next.last_rc = RcCommand::ZERO;
                (next, Some(Reply::Ok))
            }
            _ => (next, Some(Reply::Error)),
        };
    }
    let reply = match msg {
        CommandMsg::Enter => Some(Reply::Ok),
        CommandMsg::Takeoff => {
            if state.flight_mode == FlightMode::Grounded && state.battery_pct > 0.0 {
                next.flight_mode = FlightMode::TakingOff;
                next.last_rc = RcCommand::ZERO;
                None
            } else {
                Some(Reply::Error)
            }
        }
        CommandMsg::Land => match state.flight_mode {
            FlightMode::Airborne | FlightMode::TakingOff => {
                next.flight_mode = FlightMode::Landing;
                None
            }
            _ => Some(Reply::Error),
        },
        CommandMsg::Emergency => {
            next.flight_mode = FlightMode::Emergency;
            next.cut_motors();
            Some(Reply::Ok)
        }
        CommandMsg::Rc(rc) => {
            next.last_rc = *rc;
            next.last_rc_t = t;
            None
        }
        CommandMsg::Query(QueryKind::Battery) => Some(Reply::Value(format!("{}", state.battery_pct.floor() as i64))),
    };
    (next, reply)
}

/// Telemetry record for the current plant state: velocities floored to dm/s, height rounded to cm.
pub fn emit_telemetry(state: &PlantState, seq: u64) -> TelemetryMsg {
    let dm = |v: f64| (v * 10.0).floor() as i32;
    TelemetryMsg {
        pitch: 0,
        roll: 0,
        yaw: state.pose.yaw.round() as i32,
        vgx: dm(state.vel_body.vx_b),
        vgy: dm(state.vel_body.vy_b),
        vgz: dm(state.vel_body.vz_b),
        bat: state.battery_pct.floor().clamp(0.0, 100.0) as u8,
        h: (state.pose.z * 100.0).round() as i32,
        seq,
    }
}

/// Fixed-rate schedule of slots `k / rate` for `k = 0, 1, ...`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub rate_hz: f64,
    next_slot: u64,
}

impl Schedule {
    pub fn new(rate_hz: f64) -> Self {
        Self { rate_hz, next_slot: 0 }
    }

    pub fn slot_time(&self, slot: u64) -> f64 {
        slot as f64 / self.rate_hz
    }

    /// Returns the slots that fell due at or before `t`, advancing past them.
    pub fn due(&mut self, t: f64) -> std::ops::Range<u64> {
        let start = self.next_slot;
        // slot k is due when k <= t * rate (with a small guard for float noise)
        let last = (t * self.rate_hz + 1e-9).floor();
        if last >= start as f64 {
            self.next_slot = last as u64 + 1;
        }
        start..self.next_slot
    }
}

/// Sized video stub stream.
#[derive(Debug, Clone)]
pub struct VideoSource {
    schedule: Schedule,
    frame_bytes: usize,
    payload: Bytes,
}

impl Default for VideoSource {
    fn default() -> Self {
        Self::new(30.0, DEFAULT_FRAME_BYTES)
    }
}

impl VideoSource {
    pub fn new(fps: f64, frame_bytes: usize) -> Self {
        Self { schedule: Schedule::new(fps), frame_bytes, payload: Bytes::from(vec![0u8; frame_bytes]) }
    }

    pub fn frame_bytes(&self) -> usize {
        self.frame_bytes
    }

    pub fn fps(&self) -> f64 {
        self.schedule.rate_hz
    }

    /// Fragment datagrams for every frame slot due by `t`. Frame ids start at 1.
    pub fn emit_frames(&mut self, state: &PlantState, t: f64) -> Vec<FrameStub> {
        let slots = self.schedule.due(t);
        if state.flight_mode == FlightMode::Emergency {
            return Vec::new();
        }
        let mut out = Vec::new();
        for slot in slots {
            let capture_ms = (self.schedule.slot_time(slot) * 1000.0).round() as u64;
            let frame_id = (slot + 1) as u32;
            out.extend(fragment_frame(frame_id, capture_ms, &self.payload).iter().map(|f| f.to_stub()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointPorts {
    pub command: u16,
    pub telemetry: u16,
    pub video: u16,
}

impl Default for EndpointPorts {
    fn default() -> Self {
        Self { command: 8889, telemetry: 8890, video: 11111 }
    }
}

/// A datagram the endpoint wants to send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub src_port: u16,
    pub dst: SocketAddrV4,
    pub payload: Bytes,
}

/// One virtual drone: plant, protocol handling and output streams.
#[derive(Debug, Clone)]
pub struct DroneEndpoint {
    pub plant: PlantState,
    pub params: PlantParams,
    pub ports: EndpointPorts,
    /// Sender of the last `command`; replies go here, streams go to its host.
    client: Option<SocketAddrV4>,
    telemetry: Schedule,
    telemetry_seq: u64,
    video: VideoSource,
}

impl DroneEndpoint {
    pub fn new(start: Pose4, params: PlantParams, ports: EndpointPorts, video: VideoSource) -> Self {
        Self {
            plant: PlantState::grounded_at(start),
            params,
            ports,
            client: None,
            telemetry: Schedule::new(10.0),
            telemetry_seq: 0,
            video,
        }
    }

    pub fn plant(&self) -> &PlantState {
        &self.plant
    }

    pub fn client(&self) -> Option<SocketAddrV4> {
        self.client
    }

    /// Handles one datagram received on `dst_port` from `src` at time `t`.
    pub fn on_datagram(&mut self, src: SocketAddrV4, dst_port: u16, payload: &[u8], t: f64) -> Vec<Outgoing> {
        if dst_port != self.ports.command {
            return Vec::new();
        }
        let reply_to = |reply: Reply| Outgoing { src_port: self.ports.command, dst: src, payload: reply.to_bytes() };
        let msg = match parse_command(payload) {
            Ok(msg) => msg,
            Err(_) => return vec![reply_to(Reply::Error)],
        };
        if msg == CommandMsg::Enter {
            self.client = Some(src);
        } else if self.client.is_none() {
            // not in SDK mode yet
            return vec![reply_to(Reply::Error)];
        }
        let (next, reply) = handle_command(&self.plant, &msg, t);
        self.plant = next;
        reply.map(reply_to).into_iter().collect()
    }

    /// Advances the plant to `t` in one step of `dt` and emits due replies, telemetry and video.
    pub fn tick(&mut self, dt: f64) -> Vec<Outgoing> {
        self.plant = dynamics_step(&self.plant, dt, &self.params);
        let t = self.plant.pose.t;
        let mut out = Vec::new();
        let Some(client) = self.client else {
            self.telemetry.due(t);
            self.video.emit_frames(&self.plant, t);
            return out;
        };
        if let Some(reply) = self.plant.pending_reply.take() {
            out.push(Outgoing { src_port: self.ports.command, dst: client, payload: reply.to_bytes() });
        }
        for _ in self.telemetry.due(t) {
            let msg = emit_telemetry(&self.plant, self.telemetry_seq);
            self.telemetry_seq += 1;
            out.push(Outgoing {
                src_port: self.ports.telemetry,
                dst: SocketAddrV4::new(*client.ip(), self.ports.telemetry),
                payload: encode_telemetry(&msg).expect("battery clamped to [0, 100]"),
            });
        }
        for stub in self.video.emit_frames(&self.plant, t) {
            out.push(Outgoing {
                src_port: self.ports.video,
                dst: SocketAddrV4::new(*client.ip(), self.ports.video),
                payload: encode_frame(&stub).expect("fragments fit one datagram"),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{parse_frame, parse_telemetry, VideoFragment};

    fn airborne() -> PlantState {
        PlantState {
            flight_mode: FlightMode::Airborne,
            pose: Pose4::new(0.0, 0.0, 1.0, 0.0, 0.0),
            ..PlantState::grounded_at(Pose4::default())
        }
    }

    #[test]
    fn euler_velocity_lag() {
        let params = PlantParams { tau_v: 0.5, ..PlantParams::default() };
        let s = dynamics_step_with(&airborne(), &BodyVelocityCmd::new(1.0, 0.0, 0.0, 0.0), 0.1, &params);
        // 0 + 0.1 * (1 - 0) / 0.5
        assert!((s.vel_body.vx_b - 0.2).abs() < 1e-12);
    }

    #[test]
    fn grounded_ignores_rc() {
        let mut s = PlantState::grounded_at(Pose4::at(1.0, 2.0, 0.0));
        s.last_rc = RcCommand::new(0, 100, 0, 0);
        s.last_rc_t = 0.0;
        let next = dynamics_step(&s, 0.05, &PlantParams::default());
        assert_eq!((next.pose.x, next.pose.y, next.pose.z), (1.0, 2.0, 0.0));
        assert_eq!(next.vel_body, BodyVelocityCmd::ZERO);
    }

    #[test]
    fn stale_rc_forces_hover() {
        let params = PlantParams::default();
        let mut s = airborne();
        s.last_rc = RcCommand::new(0, 100, 0, 0);
        s.last_rc_t = 0.0;
        for _ in 0..10 {
            s = dynamics_step(&s, 0.05, &params);
        }
        let moving = s.vel_body.vx_b;
        assert!(moving > 0.5);
        // now 0.5 s after the last rc; the next steps see a stale command
        for _ in 0..40 {
            s = dynamics_step(&s, 0.05, &params);
        }
        assert!(s.vel_body.vx_b < 0.01 * moving);
    }

    #[test]
    fn velocity_converges_within_five_tau() {
        let params = PlantParams::default();
        let mut s = airborne();
        let u = BodyVelocityCmd::new(0.7, -0.3, 0.2, 40.0);
        let dt = 0.01;
        let steps = (5.0 * params.tau_v / dt).round() as usize;
        for _ in 0..steps {
            s = dynamics_step_with(&s, &u, dt, &params);
        }
        for (v, target) in s.vel_body.as_array().iter().zip(u.as_array()) {
            assert!((v - target).abs() < 0.01 * target.abs(), "{v} vs {target}");
        }
    }

    #[test]
    fn body_integration_matches_world_integration() {
        let params = PlantParams::default();
        let yaw = 37.0;
        let u_body = BodyVelocityCmd::new(0.6, 0.25, 0.1, 0.0);
        let [wx, wy] = body_to_world(yaw, [u_body.vx_b, u_body.vy_b]);
        let u_world = BodyVelocityCmd::new(wx, wy, u_body.vz_b, 0.0);
        let mut rotated = PlantState { pose: Pose4::new(0.0, 0.0, 1.0, yaw, 0.0), ..airborne() };
        let mut world = airborne();
        for _ in 0..200 {
            rotated = dynamics_step_with(&rotated, &u_body, 0.01, &params);
            world = dynamics_step_with(&world, &u_world, 0.01, &params);
        }
        assert!((rotated.pose.x - world.pose.x).abs() < 1e-9);
        assert!((rotated.pose.y - world.pose.y).abs() < 1e-9);
        assert!((rotated.pose.z - world.pose.z).abs() < 1e-9);
    }

    #[test]
    fn command_table() {
        let grounded = PlantState::grounded_at(Pose4::default());
        let (s, reply) = handle_command(&grounded, &CommandMsg::Takeoff, 0.0);
        assert_eq!(s.flight_mode, FlightMode::TakingOff);
        assert_eq!(reply, None);

        let (s, reply) = handle_command(&airborne(), &CommandMsg::Rc(RcCommand::new(0, 50, 0, 0)), 3.0);
        assert_eq!(s.last_rc, RcCommand::new(0, 50, 0, 0));
        assert_eq!(s.last_rc_t, 3.0);
        assert_eq!(reply, None);

        let (_, reply) = handle_command(&airborne(), &CommandMsg::Takeoff, 0.0);
        assert_eq!(reply, Some(Reply::Error));

        let (s, reply) = handle_command(&airborne(), &CommandMsg::Emergency, 0.0);
        assert_eq!(s.flight_mode, FlightMode::Emergency);
        assert_eq!(s.vel_body, BodyVelocityCmd::ZERO);
        assert_eq!(reply, Some(Reply::Ok));
        for msg in [CommandMsg::Takeoff, CommandMsg::Land, CommandMsg::Rc(RcCommand::ZERO)] {
            let (still, reply) = handle_command(&s, &msg, 0.0);
            assert_eq!(still.flight_mode, FlightMode::Emergency);
            assert_eq!(reply, Some(Reply::Error));
        }
        let (reset, reply) = handle_command(&s, &CommandMsg::Enter, 0.0);
        assert_eq!(reset.flight_mode, FlightMode::Grounded);
        assert_eq!(reply, Some(Reply::Ok));

        let (_, reply) = handle_command(&airborne(), &CommandMsg::Query(QueryKind::Battery), 0.0);
        assert_eq!(reply, Some(Reply::Value("100".into())));
    }

    #[test]
    fn takeoff_and_land_complete_with_ok() {
        let params = PlantParams::default();
        let (mut s, _) = handle_command(&PlantState::grounded_at(Pose4::default()), &CommandMsg::Takeoff, 0.0);
        let mut t = 0.0;
        while s.flight_mode == FlightMode::TakingOff {
            s = dynamics_step(&s, 0.05, &params);
            t += 0.05;
        }
        assert_eq!(s.flight_mode, FlightMode::Airborne);
        assert!((t - params.takeoff_time).abs() < 0.051);
        assert_eq!(s.pending_reply.take(), Some(Reply::Ok));
        assert_eq!(s.pose.z, params.takeoff_alt);

        let (mut s, reply) = handle_command(&s, &CommandMsg::Land, t);
        assert_eq!(reply, None);
        while s.flight_mode == FlightMode::Landing {
            s = dynamics_step(&s, 0.05, &params);
        }
        assert_eq!(s.flight_mode, FlightMode::Grounded);
        assert_eq!(s.pending_reply, Some(Reply::Ok));
        assert_eq!(s.pose.z, 0.0);
    }

    #[test]
    fn battery_never_increases() {
        let params = PlantParams::default();
        let mut s = airborne();
        let mut last = s.battery_pct;
        for _ in 0..1000 {
            s = dynamics_step(&s, 0.05, &params);
            assert!(s.battery_pct <= last);
            last = s.battery_pct;
        }
        // 50 s at 8 %/min
        assert!((100.0 - s.battery_pct - 8.0 * 50.0 / 60.0).abs() < 1e-6);
    }

    #[test]
    fn telemetry_units() {
        let mut s = airborne();
        s.pose.z = 1.10;
        s.battery_pct = 87.0;
        let t = emit_telemetry(&s, 0);
        assert_eq!((t.h, t.bat), (110, 87));
        s.vel_body.vx_b = 0.52;
        assert_eq!(emit_telemetry(&s, 1).vgx, 5);
    }

    #[test]
    fn thirty_frames_per_second() {
        let mut video = VideoSource::default();
        let s = airborne();
        let mut frames = Vec::new();
        let dt = 1.0 / 120.0;
        for k in 1..120 {
            frames.extend(video.emit_frames(&s, k as f64 * dt));
        }
        // slots at 0 .. 29/30 fall inside the first second
        let ids: Vec<u32> = frames.iter().map(|f| f.frame_id).collect();
        let mut unique = ids.clone();
        unique.dedup();
        assert_eq!(unique.len(), 30);
        assert!(unique.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn endpoint_serves_protocol() {
        let fleet = SocketAddrV4::new([10, 0, 0, 1].into(), 40000);
        let mut ep = DroneEndpoint::new(Pose4::default(), PlantParams::default(), EndpointPorts::default(), VideoSource::default());
        assert_eq!(ep.on_datagram(fleet, 8889, b"takeoff", 0.0)[0].payload, Bytes::from_static(b"error"));
        let out = ep.on_datagram(fleet, 8889, b"command", 0.0);
        assert_eq!(out[0].payload, Bytes::from_static(b"ok"));
        assert_eq!(out[0].dst, fleet);
        assert!(ep.on_datagram(fleet, 8889, b"takeoff", 0.0).is_empty());
        let mut telemetry = 0;
        let mut video = 0;
        let mut ok = 0;
        for _ in 0..(3 * 120 - 1) {
            for o in ep.tick(1.0 / 120.0) {
                match o.src_port {
                    8890 => {
                        parse_telemetry(&o.payload).unwrap();
                        telemetry += 1
                    }
                    11111 => {
                        VideoFragment::from_stub(&parse_frame(&o.payload).unwrap()).unwrap();
                        video += 1
                    }
                    8889 => {
                        assert_eq!(&o.payload[..], b"ok");
                        ok += 1
                    }
                    _ => unreachable!(),
                }
            }
        }
        assert_eq!(ok, 1);
        assert_eq!(ep.plant.flight_mode, FlightMode::Airborne);
        assert_eq!(telemetry, 30);
        assert_eq!(video, 90 * 9);
    }
}
