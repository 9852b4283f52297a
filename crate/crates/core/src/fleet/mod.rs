//! Central coordinator: one session per drone, the active mission, and the
//! operator command surface consumed by the service API.
//!
//! The coordinator never touches the network. It consumes decoded events and
//! produces [`Outbound`] commands; the caller owns transport and clock.

mod mission;
mod session;

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddrV4;

use serde::{Deserialize, Serialize};

use crate::control::ControllerConfig;
use crate::localization::PoseFix;
use crate::state::{DroneObservation, FleetAssembler, FleetState, Pose4};
use crate::wire::CommandMsg;

pub use mission::{
    mission_tick, plan_letter_trajectory, DroneProgress, DroneTarget, Geofence, Letter, LetterGeometry, MissionError,
    MissionEvent, MissionPlan, MissionState,
};
pub use session::{
    session_step, Action, Alert, AlertLevel, DroneCommand, DroneSession, SessionError, SessionEvent, SessionFsm,
    SessionThresholds,
};

/// Fleet-level operator commands, as posted to the command endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorCommand {
    TakeoffAll,
    LandAll,
    Estop,
    StartMission { name: String },
    Pause,
    Resume,
    Reset { drone_id: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandAck {
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl CommandAck {
    fn accepted() -> Self {
        Self { accepted: true, reason: None }
    }

    fn rejected(reason: impl Into<String>) -> Self {
        Self { accepted: false, reason: Some(reason.into()) }
    }
}

/// A command to put on the wire toward drone `drone`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub drone: usize,
    pub msg: CommandMsg,
}

/// Everything observable that happened inside the coordinator, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FleetNotice {
    Transition { t: f64, drone_id: u32, from: SessionFsm, to: SessionFsm },
    Alert(Alert),
    Mission(MissionEvent),
    Command { t: f64, command: OperatorCommand, ack: CommandAck },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneView {
    pub drone_id: u32,
    pub fsm: SessionFsm,
    pub pose: Option<Pose4>,
    pub battery: f64,
    pub target: Option<Pose4>,
    pub link_up: bool,
    pub fix_age: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionView {
    pub name: String,
    pub paused: bool,
    pub complete: bool,
    pub fraction_done: f64,
    pub progress: Vec<DroneProgress>,
    pub waypoints: Vec<Vec<Pose4>>,
}

/// The snapshot document served to operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub drones: Vec<DroneView>,
    pub mission: Option<MissionView>,
    pub alerts: Vec<Alert>,
    /// Present once every drone has a pose.
    pub state: Option<FleetState>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FleetSettings {
    pub controller: ControllerConfig,
    pub thresholds: SessionThresholds,
    pub geofence: Geofence,
}

const ALERT_HISTORY: usize = 64;

pub struct Fleet {
    sessions: Vec<DroneSession>,
    mission: Option<MissionState>,
    plans: BTreeMap<String, MissionPlan>,
    settings: FleetSettings,
    alerts: VecDeque<Alert>,
    notices: Vec<FleetNotice>,
    t: f64,
}

impl Fleet {
    pub fn new(fleet_addrs: &[SocketAddrV4], settings: FleetSettings, t: f64) -> Self {
        Self {
            sessions: fleet_addrs.iter().enumerate().map(|(i, a)| DroneSession::new(i as u32, *a, t)).collect(),
            mission: None,
            plans: BTreeMap::new(),
            settings,
            alerts: VecDeque::new(),
            notices: Vec::new(),
            t,
        }
    }

    pub fn add_plan(&mut self, plan: MissionPlan) -> Result<(), MissionError> {
        plan.validate(&self.settings.geofence)?;
        self.plans.insert(plan.name.clone(), plan);
        Ok(())
    }

    pub fn sessions(&self) -> &[DroneSession] {
        &self.sessions
    }

    pub fn mission(&self) -> Option<&MissionState> {
        self.mission.as_ref()
    }

    pub fn settings(&self) -> &FleetSettings {
        &self.settings
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn drain_notices(&mut self) -> Vec<FleetNotice> {
        std::mem::take(&mut self.notices)
    }

    fn apply_session(&mut self, i: usize, event: &SessionEvent) -> Result<Vec<Outbound>, SessionError> {
        let (next, actions) = session_step(&self.sessions[i], event, &self.settings.controller, &self.settings.thresholds)?;
        self.sessions[i] = next;
        let mut out = Vec::new();
        for action in actions {
            match action {
                Action::Send(msg) => out.push(Outbound { drone: i, msg }),
                Action::Alert(alert) => {
                    if self.alerts.len() == ALERT_HISTORY {
                        self.alerts.pop_front();
                    }
                    self.alerts.push_back(alert.clone());
                    self.notices.push(FleetNotice::Alert(alert));
                }
                Action::Transition { t, from, to } => {
                    self.notices.push(FleetNotice::Transition { t, drone_id: i as u32, from, to })
                }
            }
        }
        Ok(out)
    }

    /// Feeds one drone-originated event (telemetry, fix or reply) to its session.
    pub fn on_event(&mut self, drone: usize, event: SessionEvent) -> Vec<Outbound> {
        if drone >= self.sessions.len() || matches!(event, SessionEvent::Operator { .. }) {
            return Vec::new();
        }
        self.apply_session(drone, &event).unwrap_or_default()
    }

    /// Opens every idle session.
    pub fn connect_all(&mut self, t: f64) -> Vec<Outbound> {
        let mut out = Vec::new();
        for i in 0..self.sessions.len() {
            if self.sessions[i].fsm == SessionFsm::Idle {
                out.extend(self.apply_session(i, &SessionEvent::Operator { t, cmd: DroneCommand::Connect }).unwrap_or_default());
            }
        }
        out
    }

    fn broadcast(&mut self, t: f64, cmd: DroneCommand, skip_if: impl Fn(SessionFsm) -> bool) -> (Vec<Outbound>, Vec<String>) {
        let mut out = Vec::new();
        let mut rejected = Vec::new();
        for i in 0..self.sessions.len() {
            if skip_if(self.sessions[i].fsm) {
                continue;
            }
            match self.apply_session(i, &SessionEvent::Operator { t, cmd }) {
                Ok(o) => out.extend(o),
                Err(e) => rejected.push(format!("drone {i}: {e}")),
            }
        }
        (out, rejected)
    }

    /// Applies an operator command immediately.
    pub fn apply(&mut self, command: &OperatorCommand, t: f64) -> (CommandAck, Vec<Outbound>) {
        let (ack, out) = self.apply_inner(command, t);
        self.notices.push(FleetNotice::Command { t, command: command.clone(), ack: ack.clone() });
        (ack, out)
    }

    fn apply_inner(&mut self, command: &OperatorCommand, t: f64) -> (CommandAck, Vec<Outbound>) {
        match command {
            OperatorCommand::Estop => {
                let (out, _) = self.broadcast(t, DroneCommand::Estop, |_| false);
                if let Some(m) = self.mission.as_mut() {
                    m.paused = true;
                }
                (CommandAck::accepted(), out)
            }
            OperatorCommand::TakeoffAll => {
                let (out, rejected) = self.broadcast(t, DroneCommand::Takeoff, |_| false);
                if out.is_empty() {
                    (CommandAck::rejected(rejected.join("; ")), out)
                } else {
                    (CommandAck { accepted: true, reason: (!rejected.is_empty()).then(|| rejected.join("; ")) }, out)
                }
            }
            OperatorCommand::LandAll => {
                let (out, _) = self.broadcast(t, DroneCommand::Land, |fsm| {
                    !matches!(fsm, SessionFsm::TakingOff | SessionFsm::Flying | SessionFsm::Failsafe)
                });
                if out.is_empty() {
                    (CommandAck::rejected("no airborne drones"), out)
                } else {
                    (CommandAck::accepted(), out)
                }
            }
            OperatorCommand::StartMission { name } => {
                if self.mission.as_ref().is_some_and(|m| !m.complete) {
                    return (CommandAck::rejected("mission already running"), Vec::new());
                }
                let Some(plan) = self.plans.get(name) else {
                    return (CommandAck::rejected(format!("unknown mission {name:?}")), Vec::new());
                };
                if plan.waypoints.len() != self.sessions.len() {
                    return (CommandAck::rejected("mission does not match fleet size"), Vec::new());
                }
                if self.sessions.iter().any(|s| s.fsm != SessionFsm::Flying) {
                    return (CommandAck::rejected("not all airborne"), Vec::new());
                }
                self.mission = Some(MissionState::start(plan.clone(), t));
                (CommandAck::accepted(), Vec::new())
            }
            OperatorCommand::Pause | OperatorCommand::Resume => {
                let pause = matches!(command, OperatorCommand::Pause);
                match self.mission.as_mut() {
                    Some(m) if !m.complete => {
                        m.paused = pause;
                        (CommandAck::accepted(), Vec::new())
                    }
                    _ => (CommandAck::rejected("no mission running"), Vec::new()),
                }
            }
            OperatorCommand::Reset { drone_id } => {
                let i = *drone_id as usize;
                if i >= self.sessions.len() {
                    return (CommandAck::rejected(format!("unknown drone {drone_id}")), Vec::new());
                }
                match self.apply_session(i, &SessionEvent::Operator { t, cmd: DroneCommand::Reset }) {
                    Ok(out) => (CommandAck::accepted(), out),
                    Err(e) => (CommandAck::rejected(e.to_string()), Vec::new()),
                }
            }
        }
    }

    /// One control tick: mission targets first, then every session.
    pub fn tick(&mut self, t: f64) -> Vec<Outbound> {
        self.t = t;
        if let Some(mission) = self.mission.as_ref() {
            let fixes: Vec<Option<PoseFix>> = self.sessions.iter().map(|s| s.latest_fix).collect();
            let (next, targets, events) = mission_tick(mission, &fixes, t, self.settings.thresholds.t_fix_stale);
            for (s, target) in self.sessions.iter_mut().zip(&targets) {
                s.current_target = target.pose;
            }
            self.notices.extend(events.into_iter().map(FleetNotice::Mission));
            self.mission = Some(next);
        }
        let mut out = Vec::new();
        for i in 0..self.sessions.len() {
            out.extend(self.apply_session(i, &SessionEvent::Tick { t }).unwrap_or_default());
        }
        out
    }

    pub fn snapshot(&self) -> Snapshot {
        let t = self.t;
        let drones = self
            .sessions
            .iter()
            .map(|s| DroneView {
                drone_id: s.drone_id,
                fsm: s.fsm,
                pose: s.pose(),
                battery: s.health.battery_pct,
                target: s.current_target,
                link_up: s.health.link_up,
                fix_age: s.fix_available_t().map(|ft| t - ft),
            })
            .collect();
        let mission = self.mission.as_ref().map(|m| MissionView {
            name: m.plan.name.clone(),
            paused: m.paused,
            complete: m.complete,
            fraction_done: m.fraction_done(),
            progress: m.progress.clone(),
            waypoints: m.plan.waypoints.clone(),
        });
        let observations: Option<Vec<DroneObservation>> = self
            .sessions
            .iter()
            .map(|s| {
                let pose = s.pose()?;
                let mut obs = DroneObservation::new(pose, s.current_target.unwrap_or(pose), s.health);
                obs.command = s.last_body;
                Some(obs)
            })
            .collect();
        let assembler = FleetAssembler {
            stale_after: self.settings.thresholds.t_link_lost,
            control_period: f64::INFINITY,
        };
        let state = observations.and_then(|obs| assembler.assemble(&obs, t).ok());
        Snapshot { t, drones, mission, alerts: self.alerts.iter().cloned().collect(), state }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::Reply;

    fn fleet(n: usize) -> Fleet {
        let addrs: Vec<SocketAddrV4> =
            (0..n).map(|i| SocketAddrV4::new(std::net::Ipv4Addr::new(10, 0, 0, 11 + i as u8), 8889)).collect();
        let mut f = Fleet::new(&addrs, FleetSettings::default(), 0.0);
        f.add_plan(MissionPlan::letters("ntu", n, &LetterGeometry::default(), 0.1, 0.5).unwrap()).unwrap();
        f
    }

    #[test]
    fn estop_reaches_every_session() {
        let mut f = fleet(3);
        f.connect_all(0.0);
        let (ack, out) = f.apply(&OperatorCommand::Estop, 0.1);
        assert!(ack.accepted);
        assert_eq!(out.len(), 3);
        assert!(f.sessions().iter().all(|s| s.fsm == SessionFsm::Emergency));
    }

    #[test]
    fn mission_needs_everyone_airborne() {
        let mut f = fleet(3);
        let (ack, _) = f.apply(&OperatorCommand::StartMission { name: "ntu".into() }, 0.0);
        assert_eq!(ack, CommandAck::rejected("not all airborne"));
        let (ack, _) = f.apply(&OperatorCommand::StartMission { name: "xyz".into() }, 0.0);
        assert!(!ack.accepted);
    }

    #[test]
    fn snapshot_shape_and_schema() {
        let mut f = fleet(3);
        f.connect_all(0.0);
        for i in 0..3 {
            f.on_event(i, SessionEvent::Reply { t: 0.1, reply: Reply::Ok });
        }
        let snap = f.snapshot();
        assert_eq!(snap.drones.len(), 3);
        assert!(snap.drones.iter().all(|d| d.fsm == SessionFsm::Ready));
        let doc = serde_json::to_value(&snap).unwrap();
        for key in ["mission", "alerts"] {
            assert!(doc.get(key).is_some(), "{key}");
        }
        for key in ["drone_id", "fsm", "pose", "battery", "target"] {
            assert!(doc["drones"][0].get(key).is_some(), "{key}");
        }
        assert_eq!(doc["drones"][1]["fsm"], "READY");
        let notices = f.drain_notices();
        assert_eq!(notices.iter().filter(|n| matches!(n, FleetNotice::Transition { .. })).count(), 6);
    }

    #[test]
    fn commands_parse_from_documents() {
        let cmd: OperatorCommand = serde_json::from_str(r#"{"cmd": "start_mission", "name": "ntu"}"#).unwrap();
        assert_eq!(cmd, OperatorCommand::StartMission { name: "ntu".into() });
        assert!(serde_json::from_str::<OperatorCommand>(r#"{"cmd": "fly_away"}"#).is_err());
        let reset: OperatorCommand = serde_json::from_str(r#"{"cmd": "reset", "drone_id": 2}"#).unwrap();
        assert_eq!(reset, OperatorCommand::Reset { drone_id: 2 });
    }
}
