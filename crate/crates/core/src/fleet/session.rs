//! Per-drone session state machine.
//!
//! | state       | event                         | next        | emits            |
//! |-------------|-------------------------------|-------------|------------------|
//! | IDLE        | connect                       | CONNECTING  | `command`        |
//! | CONNECTING  | reply ok                      | READY       |                  |
//! | READY       | takeoff                       | TAKING_OFF  | `takeoff`        |
//! | LANDED      | takeoff                       | TAKING_OFF  | `takeoff`        |
//! | TAKING_OFF  | reply ok                      | FLYING      |                  |
//! | FLYING      | tick                          | FLYING      | `rc a b c d`     |
//! | FLYING      | battery below threshold       | LANDING     | `land`           |
//! | FLYING      | telemetry or fix gap          | FAILSAFE    | alert            |
//! | FAILSAFE    | link and fixes back           | FLYING      |                  |
//! | FAILSAFE    | hover window elapsed          | LANDING     | `land`           |
//! | any airborne| land                          | LANDING     | `land`           |
//! | LANDING     | reply ok                      | LANDED      |                  |
//! | any         | estop                         | EMERGENCY   | `emergency`      |
//! | EMERGENCY   | reset                         | CONNECTING  | `command`        |

use std::fmt;
use std::net::SocketAddrV4;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{step_controller, ControllerConfig, ControllerState, RcCommand, MIN_DT};
use crate::endpoint::Reply;
use crate::localization::PoseFix;
use crate::state::{BodyVelocityCmd, DroneHealth, Pose4};
use crate::wire::{CommandMsg, TelemetryMsg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionFsm {
    Idle,
    Connecting,
    Ready,
    TakingOff,
    Flying,
    Landing,
    Landed,
    Failsafe,
    Emergency,
}

impl SessionFsm {
    pub fn as_str(&self) -> &'static str {
        match self {
            SessionFsm::Idle => "IDLE",
            SessionFsm::Connecting => "CONNECTING",
            SessionFsm::Ready => "READY",
            SessionFsm::TakingOff => "TAKING_OFF",
            SessionFsm::Flying => "FLYING",
            SessionFsm::Landing => "LANDING",
            SessionFsm::Landed => "LANDED",
            SessionFsm::Failsafe => "FAILSAFE",
            SessionFsm::Emergency => "EMERGENCY",
        }
    }

    pub fn airborne(&self) -> bool {
        matches!(self, SessionFsm::TakingOff | SessionFsm::Flying | SessionFsm::Landing | SessionFsm::Failsafe)
    }
}

impl fmt::Display for SessionFsm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionThresholds {
    pub batt_land_pct: f64,
    pub t_link_lost: f64,
    pub t_loc_lost: f64,
    pub t_fix_stale: f64,
    pub hover_before_land: f64,
    pub connect_retry: f64,
    /// Takeoff and land are re-sent if no reply arrives within this long.
    pub cmd_timeout: f64,
}

impl Default for SessionThresholds {
    fn default() -> Self {
        Self {
            batt_land_pct: 15.0,
            t_link_lost: 2.0,
            t_loc_lost: 3.0,
            t_fix_stale: 0.5,
            hover_before_land: 3.0,
            connect_retry: 1.0,
            cmd_timeout: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DroneCommand {
    Connect,
    Takeoff,
    Land,
    Estop,
    Reset,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    Telemetry { t: f64, msg: TelemetryMsg },
    /// Becomes available at `fix.fix_t`.
    Fix(PoseFix),
    Reply { t: f64, reply: Reply },
    Operator { t: f64, cmd: DroneCommand },
    Tick { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlertLevel {
    Info,
    Warning,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub t: f64,
    pub drone_id: u32,
    pub level: AlertLevel,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send(CommandMsg),
    Alert(Alert),
    Transition { t: f64, from: SessionFsm, to: SessionFsm },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("{0}")]
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroneSession {
    pub drone_id: u32,
    pub fsm: SessionFsm,
    pub fleet_addr: SocketAddrV4,
    pub controller: ControllerState,
    pub health: DroneHealth,
    pub current_target: Option<Pose4>,
    /// Latest valid fix.
    pub latest_fix: Option<PoseFix>,
    pub height_cm: i32,
    /// Body command behind the last rc sent.
    pub last_body: BodyVelocityCmd,
    pub state_since: f64,
    last_loc_t: f64,
    last_cmd_t: f64,
    last_ctrl_t: Option<f64>,
}

impl DroneSession {
    pub fn new(drone_id: u32, fleet_addr: SocketAddrV4, t: f64) -> Self {
        Self {
            drone_id,
            fsm: SessionFsm::Idle,
            fleet_addr,
            controller: ControllerState::starting_at(t),
            health: DroneHealth { battery_pct: 100.0, last_telemetry_t: t, link_up: false },
            current_target: None,
            latest_fix: None,
            height_cm: 0,
            last_body: BodyVelocityCmd::ZERO,
            state_since: t,
            last_loc_t: t,
            last_cmd_t: f64::NEG_INFINITY,
            last_ctrl_t: None,
        }
    }

    /// Time the latest valid fix became available, if any.
    pub fn fix_available_t(&self) -> Option<f64> {
        self.latest_fix.map(|f| f.fix_t)
    }

    pub fn fix_is_fresh(&self, t: f64, stale_after: f64) -> bool {
        self.fix_available_t().is_some_and(|ft| t - ft <= stale_after)
    }

    /// Best current pose knowledge: the latest fix pose.
    pub fn pose(&self) -> Option<Pose4> {
        self.latest_fix.map(|f| f.pose)
    }
}

struct Step<'a> {
    s: DroneSession,
    actions: Vec<Action>,
    cfg: &'a ControllerConfig,
    th: &'a SessionThresholds,
}

impl Step<'_> {
    fn go(&mut self, to: SessionFsm, t: f64) {
        if self.s.fsm != to {
            self.actions.push(Action::Transition { t, from: self.s.fsm, to });
            self.s.fsm = to;
            self.s.state_since = t;
        }
        if to != SessionFsm::Flying {
            self.s.last_ctrl_t = None;
        }
    }

    fn send(&mut self, msg: CommandMsg, t: f64) {
        if !matches!(msg, CommandMsg::Rc(_)) {
            self.s.last_cmd_t = t;
        }
        self.actions.push(Action::Send(msg));
    }

    fn alert(&mut self, t: f64, level: AlertLevel, message: impl Into<String>) {
        self.actions.push(Action::Alert(Alert { t, drone_id: self.s.drone_id, level, message: message.into() }));
    }

    fn reset_controller(&mut self, t: f64) {
        self.s.controller = ControllerState::starting_at(t);
        self.s.last_body = BodyVelocityCmd::ZERO;
        self.s.last_ctrl_t = None;
    }

    fn land(&mut self, t: f64) {
        self.go(SessionFsm::Landing, t);
        self.send(CommandMsg::Land, t);
    }

    fn check_battery(&mut self, t: f64) -> bool {
        if matches!(self.s.fsm, SessionFsm::Flying | SessionFsm::Failsafe)
            && self.s.health.battery_pct < self.th.batt_land_pct
        {
            self.alert(t, AlertLevel::Warning, format!("battery {:.0}% below threshold, landing", self.s.health.battery_pct));
            self.land(t);
            return true;
        }
        false
    }

    fn tick(&mut self, t: f64) {
        let tel_gap = t - self.s.health.last_telemetry_t;
        self.s.health.link_up = tel_gap <= self.th.t_link_lost;
        let loc_gap = t - self.s.last_loc_t;
        let since_cmd = t - self.s.last_cmd_t;
        match self.s.fsm {
            SessionFsm::Connecting if since_cmd >= self.th.connect_retry => self.send(CommandMsg::Enter, t),
            SessionFsm::TakingOff if since_cmd >= self.th.cmd_timeout => self.send(CommandMsg::Takeoff, t),
            SessionFsm::Landing if since_cmd >= self.th.cmd_timeout => self.send(CommandMsg::Land, t),
            SessionFsm::Flying => {
                if self.check_battery(t) {
                    return;
                }
                if tel_gap > self.th.t_link_lost || loc_gap > self.th.t_loc_lost {
                    let what = if tel_gap > self.th.t_link_lost { "telemetry" } else { "localization" };
                    let gap = tel_gap.max(loc_gap);
                    self.alert(t, AlertLevel::Critical, format!("{what} lost for {gap:.2} s, failsafe hover"));
                    self.reset_controller(t);
                    self.go(SessionFsm::Failsafe, t);
                    return;
                }
                self.control(t);
            }
            SessionFsm::Failsafe => {
                if self.check_battery(t) {
                    return;
                }
                if tel_gap <= self.th.t_link_lost && loc_gap <= self.th.t_loc_lost {
                    self.alert(t, AlertLevel::Info, "link restored, resuming");
                    self.go(SessionFsm::Flying, t);
                } else if t - self.s.state_since >= self.th.hover_before_land {
                    self.alert(t, AlertLevel::Critical, "failsafe hover expired, landing");
                    self.land(t);
                }
            }
            _ => {}
        }
    }

    fn control(&mut self, t: f64) {
        let fresh = self.s.fix_is_fresh(t, self.th.t_fix_stale);
        let (Some(target), Some(fix), true) = (self.s.current_target, self.s.latest_fix, fresh) else {
            // hold: no usable pose or nowhere to go
            self.reset_controller(t);
            self.send(CommandMsg::Rc(RcCommand::ZERO), t);
            return;
        };
        let dt = match self.s.last_ctrl_t {
            Some(last) => t - last,
            None => self.cfg.period(),
        };
        if dt < MIN_DT {
            return;
        }
        match step_controller(&self.s.controller, &fix.pose, &target, dt, self.cfg) {
            Ok(out) => {
                self.s.controller = out.state;
                self.s.last_body = out.body;
                self.s.last_ctrl_t = Some(t);
                self.send(CommandMsg::Rc(out.rc), t);
            }
            Err(e) => {
                self.alert(t, AlertLevel::Warning, format!("controller: {e}"));
                self.reset_controller(t);
                self.send(CommandMsg::Rc(RcCommand::ZERO), t);
            }
        }
    }

    fn operator(&mut self, t: f64, cmd: DroneCommand) -> Result<(), SessionError> {
        use SessionFsm::*;
        let fsm = self.s.fsm;
        let reject = |what: &str| Err(SessionError::Rejected(format!("{what} while {fsm}")));
        match cmd {
            DroneCommand::Estop => {
                self.go(Emergency, t);
                self.send(CommandMsg::Emergency, t);
                self.reset_controller(t);
            }
            DroneCommand::Connect => match fsm {
                Idle => {
                    self.go(Connecting, t);
                    self.send(CommandMsg::Enter, t);
                }
                _ => return reject("connect"),
            },
            DroneCommand::Takeoff => match fsm {
                Ready | Landed => {
                    self.go(TakingOff, t);
                    self.send(CommandMsg::Takeoff, t);
                }
                _ => return reject("takeoff"),
            },
            DroneCommand::Land => match fsm {
                TakingOff | Flying | Failsafe => self.land(t),
                _ => return reject("land"),
            },
            DroneCommand::Reset => match fsm {
                Emergency => {
                    self.go(Connecting, t);
                    self.send(CommandMsg::Enter, t);
                }
                _ => return reject("reset"),
            },
        }
        Ok(())
    }

    fn reply(&mut self, t: f64, reply: &Reply) {
        use SessionFsm::*;
        match (self.s.fsm, reply) {
            (Connecting, Reply::Ok) => self.go(Ready, t),
            (TakingOff, Reply::Ok) => self.enter_flying(t),
            // a re-sent takeoff reaching an airborne drone is refused
            (TakingOff, Reply::Error) if self.s.height_cm >= 50 => self.enter_flying(t),
            (TakingOff, Reply::Error) => {
                self.alert(t, AlertLevel::Warning, "takeoff refused");
                self.go(Ready, t);
            }
            (Landing, Reply::Ok) => self.go(Landed, t),
            (Landing, Reply::Error) if self.s.height_cm <= 0 => self.go(Landed, t),
            _ => {}
        }
    }

    fn enter_flying(&mut self, t: f64) {
        self.reset_controller(t);
        self.s.last_loc_t = self.s.last_loc_t.max(t);
        self.go(SessionFsm::Flying, t);
    }
}

/// Applies one event to a session, returning the next session and the actions to perform.
pub fn session_step(
    session: &DroneSession,
    event: &SessionEvent,
    controller: &ControllerConfig,
    thresholds: &SessionThresholds,
) -> Result<(DroneSession, Vec<Action>), SessionError> {
    let mut step = Step { s: session.clone(), actions: Vec::new(), cfg: controller, th: thresholds };
    match event {
        SessionEvent::Telemetry { t, msg } => {
            step.s.health.battery_pct = step.s.health.battery_pct.min(msg.bat as f64);
            step.s.health.last_telemetry_t = *t;
            step.s.health.link_up = true;
            step.s.height_cm = msg.h;
            step.check_battery(*t);
        }
        SessionEvent::Fix(fix) => {
            if fix.valid {
                step.s.latest_fix = Some(*fix);
                step.s.last_loc_t = step.s.last_loc_t.max(fix.fix_t);
            }
        }
        SessionEvent::Reply { t, reply } => step.reply(*t, reply),
        SessionEvent::Operator { t, cmd } => step.operator(*t, *cmd)?,
        SessionEvent::Tick { t } => step.tick(*t),
    }
    Ok((step.s, step.actions))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(s: &DroneSession, e: SessionEvent) -> (DroneSession, Vec<Action>) {
        session_step(s, &e, &ControllerConfig::default(), &SessionThresholds::default()).unwrap()
    }

    fn session_in(fsm: SessionFsm) -> DroneSession {
        let mut s = DroneSession::new(0, "10.0.0.11:8889".parse().unwrap(), 0.0);
        s.fsm = fsm;
        s.health.last_telemetry_t = 10.0;
        s
    }

    fn telemetry(bat: u8) -> TelemetryMsg {
        TelemetryMsg { pitch: 0, roll: 0, yaw: 0, vgx: 0, vgy: 0, vgz: 0, bat, h: 100, seq: 0 }
    }

    fn sends(actions: &[Action]) -> Vec<&CommandMsg> {
        actions.iter().filter_map(|a| if let Action::Send(m) = a { Some(m) } else { None }).collect()
    }

    #[test]
    fn ready_takeoff() {
        let (s, a) = run(&session_in(SessionFsm::Ready), SessionEvent::Operator { t: 1.0, cmd: DroneCommand::Takeoff });
        assert_eq!(s.fsm, SessionFsm::TakingOff);
        assert_eq!(sends(&a), vec![&CommandMsg::Takeoff]);
    }

    #[test]
    fn low_battery_lands() {
        let (s, a) = run(&session_in(SessionFsm::Flying), SessionEvent::Telemetry { t: 10.0, msg: telemetry(14) });
        assert_eq!(s.fsm, SessionFsm::Landing);
        assert_eq!(sends(&a), vec![&CommandMsg::Land]);
    }

    #[test]
    fn telemetry_gap_failsafe() {
        let mut s = session_in(SessionFsm::Flying);
        s.last_loc_t = 12.0;
        let (held, _) = run(&s, SessionEvent::Tick { t: 12.0 });
        assert_eq!(held.fsm, SessionFsm::Flying);
        let (s, a) = run(&s, SessionEvent::Tick { t: 12.1 });
        assert_eq!(s.fsm, SessionFsm::Failsafe);
        assert!(sends(&a).is_empty());
        // hover window then land
        let (still, _) = run(&s, SessionEvent::Tick { t: 15.0 });
        assert_eq!(still.fsm, SessionFsm::Failsafe);
        let (landing, a) = run(&s, SessionEvent::Tick { t: 15.2 });
        assert_eq!(landing.fsm, SessionFsm::Landing);
        assert_eq!(sends(&a), vec![&CommandMsg::Land]);
    }

    #[test]
    fn failsafe_recovers_when_link_returns() {
        let mut s = session_in(SessionFsm::Failsafe);
        s.state_since = 12.1;
        s.last_loc_t = 13.0;
        let (s, _) = run(&s, SessionEvent::Telemetry { t: 13.0, msg: telemetry(80) });
        let (s, _) = run(&s, SessionEvent::Tick { t: 13.05 });
        assert_eq!(s.fsm, SessionFsm::Flying);
    }

    #[test]
    fn illegal_commands_rejected() {
        let err = session_step(
            &session_in(SessionFsm::Flying),
            &SessionEvent::Operator { t: 1.0, cmd: DroneCommand::Takeoff },
            &ControllerConfig::default(),
            &SessionThresholds::default(),
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "takeoff while FLYING");
    }

    #[test]
    fn estop_from_anywhere() {
        for fsm in [SessionFsm::Idle, SessionFsm::Flying, SessionFsm::Failsafe, SessionFsm::Landing] {
            let (s, a) = run(&session_in(fsm), SessionEvent::Operator { t: 1.0, cmd: DroneCommand::Estop });
            assert_eq!(s.fsm, SessionFsm::Emergency);
            assert_eq!(sends(&a), vec![&CommandMsg::Emergency]);
        }
    }

    #[test]
    fn stale_fix_holds_with_zero_rc() {
        let mut s = session_in(SessionFsm::Flying);
        s.last_loc_t = 10.0;
        s.current_target = Some(Pose4::at(1.0, 0.0, 1.0));
        s.latest_fix = Some(PoseFix { drone_id: 0, pose: Pose4::at(0.0, 0.0, 1.0), frame_id: 1, fix_t: 10.0, valid: true });
        let (moving, a) = run(&s, SessionEvent::Tick { t: 10.05 });
        assert!(matches!(sends(&a)[0], CommandMsg::Rc(rc) if *rc != RcCommand::ZERO));
        let (_, a) = run(&moving, SessionEvent::Tick { t: 10.6 });
        assert_eq!(sends(&a), vec![&CommandMsg::Rc(RcCommand::ZERO)]);
    }
}
