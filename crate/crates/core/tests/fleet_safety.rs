use proptest::prelude::*;
use swarmlab_core::config::FleetConfig;
use swarmlab_core::endpoint::Reply;
use swarmlab_core::fleet::{session_step, Action, DroneCommand, DroneSession, SessionEvent, SessionFsm, SessionThresholds};
use swarmlab_core::localization::PoseFix;
use swarmlab_core::sim::{run_simulation, SimOptions};
use swarmlab_core::wire::{CommandMsg, TelemetryMsg};
use swarmlab_core::{ControllerConfig, Pose4, RcCommand};

#[derive(Debug, Clone)]
enum Kind {
    Telemetry(u8),
    Fix(bool, f64),
    Reply(bool),
    Operator(DroneCommand),
    Tick,
}

fn kind() -> impl Strategy<Value = Kind> {
    prop_oneof![
        4 => (0u8..=100).prop_map(Kind::Telemetry),
        4 => (any::<bool>(), 0.0f64..0.3).prop_map(|(v, lag)| Kind::Fix(v, lag)),
        3 => any::<bool>().prop_map(Kind::Reply),
        1 => prop_oneof![
            Just(DroneCommand::Connect),
            Just(DroneCommand::Takeoff),
            Just(DroneCommand::Land),
            Just(DroneCommand::Estop),
            Just(DroneCommand::Reset),
        ].prop_map(Kind::Operator),
        8 => Just(Kind::Tick),
    ]
}

fn schedule() -> impl Strategy<Value = Vec<(f64, Kind)>> {
    prop::collection::vec((0.0f64..0.8, kind()), 1..300)
}

/// Brings a fresh session to FLYING with a target so that control is live.
fn flying_session(th: &SessionThresholds, cfg: &ControllerConfig) -> DroneSession {
    let mut s = DroneSession::new(0, "10.0.0.11:8889".parse().unwrap(), 0.0);
    for e in [
        SessionEvent::Operator { t: 0.0, cmd: DroneCommand::Connect },
        SessionEvent::Reply { t: 0.01, reply: Reply::Ok },
        SessionEvent::Operator { t: 0.02, cmd: DroneCommand::Takeoff },
        SessionEvent::Reply { t: 0.03, reply: Reply::Ok },
    ] {
        s = session_step(&s, &e, cfg, th).unwrap().0;
    }
    s.current_target = Some(Pose4::new(1.0, 0.0, 1.0, 0.0, 0.0));
    s
}

fn rc_sent(actions: &[Action]) -> Vec<RcCommand> {
    actions
        .iter()
        .filter_map(|a| match a {
            Action::Send(CommandMsg::Rc(rc)) => Some(*rc),
            _ => None,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn safety_holds_over_random_schedules(start_flying in any::<bool>(), events in schedule()) {
        let th = SessionThresholds::default();
        let cfg = ControllerConfig::default();
        let mut s = if start_flying { flying_session(&th, &cfg) } else { DroneSession::new(0, "10.0.0.11:8889".parse().unwrap(), 0.0) };
        let mut t = 0.05;
        for (dt, k) in events {
            t += dt;
            let event = match k {
                Kind::Telemetry(bat) => SessionEvent::Telemetry { t, msg: TelemetryMsg { bat, h: 100, ..TelemetryMsg::default() } },
                Kind::Fix(valid, lag) => SessionEvent::Fix(PoseFix {
                    drone_id: 0, pose: Pose4::new(0.5, 0.0, 1.0, 0.0, t - lag), frame_id: 1, fix_t: t, valid,
                }),
                Kind::Reply(ok) => SessionEvent::Reply { t, reply: if ok { Reply::Ok } else { Reply::Error } },
                Kind::Operator(cmd) => SessionEvent::Operator { t, cmd },
                Kind::Tick => SessionEvent::Tick { t },
            };
            let Ok((next, actions)) = session_step(&s, &event, &cfg, &th) else { continue };

            // no rc leaves a session outside FLYING
            if !rc_sent(&actions).is_empty() {
                prop_assert_eq!(s.fsm, SessionFsm::Flying);
                prop_assert_eq!(next.fsm, SessionFsm::Flying);
            }
            // hold-on-stale: a stale fix commands a zero rc
            if next.fsm == SessionFsm::Flying && matches!(event, SessionEvent::Tick { .. }) && !s.fix_is_fresh(t, th.t_fix_stale) {
                prop_assert!(rc_sent(&actions).iter().all(|rc| *rc == RcCommand::ZERO));
            }
            match &event {
                SessionEvent::Tick { .. } if matches!(s.fsm, SessionFsm::Flying | SessionFsm::Failsafe) => {
                    if s.health.battery_pct < th.batt_land_pct {
                        prop_assert_eq!(next.fsm, SessionFsm::Landing);
                    } else if s.fsm == SessionFsm::Flying && t - s.health.last_telemetry_t > th.t_link_lost {
                        prop_assert_eq!(next.fsm, SessionFsm::Failsafe);
                    }
                }
                SessionEvent::Telemetry { msg, .. }
                    if matches!(s.fsm, SessionFsm::Flying | SessionFsm::Failsafe) && (msg.bat as f64) < th.batt_land_pct =>
                {
                    prop_assert_eq!(next.fsm, SessionFsm::Landing);
                }
                SessionEvent::Operator { cmd: DroneCommand::Estop, .. } => {
                    prop_assert_eq!(next.fsm, SessionFsm::Emergency);
                    prop_assert!(rc_sent(&actions).is_empty());
                }
                _ => {}
            }
            // emergency is left only through an explicit reset
            if s.fsm == SessionFsm::Emergency && next.fsm != SessionFsm::Emergency {
                let reset = matches!(event, SessionEvent::Operator { cmd: DroneCommand::Reset, .. });
                prop_assert!(reset);
            }
            // battery knowledge never goes up
            prop_assert!(next.health.battery_pct <= s.health.battery_pct);
            s = next;
        }
    }
}

#[test]
fn no_rc_leakage_in_full_runs_under_outages() {
    let mut cfg = FleetConfig::default();
    cfg.links.wireless = cfg.links.wireless.clone().with_periodic_outage(5.0, 7.0, 2.5);
    for seed in 0..5 {
        let (sim, report) = run_simulation(&cfg, seed, SimOptions::mission(), 150.0).unwrap();
        for d in &report.drones {
            assert_eq!(d.rc_outside_flying, 0, "seed {seed} drone {}", d.drone_id);
        }
        assert!(sim.stats().iter().all(|s| s.rc_sent > 0));
    }
}

#[test]
fn waypoint_index_never_decreases() {
    use swarmlab_core::fleet::{FleetNotice, MissionEvent};
    use swarmlab_core::sim::Simulation;
    let mut sim = Simulation::new(&FleetConfig::default(), 4, SimOptions::mission()).unwrap();
    let mut last = [0usize; 3];
    while sim.finished().is_none() && sim.now() < 120.0 {
        sim.step();
        for n in sim.drain_notices() {
            if let FleetNotice::Mission(MissionEvent::WaypointReached { drone_id, index, .. }) = n {
                assert!(index >= last[drone_id as usize]);
                last[drone_id as usize] = index;
            }
        }
        if let Some(m) = sim.fleet().mission() {
            for (i, p) in m.progress.iter().enumerate() {
                assert!(p.index >= last[i]);
            }
        }
    }
    assert!(last.iter().all(|&i| i > 0));
}
