use proptest::prelude::*;
use swarmlab_core::config::FleetConfig;
use swarmlab_core::control::body_to_world;
use swarmlab_core::endpoint::PlantParams;
use swarmlab_core::fleet::{plan_letter_trajectory, Letter, LetterGeometry};
use swarmlab_core::localization::{read_trajectory, write_trajectory};
use swarmlab_core::sim::{run_simulation, step_response, Finish, SimOptions, StepDrive};
use swarmlab_core::{ControllerConfig, Pose4};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn body_commands_equivariant_under_yaw(yaw in -180.0f64..180.0, dx in -2.0f64..2.0, dy in -2.0f64..2.0, dz in -0.5f64..0.5) {
        let fly = |psi: f64| step_response(
            &ControllerConfig::default(),
            &PlantParams::default(),
            Pose4::new(0.0, 0.0, 1.0, psi, 0.0),
            Pose4::new(dx, dy, 1.0 + dz, psi, 0.0),
            4.0,
            StepDrive::Continuous,
        );
        let base = fly(0.0);
        let turned = fly(yaw);
        prop_assert_eq!(base.body.len(), turned.body.len());
        for (a, b) in base.body.iter().zip(&turned.body) {
            let w = body_to_world(yaw, [b.vx_b, b.vy_b]);
            prop_assert!((w[0] - a.vx_b).abs() < 1e-6 && (w[1] - a.vy_b).abs() < 1e-6);
            prop_assert!((a.vz_b - b.vz_b).abs() < 1e-6 && (a.yaw_rate - b.yaw_rate).abs() < 1e-6);
        }
    }
}

#[test]
fn unit_step_settles_without_large_overshoot() {
    for target in [Pose4::new(1.0, 0.0, 1.0, 0.0, 0.0), Pose4::new(0.0, -1.0, 1.0, 0.0, 0.0), Pose4::new(0.0, 0.0, 2.0, 0.0, 0.0)] {
        let r = step_response(
            &ControllerConfig::default(),
            &PlantParams::default(),
            Pose4::new(0.0, 0.0, 1.0, 0.0, 0.0),
            target,
            10.0,
            StepDrive::Rc,
        );
        assert!(r.final_error < 0.05 && r.overshoot < 0.3, "{target:?}: {} {}", r.final_error, r.overshoot);
    }
}

/// Hand count: each segment of length L adds ceil(L / spacing) points after its start;
/// the T's stem starts on the bar's midpoint, which is already a waypoint.
#[test]
fn letter_waypoint_counts() {
    let geo = LetterGeometry::default();
    let (w, h, sp) = (geo.width, geo.height, geo.spacing);
    let steps = |len: f64| (len / sp - 1e-9).ceil() as usize;
    let diag = (w * w + h * h).sqrt();
    let n = 1 + steps(h) + steps(diag) + steps(h);
    let t = 1 + steps(w) + steps(h);
    let u = 1 + steps(h) + steps(w) + steps(h);
    assert_eq!((n, t, u), (33, 17, 27));
    let origin = Pose4::at(0.0, 0.0, geo.base_z);
    assert_eq!(plan_letter_trajectory(Letter::N, &origin, w, h, sp).unwrap().len(), n);
    assert_eq!(plan_letter_trajectory(Letter::T, &origin, w, h, sp).unwrap().len(), t);
    assert_eq!(plan_letter_trajectory(Letter::U, &origin, w, h, sp).unwrap().len(), u);
}

#[test]
fn mission_trajectories_round_trip_through_files() {
    let (sim, report) = run_simulation(&FleetConfig::default(), 8, SimOptions::mission(), 120.0).unwrap();
    assert_eq!(report.finish, Finish::Complete);
    for i in 0..3 {
        let est = sim.estimated_trajectory(i);
        assert!(est.len() > 100);
        let mut buf = Vec::new();
        write_trajectory(&mut buf, est).unwrap();
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back.len(), est.len());
        for (a, b) in back.iter().zip(est) {
            assert!(a.pose.distance(&b.pose) < 1e-6 && (a.pose.t - b.pose.t).abs() < 1e-6);
        }
    }
    let mut log = Vec::new();
    sim.write_fabric_log(&mut log).unwrap();
    let text = String::from_utf8(log).unwrap();
    let logged = text.lines().filter(|l| !l.starts_with('#')).count() as u64;
    assert_eq!(logged, report.datagrams_delivered + report.datagrams_dropped);
    assert!(report.datagrams_sent - logged < 100);
}

#[test]
fn effective_config_echo_reproduces_the_run() {
    let mut cfg = FleetConfig::default();
    cfg.links.wireless = cfg.links.wireless.clone().with_periodic_outage(6.0, 9.0, 1.0);
    let echoed = FleetConfig::from_toml(&cfg.to_toml()).unwrap();
    let (_, a) = run_simulation(&cfg, 21, SimOptions::mission(), 120.0).unwrap();
    let (_, b) = run_simulation(&echoed, 21, SimOptions::mission(), 120.0).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    let (_, c) = run_simulation(&cfg, 22, SimOptions::mission(), 120.0).unwrap();
    assert_ne!(a.to_text(), c.to_text());
}
