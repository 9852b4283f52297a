use proptest::prelude::*;
use swarmlab_core::config::FleetConfig;
use swarmlab_core::fabric::{build_fabric, probe_one_way, DelayModel, LinkProfile, ProbePath, ProbeSpec, Topology};
use swarmlab_core::localization::LocalizationMode;
use swarmlab_core::metrics::{associate, compute_ape, latency_stats, run_success_experiment};
use swarmlab_core::Pose4;

fn trajectory() -> impl Strategy<Value = Vec<Pose4>> {
    prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.0f64..3.0), 1..60).prop_map(|pts| {
        pts.into_iter().enumerate().map(|(k, (x, y, z))| Pose4::new(x, y, z, 0.0, k as f64 * 0.1)).collect()
    })
}

fn shift(traj: &[Pose4], dt: f64) -> Vec<Pose4> {
    traj.iter().map(|p| p.with_t(p.t + dt)).collect()
}

proptest! {
    #[test]
    fn ape_of_self_is_zero(traj in trajectory()) {
        let a = compute_ape(&associate(&traj, &traj, 50.0).unwrap());
        prop_assert_eq!(a.rmse, 0.0);
        prop_assert_eq!(a.count, traj.len());
    }

    #[test]
    fn ape_ignores_common_time_shift(est in trajectory(), reference in trajectory(), dt in -100.0f64..100.0) {
        let base = associate(&est, &reference, 50.0).map(|p| compute_ape(&p));
        let moved = associate(&shift(&est, dt), &shift(&reference, dt), 50.0).map(|p| compute_ape(&p));
        match (base, moved) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.count, b.count);
                prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
            }
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn latency_stats_matches_brute_force(samples in prop::collection::vec(0.0f64..500.0, 1..400)) {
        let r = latency_stats(&samples).unwrap();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &s in &samples {
            min = min.min(s);
            max = max.max(s);
            sum += s;
        }
        let mean = sum / samples.len() as f64;
        let mut sq = 0.0;
        for &s in &samples {
            sq += (s - mean) * (s - mean);
        }
        let std = (sq / samples.len() as f64).sqrt();
        prop_assert_eq!((r.min, r.max, r.mean, r.std, r.count), (min, max, mean, std, samples.len()));
    }
}

#[test]
fn replayed_video_latency_profile_reproduces_recorded_mean() {
    // one link shaped like the recorded end-to-end video latency
    let video = DelayModel::shifted_lognormal(99.277, 174.505, 218.526);
    let topo = Topology::uniform(1, LinkProfile::fixed(0.0), LinkProfile::from_delay(video), DelayModel::fixed(0.0));
    let fabric = build_fabric(&topo, 5).unwrap();
    let samples = probe_one_way(&fabric, ProbePath::Wireless(0), &ProbeSpec::new(10_000), 5).unwrap();
    let r = latency_stats(&samples).unwrap();
    assert!((r.mean - 174.505).abs() / 174.505 < 0.05, "{r:?}");
    assert!(r.min >= 99.277 && r.max <= 218.526);
}

#[test]
fn ideal_conditions_always_succeed() {
    let cfg = FleetConfig::default();
    let report = run_success_experiment(&cfg, LocalizationMode::Mle, 20, 42).unwrap();
    assert_eq!(report.success_rate, 1.0, "{:?}", report.failures);
    assert!(report.ape_per_drone().iter().all(|a| a.is_some_and(|v| v < 0.06)));
}

#[test]
fn no_fixes_means_no_localization() {
    let mut cfg = FleetConfig::default();
    cfg.localization.noise.p_fail = 1.0;
    let report = run_success_experiment(&cfg, LocalizationMode::Mle, 3, 1).unwrap();
    assert_eq!(report.success_rate, 0.0);
    assert_eq!(report.failures.get("no localization"), Some(&3));
}

#[test]
fn experiment_is_deterministic() {
    let mut cfg = FleetConfig::default();
    cfg.links.wireless = cfg.links.wireless.clone().with_periodic_outage(8.0, 10.0, 2.0);
    for mode in [LocalizationMode::Mle, LocalizationMode::Map] {
        let a = run_success_experiment(&cfg, mode, 6, 9).unwrap();
        let b = run_success_experiment(&cfg, mode, 6, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.success_rate, a.successes as f64 / a.trials as f64);
    }
}

#[test]
fn invalid_scenario_is_an_error() {
    let mut cfg = FleetConfig::default();
    cfg.drones.count = 0;
    assert!(run_success_experiment(&cfg, LocalizationMode::Mle, 1, 1).is_err());
}
