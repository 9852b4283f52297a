use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::config::FleetConfig;
use crate::localization::LocalizationMode;
use crate::sim::{run_simulation, Finish, RunReport, SimOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureReason {
    GlobalAssociation,
    NoLocalization,
    TrackingError,
    Aborted,
    Timeout,
}

impl FailureReason {
    pub fn label(&self) -> &'static str {
        match self {
            Self::GlobalAssociation => "global association failure",
            Self::NoLocalization => "no localization",
            Self::TrackingError => "tracking error",
            Self::Aborted => "aborted",
            Self::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    pub failure: Option<FailureReason>,
    /// Per-drone APE RMSE in meters; `None` when the drone never associated.
    pub ape_rmse: Vec<Option<f64>>,
    pub max_loc_error: Vec<f64>,
    pub fix_rate_hz: Vec<f64>,
    pub bitrate_mbps: Vec<f64>,
    pub duration_s: f64,
}

impl TrialOutcome {
    pub fn success(&self) -> bool {
        self.failure.is_none()
    }

    fn from_report(report: &RunReport, threshold_m: f64) -> Self {
        let failure = if report.drones.iter().any(|d| d.failed_global) {
            Some(FailureReason::GlobalAssociation)
        } else if report.drones.iter().any(|d| !d.ever_fixed) {
            Some(FailureReason::NoLocalization)
        } else if report.drones.iter().any(|d| d.max_loc_error >= threshold_m) {
            Some(FailureReason::TrackingError)
        } else {
            match report.finish {
                Finish::Complete if report.mission_complete() => None,
                Finish::Timeout => Some(FailureReason::Timeout),
                _ => Some(FailureReason::Aborted),
            }
        };
        Self {
            seed: report.seed,
            failure,
            ape_rmse: report.drones.iter().map(|d| d.ape.map(|a| a.rmse)).collect(),
            max_loc_error: report.drones.iter().map(|d| d.max_loc_error).collect(),
            fix_rate_hz: report.drones.iter().map(|d| d.fix_rate_hz).collect(),
            bitrate_mbps: report.drones.iter().map(|d| d.bitrate_mbps).collect(),
            duration_s: report.duration_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub mode: LocalizationMode,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Failure label to count.
    pub failures: BTreeMap<String, usize>,
    pub outcomes: Vec<TrialOutcome>,
}

impl SuccessReport {
    fn drones(&self) -> usize {
        self.outcomes.first().map_or(0, |o| o.ape_rmse.len())
    }

    fn mean_over(&self, pick: impl Fn(&TrialOutcome) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.outcomes.iter().filter_map(&pick).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean APE RMSE of one drone over successful trials; `None` when no trial succeeded.
    pub fn mean_ape(&self, drone: usize) -> Option<f64> {
        self.mean_over(|o| if o.success() { o.ape_rmse[drone] } else { None })
    }

    pub fn mean_fix_rate(&self, drone: usize) -> f64 {
        self.mean_over(|o| Some(o.fix_rate_hz[drone])).unwrap_or(0.0)
    }

    /// Mean video bitrate per drone, Mbps.
    pub fn mean_bitrate(&self) -> f64 {
        let n = self.drones();
        if n == 0 {
            return 0.0;
        }
        (0..n).map(|d| self.mean_over(|o| Some(o.bitrate_mbps[d])).unwrap_or(0.0)).sum::<f64>() / n as f64
    }

    pub fn ape_per_drone(&self) -> Vec<Option<f64>> {
        (0..self.drones()).map(|d| self.mean_ape(d)).collect()
    }
}

/// Seed of trial `k`, derived from the experiment seed by a splitmix64 step.
pub fn trial_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Flies the configured mission `trials` times under `mode` and scores each run.
pub fn run_success_experiment(
    config: &FleetConfig,
    mode: LocalizationMode,
    trials: usize,
    seed: u64,
) -> Result<SuccessReport, MetricsError> {
    if trials == 0 {
        return Err(MetricsError::NoTrials);
    }
    let mut config = config.clone();
    config.localization.mode = mode;
    config.validate().map_err(|e| MetricsError::Scenario(e.to_string()))?;
    let threshold = config.mission.success_threshold_m;
    let horizon = config.mission.timeout_s;
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let (_, report) = run_simulation(&config, trial_seed(seed, k), SimOptions::trial(), horizon)
                .expect("scenario validated above");
            TrialOutcome::from_report(&report, threshold)
        })
        .collect();
    let mut failures = BTreeMap::new();
    for f in outcomes.iter().filter_map(|o| o.failure) {
        *failures.entry(f.label().to_string()).or_insert(0) += 1;
    }
    let successes = outcomes.iter().filter(|o| o.success()).count();
    Ok(SuccessReport { mode, trials, successes, success_rate: successes as f64 / trials as f64, failures, outcomes })
}

/// Both localizers over the same trial seeds.
pub fn compare_localizers(
    config: &FleetConfig,
    trials: usize,
    seed: u64,
) -> Result<(SuccessReport, SuccessReport), MetricsError> {
    Ok((
        run_success_experiment(config, LocalizationMode::Mle, trials, seed)?,
        run_success_experiment(config, LocalizationMode::Map, trials, seed)?,
    ))
}
