//! Evaluation: trajectory association, absolute pose error, latency
//! statistics, the localizer success experiment and plain-text tables.

mod experiment;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::Pose4;

pub use experiment::{compare_localizers, run_success_experiment, trial_seed, FailureReason, SuccessReport, TrialOutcome};
pub use table::{comparison_table, latency_table, stream_table, ComparisonRow, LatencyRow};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("disjoint trajectories")]
    Disjoint,
    #[error("no samples")]
    Empty,
    #[error("trajectory not time-sorted at index {0}")]
    Unsorted(usize),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// Estimated and reference trajectories with their timestamp matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajPair {
    pub est: Vec<Pose4>,
    #[serde(rename = "ref")]
    pub reference: Vec<Pose4>,
    /// `(est index, ref index)` pairs.
    pub associations: Vec<(usize, usize)>,
    /// Estimate samples without a reference sample within tolerance.
    pub unmatched: usize,
}

fn check_sorted(traj: &[Pose4]) -> Result<(), MetricsError> {
    match traj.windows(2).position(|w| w[1].t < w[0].t) {
        Some(i) => Err(MetricsError::Unsorted(i + 1)),
        None => Ok(()),
    }
}

/// Matches every estimate to the reference sample nearest in time, if within `tol_ms`.
pub fn associate(est: &[Pose4], reference: &[Pose4], tol_ms: f64) -> Result<TrajPair, MetricsError> {
    check_sorted(est)?;
    check_sorted(reference)?;
    let tol = tol_ms / 1000.0;
    let mut associations = Vec::new();
    for (i, e) in est.iter().enumerate() {
        let k = reference.partition_point(|r| r.t < e.t);
        let candidates = [k.checked_sub(1), (k < reference.len()).then_some(k)];
        let best = candidates
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (reference[a].t - e.t).abs().total_cmp(&(reference[b].t - e.t).abs()));
        if let Some(j) = best {
            if (reference[j].t - e.t).abs() <= tol + 1e-12 {
                associations.push((i, j));
            }
        }
    }
    if associations.is_empty() {
        return Err(MetricsError::Disjoint);
    }
    Ok(TrajPair {
        est: est.to_vec(),
        reference: reference.to_vec(),
        unmatched: est.len() - associations.len(),
        associations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApeStats {
    pub rmse: f64,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

fn ape_of(errors: impl Iterator<Item = f64>) -> ApeStats {
    let (mut sum, mut sq, mut max, mut count) = (0.0, 0.0, 0.0f64, 0usize);
    for e in errors {
        sum += e;
        sq += e * e;
        max = max.max(e);
        count += 1;
    }
    if count == 0 {
        return ApeStats { rmse: 0.0, mean: 0.0, max: 0.0, count: 0 };
    }
    ApeStats { rmse: (sq / count as f64).sqrt(), mean: sum / count as f64, max, count }
}

/// Translational error over associated pairs, in the shared world frame.
pub fn compute_ape(pair: &TrajPair) -> ApeStats {
    ape_of(pair.associations.iter().map(|&(i, j)| pair.est[i].distance(&pair.reference[j])))
}

/// Diagnostic variant: removes the mean translational offset before measuring.
pub fn compute_ape_aligned(pair: &TrajPair) -> ApeStats {
    let n = pair.associations.len().max(1) as f64;
    let mut offset = [0.0; 3];
    for &(i, j) in &pair.associations {
        let (e, r) = (pair.est[i].position(), pair.reference[j].position());
        for k in 0..3 {
            offset[k] += (r[k] - e[k]) / n;
        }
    }
    ape_of(pair.associations.iter().map(|&(i, j)| {
        let (e, r) = (pair.est[i].position(), pair.reference[j].position());
        (0..3).map(|k| (e[k] + offset[k] - r[k]).powi(2)).sum::<f64>().sqrt()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

pub fn latency_stats(samples: &[f64]) -> Result<LatencyReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let (min, max) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    Ok(LatencyReport { min, max, mean: mean.clamp(min, max), std: var.sqrt(), count: samples.len() })
}
