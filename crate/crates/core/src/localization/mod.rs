//! Localization: a stateless per-frame relocalizer and a sequential estimator.
//!
//! The per-frame path ([`mle_fix`]) is a noise oracle gated on frame delivery.
//! Each fix is a pure function of its own inputs and a random stream keyed by
//! `(seed, drone_id, frame_id)`, so event interleaving never changes a result.
//! The sequential path ([`map_step`]) fuses odometry with fixes and can lose
//! track, and occasionally fail to re-associate, when fixes stop arriving.

mod map;
mod trajectory;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::Pose4;

pub use map::{map_step, MapEstimatorState, MapParams, MapStatus};
pub use trajectory::{read_trajectory, write_trajectory, TrajectorySample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocError {
    #[error("estimator step dt={0} must be positive")]
    BadDt(f64),
    #[error("invalid localization parameter: {0}")]
    InvalidParam(String),
    #[error("trajectory line {line}: {reason}")]
    Trajectory { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalizationMode {
    #[default]
    Mle,
    Map,
}

impl LocalizationMode {
    pub fn label(&self) -> &'static str {
        match self {
            LocalizationMode::Mle => "MLE",
            LocalizationMode::Map => "MAP",
        }
    }
}

/// One localization result. `pose.t` is the capture time of the frame it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseFix {
    pub drone_id: u32,
    pub pose: Pose4,
    pub frame_id: u32,
    pub fix_t: f64,
    pub valid: bool,
}

impl PoseFix {
    pub fn invalid(drone_id: u32, t: f64) -> Self {
        Self { drone_id, pose: Pose4::default().with_t(t), frame_id: 0, fix_t: t, valid: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleNoise {
    pub sigma_pos: f64,
    pub sigma_yaw: f64,
    pub p_fail: f64,
    /// Mean processing delay; each frame draws uniformly from `[0.5, 1.5] * mean`.
    pub proc_latency_ms: f64,
}

impl Default for OracleNoise {
    fn default() -> Self {
        Self { sigma_pos: 0.02, sigma_yaw: 1.0, p_fail: 0.02, proc_latency_ms: 50.0 }
    }
}

impl OracleNoise {
    pub fn exact() -> Self {
        Self { sigma_pos: 0.0, sigma_yaw: 0.0, p_fail: 0.0, proc_latency_ms: 0.0 }
    }

    pub fn validate(&self) -> Result<(), LocError> {
        let ok = self.sigma_pos.is_finite()
            && self.sigma_pos >= 0.0
            && self.sigma_yaw.is_finite()
            && self.sigma_yaw >= 0.0
            && (0.0..=1.0).contains(&self.p_fail)
            && self.proc_latency_ms.is_finite()
            && self.proc_latency_ms >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(LocError::InvalidParam(format!("oracle noise {self:?}")))
        }
    }
}

/// A complete frame handed to the localizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameArrival {
    pub drone_id: u32,
    pub frame_id: u32,
    pub capture_t: f64,
    pub arrival_t: f64,
}

/// The random stream owned by one frame.
pub fn frame_rng(seed: u64, drone_id: u32, frame_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((drone_id as u64) << 32) | frame_id as u64);
    rng
}

/// Per-frame relocalization. `ground_truth` is the drone's pose at the frame's capture time.
pub fn mle_fix<R: Rng + ?Sized>(
    ground_truth: &Pose4,
    frame: &FrameArrival,
    noise: &OracleNoise,
    rng: &mut R,
) -> Option<PoseFix> {
    // draw order is fixed so every frame consumes its stream identically
    let fail: f64 = rng.random();
    let n = [
        gaussian(rng, noise.sigma_pos),
        gaussian(rng, noise.sigma_pos),
        gaussian(rng, noise.sigma_pos),
        gaussian(rng, noise.sigma_yaw),
    ];
    let latency_ms = noise.proc_latency_ms * (0.5 + rng.random::<f64>());
    if fail < noise.p_fail {
        return None;
    }
    let pose = Pose4::new(
        ground_truth.x + n[0],
        ground_truth.y + n[1],
        ground_truth.z + n[2],
        ground_truth.yaw + n[3],
        frame.capture_t,
    );
    Some(PoseFix {
        drone_id: frame.drone_id,
        pose,
        frame_id: frame.frame_id,
        fix_t: frame.arrival_t + latency_ms / 1000.0,
        valid: true,
    })
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma checked positive").sample(rng)
    } else {
        let _: f64 = rng.sample(rand_distr::StandardNormal);
        0.0
    }
}

/// Admits frames to a compute-bound localizer at most `cap_hz` times per second.
///
/// Admission slots are phase-locked: while frames are plentiful the slot
/// anchor advances by exactly one period per admission, so the long-run rate
/// equals the cap instead of being quantized to the frame grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCap {
    period: f64,
    anchor: Option<f64>,
}

impl RateCap {
    pub fn new(cap_hz: f64) -> Self {
        Self { period: if cap_hz > 0.0 { 1.0 / cap_hz } else { f64::INFINITY }, anchor: None }
    }

    pub fn admit(&mut self, t: f64) -> bool {
        match self.anchor {
            None => {
                self.anchor = Some(t);
                true
            }
            Some(a) => {
                let slot = a + self.period;
                if t < slot {
                    return false;
                }
                self.anchor = Some(if t - slot < self.period { slot } else { t });
                true
            }
        }
    }
}

/// Achieved fix rate (Hz) for frames arriving at `arrivals` over a window of `duration_s`.
pub fn run_localizer_rate(arrivals: &[f64], cap_hz: f64, duration_s: f64) -> f64 {
    if duration_s <= 0.0 {
        return 0.0;
    }
    let mut cap = RateCap::new(cap_hz);
    arrivals.iter().filter(|&&t| cap.admit(t)).count() as f64 / duration_s
}
