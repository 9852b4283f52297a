//! One-way delay distributions.
//!
//! The shifted lognormal is `min + L` with `L` lognormal, truncated at
//! `max - min` by rejection. Sigma puts the truncation bound at the 99.9th
//! percentile of the untruncated tail; mu is then solved so that the
//! truncated mean hits `mean` exactly.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::FabricError;

/// Standard normal quantile of the truncation bound.
const TAIL_Z: f64 = 3.090_232_306_167_813;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JitterShape {
    Fixed,
    #[default]
    ShiftedLognormal,
}

/// `(min, mean, max)` in milliseconds plus the distribution family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    pub min_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
    #[serde(default)]
    pub shape: JitterShape,
}

impl DelayModel {
    pub fn fixed(ms: f64) -> Self {
        Self { min_ms: ms, mean_ms: ms, max_ms: ms, shape: JitterShape::Fixed }
    }

    pub fn shifted_lognormal(min_ms: f64, mean_ms: f64, max_ms: f64) -> Self {
        Self { min_ms, mean_ms, max_ms, shape: JitterShape::ShiftedLognormal }
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        let ok = [self.min_ms, self.mean_ms, self.max_ms].iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.min_ms <= self.mean_ms
            && self.mean_ms <= self.max_ms;
        if ok {
            Ok(())
        } else {
            Err(FabricError::InvalidProfile(format!(
                "delay needs 0 <= min <= mean <= max, got ({}, {}, {})",
                self.min_ms, self.mean_ms, self.max_ms
            )))
        }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Mean of a lognormal(mu, sigma) conditioned on being at most `cap`.
fn truncated_lognormal_mean(mu: f64, sigma: f64, cap: f64) -> f64 {
    let lc = cap.ln();
    let num = (mu + 0.5 * sigma * sigma).exp() * std_normal_cdf((lc - mu - sigma * sigma) / sigma);
    let den = std_normal_cdf((lc - mu) / sigma);
    num / den
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Constant(f64),
    Lognormal { shift: f64, mu: f64, sigma: f64, cap: f64 },
}

/// Calibrated sampler for a [`DelayModel`]; samples are in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaySampler {
    kind: Kind,
}

impl DelaySampler {
    pub fn new(model: &DelayModel) -> Result<Self, FabricError> {
        model.validate()?;
        let excess = model.mean_ms - model.min_ms;
        let cap = model.max_ms - model.min_ms;
        let kind = match model.shape {
            JitterShape::Fixed => Kind::Constant(model.mean_ms),
            JitterShape::ShiftedLognormal if excess <= 1e-12 || cap - excess <= 1e-12 => Kind::Constant(model.mean_ms),
            JitterShape::ShiftedLognormal => {
                // ln(cap / excess) = z * sigma - sigma^2 / 2, smaller root
                let ratio = (cap / excess).ln();
                let disc = TAIL_Z * TAIL_Z - 2.0 * ratio;
                let sigma = if disc > 0.0 { TAIL_Z - disc.sqrt() } else { TAIL_Z };
                let (mut lo, mut hi) = (excess.ln() - 20.0, cap.ln() + 5.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if truncated_lognormal_mean(mid, sigma, cap) < excess {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Kind::Lognormal { shift: model.min_ms, mu: 0.5 * (lo + hi), sigma, cap }
            }
        };
        Ok(Self { kind })
    }

    /// Mean of the calibrated distribution in ms.
    pub fn mean_ms(&self) -> f64 {
        match self.kind {
            Kind::Constant(c) => c,
            Kind::Lognormal { shift, mu, sigma, cap } => shift + truncated_lognormal_mean(mu, sigma, cap),
        }
    }

    pub fn sample_ms<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            Kind::Constant(c) => c,
            Kind::Lognormal { shift, mu, sigma, cap } => loop {
                let z: f64 = rng.sample(StandardNormal);
                let excess = (mu + sigma * z).exp();
                if excess <= cap {
                    return shift + excess;
                }
            },
        }
    }
}
