use rand::Rng;
use serde::{Deserialize, Serialize};

use super::delay::{DelayModel, DelaySampler, JitterShape};
use super::{DropReason, FabricError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub start_s: f64,
    pub duration_s: f64,
}

impl Outage {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.start_s + self.duration_s
    }
}

/// `duration_s` of silence every `period_s`, starting at `first_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodicOutage {
    pub first_s: f64,
    pub period_s: f64,
    pub duration_s: f64,
}

impl PeriodicOutage {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.first_s && (t - self.first_s).rem_euclid(self.period_s) < self.duration_s
    }
}

/// Seeded random outages: exponential gaps with mean `mean_gap_s`, generated up to `horizon_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomOutage {
    pub mean_gap_s: f64,
    pub duration_s: f64,
    #[serde(default = "default_horizon")]
    pub horizon_s: f64,
}

fn default_horizon() -> f64 {
    3600.0
}

impl RandomOutage {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Outage> {
        let mut out = Vec::new();
        let mut t = 0.0;
        loop {
            let u: f64 = rng.random();
            t += -self.mean_gap_s * (1.0 - u).ln();
            if t >= self.horizon_s {
                return out;
            }
            out.push(Outage { start_s: t, duration_s: self.duration_s });
            t += self.duration_s;
        }
    }
}

fn default_queue_limit() -> f64 {
    100.0
}

fn default_burst() -> usize {
    16 * 1024
}

/// Impairment profile of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkProfile {
    pub delay_min_ms: f64,
    pub delay_mean_ms: f64,
    pub delay_max_ms: f64,
    #[serde(default)]
    pub jitter_shape: JitterShape,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub outages: Vec<Outage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic_outage: Option<PeriodicOutage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_outage: Option<RandomOutage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_cap_mbps: Option<f64>,
    /// Datagrams that would wait longer than this behind the bandwidth cap are dropped.
    #[serde(default = "default_queue_limit")]
    pub queue_limit_ms: f64,
    #[serde(default = "default_burst")]
    pub burst_bytes: usize,
}

impl LinkProfile {
    pub fn fixed(delay_ms: f64) -> Self {
        Self::from_delay(DelayModel::fixed(delay_ms))
    }

    pub fn from_delay(delay: DelayModel) -> Self {
        Self {
            delay_min_ms: delay.min_ms,
            delay_mean_ms: delay.mean_ms,
            delay_max_ms: delay.max_ms,
            jitter_shape: delay.shape,
            loss_prob: 0.0,
            outages: Vec::new(),
            periodic_outage: None,
            random_outage: None,
            bandwidth_cap_mbps: None,
            queue_limit_ms: default_queue_limit(),
            burst_bytes: default_burst(),
        }
    }

    /// Calibrated wired hop (PC to relay, UDP over Ethernet).
    pub fn calibrated_wired() -> Self {
        Self::from_delay(DelayModel::shifted_lognormal(0.15, 0.89, 1.75))
    }

    /// Calibrated wireless hop (relay to drone, UDP over Wi-Fi).
    pub fn calibrated_wireless() -> Self {
        Self::from_delay(DelayModel::shifted_lognormal(4.14, 25.9, 66.3))
    }

    pub fn with_loss(mut self, p: f64) -> Self {
        self.loss_prob = p;
        self
    }

    pub fn with_periodic_outage(mut self, first_s: f64, period_s: f64, duration_s: f64) -> Self {
        self.periodic_outage = Some(PeriodicOutage { first_s, period_s, duration_s });
        self
    }

    pub fn with_bandwidth_cap(mut self, mbps: f64) -> Self {
        self.bandwidth_cap_mbps = Some(mbps);
        self
    }

    pub fn delay(&self) -> DelayModel {
        DelayModel {
            min_ms: self.delay_min_ms,
            mean_ms: self.delay_mean_ms,
            max_ms: self.delay_max_ms,
            shape: self.jitter_shape,
        }
    }

    pub fn validate(&self) -> Result<(), FabricError> {
        self.delay().validate()?;
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(FabricError::InvalidProfile(format!("loss_prob {} not in [0, 1]", self.loss_prob)));
        }
        if let Some(cap) = self.bandwidth_cap_mbps {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(FabricError::InvalidProfile(format!("bandwidth_cap_mbps {cap} must be positive")));
            }
        }
        if let Some(p) = self.periodic_outage {
            if !(p.period_s > 0.0 && p.duration_s >= 0.0 && p.duration_s <= p.period_s) {
                return Err(FabricError::InvalidProfile("periodic outage needs 0 <= duration <= period".into()));
            }
        }
        if let Some(r) = self.random_outage {
            if !(r.mean_gap_s > 0.0 && r.duration_s >= 0.0 && r.horizon_s > 0.0) {
                return Err(FabricError::InvalidProfile("random outage needs positive gap and horizon".into()));
            }
        }
        if self.outages.iter().any(|o| !(o.duration_s >= 0.0 && o.start_s.is_finite())) {
            return Err(FabricError::InvalidProfile("outage windows need finite start and duration >= 0".into()));
        }
        Ok(())
    }
}

/// Per-direction queue state of a link.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct DirectionState {
    /// Delivery time of the previous datagram; keeps the link FIFO.
    last_delivery: f64,
    /// Theoretical arrival time of the token bucket (GCRA form).
    tat: f64,
}

/// A link with its calibrated sampler, resolved outage windows and per-direction state.
#[derive(Debug, Clone)]
pub(crate) struct Link {
    pub(crate) profile: LinkProfile,
    sampler: DelaySampler,
    windows: Vec<Outage>,
    dirs: [DirectionState; 2],
}

impl Link {
    pub(crate) fn new<R: Rng + ?Sized>(profile: LinkProfile, rng: &mut R) -> Result<Self, FabricError> {
        profile.validate()?;
        let sampler = DelaySampler::new(&profile.delay())?;
        let mut windows = profile.outages.clone();
        if let Some(r) = profile.random_outage {
            windows.extend(r.generate(rng));
        }
        Ok(Self { profile, sampler, windows, dirs: [DirectionState::default(); 2] })
    }

    pub(crate) fn reset_queues(&mut self) {
        self.dirs = [DirectionState::default(); 2];
    }

    pub(crate) fn in_outage(&self, t: f64) -> bool {
        self.windows.iter().any(|w| w.contains(t)) || self.profile.periodic_outage.is_some_and(|p| p.contains(t))
    }

    /// Pushes one datagram of `size` bytes entering at `t_enter` in direction `dir`.
    pub(crate) fn traverse<R: Rng + ?Sized>(
        &mut self,
        dir: usize,
        t_enter: f64,
        size: usize,
        rng: &mut R,
    ) -> Result<f64, DropReason> {
        if self.in_outage(t_enter) {
            return Err(DropReason::Outage);
        }
        if self.profile.loss_prob > 0.0 && rng.random::<f64>() < self.profile.loss_prob {
            return Err(DropReason::Loss);
        }
        let state = &mut self.dirs[dir];
        let mut t = t_enter;
        if let Some(mbps) = self.profile.bandwidth_cap_mbps {
            let bytes_per_s = mbps * 1e6 / 8.0;
            let emission = size as f64 / bytes_per_s;
            let tolerance = self.profile.burst_bytes as f64 / bytes_per_s;
            let depart = t.max(state.tat - tolerance);
            if (depart - t) * 1000.0 > self.profile.queue_limit_ms {
                return Err(DropReason::QueueOverflow);
            }
            state.tat = state.tat.max(t) + emission;
            t = depart;
        }
        let arrival = (t + self.sampler.sample_ms(rng) / 1000.0).max(state.last_delivery);
        state.last_delivery = arrival;
        Ok(arrival)
    }
}
