//! Shared domain types and the fleet-level state matrices.
//!
//! Row `i` of every matrix in [`FleetState`] refers to drone `i`. Yaw is in
//! degrees throughout, positive counter-clockwise seen from above, and kept in
//! `[-180, 180)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::compute_error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("fleet state needs at least one drone")]
    EmptyFleet,
    #[error("drone {drone}: pose timestamp {pose_t} is {skew:.4} s away from tick {t}")]
    TimestampSkew { drone: usize, pose_t: f64, t: f64, skew: f64 },
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn normalize_yaw(angle: f64) -> Result<f64, StateError> {
    if !angle.is_finite() {
        return Err(StateError::NonFinite("yaw"));
    }
    Ok(wrap_deg(angle))
}

/// Infallible variant for values already known to be finite.
pub(crate) fn wrap_deg(angle: f64) -> f64 {
    if (-180.0..180.0).contains(&angle) {
        return angle;
    }
    let mut r = (angle + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to the modulus for tiny negative inputs
    if r >= 180.0 {
        r -= 360.0;
    }
    r
}

/// Position (m) and yaw (deg) of one drone in the shared world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub t: f64,
}

impl Pose4 {
    /// Builds a pose, wrapping `yaw` into `[-180, 180)`.
    pub fn new(x: f64, y: f64, z: f64, yaw: f64, t: f64) -> Self {
        Self { x, y, z, yaw: wrap_deg(yaw), t }
    }

    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self::new(x, y, z, 0.0, 0.0)
    }

    pub fn with_t(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &Pose4) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self.yaw.is_finite()
            && self.t.is_finite()
    }
}

/// Body-frame velocity command: forward, left, up (m/s) and yaw rate (deg/s, CCW positive).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BodyVelocityCmd {
    pub vx_b: f64,
    pub vy_b: f64,
    pub vz_b: f64,
    pub yaw_rate: f64,
}

impl BodyVelocityCmd {
    pub const ZERO: Self = Self { vx_b: 0.0, vy_b: 0.0, vz_b: 0.0, yaw_rate: 0.0 };

    pub fn new(vx_b: f64, vy_b: f64, vz_b: f64, yaw_rate: f64) -> Self {
        Self { vx_b, vy_b, vz_b, yaw_rate }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.vx_b, self.vy_b, self.vz_b, self.yaw_rate]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|c| c.is_finite())
    }
}

/// World-frame position error (m) and wrapped yaw error (deg).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorVector4 {
    pub ex: f64,
    pub ey: f64,
    pub ez: f64,
    pub e_yaw: f64,
}

impl ErrorVector4 {
    pub const ZERO: Self = Self { ex: 0.0, ey: 0.0, ez: 0.0, e_yaw: 0.0 };

    pub fn as_array(&self) -> [f64; 4] {
        [self.ex, self.ey, self.ez, self.e_yaw]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self { ex: v[0], ey: v[1], ez: v[2], e_yaw: v[3] }
    }

    pub fn position_norm(&self) -> f64 {
        (self.ex * self.ex + self.ey * self.ey + self.ez * self.ez).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneHealth {
    pub battery_pct: f64,
    pub last_telemetry_t: f64,
    pub link_up: bool,
}

impl Default for DroneHealth {
    fn default() -> Self {
        Self { battery_pct: 100.0, last_telemetry_t: 0.0, link_up: true }
    }
}

/// One drone's contribution to a fleet snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroneObservation {
    pub pose: Pose4,
    pub target: Pose4,
    pub health: DroneHealth,
    pub command: BodyVelocityCmd,
}

impl DroneObservation {
    pub fn new(pose: Pose4, target: Pose4, health: DroneHealth) -> Self {
        Self { pose, target, health, command: BodyVelocityCmd::ZERO }
    }
}

/// Snapshot of the whole fleet at time `t`: poses, targets, errors, health and commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetState {
    pub n: usize,
    pub poses: Vec<Pose4>,
    pub targets: Vec<Pose4>,
    pub errors: Vec<ErrorVector4>,
    pub health: Vec<DroneHealth>,
    pub commands: Vec<BodyVelocityCmd>,
    pub t: f64,
}

impl FleetState {
    pub fn is_consistent(&self) -> bool {
        self.n >= 1
            && self.poses.len() == self.n
            && self.targets.len() == self.n
            && self.errors.len() == self.n
            && self.health.len() == self.n
            && self.commands.len() == self.n
    }
}

/// Builds [`FleetState`] snapshots. One assembler per tick producer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetAssembler {
    /// Telemetry older than this marks the link down.
    pub stale_after: f64,
    /// Allowed skew between a pose timestamp and the tick.
    pub control_period: f64,
}

impl Default for FleetAssembler {
    fn default() -> Self {
        Self { stale_after: 2.0, control_period: 0.05 }
    }
}

impl FleetAssembler {
    pub fn assemble(&self, per_drone: &[DroneObservation], t: f64) -> Result<FleetState, StateError> {
        if per_drone.is_empty() {
            return Err(StateError::EmptyFleet);
        }
        if !t.is_finite() {
            return Err(StateError::NonFinite("t"));
        }
        let n = per_drone.len();
        let mut state = FleetState {
            n,
            poses: Vec::with_capacity(n),
            targets: Vec::with_capacity(n),
            errors: Vec::with_capacity(n),
            health: Vec::with_capacity(n),
            commands: Vec::with_capacity(n),
            t,
        };
        for (i, obs) in per_drone.iter().enumerate() {
            if !obs.pose.is_finite() || !obs.target.is_finite() {
                return Err(StateError::NonFinite("pose"));
            }
            let skew = (obs.pose.t - t).abs();
            if skew > self.control_period + 1e-9 {
                return Err(StateError::TimestampSkew { drone: i, pose_t: obs.pose.t, t, skew });
            }
            let mut health = obs.health;
            if t - health.last_telemetry_t > self.stale_after {
                health.link_up = false;
            }
            state.errors.push(compute_error(&obs.target, &obs.pose));
            state.poses.push(obs.pose);
            state.targets.push(obs.target);
            state.health.push(health);
            state.commands.push(obs.command);
        }
        Ok(state)
    }
}

/// Assembles a snapshot with the default assembler thresholds.
pub fn assemble_fleet_state(per_drone: &[DroneObservation], t: f64) -> Result<FleetState, StateError> {
    FleetAssembler::default().assemble(per_drone, t)
}
