use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian, LocError, PoseFix};
use crate::control::body_to_world;
use crate::state::{wrap_deg, BodyVelocityCmd, Pose4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MapStatus {
    Tracking,
    Lost,
    FailedGlobal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapParams {
    /// Complementary gain toward each fix while tracking.
    pub lambda: f64,
    pub t_lost: f64,
    pub p_reassoc_fail: f64,
    /// Odometry bias random walk, m/s per sqrt(s).
    pub bias_walk: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self { lambda: 0.8, t_lost: 1.0, p_reassoc_fail: 0.3, bias_walk: 0.01 }
    }
}

impl MapParams {
    pub fn validate(&self) -> Result<(), LocError> {
        let ok = (0.0..=1.0).contains(&self.lambda)
            && self.t_lost > 0.0
            && (0.0..=1.0).contains(&self.p_reassoc_fail)
            && self.bias_walk.is_finite()
            && self.bias_walk >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(LocError::InvalidParam(format!("map params {self:?}")))
        }
    }
}

/// Sequential estimator state; `est_pose.t` is the estimator clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapEstimatorState {
    pub est_pose: Pose4,
    pub est_vel: [f64; 3],
    pub last_fix_t: f64,
    pub status: MapStatus,
    pub odom_bias: [f64; 3],
}

impl MapEstimatorState {
    /// Tracking from a known starting pose.
    pub fn new(start: Pose4) -> Self {
        Self { est_pose: start, est_vel: [0.0; 3], last_fix_t: start.t, status: MapStatus::Tracking, odom_bias: [0.0; 3] }
    }

    /// The estimate as a fix; only a tracking estimator produces a valid one.
    pub fn as_fix(&self, drone_id: u32) -> PoseFix {
        PoseFix {
            drone_id,
            pose: self.est_pose,
            frame_id: 0,
            fix_t: self.est_pose.t,
            valid: self.status == MapStatus::Tracking,
        }
    }
}

/// One predict/update step over `dt` seconds with body-frame odometry and an optional fix.
///
/// Track is declared lost once no fix has been applied for longer than
/// `t_lost`. A fix arriving while lost re-associates with probability
/// `1 - p_reassoc_fail`; otherwise the estimator fails globally and rejects
/// every later fix.
pub fn map_step<R: Rng + ?Sized>(
    state: &MapEstimatorState,
    dt: f64,
    odom: &BodyVelocityCmd,
    fix: Option<&PoseFix>,
    params: &MapParams,
    rng: &mut R,
) -> Result<MapEstimatorState, LocError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(LocError::BadDt(dt));
    }
    let mut next = *state;
    let p = state.est_pose;
    let [wx, wy] = body_to_world(p.yaw, [odom.vx_b, odom.vy_b]);
    let vel = [wx + state.odom_bias[0], wy + state.odom_bias[1], odom.vz_b + state.odom_bias[2]];
    let t = p.t + dt;
    next.est_pose = Pose4::new(p.x + vel[0] * dt, p.y + vel[1] * dt, p.z + vel[2] * dt, p.yaw + odom.yaw_rate * dt, t);
    next.est_vel = vel;
    let step = params.bias_walk * dt.sqrt();
    for b in next.odom_bias.iter_mut() {
        *b += gaussian(rng, step);
    }

    if next.status == MapStatus::Tracking && t - state.last_fix_t > params.t_lost {
        next.status = MapStatus::Lost;
    }
    let Some(fix) = fix.filter(|f| f.valid) else {
        return Ok(next);
    };
    match next.status {
        MapStatus::Tracking => {
            let e = &mut next.est_pose;
            let l = params.lambda;
            e.x += l * (fix.pose.x - e.x);
            e.y += l * (fix.pose.y - e.y);
            e.z += l * (fix.pose.z - e.z);
            e.yaw = wrap_deg(e.yaw + l * wrap_deg(fix.pose.yaw - e.yaw));
            next.last_fix_t = t;
        }
        MapStatus::Lost => {
            let u: f64 = rng.random();
            if u < params.p_reassoc_fail {
                next.status = MapStatus::FailedGlobal;
            } else {
                next.est_pose = fix.pose.with_t(t);
                next.last_fix_t = t;
                next.status = MapStatus::Tracking;
            }
        }
        MapStatus::FailedGlobal => {}
    }
    Ok(next)
}
