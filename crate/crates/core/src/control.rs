//! Position-based PD control over body-frame velocity commands.
//!
//! One control step is `compute_error -> filter_step -> pd_control -> saturate_to_rc`.
//! Every function is pure; the per-drone [`ControllerState`] is passed in and
//! returned explicitly.
//!
//! Wire axis table for [`RcCommand`]:
//!
//! | field | meaning            | from body command            |
//! |-------|--------------------|------------------------------|
//! | `a`   | rightward          | `-vy_b / v_max_xy * 100`     |
//! | `b`   | forward            | `vx_b / v_max_xy * 100`      |
//! | `c`   | upward             | `vz_b / v_max_z * 100`       |
//! | `d`   | clockwise yaw      | `-yaw_rate / w_max * 100`    |
//!
//! `yaw_rate` is counter-clockwise positive, so `d` carries its negation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{wrap_deg, BodyVelocityCmd, ErrorVector4, Pose4};

/// Steps shorter than this are rejected instead of producing huge finite differences.
pub const MIN_DT: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("control period {0} s is not usable (minimum {MIN_DT} s)")]
    BadDt(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid limit {name}={value}: limits must be positive")]
    BadLimit { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSet {
    /// Proportional gains for x, y, z, yaw.
    pub kp: [f64; 4],
    /// Derivative gains for x, y, z, yaw.
    pub kd: [f64; 4],
}

impl Default for GainSet {
    fn default() -> Self {
        Self { kp: [0.8, 0.8, 1.0, 1.0], kd: [0.3, 0.3, 0.2, 0.0] }
    }
}

impl GainSet {
    pub fn is_valid(&self) -> bool {
        self.kp.iter().chain(self.kd.iter()).all(|g| g.is_finite() && *g >= 0.0)
    }
}

/// First-order filter `y = alpha * y_prev + beta * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterCoeffs {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for FilterCoeffs {
    fn default() -> Self {
        Self { alpha: 0.7, beta: 0.3 }
    }
}

impl FilterCoeffs {
    pub fn is_valid(&self) -> bool {
        (0.0..1.0).contains(&self.alpha) && self.beta > 0.0 && self.beta <= 1.0 && self.alpha + self.beta <= 1.2
    }

    fn apply(&self, prev: f64, x: f64) -> f64 {
        self.alpha * prev + self.beta * x
    }
}

/// Which error feeds the proportional term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProportionalPath {
    /// Proportional term acts on the raw error.
    #[default]
    Raw,
    /// Proportional term acts on a filtered error with its own coefficients.
    Filtered { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub v_max_xy: f64,
    pub v_max_z: f64,
    pub w_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { v_max_xy: 1.0, v_max_z: 0.8, w_max: 100.0 }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<(), ControlError> {
        for (name, value) in [("v_max_xy", self.v_max_xy), ("v_max_z", self.v_max_z), ("w_max", self.w_max)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ControlError::BadLimit { name, value });
            }
        }
        Ok(())
    }
}

/// Everything a controller step needs besides its state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub gains: GainSet,
    pub coeffs: FilterCoeffs,
    pub proportional: ProportionalPath,
    pub limits: Limits,
    pub rate_hz: f64,
}

impl ControllerConfig {
    pub fn period(&self) -> f64 {
        1.0 / self.rate_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub prev_error: ErrorVector4,
    pub filtered_deriv: [f64; 4],
    pub filtered_error: [f64; 4],
    pub last_t: f64,
    pub initialized: bool,
}

impl ControllerState {
    /// Fresh state whose first step starts at `t0 + dt`.
    pub fn starting_at(t0: f64) -> Self {
        Self { last_t: t0, ..Self::default() }
    }
}

/// SDK-style integer velocity command, each axis in `[-100, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RcCommand {
    pub a: i32,
    pub b: i32,
    pub c: i32,
    pub d: i32,
}

impl RcCommand {
    pub const ZERO: Self = Self { a: 0, b: 0, c: 0, d: 0 };
    pub const RANGE: std::ops::RangeInclusive<i32> = -100..=100;

    pub fn new(a: i32, b: i32, c: i32, d: i32) -> Self {
        Self { a, b, c, d }
    }

    pub fn is_valid(&self) -> bool {
        [self.a, self.b, self.c, self.d].iter().all(|v| Self::RANGE.contains(v))
    }

    /// Inverse of [`saturate_to_rc`] on the wire grid.
    pub fn to_body(&self, limits: &Limits) -> BodyVelocityCmd {
        BodyVelocityCmd {
            vx_b: self.b as f64 / 100.0 * limits.v_max_xy,
            vy_b: -(self.a as f64) / 100.0 * limits.v_max_xy,
            vz_b: self.c as f64 / 100.0 * limits.v_max_z,
            yaw_rate: -(self.d as f64) / 100.0 * limits.w_max,
        }
    }
}

fn wrapped_yaw_error(target_yaw: f64, yaw: f64) -> f64 {
    let raw = target_yaw - yaw;
    [-1.0, 0.0, 1.0]
        .iter()
        .map(|k| raw + 360.0 * k)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .expect("non-empty candidate set")
}

/// World-frame error `target - pose` with the yaw term wrapped to the shortest turn.
///
/// Inputs are expected to carry normalized yaw; the result satisfies `|e_yaw| <= 180`.
pub fn compute_error(target: &Pose4, pose: &Pose4) -> ErrorVector4 {
    ErrorVector4 {
        ex: target.x - pose.x,
        ey: target.y - pose.y,
        ez: target.z - pose.z,
        e_yaw: wrapped_yaw_error(target.yaw, pose.yaw),
    }
}

/// Advances the derivative filter with the raw proportional path.
pub fn filter_step(
    state: &ControllerState,
    raw_error: &ErrorVector4,
    dt: f64,
    coeffs: &FilterCoeffs,
) -> Result<ControllerState, ControlError> {
    filter_step_with(state, raw_error, dt, coeffs, &ProportionalPath::Raw)
}

/// Advances the derivative filter and the proportional path selected by `proportional`.
pub fn filter_step_with(
    state: &ControllerState,
    raw_error: &ErrorVector4,
    dt: f64,
    coeffs: &FilterCoeffs,
    proportional: &ProportionalPath,
) -> Result<ControllerState, ControlError> {
    if !(dt.is_finite() && dt >= MIN_DT) {
        return Err(ControlError::BadDt(dt));
    }
    let raw = raw_error.as_array();
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(ControlError::NonFinite("error"));
    }
    let mut next = *state;
    next.prev_error = *raw_error;
    next.last_t = state.last_t + dt;

    if !state.initialized {
        next.initialized = true;
        next.filtered_deriv = [0.0; 4];
        next.filtered_error = raw;
        return Ok(next);
    }

    let prev = state.prev_error.as_array();
    for j in 0..4 {
        let mut delta = raw[j] - prev[j];
        if j == 3 {
            delta = wrap_deg(delta);
        }
        next.filtered_deriv[j] = coeffs.apply(state.filtered_deriv[j], delta / dt);
        next.filtered_error[j] = match proportional {
            ProportionalPath::Raw => raw[j],
            ProportionalPath::Filtered { alpha, beta } => alpha * state.filtered_error[j] + beta * raw[j],
        };
    }
    Ok(next)
}

/// Rotates a world-frame horizontal vector into the body frame of a drone with yaw `yaw` (deg).
pub fn world_to_body(yaw: f64, vec_xy: [f64; 2]) -> [f64; 2] {
    let (s, c) = yaw.to_radians().sin_cos();
    [c * vec_xy[0] + s * vec_xy[1], -s * vec_xy[0] + c * vec_xy[1]]
}

/// Inverse rotation of [`world_to_body`].
pub fn body_to_world(yaw: f64, vec_xy: [f64; 2]) -> [f64; 2] {
    let (s, c) = yaw.to_radians().sin_cos();
    [c * vec_xy[0] - s * vec_xy[1], s * vec_xy[0] + c * vec_xy[1]]
}

/// The PD law: world-frame PD terms, with the horizontal pair rotated into the body frame.
pub fn pd_control(ctrl: &ControllerState, yaw: f64, gains: &GainSet) -> BodyVelocityCmd {
    let mut u = [0.0; 4];
    for (j, uj) in u.iter_mut().enumerate() {
        let deriv = if ctrl.initialized { ctrl.filtered_deriv[j] } else { 0.0 };
        *uj = gains.kp[j] * ctrl.filtered_error[j] + gains.kd[j] * deriv;
    }
    let [vx_b, vy_b] = world_to_body(yaw, [u[0], u[1]]);
    BodyVelocityCmd { vx_b, vy_b, vz_b: u[2], yaw_rate: u[3] }
}

fn scale_clamp(v: f64, max: f64) -> i32 {
    (v / max * 100.0).round().clamp(-100.0, 100.0) as i32
}

/// Scales a continuous body command to the integer wire range and clamps it.
pub fn saturate_to_rc(cmd: &BodyVelocityCmd, limits: &Limits) -> Result<RcCommand, ControlError> {
    if !cmd.is_finite() {
        return Err(ControlError::NonFinite("command"));
    }
    limits.validate()?;
    Ok(RcCommand {
        a: scale_clamp(-cmd.vy_b, limits.v_max_xy),
        b: scale_clamp(cmd.vx_b, limits.v_max_xy),
        c: scale_clamp(cmd.vz_b, limits.v_max_z),
        d: scale_clamp(-cmd.yaw_rate, limits.w_max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub state: ControllerState,
    /// Body command before saturation.
    pub body: BodyVelocityCmd,
    pub rc: RcCommand,
}

/// One full control step for one drone.
pub fn step_controller(
    ctrl: &ControllerState,
    pose: &Pose4,
    target: &Pose4,
    dt: f64,
    config: &ControllerConfig,
) -> Result<StepOutput, ControlError> {
    if !pose.is_finite() || !target.is_finite() {
        return Err(ControlError::NonFinite("pose"));
    }
    let error = compute_error(target, pose);
    let state = filter_step_with(ctrl, &error, dt, &config.coeffs, &config.proportional)?;
    let body = pd_control(&state, pose.yaw, &config.gains);
    let rc = saturate_to_rc(&body, &config.limits)?;
    Ok(StepOutput { state, body, rc })
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl ControllerConfig {
    /// Default gains, filter, limits and a 20 Hz rate.
    pub fn standard() -> Self {
        Self {
            gains: GainSet::default(),
            coeffs: FilterCoeffs::default(),
            proportional: ProportionalPath::Raw,
            limits: Limits::default(),
            rate_hz: 20.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_yaw(target: f64, yaw: f64) -> f64 {
        let mut best = f64::INFINITY;
        for k in -3..=3 {
            let c = target - yaw + 360.0 * k as f64;
            if c.abs() < best.abs() {
                best = c;
            }
        }
        best
    }

    #[test]
    fn error_examples() {
        let e = compute_error(&Pose4::new(1.0, 2.0, 3.0, 0.0, 0.0), &Pose4::default());
        assert_eq!(e, ErrorVector4 { ex: 1.0, ey: 2.0, ez: 3.0, e_yaw: 0.0 });
        // candidates for k = 0, 1, -1 are 340, 700, -20
        let e = compute_error(&Pose4::new(0.0, 0.0, 0.0, 170.0, 0.0), &Pose4::new(0.0, 0.0, 0.0, -170.0, 0.0));
        assert_eq!(e.e_yaw, -20.0);
        let p = Pose4::new(0.3, -1.2, 0.9, 45.0, 2.0);
        assert_eq!(compute_error(&p, &p), ErrorVector4::ZERO);
    }

    #[test]
    fn yaw_error_matches_brute_force_on_integer_grid() {
        for td in -180..180 {
            for y in -180..180 {
                let e = wrapped_yaw_error(td as f64, y as f64);
                let oracle = brute_force_yaw(td as f64, y as f64);
                assert!(e.abs() <= 180.0);
                assert_eq!(e.abs(), oracle.abs(), "target {td} yaw {y}");
            }
        }
    }

    #[test]
    fn filter_examples() {
        let coeffs = FilterCoeffs { alpha: 0.8, beta: 0.2 };
        let e = ErrorVector4 { ex: 0.5, ..ErrorVector4::ZERO };
        let state = ControllerState {
            prev_error: e,
            filtered_deriv: [1.0, 0.0, 0.0, 0.0],
            filtered_error: e.as_array(),
            last_t: 0.0,
            initialized: true,
        };
        // unchanged error -> raw derivative 0
        let next = filter_step(&state, &e, 0.05, &coeffs).unwrap();
        assert!((next.filtered_deriv[0] - 0.8).abs() < 1e-15);

        let first = filter_step(&ControllerState::default(), &e, 0.05, &coeffs).unwrap();
        assert!(first.initialized);
        assert_eq!(first.filtered_deriv, [0.0; 4]);
        assert_eq!(first.prev_error, e);
    }

    #[test]
    fn constant_error_decays_geometrically() {
        let coeffs = FilterCoeffs::default();
        let e = ErrorVector4 { ex: 1.0, ..ErrorVector4::ZERO };
        let mut state = ControllerState {
            prev_error: e,
            filtered_deriv: [2.0, 0.0, 0.0, 0.0],
            filtered_error: e.as_array(),
            last_t: 0.0,
            initialized: true,
        };
        for k in 1..=10 {
            state = filter_step(&state, &e, 0.05, &coeffs).unwrap();
            let closed_form = 2.0 * coeffs.alpha.powi(k);
            assert!((state.filtered_deriv[0] - closed_form).abs() < 1e-12);
        }
    }

    #[test]
    fn yaw_derivative_differences_across_seam() {
        let coeffs = FilterCoeffs { alpha: 0.0, beta: 1.0 };
        let a = ErrorVector4 { e_yaw: 179.0, ..ErrorVector4::ZERO };
        let b = ErrorVector4 { e_yaw: -179.0, ..ErrorVector4::ZERO };
        let s = filter_step(&ControllerState::default(), &a, 0.1, &coeffs).unwrap();
        let s = filter_step(&s, &b, 0.1, &coeffs).unwrap();
        assert!((s.filtered_deriv[3] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn bad_dt_rejected() {
        let s = ControllerState::default();
        for dt in [0.0, -0.1, 5e-5, f64::NAN] {
            assert!(matches!(
                filter_step(&s, &ErrorVector4::ZERO, dt, &FilterCoeffs::default()),
                Err(ControlError::BadDt(_))
            ));
        }
    }

    #[test]
    fn filtered_proportional_path() {
        let e = ErrorVector4 { ex: 1.0, ..ErrorVector4::ZERO };
        let path = ProportionalPath::Filtered { alpha: 0.5, beta: 0.5 };
        let s = filter_step_with(&ControllerState::default(), &ErrorVector4::ZERO, 0.05, &FilterCoeffs::default(), &path)
            .unwrap();
        let s = filter_step_with(&s, &e, 0.05, &FilterCoeffs::default(), &path).unwrap();
        assert_eq!(s.filtered_error[0], 0.5);
        let raw = filter_step(&ControllerState::default(), &ErrorVector4::ZERO, 0.05, &FilterCoeffs::default()).unwrap();
        let raw = filter_step(&raw, &e, 0.05, &FilterCoeffs::default()).unwrap();
        assert_eq!(raw.filtered_error[0], 1.0);
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(world_to_body(0.0, [1.0, 0.0]), [1.0, 0.0]);
        let r = world_to_body(90.0, [1.0, 0.0]);
        assert!(r[0].abs() < 1e-12 && (r[1] + 1.0).abs() < 1e-12);
        let r = world_to_body(45.0, [1.0, 1.0]);
        assert!((r[0] - 2f64.sqrt()).abs() < 1e-12 && r[1].abs() < 1e-12);
    }

    #[test]
    fn pd_examples() {
        let gains = GainSet { kp: [0.5; 4], kd: [0.0; 4] };
        let ctrl = ControllerState {
            filtered_error: [1.0, 0.0, 0.0, 0.0],
            initialized: true,
            ..ControllerState::default()
        };
        let cmd = pd_control(&ctrl, 0.0, &gains);
        assert_eq!(cmd, BodyVelocityCmd::new(0.5, 0.0, 0.0, 0.0));
        let cmd = pd_control(&ctrl, 90.0, &gains);
        assert!(cmd.vx_b.abs() < 1e-12 && (cmd.vy_b + 0.5).abs() < 1e-12);
        assert_eq!(pd_control(&ControllerState::default(), 30.0, &GainSet::default()), BodyVelocityCmd::ZERO);
    }

    #[test]
    fn saturation_examples() {
        let limits = Limits { v_max_xy: 1.0, v_max_z: 0.8, w_max: 100.0 };
        let rc = saturate_to_rc(&BodyVelocityCmd::new(2.0, 0.0, 0.0, 0.0), &limits).unwrap();
        assert_eq!(rc.b, 100);
        assert_eq!(saturate_to_rc(&BodyVelocityCmd::ZERO, &limits).unwrap(), RcCommand::ZERO);
        assert_eq!(saturate_to_rc(&BodyVelocityCmd::new(0.5, 0.0, 0.0, 0.0), &limits).unwrap().b, 50);
        // left is negative rightward, ccw yaw is negative clockwise
        let rc = saturate_to_rc(&BodyVelocityCmd::new(0.0, 0.3, 0.4, 50.0), &limits).unwrap();
        assert_eq!(rc, RcCommand::new(-30, 0, 50, -50));
        assert!(saturate_to_rc(&BodyVelocityCmd::new(f64::NAN, 0.0, 0.0, 0.0), &limits).is_err());
        assert!(saturate_to_rc(&BodyVelocityCmd::ZERO, &Limits { v_max_xy: 0.0, ..limits }).is_err());
    }

    #[test]
    fn step_examples() {
        let config = ControllerConfig {
            gains: GainSet { kp: [0.5, 0.5, 0.5, 0.5], kd: [0.0; 4] },
            limits: Limits { v_max_xy: 1.0, ..Limits::default() },
            ..ControllerConfig::standard()
        };
        let pose = Pose4::default();
        let target = Pose4::at(1.0, 0.0, 0.0);
        let out = step_controller(&ControllerState::default(), &pose, &target, 0.05, &config).unwrap();
        assert_eq!(out.rc.b, 50);

        let again = step_controller(&ControllerState::default(), &pose, &target, 0.05, &config).unwrap();
        assert_eq!(out, again);

        let still = step_controller(&ControllerState::default(), &target, &target, 0.05, &ControllerConfig::standard())
            .unwrap();
        assert_eq!(still.rc, RcCommand::ZERO);
    }

    proptest! {
        #[test]
        fn rotation_is_isometric(yaw in -180f64..180.0, x in -10f64..10.0, y in -10f64..10.0) {
            let r = world_to_body(yaw, [x, y]);
            prop_assert!(((r[0].hypot(r[1])) - x.hypot(y)).abs() < 1e-9);
            let back = body_to_world(yaw, r);
            prop_assert!((back[0] - x).abs() < 1e-9 && (back[1] - y).abs() < 1e-9);
        }

        #[test]
        fn saturation_is_idempotent(vx in -3f64..3.0, vy in -3f64..3.0, vz in -3f64..3.0, w in -300f64..300.0) {
            let limits = Limits::default();
            let once = saturate_to_rc(&BodyVelocityCmd::new(vx, vy, vz, w), &limits).unwrap();
            prop_assert!(once.is_valid());
            let twice = saturate_to_rc(&once.to_body(&limits), &limits).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn filtered_derivative_stays_bounded(
            errors in prop::collection::vec(-1f64..1.0, 2..200),
            alpha in 0f64..0.95,
        ) {
            let coeffs = FilterCoeffs { alpha, beta: 1.0 - alpha };
            let dt = 0.05;
            let mut state = ControllerState::default();
            let mut sup_rate: f64 = 0.0;
            let mut prev: Option<f64> = None;
            for e in errors {
                if let Some(p) = prev {
                    sup_rate = sup_rate.max(((e - p) / dt).abs());
                }
                prev = Some(e);
                state = filter_step(&state, &ErrorVector4 { ex: e, ..ErrorVector4::ZERO }, dt, &coeffs).unwrap();
                let bound = coeffs.beta / (1.0 - coeffs.alpha) * sup_rate;
                prop_assert!(state.filtered_deriv[0].abs() <= bound + 1e-9);
            }
        }
    }
}
