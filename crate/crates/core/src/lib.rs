//! Desk-scale multi-drone coordination stack.
//!
//! The crate is organized bottom-up:
//!
//! - [`state`]: shared domain types and fleet state matrices.
//! - [`control`]: PD position controller over body-frame velocity commands.
//! - [`wire`]: datagram codecs for commands, telemetry and video stubs.
//! - [`endpoint`]: virtual drone (kinematic plant + protocol server).
//! - [`fabric`]: deterministic message fabric with relays and impaired links.
//! - [`localization`]: stateless per-frame relocalizer vs. sequential estimator.
//! - [`fleet`]: per-drone sessions, missions and the operator command surface.
//! - [`metrics`]: trajectory association, APE, latency statistics and experiments.
//! - [`sim`]: closed-loop simulation tying everything together.
//! - [`config`]: the fleet configuration document.

pub mod config;
pub mod control;
pub mod endpoint;
pub mod fabric;
pub mod fleet;
pub mod localization;
pub mod metrics;
pub mod sim;
pub mod state;
pub mod wire;

pub use control::{
    compute_error, filter_step, pd_control, saturate_to_rc, step_controller, world_to_body, ControllerConfig,
    ControllerState, FilterCoeffs, GainSet, Limits, RcCommand,
};
pub use state::{
    assemble_fleet_state, normalize_yaw, BodyVelocityCmd, DroneHealth, ErrorVector4, FleetState, Pose4,
};
