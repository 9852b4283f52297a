//! Waypoint missions and the letter planner.
//!
//! Letters are drawn in the vertical x-z plane through the origin, with the
//! origin at the letter's bottom-left corner, `u` to the right (+x) and `v` up
//! (+z). Stroke definitions in `(u, v)`:
//!
//! - `N`: (0,0) -> (0,h) -> (w,0) -> (w,h)
//! - `T`: bar (0,h) -> (w,h), then stem (w/2,h) -> (w/2,0)
//! - `U`: (0,h) -> (0,0) -> (w,0) -> (w,h)
//!
//! Each segment is split into `ceil(length / spacing)` equal steps; any point
//! equal to one already emitted is dropped.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::localization::PoseFix;
use crate::state::Pose4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MissionError {
    #[error("unknown letter {0:?}")]
    UnknownLetter(String),
    #[error("letter geometry must be positive (width {width}, height {height}, spacing {spacing})")]
    BadGeometry { width: f64, height: f64, spacing: f64 },
    #[error("drone {0} has no waypoints")]
    EmptyWaypoints(usize),
    #[error("waypoint {index} of drone {drone} at ({x:.2}, {y:.2}, {z:.2}) is outside the geofence")]
    OutsideGeofence { drone: usize, index: usize, x: f64, y: f64, z: f64 },
    #[error("geofence min must be below max on every axis")]
    BadGeofence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Letter {
    N,
    T,
    U,
}

impl FromStr for Letter {
    type Err = MissionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "N" => Ok(Letter::N),
            "T" => Ok(Letter::T),
            "U" => Ok(Letter::U),
            _ => Err(MissionError::UnknownLetter(s.to_string())),
        }
    }
}

impl Letter {
    /// Strokes as polylines in `(u, v)`.
    pub fn strokes(&self, w: f64, h: f64) -> Vec<Vec<[f64; 2]>> {
        match self {
            Letter::N => vec![vec![[0.0, 0.0], [0.0, h], [w, 0.0], [w, h]]],
            Letter::T => vec![vec![[0.0, h], [w, h]], vec![[w / 2.0, h], [w / 2.0, 0.0]]],
            Letter::U => vec![vec![[0.0, h], [0.0, 0.0], [w, 0.0], [w, h]]],
        }
    }
}

const SAME_POINT: f64 = 1e-9;

/// Samples `letter` into waypoints; yaw and `y` are taken from `origin`.
pub fn plan_letter_trajectory(
    letter: Letter,
    origin: &Pose4,
    width: f64,
    height: f64,
    spacing: f64,
) -> Result<Vec<Pose4>, MissionError> {
    if !(width > 0.0 && height > 0.0 && spacing > 0.0 && width.is_finite() && height.is_finite() && spacing.is_finite()) {
        return Err(MissionError::BadGeometry { width, height, spacing });
    }
    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut push = |p: [f64; 2]| {
        if !points.iter().any(|q| (q[0] - p[0]).abs() < SAME_POINT && (q[1] - p[1]).abs() < SAME_POINT) {
            points.push(p);
        }
    };
    for stroke in letter.strokes(width, height) {
        push(stroke[0]);
        for seg in stroke.windows(2) {
            let [a, b] = [seg[0], seg[1]];
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let steps = ((len / spacing) - 1e-9).ceil().max(1.0) as usize;
            for k in 1..=steps {
                let f = k as f64 / steps as f64;
                push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
            }
        }
    }
    Ok(points
        .into_iter()
        .map(|[u, v]| Pose4::new(origin.x + u, origin.y, origin.z + v, origin.yaw, 0.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geofence {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Geofence {
    fn default() -> Self {
        Self { min: [-5.0, -5.0, 0.0], max: [10.0, 5.0, 3.0] }
    }
}

impl Geofence {
    pub fn validate(&self) -> Result<(), MissionError> {
        if (0..3).all(|i| self.min[i] < self.max[i]) {
            Ok(())
        } else {
            Err(MissionError::BadGeofence)
        }
    }

    pub fn contains(&self, p: &Pose4) -> bool {
        let q = p.position();
        (0..3).all(|i| q[i] >= self.min[i] && q[i] <= self.max[i])
    }
}

/// Shape and placement of the letter formation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LetterGeometry {
    pub letters: String,
    pub width: f64,
    pub height: f64,
    pub spacing: f64,
    /// Lateral distance between neighbouring drones' letter origins.
    pub lateral_offset: f64,
    /// Height of each letter's bottom edge.
    pub base_z: f64,
}

impl Default for LetterGeometry {
    fn default() -> Self {
        Self { letters: "NTU".into(), width: 0.6, height: 1.0, spacing: 0.1, lateral_offset: 1.0, base_z: 0.5 }
    }
}

impl LetterGeometry {
    /// Start pose of drone `i` on the ground.
    pub fn start_pose(&self, i: usize) -> Pose4 {
        Pose4::at(i as f64 * self.lateral_offset, 0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    pub name: String,
    pub waypoints: Vec<Vec<Pose4>>,
    pub arrival_radius: f64,
    pub dwell: f64,
}

impl MissionPlan {
    /// One letter per drone, cycling through `geometry.letters`.
    pub fn letters(
        name: &str,
        n: usize,
        geometry: &LetterGeometry,
        arrival_radius: f64,
        dwell: f64,
    ) -> Result<Self, MissionError> {
        let letters: Vec<Letter> = geometry.letters.chars().map(|c| c.to_string().parse()).collect::<Result<_, _>>()?;
        if letters.is_empty() {
            return Err(MissionError::UnknownLetter(String::new()));
        }
        let waypoints = (0..n)
            .map(|i| {
                let start = geometry.start_pose(i);
                let origin = Pose4::new(start.x, start.y, geometry.base_z, start.yaw, 0.0);
                plan_letter_trajectory(letters[i % letters.len()], &origin, geometry.width, geometry.height, geometry.spacing)
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { name: name.into(), waypoints, arrival_radius, dwell })
    }

    pub fn validate(&self, fence: &Geofence) -> Result<(), MissionError> {
        fence.validate()?;
        for (drone, list) in self.waypoints.iter().enumerate() {
            if list.is_empty() {
                return Err(MissionError::EmptyWaypoints(drone));
            }
            if let Some((index, p)) = list.iter().enumerate().find(|(_, p)| !fence.contains(p)) {
                return Err(MissionError::OutsideGeofence { drone, index, x: p.x, y: p.y, z: p.z });
            }
        }
        Ok(())
    }

    pub fn total_waypoints(&self) -> usize {
        self.waypoints.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DroneProgress {
    pub index: usize,
    #[serde(skip)]
    pub in_radius_since: Option<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionState {
    pub plan: MissionPlan,
    pub progress: Vec<DroneProgress>,
    pub started_t: f64,
    pub paused: bool,
    pub complete: bool,
}

impl MissionState {
    pub fn start(plan: MissionPlan, t: f64) -> Self {
        let progress = vec![DroneProgress::default(); plan.waypoints.len()];
        Self { plan, progress, started_t: t, paused: false, complete: false }
    }

    /// Fraction of all waypoints passed.
    pub fn fraction_done(&self) -> f64 {
        let total = self.plan.total_waypoints().max(1);
        let passed: usize = self.progress.iter().map(|p| p.index).sum();
        passed as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneTarget {
    pub pose: Option<Pose4>,
    /// Station keeping at the current position rather than following the plan.
    pub hold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MissionEvent {
    WaypointReached { drone_id: u32, index: usize, t: f64 },
    DroneDone { drone_id: u32, t: f64 },
    MissionComplete { t: f64 },
}

/// Advances waypoint progress from the latest valid fix of each drone.
pub fn mission_tick(
    mission: &MissionState,
    fixes: &[Option<PoseFix>],
    t: f64,
    t_fix_stale: f64,
) -> (MissionState, Vec<DroneTarget>, Vec<MissionEvent>) {
    let mut next = mission.clone();
    let mut targets = Vec::with_capacity(next.progress.len());
    let mut events = Vec::new();
    for (i, prog) in next.progress.iter_mut().enumerate() {
        let list = &next.plan.waypoints[i];
        let fix = fixes.get(i).copied().flatten().filter(|f| f.valid && t - f.fix_t <= t_fix_stale);
        let Some(fix) = fix else {
            prog.in_radius_since = None;
            let last = fixes.get(i).copied().flatten().filter(|f| f.valid).map(|f| f.pose);
            targets.push(DroneTarget { pose: last, hold: true });
            continue;
        };
        if next.paused {
            prog.in_radius_since = None;
            targets.push(DroneTarget { pose: Some(fix.pose), hold: true });
            continue;
        }
        if !prog.done {
            let wp = &list[prog.index];
            if fix.pose.distance(wp) < next.plan.arrival_radius {
                let since = *prog.in_radius_since.get_or_insert(t);
                if t - since >= next.plan.dwell {
                    events.push(MissionEvent::WaypointReached { drone_id: i as u32, index: prog.index, t });
                    prog.in_radius_since = None;
                    if prog.index + 1 == list.len() {
                        prog.done = true;
                        events.push(MissionEvent::DroneDone { drone_id: i as u32, t });
                    } else {
                        prog.index += 1;
                    }
                }
            } else {
                prog.in_radius_since = None;
            }
        }
        targets.push(DroneTarget { pose: Some(list[prog.index]), hold: false });
    }
    if !next.complete && next.progress.iter().all(|p| p.done) {
        next.complete = true;
        events.push(MissionEvent::MissionComplete { t });
    }
    (next, targets, events)
}
