//! Echo probes over a fabric path.
//!
//! Probes run on private copies of the path's links, driven by their own
//! seeded stream, so probing never disturbs the fabric's traffic or RNG state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::delay::DelaySampler;
use super::link::Link;
use super::{DropReason, Fabric, FabricError, DOWN, UP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "hop", content = "drone")]
pub enum ProbePath {
    /// Fleet host to relay `i`.
    Wired(usize),
    /// Forwarding inside relay `i`.
    Forward(usize),
    /// Relay `i` to its drone.
    Wireless(usize),
    /// Fleet host to drone `i` through all three hops.
    EndToEnd(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub count: usize,
    /// Gap between probe launches; large enough by default that probes never queue behind each other.
    #[serde(default = "default_interval")]
    pub interval_s: f64,
    #[serde(default = "default_payload")]
    pub payload_bytes: usize,
    #[serde(default)]
    pub start_s: f64,
}

fn default_interval() -> f64 {
    0.1
}

fn default_payload() -> usize {
    64
}

impl ProbeSpec {
    pub fn new(count: usize) -> Self {
        Self { count, interval_s: default_interval(), payload_bytes: default_payload(), start_s: 0.0 }
    }
}

struct PathCopy {
    wired: Option<Link>,
    forward: Option<DelaySampler>,
    wireless: Option<Link>,
    last_forward: [f64; 2],
    rng: ChaCha8Rng,
}

impl PathCopy {
    fn new(fabric: &Fabric, path: ProbePath, seed: u64) -> Result<Self, FabricError> {
        let i = match path {
            ProbePath::Wired(i) | ProbePath::Forward(i) | ProbePath::Wireless(i) | ProbePath::EndToEnd(i) => i,
        };
        if i >= fabric.relay_count() {
            return Err(FabricError::UnknownNode(super::NodeId::Relay(i)));
        }
        let fresh = |l: &Link| {
            let mut l = l.clone();
            l.reset_queues();
            l
        };
        let (w, f, wl) = match path {
            ProbePath::Wired(_) => (true, false, false),
            ProbePath::Forward(_) => (false, true, false),
            ProbePath::Wireless(_) => (false, false, true),
            ProbePath::EndToEnd(_) => (true, true, true),
        };
        Ok(Self {
            wired: w.then(|| fresh(&fabric.wired[i])),
            forward: f.then_some(fabric.relays[i].sampler),
            wireless: wl.then(|| fresh(&fabric.wireless[i])),
            last_forward: [0.0; 2],
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn one_way(&mut self, dir: usize, t: f64, size: usize) -> Result<f64, DropReason> {
        let mut t = t;
        let mut hops: [u8; 3] = [0, 1, 2];
        if dir == UP {
            hops.reverse();
        }
        for hop in hops {
            match hop {
                0 => {
                    if let Some(l) = self.wired.as_mut() {
                        t = l.traverse(dir, t, size, &mut self.rng)?;
                    }
                }
                1 => {
                    if let Some(s) = self.forward.as_ref() {
                        t = (t + s.sample_ms(&mut self.rng) / 1000.0).max(self.last_forward[dir]);
                        self.last_forward[dir] = t;
                    }
                }
                _ => {
                    if let Some(l) = self.wireless.as_mut() {
                        t = l.traverse(dir, t, size, &mut self.rng)?;
                    }
                }
            }
        }
        Ok(t)
    }
}

fn run(
    fabric: &Fabric,
    path: ProbePath,
    spec: &ProbeSpec,
    seed: u64,
    round_trip: bool,
) -> Result<Vec<f64>, FabricError> {
    if spec.count == 0 {
        return Err(FabricError::InvalidProfile("probe count must be at least 1".into()));
    }
    let mut copy = PathCopy::new(fabric, path, seed)?;
    let mut samples = Vec::with_capacity(spec.count);
    for k in 0..spec.count {
        let t0 = spec.start_s + k as f64 * spec.interval_s;
        let Ok(there) = copy.one_way(DOWN, t0, spec.payload_bytes) else { continue };
        let end = if round_trip {
            match copy.one_way(UP, there, spec.payload_bytes) {
                Ok(t) => t,
                Err(_) => continue,
            }
        } else {
            there
        };
        // nanosecond resolution keeps fixed delays exact
        samples.push(((end - t0) * 1e9).round() / 1e6);
    }
    if samples.is_empty() {
        return Err(FabricError::PathDead(spec.count));
    }
    Ok(samples)
}

/// Round-trip samples in ms for probes that made it there and back; lost probes are skipped.
pub fn probe_rtt(fabric: &Fabric, path: ProbePath, spec: &ProbeSpec, seed: u64) -> Result<Vec<f64>, FabricError> {
    run(fabric, path, spec, seed, true)
}

/// Downstream one-way samples in ms; exact because both ends share the virtual clock.
pub fn probe_one_way(fabric: &Fabric, path: ProbePath, spec: &ProbeSpec, seed: u64) -> Result<Vec<f64>, FabricError> {
    run(fabric, path, spec, seed, false)
}

#[cfg(test)]
mod tests {
    use super::super::{build_fabric, DelayModel, LinkProfile, Topology};
    use super::*;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn fixed_rtt_is_twice_one_way() {
        let topo = Topology::uniform(1, LinkProfile::fixed(0.0), LinkProfile::fixed(5.0), DelayModel::fixed(0.0));
        let fabric = build_fabric(&topo, 0).unwrap();
        let rtt = probe_rtt(&fabric, ProbePath::Wireless(0), &ProbeSpec::new(50), 1).unwrap();
        assert_eq!(rtt.len(), 50);
        assert!(rtt.iter().all(|&v| (v - 10.0).abs() < 1e-9));
    }

    #[test]
    fn calibrated_wireless_mean() {
        let fabric = build_fabric(&Topology::calibrated(1), 0).unwrap();
        let one_way = probe_one_way(&fabric, ProbePath::Wireless(0), &ProbeSpec::new(10_000), 42).unwrap();
        let m = mean(&one_way);
        assert!((m - 25.9).abs() / 25.9 < 0.05, "{m}");
        assert!(one_way.iter().cloned().fold(f64::INFINITY, f64::min) >= 4.14);
        let rtt = probe_rtt(&fabric, ProbePath::Wireless(0), &ProbeSpec::new(10_000), 42).unwrap();
        assert!((mean(&rtt) - 51.8).abs() / 51.8 < 0.05);
    }

    #[test]
    fn total_loss_is_path_dead() {
        let topo = Topology::uniform(
            1,
            LinkProfile::fixed(0.0),
            LinkProfile::fixed(5.0).with_loss(1.0),
            DelayModel::fixed(0.0),
        );
        let fabric = build_fabric(&topo, 0).unwrap();
        let err = probe_rtt(&fabric, ProbePath::EndToEnd(0), &ProbeSpec::new(10), 0).unwrap_err();
        assert!(err.to_string().contains("path dead"));
    }

    #[test]
    fn probing_is_seeded() {
        let fabric = build_fabric(&Topology::calibrated(2), 3).unwrap();
        let a = probe_rtt(&fabric, ProbePath::EndToEnd(1), &ProbeSpec::new(100), 8).unwrap();
        let b = probe_rtt(&fabric, ProbePath::EndToEnd(1), &ProbeSpec::new(100), 8).unwrap();
        assert_eq!(a, b);
        assert!(probe_rtt(&fabric, ProbePath::Wired(2), &ProbeSpec::new(1), 0).is_err());
    }
}
