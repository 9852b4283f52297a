//! Deterministic message fabric: one fleet host, one relay per drone, and two
//! impaired links per drone path (fleet-relay wired, relay-drone wireless).
//!
//! The fabric is a discrete-event scheduler. [`Fabric::send`] decides the fate
//! of a datagram on every hop as soon as it is sent; deliveries are queued and
//! released in time order by [`Fabric::poll`]. Because each hop is FIFO and
//! sends arrive in non-decreasing time, deciding eagerly gives the same result
//! as stepping hop by hop.
//!
//! Every link and relay owns a ChaCha stream derived from the fabric seed, so
//! identical topology, seed and send schedule reproduce identical deliveries.

mod delay;
mod link;
mod probe;
mod relay;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::{self, Write};
use std::net::{Ipv4Addr, SocketAddrV4};

use bytes::Bytes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use delay::{DelayModel, DelaySampler, JitterShape};
pub use link::{LinkProfile, Outage, PeriodicOutage, RandomOutage};
pub use probe::{probe_one_way, probe_rtt, ProbePath, ProbeSpec};
pub use relay::{RelayNode, DRONE_SIDE_ADDR};

use link::Link;

pub const DEFAULT_FLEET_HOST: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("fabric needs at least one relay")]
    NoRelays,
    #[error("fleet-side address {0} used by more than one relay")]
    DuplicateAddress(Ipv4Addr),
    #[error("topology has {relays} relays but {wired} wired and {wireless} wireless profiles")]
    ProfileCount { relays: usize, wired: usize, wireless: usize },
    #[error("invalid link profile: {0}")]
    InvalidProfile(String),
    #[error("no node reachable at {0}")]
    UnknownAddress(SocketAddrV4),
    #[error("{0:?} is not attached to this fabric")]
    UnknownNode(NodeId),
    #[error("send at {t} s precedes the previous send at {last} s")]
    TimeWentBackwards { t: f64, last: f64 },
    #[error("path dead: all {0} probes lost")]
    PathDead(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeId {
    Fleet,
    Relay(usize),
    Drone(usize),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Fleet => write!(f, "fleet"),
            NodeId::Relay(i) => write!(f, "relay{i}"),
            NodeId::Drone(i) => write!(f, "drone{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datagram {
    pub src: SocketAddrV4,
    pub dst: SocketAddrV4,
    pub payload: Bytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropReason {
    Outage,
    Loss,
    NoMap,
    QueueOverflow,
}

impl DropReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::Outage => "outage",
            DropReason::Loss => "loss",
            DropReason::NoMap => "no-map",
            DropReason::QueueOverflow => "queue-overflow",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SendOutcome {
    Scheduled { id: u64, deliver_at: f64 },
    Dropped { id: u64, at: f64, reason: DropReason },
}

impl SendOutcome {
    pub fn delivered_at(&self) -> Option<f64> {
        match self {
            SendOutcome::Scheduled { deliver_at, .. } => Some(*deliver_at),
            SendOutcome::Dropped { .. } => None,
        }
    }
}

/// A datagram handed to its destination node.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub id: u64,
    pub to: NodeId,
    pub datagram: Datagram,
    pub sent_at: f64,
    pub deliver_at: f64,
}

struct Pending(Delivery);

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    // reversed: BinaryHeap is a max-heap and we want the earliest delivery first
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.deliver_at.total_cmp(&self.0.deliver_at).then_with(|| other.0.id.cmp(&self.0.id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Delivered,
    Dropped(DropReason),
}

/// One line of the exported fabric log.
#[derive(Debug, Clone, PartialEq)]
pub struct FabricEvent {
    pub t: f64,
    pub src: SocketAddrV4,
    pub dst: SocketAddrV4,
    pub size: usize,
    pub outcome: Outcome,
}

impl fmt::Display for FabricEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (outcome, reason) = match &self.outcome {
            Outcome::Delivered => ("delivered", "-"),
            Outcome::Dropped(r) => ("dropped", r.as_str()),
        };
        write!(f, "{:.6}\t{}\t{}\t{}\t{}\t{}", self.t, self.src, self.dst, self.size, outcome, reason)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FabricStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: BTreeMap<DropReason, u64>,
}

impl FabricStats {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }
}

/// Addresses and link profiles of a fabric.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub fleet_host: Ipv4Addr,
    pub relays: Vec<RelayNode>,
    pub wired: Vec<LinkProfile>,
    pub wireless: Vec<LinkProfile>,
}

impl Topology {
    /// `n` relays at `10.0.0.11`, `10.0.0.12`, ... sharing the same profiles.
    pub fn uniform(n: usize, wired: LinkProfile, wireless: LinkProfile, forward: DelayModel) -> Self {
        Self {
            fleet_host: DEFAULT_FLEET_HOST,
            relays: (0..n).map(|i| RelayNode::new(Self::relay_addr(i), forward)).collect(),
            wired: vec![wired; n],
            wireless: vec![wireless; n],
        }
    }

    /// Calibrated profiles on every path.
    pub fn calibrated(n: usize) -> Self {
        let mut topo = Self::uniform(
            n,
            LinkProfile::calibrated_wired(),
            LinkProfile::calibrated_wireless(),
            DelayModel::fixed(0.0),
        );
        for (i, relay) in topo.relays.iter_mut().enumerate() {
            *relay = RelayNode::calibrated(Self::relay_addr(i));
        }
        topo
    }

    pub fn relay_addr(i: usize) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 0, 11 + i as u8)
    }
}

const DOWN: usize = 0;
const UP: usize = 1;

struct RelayRuntime {
    node: RelayNode,
    sampler: DelaySampler,
    rng: ChaCha8Rng,
    last_out: [f64; 2],
}

pub struct Fabric {
    fleet_host: Ipv4Addr,
    relays: Vec<RelayRuntime>,
    wired: Vec<Link>,
    wireless: Vec<Link>,
    link_rngs: Vec<ChaCha8Rng>,
    queue: BinaryHeap<Pending>,
    next_id: u64,
    last_send: f64,
    now: f64,
    log: Option<Vec<FabricEvent>>,
    stats: FabricStats,
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Builds a fabric from a topology; `seed` determines every random draw it will make.
pub fn build_fabric(topology: &Topology, seed: u64) -> Result<Fabric, FabricError> {
    let n = topology.relays.len();
    if n == 0 {
        return Err(FabricError::NoRelays);
    }
    if topology.wired.len() != n || topology.wireless.len() != n {
        return Err(FabricError::ProfileCount { relays: n, wired: topology.wired.len(), wireless: topology.wireless.len() });
    }
    for (i, r) in topology.relays.iter().enumerate() {
        if topology.relays[..i].iter().any(|o| o.fleet_side_addr == r.fleet_side_addr) || r.fleet_side_addr == topology.fleet_host {
            return Err(FabricError::DuplicateAddress(r.fleet_side_addr));
        }
    }
    // stream layout: 2i wired, 2i+1 wireless, 2n+i relay i
    let mut link_rngs: Vec<ChaCha8Rng> = (0..2 * n as u64).map(|k| stream(seed, k)).collect();
    let mut wired = Vec::with_capacity(n);
    let mut wireless = Vec::with_capacity(n);
    for i in 0..n {
        wired.push(Link::new(topology.wired[i].clone(), &mut link_rngs[2 * i])?);
        wireless.push(Link::new(topology.wireless[i].clone(), &mut link_rngs[2 * i + 1])?);
    }
    let relays = topology
        .relays
        .iter()
        .enumerate()
        .map(|(i, node)| {
            Ok(RelayRuntime {
                sampler: DelaySampler::new(&node.forward_latency)?,
                node: node.clone(),
                rng: stream(seed, (2 * n + i) as u64),
                last_out: [0.0; 2],
            })
        })
        .collect::<Result<Vec<_>, FabricError>>()?;
    Ok(Fabric {
        fleet_host: topology.fleet_host,
        relays,
        wired,
        wireless,
        link_rngs,
        queue: BinaryHeap::new(),
        next_id: 0,
        last_send: f64::NEG_INFINITY,
        now: 0.0,
        log: None,
        stats: FabricStats::default(),
    })
}

impl Fabric {
    pub fn relay_count(&self) -> usize {
        self.relays.len()
    }

    pub fn link_count(&self) -> usize {
        self.wired.len() + self.wireless.len()
    }

    pub fn fleet_host(&self) -> Ipv4Addr {
        self.fleet_host
    }

    pub fn relay(&self, i: usize) -> Option<&RelayNode> {
        self.relays.get(i).map(|r| &r.node)
    }

    /// Fleet-visible address of drone `i`'s port `drone_port`.
    pub fn fleet_addr_of(&self, i: usize, drone_port: u16) -> Option<SocketAddrV4> {
        let relay = &self.relays.get(i)?.node;
        relay
            .port_map
            .iter()
            .find(|(d, _)| *d == drone_port)
            .map(|(_, f)| SocketAddrV4::new(relay.fleet_side_addr, *f))
    }

    /// Which drone sits behind a fleet-side address, if any.
    pub fn drone_behind(&self, addr: Ipv4Addr) -> Option<usize> {
        self.relays.iter().position(|r| r.node.fleet_side_addr == addr)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn stats(&self) -> &FabricStats {
        &self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn enable_log(&mut self) {
        self.log.get_or_insert_with(Vec::new);
    }

    /// Logged events sorted by time (stable for equal times).
    pub fn events(&self) -> Vec<FabricEvent> {
        let mut events = self.log.clone().unwrap_or_default();
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        events
    }

    /// Writes the log as tab-separated lines: `t src dst size outcome reason`.
    pub fn write_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        for event in self.events() {
            writeln!(out, "{event}")?;
        }
        Ok(())
    }

    fn record(&mut self, t: f64, datagram: &Datagram, outcome: Outcome) {
        if let Some(log) = self.log.as_mut() {
            log.push(FabricEvent { t, src: datagram.src, dst: datagram.dst, size: datagram.payload.len(), outcome });
        }
    }

    fn drop_now(&mut self, id: u64, at: f64, datagram: &Datagram, reason: DropReason) -> SendOutcome {
        *self.stats.dropped.entry(reason).or_default() += 1;
        self.record(at, datagram, Outcome::Dropped(reason));
        SendOutcome::Dropped { id, at, reason }
    }

    fn forward(&mut self, i: usize, dir: usize, t: f64) -> f64 {
        let relay = &mut self.relays[i];
        let out = (t + relay.sampler.sample_ms(&mut relay.rng) / 1000.0).max(relay.last_out[dir]);
        relay.last_out[dir] = out;
        out
    }

    fn wired_hop(&mut self, i: usize, dir: usize, t: f64, size: usize) -> Result<f64, DropReason> {
        self.wired[i].traverse(dir, t, size, &mut self.link_rngs[2 * i])
    }

    fn wireless_hop(&mut self, i: usize, dir: usize, t: f64, size: usize) -> Result<f64, DropReason> {
        self.wireless[i].traverse(dir, t, size, &mut self.link_rngs[2 * i + 1])
    }

    /// Sends `datagram` from node `src` at `t_now`. Sends must come in non-decreasing time.
    pub fn send(&mut self, src: NodeId, datagram: Datagram, t_now: f64) -> Result<SendOutcome, FabricError> {
        if t_now < self.last_send {
            return Err(FabricError::TimeWentBackwards { t: t_now, last: self.last_send });
        }
        let (relay, dir) = match src {
            NodeId::Fleet => {
                let i = self.drone_behind(*datagram.dst.ip()).ok_or(FabricError::UnknownAddress(datagram.dst))?;
                (i, DOWN)
            }
            NodeId::Drone(i) if i < self.relays.len() => {
                if *datagram.dst.ip() != self.fleet_host {
                    return Err(FabricError::UnknownAddress(datagram.dst));
                }
                (i, UP)
            }
            other => return Err(FabricError::UnknownNode(other)),
        };
        self.last_send = t_now;
        let id = self.next_id;
        self.next_id += 1;
        self.stats.sent += 1;
        let size = datagram.payload.len();

        let first = if dir == DOWN {
            self.wired_hop(relay, dir, t_now, size)
        } else {
            self.wireless_hop(relay, dir, t_now, size)
        };
        let at_relay = match first {
            Ok(t) => t,
            Err(reason) => return Ok(self.drop_now(id, t_now, &datagram, reason)),
        };
        let translated = match self.relays[relay].node.translate(&datagram) {
            Ok(d) => d,
            Err(reason) => return Ok(self.drop_now(id, at_relay, &datagram, reason)),
        };
        let leaving = self.forward(relay, dir, at_relay);
        let second = if dir == DOWN {
            self.wireless_hop(relay, dir, leaving, size)
        } else {
            self.wired_hop(relay, dir, leaving, size)
        };
        let deliver_at = match second {
            Ok(t) => t,
            Err(reason) => return Ok(self.drop_now(id, leaving, &datagram, reason)),
        };
        let to = if dir == DOWN { NodeId::Drone(relay) } else { NodeId::Fleet };
        self.queue.push(Pending(Delivery { id, to, datagram: translated, sent_at: t_now, deliver_at }));
        Ok(SendOutcome::Scheduled { id, deliver_at })
    }

    /// Releases every delivery due at or before `until`, in delivery order.
    pub fn poll(&mut self, until: f64) -> Vec<Delivery> {
        let mut out = Vec::new();
        while self.queue.peek().is_some_and(|p| p.0.deliver_at <= until) {
            let Pending(d) = self.queue.pop().expect("peeked");
            self.stats.delivered += 1;
            self.record(d.deliver_at, &d.datagram, Outcome::Delivered);
            out.push(d);
        }
        self.now = self.now.max(until);
        out
    }

    /// Drains every queued delivery regardless of time.
    pub fn flush(&mut self) -> Vec<Delivery> {
        self.poll(f64::INFINITY)
    }
}
