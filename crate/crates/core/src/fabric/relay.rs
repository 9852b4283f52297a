use std::net::{Ipv4Addr, SocketAddrV4};

use serde::{Deserialize, Serialize};

use super::delay::DelayModel;
use super::{Datagram, DropReason};

/// The address every SDK drone answers on inside its own access-point network.
pub const DRONE_SIDE_ADDR: Ipv4Addr = Ipv4Addr::new(192, 168, 10, 1);

/// Bridge between one drone's private network and the fleet network.
///
/// Downstream datagrams addressed to `fleet_side_addr:fleet_port` are
/// rewritten to `drone_side_addr:drone_port`; upstream datagrams from
/// `drone_side_addr:drone_port` leave with source `fleet_side_addr:fleet_port`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelayNode {
    pub drone_side_addr: Ipv4Addr,
    pub fleet_side_addr: Ipv4Addr,
    pub forward_latency: DelayModel,
    /// `(drone_port, fleet_port)` pairs.
    pub port_map: Vec<(u16, u16)>,
}

impl RelayNode {
    /// Relay with an identity port map over the three SDK ports.
    pub fn new(fleet_side_addr: Ipv4Addr, forward_latency: DelayModel) -> Self {
        Self {
            drone_side_addr: DRONE_SIDE_ADDR,
            fleet_side_addr,
            forward_latency,
            port_map: vec![(8889, 8889), (8890, 8890), (11111, 11111)],
        }
    }

    /// Calibrated forwarding cost.
    pub fn calibrated(fleet_side_addr: Ipv4Addr) -> Self {
        Self::new(fleet_side_addr, DelayModel::shifted_lognormal(0.03, 0.034, 0.08))
    }

    fn fleet_port(&self, drone_port: u16) -> Option<u16> {
        self.port_map.iter().find(|(d, _)| *d == drone_port).map(|(_, f)| *f)
    }

    fn drone_port(&self, fleet_port: u16) -> Option<u16> {
        self.port_map.iter().find(|(_, f)| *f == fleet_port).map(|(d, _)| *d)
    }

    /// Rewrites addresses for whichever direction the datagram travels; payload is untouched.
    pub fn translate(&self, datagram: &Datagram) -> Result<Datagram, DropReason> {
        let mut out = datagram.clone();
        if *datagram.dst.ip() == self.fleet_side_addr {
            let port = self.drone_port(datagram.dst.port()).ok_or(DropReason::NoMap)?;
            out.dst = SocketAddrV4::new(self.drone_side_addr, port);
            Ok(out)
        } else if *datagram.src.ip() == self.drone_side_addr {
            let port = self.fleet_port(datagram.src.port()).ok_or(DropReason::NoMap)?;
            out.src = SocketAddrV4::new(self.fleet_side_addr, port);
            Ok(out)
        } else {
            Err(DropReason::NoMap)
        }
    }
}
