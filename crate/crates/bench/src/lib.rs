//! Benchmark fixtures shared by the criterion benches.

use swarmlab_core::config::FleetConfig;
use swarmlab_core::fabric::{Datagram, Fabric};

/// A 3-drone calibrated fabric and the fleet-side address of drone 0's command port.
pub fn calibrated_fabric(seed: u64) -> (Fabric, Datagram) {
    let config = FleetConfig::default();
    let fabric = swarmlab_core::fabric::build_fabric(&config.topology(), seed).expect("default topology builds");
    let dst = fabric.fleet_addr_of(0, config.drones.ports.command).expect("command port mapped");
    let src = std::net::SocketAddrV4::new(fabric.fleet_host(), config.drones.ports.command);
    (fabric, Datagram { src, dst, payload: b"rc 10 -20 5 0".to_vec().into() })
}
