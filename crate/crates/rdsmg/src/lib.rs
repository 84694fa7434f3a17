//! Radial distribution system toolkit: backward/forward sweep load flow,
//! loadability-index siting, analytical and particle-swarm sizing of
//! micro-grid sources, and penetration-level studies.
//!
//! All network data enters in physical units (kW, kVAr, ohms) and every
//! computation runs in per-unit on the bases supplied at load time.

pub mod cli;
pub mod loadflow;
pub mod netmodel;
pub mod report;
pub mod siting;
pub mod sizing;
pub mod swarm;

pub use loadflow::{min_voltage, objective, solve, DgKind, DgUnit, LoadFlowError, LoadFlowSolution, SolveOptions};
pub use netmodel::{build_topology, load_network, parse_network, total_load, BranchRecord, BusId, BusRecord, Network, NetworkError, Topology};
pub use siting::{mli_for_bus, rank_buses, MliRanking, MliValue};
pub use sizing::{analytical_size, apply_penetration, loss_coefficients, penetration_percent, size_units_sequential, AnalyticalSizing, LossCoefficients, PenetrationSpec, SizingError};
pub use swarm::{decode_position, fitness, optimize, step, DgTemplate, FitnessContext, Particle, SwarmConfig, SwarmError, SwarmResult};

#[cfg(test)]
pub(crate) mod testdata {
    pub(crate) const IEEE33: &str = include_str!("../data/ieee33.csv");
}
