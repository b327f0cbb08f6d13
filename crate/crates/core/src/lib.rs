//! Signalized grid networks, loop-detector queue estimation and a
//! graph-attention recurrent model, without `std`.
//!
//! The crate is split the way data flows: [`network`] builds the road grid
//! and its lane graph, [`sim`] produces detector streams, [`liu`] turns those
//! streams into per-cycle queue estimates, and [`model`] plus [`pipeline`]
//! learn the same quantity from windowed features. [`nn`] is the small
//! reverse-mode engine underneath the model.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod liu;
pub mod math;
pub mod metrics;
pub mod model;
pub mod network;
pub mod nn;
pub mod pipeline;
pub mod sim;

pub use network::{AdjacencyMatrix, LaneGraph, RoadNetwork};
pub use sim::{run_simulation, SimConfig, SimulationOutput, TlsMode};
