//! Microscopic grid simulator with loop (point) and area detectors.
//!
//! Vehicles follow a discrete safe-speed rule, signals are fixed-time and
//! every detector is sampled once per simulated second.

mod engine;
mod tls;
mod trips;

use alloc::string::String;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub use engine::{run_simulation, run_trips, Simulation, VehicleView};
pub use tls::{CycleBounds, Phase, TlsMode, TlsProgram};
pub use trips::{generate_trips, shortest_route, Trip, TripTable};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct VehicleParams {
    pub free_speed: f64,
    pub accel: f64,
    /// Body length plus the standstill gap; its reciprocal is the jam density.
    pub effective_length: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams { free_speed: 13.89, accel: 2.6, effective_length: 6.67 }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SimConfig {
    pub tls_mode: TlsMode,
    /// Green time of every phase of the mode's default program.
    pub green_time: f64,
    /// Replaces the mode's default program when set.
    pub program: Option<TlsProgram>,
    pub dt: f64,
    pub vehicle: VehicleParams,
    pub lane_changing: bool,
    pub halt_speed: f64,
    /// A permissive left turn waits while an opposing vehicle is this many
    /// seconds from the stop bar.
    pub yield_horizon: f64,
    /// Seconds a vehicle stuck on a lane that cannot serve its turn waits
    /// before picking another turn.
    pub reroute_patience: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tls_mode: TlsMode::Simplified,
            green_time: 30.0,
            program: None,
            dt: 0.5,
            vehicle: VehicleParams::default(),
            lane_changing: false,
            halt_speed: 0.1,
            yield_horizon: 5.0,
            reroute_patience: 15.0,
        }
    }
}

impl SimConfig {
    pub fn with_mode(tls_mode: TlsMode) -> Self {
        SimConfig { tls_mode, ..Default::default() }
    }

    pub fn tls_program(&self) -> TlsProgram {
        self.program.clone().unwrap_or_else(|| TlsProgram::for_mode(self.tls_mode, self.green_time))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let v = &self.vehicle;
        if !(self.dt > 0.0) || self.dt > 1.0 {
            return Err(SimError::Config(alloc::format!("dt must be in (0, 1], got {}", self.dt)));
        }
        let n = crate::math::round(1.0 / self.dt);
        if (n * self.dt - 1.0).abs() > 1e-9 {
            return Err(SimError::Config(alloc::format!("dt {} does not divide one second", self.dt)));
        }
        if !(v.free_speed > 0.0 && v.accel > 0.0 && v.effective_length > 0.0) {
            return Err(SimError::Config("vehicle parameters must be positive".into()));
        }
        if !self.tls_program().is_valid() {
            return Err(SimError::Config("signal phases must have positive durations".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SimError {
    Config(String),
}

impl core::fmt::Display for SimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SimError::Config(m) => write!(f, "invalid simulation config: {m}"),
        }
    }
}

/// One vehicle passing a loop detector.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct DetectorEvent {
    /// Time the front reached the loop.
    pub time: f64,
    /// Occupancy time t_o.
    pub occupancy_time: f64,
    /// Gap until the next vehicle reaches the loop (to the end of the run
    /// for the last vehicle).
    pub time_gap: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct E1Record {
    pub time: u32,
    pub vehicle_count: u32,
    pub occupancy: f64,
    pub mean_speed: f64,
    pub events: Vec<DetectorEvent>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct E2Record {
    pub time: u32,
    pub started_halts: u32,
    pub max_jam_length: f64,
    pub n_veh_seen: u32,
    /// Vehicles that joined the lane during this second.
    pub entered: u32,
    /// Vehicles that left the lane during this second.
    pub left: u32,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LaneOutput {
    pub lane: usize,
    pub stop_bar: Vec<E1Record>,
    pub advanced: Vec<E1Record>,
    pub e2: Vec<E2Record>,
    /// 1 while the lane's signal is green; exit lanes are always 1.
    pub tls: Vec<u8>,
    pub cycles: Vec<CycleBounds>,
    /// Vehicles that halted at least twice while on this lane.
    pub multi_halts: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SimStats {
    pub trips: usize,
    pub inserted: usize,
    pub exited: usize,
    pub on_network: usize,
    pub not_inserted: usize,
    pub reroutes: usize,
    pub lane_changes: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct SimulationOutput {
    pub seed: u64,
    pub arrival_rate: f64,
    pub duration: usize,
    pub tls_mode: TlsMode,
    pub lanes: Vec<LaneOutput>,
    pub stats: SimStats,
}

/// Per-cycle ground truth for the queue of a lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum GroundTruth {
    /// Vehicles that started a halt during the cycle.
    StartedHalts,
    /// Longest halted platoon during the cycle, in vehicles.
    MaxJam,
}

impl GroundTruth {
    pub fn for_mode(mode: TlsMode) -> Self {
        match mode {
            TlsMode::Simplified => GroundTruth::StartedHalts,
            TlsMode::Realistic => GroundTruth::MaxJam,
        }
    }
}

/// Ground-truth queue length in vehicles for one cycle `[red_start, next_red_start)`.
pub fn cycle_ground_truth(lane: &LaneOutput, cycle: &CycleBounds, mode: GroundTruth, effective_length: f64) -> f64 {
    let lo = crate::math::floor(cycle.red_start) as usize;
    let hi = (crate::math::ceil(cycle.next_red_start) as usize).min(lane.e2.len());
    let window = &lane.e2[lo.min(hi)..hi];
    match mode {
        GroundTruth::StartedHalts => window.iter().map(|r| r.started_halts as f64).sum(),
        GroundTruth::MaxJam => window.iter().map(|r| r.max_jam_length).fold(0.0, f64::max) / effective_length,
    }
}
