//! Point traffic quantities and error metrics.

use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub enum MetricsError {
    EmptyInput,
    NonPositiveSpeed,
    ZeroSpeed,
    LengthMismatch { observed: usize, estimated: usize },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyInput => f.write_str("empty input"),
            MetricsError::NonPositiveSpeed => f.write_str("speeds must be positive"),
            MetricsError::ZeroSpeed => f.write_str("density needs a positive speed"),
            MetricsError::LengthMismatch { observed, estimated } => {
                write!(f, "series lengths differ: {observed} observed vs {estimated} estimated")
            }
        }
    }
}

/// Flow (veh/s), density (veh/m) and space-mean speed (m/s).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrafficState {
    pub q: f64,
    pub k: f64,
    pub u_s: f64,
}

impl TrafficState {
    pub fn from_flow_speed(q: f64, u_s: f64) -> Result<Self, MetricsError> {
        Ok(TrafficState { q, k: density(q, u_s)?, u_s })
    }
}

/// Individual speed from occupancy time, `u = L_e / t_o`.
pub fn vehicle_speed(effective_length: f64, occupancy_time: f64) -> f64 {
    effective_length / occupancy_time
}

/// Harmonic mean of the individual speeds.
pub fn space_mean_speed(speeds: &[f64]) -> Result<f64, MetricsError> {
    if speeds.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut inv = 0.0;
    for &u in speeds {
        if !(u > 0.0) {
            return Err(MetricsError::NonPositiveSpeed);
        }
        inv += 1.0 / u;
    }
    Ok(speeds.len() as f64 / inv)
}

/// `1 / mean(t_o + t_g)` over `(t_o, t_g)` pairs.
pub fn flow_from_events(events: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if events.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: f64 = events.iter().map(|(o, g)| o + g).sum();
    Ok(events.len() as f64 / total)
}

pub fn density(q: f64, u_s: f64) -> Result<f64, MetricsError> {
    if !(u_s > 0.0) {
        return Err(MetricsError::ZeroSpeed);
    }
    Ok(q / u_s)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PressureInputs {
    pub saturation_flow: f64,
    pub own_queue: f64,
    /// `(routing proportion, downstream queue)` per output lane.
    pub outputs: Vec<(f64, f64)>,
}

pub fn lane_pressure(inputs: &PressureInputs) -> f64 {
    let downstream: f64 = inputs.outputs.iter().map(|(r, x)| r * x).sum();
    inputs.saturation_flow * (inputs.own_queue - downstream)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ErrorMetrics {
    /// Percent; `NaN` when every observation is zero.
    pub mape: f64,
    pub mae: f64,
    /// Terms left out of the MAPE mean because the observation was zero.
    pub mape_skipped: usize,
}

pub fn error_metrics(observed: &[f64], estimated: &[f64]) -> Result<ErrorMetrics, MetricsError> {
    if observed.len() != estimated.len() {
        return Err(MetricsError::LengthMismatch { observed: observed.len(), estimated: estimated.len() });
    }
    if observed.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut abs_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut pct_n = 0usize;
    for (&o, &e) in observed.iter().zip(estimated) {
        let d = (o - e).abs();
        abs_sum += d;
        if o != 0.0 {
            pct_sum += d / o.abs();
            pct_n += 1;
        }
    }
    let mape = if pct_n == 0 { f64::NAN } else { 100.0 * pct_sum / pct_n as f64 };
    Ok(ErrorMetrics { mape, mae: abs_sum / observed.len() as f64, mape_skipped: observed.len() - pct_n })
}

/// Mean absolute deviation of per-lane MAEs around their mean.
pub fn mad(per_lane_mae: &[f64]) -> Result<f64, MetricsError> {
    if per_lane_mae.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = per_lane_mae.len() as f64;
    let mean = per_lane_mae.iter().sum::<f64>() / n;
    Ok(per_lane_mae.iter().map(|m| (m - mean).abs()).sum::<f64>() / n)
}

/// Mean of `est - obs`; negative means the estimate runs low.
pub fn mean_signed_error(observed: &[f64], estimated: &[f64]) -> Result<f64, MetricsError> {
    if observed.len() != estimated.len() {
        return Err(MetricsError::LengthMismatch { observed: observed.len(), estimated: estimated.len() });
    }
    if observed.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let s: f64 = observed.iter().zip(estimated).map(|(o, e)| e - o).sum();
    Ok(s / observed.len() as f64)
}
