//! Cycle-by-cycle queue length estimation from a single lane's loop data.
//!
//! The advanced loop sits `L_d` upstream of the stop bar. Three
//! breakpoints in its data drive the estimate: A and B bound the period
//! the queue stands on the loop, C marks the end of the discharging queue.
//! Without A the queue never reached the loop and a short-queue counter is
//! used; without C the lane is oversaturated and the last estimate is held.

use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::metrics::{flow_from_events, space_mean_speed, TrafficState};
use crate::sim::{CycleBounds, DetectorEvent, LaneOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum BreakpointVariant {
    /// First vehicle after the long gap.
    C,
    /// Last vehicle before the long gap, i.e. the end of the queue.
    CPrime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum ShortQueueMethod {
    InputOutput,
    /// Expansion model on the stop-bar loop with `L_d = 0`.
    ExpansionOnStopBar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum LongQueueModel {
    Basic,
    Expansion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum MethodTag {
    InputOutput,
    Basic,
    Expansion,
    OversaturatedHold,
}

impl MethodTag {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::InputOutput => "inputOutput",
            MethodTag::Basic => "basic",
            MethodTag::Expansion => "expansion",
            MethodTag::OversaturatedHold => "oversaturatedHold",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LiuConfig {
    /// Distance of the advanced loop from the stop bar, m.
    pub detector_distance: f64,
    pub jam_density: f64,
    pub block_threshold: f64,
    pub gap_threshold: f64,
    pub discharge_settle: f64,
    pub variant: BreakpointVariant,
    pub short_queue: ShortQueueMethod,
    pub model: LongQueueModel,
    /// Free speed used to shift the end of green for the input-output count.
    pub free_speed: f64,
    pub default_v3: f64,
    /// Discharge wave magnitude when B gives none.
    pub default_v2: f64,
}

impl Default for LiuConfig {
    fn default() -> Self {
        LiuConfig {
            detector_distance: 122.0,
            jam_density: 0.15,
            block_threshold: 3.0,
            gap_threshold: 2.5,
            discharge_settle: 5.0,
            variant: BreakpointVariant::CPrime,
            short_queue: ShortQueueMethod::InputOutput,
            model: LongQueueModel::Expansion,
            free_speed: 13.89,
            default_v3: 15.0,
            default_v2: 5.0,
        }
    }
}

impl LiuConfig {
    pub fn validate(&self) -> Result<(), LiuError> {
        let ok = self.detector_distance >= 0.0
            && self.jam_density > 0.0
            && self.block_threshold > 0.0
            && self.gap_threshold > 0.0
            && self.discharge_settle >= 0.0
            && self.free_speed > 0.0
            && self.default_v3 > 0.0
            && self.default_v2 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(LiuError::InvalidConfig)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LiuError {
    DegenerateDensities,
    InvalidBreakpoints,
    InvalidConfig,
}

impl fmt::Display for LiuError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LiuError::DegenerateDensities => "density differences too small for a shockwave speed",
            LiuError::InvalidBreakpoints => "breakpoints out of order or non-positive wave speeds",
            LiuError::InvalidConfig => "estimator thresholds and densities must be positive",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ShockwaveSet {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v4: f64,
    pub v5: f64,
    pub v2_alt: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct StateEstimate {
    pub state: TrafficState,
    /// False with fewer than two events in the window.
    pub reliable: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct QueueEstimate {
    pub l_max: f64,
    pub t_max: f64,
    pub l_min: Option<f64>,
    pub t_min: Option<f64>,
    pub n_max: f64,
    pub method: MethodTag,
    pub red_start: f64,
    pub green_start: f64,
    pub breakpoint_a: Option<f64>,
    pub breakpoint_b: Option<f64>,
    pub breakpoint_c: Option<f64>,
    /// A default wave speed replaced an unusable estimate.
    pub defaults_used: bool,
}

/// One signal cycle of a lane with the whole run's loop data.
#[derive(Clone, Copy, Debug)]
pub struct CycleObservation<'a> {
    pub index: usize,
    pub bounds: CycleBounds,
    /// Advanced-loop passages, time ordered.
    pub advanced: &'a [DetectorEvent],
    pub stop_bar: &'a [DetectorEvent],
    /// Advanced-loop occupancy fraction per second.
    pub advanced_occupancy: &'a [f64],
}

const FULL: f64 = 1.0 - 1e-6;

/// 1 where the loop was fully occupied this second and the one before.
pub fn binary_occupancy(occupancy: &[f64]) -> Vec<u8> {
    (0..occupancy.len()).map(|t| (t > 0 && occupancy[t] >= FULL && occupancy[t - 1] >= FULL) as u8).collect()
}

/// First run of ones in `window` lasting at least `block_threshold`
/// seconds, as (start, end) with `end` one past the last one.
pub fn detect_breakpoints_ab(binary: &[u8], window: (usize, usize), block_threshold: f64) -> Option<(f64, f64)> {
    let end = window.1.min(binary.len());
    let mut t = window.0;
    while t < end {
        if binary[t] == 1 {
            let start = t;
            while t < end && binary[t] == 1 {
                t += 1;
            }
            if (t - start) as f64 >= block_threshold {
                return Some((start as f64, t as f64));
            }
        } else {
            t += 1;
        }
    }
    None
}

/// Breakpoint C: the first gap above the threshold among vehicles passing
/// after `after`. The vehicle following the gap must pass before `until`;
/// otherwise the queue never cleared the loop and there is no C.
pub fn detect_breakpoint_c(
    events: &[DetectorEvent],
    after: f64,
    until: f64,
    gap_threshold: f64,
    variant: BreakpointVariant,
) -> Option<f64> {
    for e in events.iter().filter(|e| e.time > after && e.time < until) {
        if e.time_gap > gap_threshold {
            let next = e.time + e.occupancy_time + e.time_gap;
            if next >= until {
                return None;
            }
            return Some(match variant {
                BreakpointVariant::CPrime => e.time,
                BreakpointVariant::C => next,
            });
        }
    }
    None
}

/// Flow, density and space-mean speed over passages in `[window.0, window.1)`.
pub fn estimate_traffic_state(events: &[DetectorEvent], window: (f64, f64)) -> StateEstimate {
    let sel: Vec<&DetectorEvent> =
        events.iter().filter(|e| e.time >= window.0 && e.time < window.1 && e.speed > 0.0).collect();
    if sel.len() < 2 {
        return StateEstimate { state: TrafficState::default(), reliable: false };
    }
    let pairs: Vec<(f64, f64)> = sel.iter().map(|e| (e.occupancy_time, e.time_gap)).collect();
    let speeds: Vec<f64> = sel.iter().map(|e| e.speed).collect();
    let (Ok(q), Ok(u)) = (flow_from_events(&pairs), space_mean_speed(&speeds)) else {
        return StateEstimate { state: TrafficState::default(), reliable: false };
    };
    StateEstimate { state: TrafficState { q, k: q / u, u_s: u }, reliable: true }
}

fn ratio(num: f64, den: f64) -> Result<f64, LiuError> {
    if den.abs() < 1e-9 {
        Err(LiuError::DegenerateDensities)
    } else {
        Ok(num / den)
    }
}

/// Wave speeds of the queuing cycle. `breakpoints` carries (T_A, T_B).
pub fn shockwave_velocities(
    arrival: TrafficState,
    discharge: TrafficState,
    jam_density: f64,
    breakpoints: Option<(f64, f64)>,
    detector_distance: f64,
    green_start: f64,
    next_arrival: Option<TrafficState>,
) -> Result<ShockwaveSet, LiuError> {
    let (qa, ka) = (arrival.q, arrival.k);
    let (qm, km) = (discharge.q, discharge.k);
    let v1 = ratio(-qa, jam_density - ka)?;
    let v2 = ratio(qm, km - jam_density)?;
    let v3 = ratio(qm - qa, km - ka)?;
    let v4 = ratio(-qm, jam_density - km)?;
    let v5 = match next_arrival {
        Some(n) => ratio(-n.q, jam_density - n.k)?,
        None => v1,
    };
    let v2_alt = match breakpoints {
        Some((_, tb)) => Some(ratio(detector_distance, tb - green_start)?),
        None => None,
    };
    Ok(ShockwaveSet { v1, v2, v3, v4, v5, v2_alt })
}

/// Maximum queue from breakpoints B and C; also the minimum queue at the
/// meeting of the departure wave with the next cycle's stopping wave.
pub fn basic_model(
    t_b: f64,
    t_c: f64,
    v2_mag: f64,
    v3: f64,
    detector_distance: f64,
    next_red_start: f64,
) -> Result<QueueEstimate, LiuError> {
    if !(t_c >= t_b) || !(v2_mag > 0.0) || !(v3 > 0.0) {
        return Err(LiuError::InvalidBreakpoints);
    }
    let l_max = detector_distance + (t_c - t_b) / (1.0 / v2_mag + 1.0 / v3);
    let t_max = t_b + (l_max - detector_distance) / v2_mag;
    // the stopping wave travels as fast as the discharge wave
    let v4_mag = v2_mag;
    let l_min = (l_max / v3 + t_max - next_red_start) / (1.0 / v3 + 1.0 / v4_mag);
    let t_min = next_red_start + l_min / v4_mag;
    Ok(QueueEstimate {
        l_max,
        t_max,
        l_min: Some(l_min),
        t_min: Some(t_min),
        n_max: 0.0,
        method: MethodTag::Basic,
        red_start: 0.0,
        green_start: 0.0,
        breakpoint_a: None,
        breakpoint_b: Some(t_b),
        breakpoint_c: Some(t_c),
        defaults_used: false,
    })
}

/// Maximum queue from the count of vehicles passing before C.
pub fn expansion_model(
    count: f64,
    jam_density: f64,
    detector_distance: f64,
    v2_mag: f64,
    green_start: f64,
) -> QueueEstimate {
    let l_max = count / jam_density + detector_distance;
    QueueEstimate {
        l_max,
        t_max: green_start + l_max / v2_mag,
        l_min: None,
        t_min: None,
        n_max: 0.0,
        method: MethodTag::Expansion,
        red_start: 0.0,
        green_start,
        breakpoint_a: None,
        breakpoint_b: None,
        breakpoint_c: None,
        defaults_used: false,
    }
}

/// Queued vehicles at the start of green: the residual of the previous
/// cycle plus the red-time arrivals.
pub fn input_output_method(n_max_prev: f64, n_left_prev: f64, n_arrived_green: f64, n_arrived_red: f64) -> f64 {
    (n_max_prev - n_left_prev + n_arrived_green).max(0.0) + n_arrived_red
}

fn count_in(events: &[DetectorEvent], from: f64, to: f64) -> usize {
    events.iter().filter(|e| e.time >= from && e.time < to).count()
}

fn count_through(events: &[DetectorEvent], from: f64, to: f64) -> usize {
    events.iter().filter(|e| e.time >= from && e.time <= to).count()
}

/// Estimate for one cycle, chaining from the previous cycle's estimate.
pub fn estimate_cycle(obs: &CycleObservation<'_>, cfg: &LiuConfig, prev: Option<&QueueEstimate>) -> QueueEstimate {
    let b = obs.bounds;
    let kj = cfg.jam_density;
    let ld = cfg.detector_distance;
    let lo = crate::math::floor(b.red_start).max(0.0) as usize;
    let hi = crate::math::ceil(b.next_red_start) as usize;
    let binary = binary_occupancy(obs.advanced_occupancy);
    let ab = detect_breakpoints_ab(&binary, (lo, hi), cfg.block_threshold);
    let v2_default = cfg.default_v2;

    let Some((ta, tb)) = ab else {
        return short_queue(obs, cfg, prev, v2_default);
    };
    let mut est = match detect_breakpoint_c(obs.advanced, tb, b.next_red_start, cfg.gap_threshold, cfg.variant) {
        None => {
            let l_max = prev.map(|p| p.l_max).unwrap_or(ld);
            QueueEstimate {
                l_max,
                t_max: b.green_start + l_max / v2_default,
                l_min: None,
                t_min: None,
                n_max: l_max * kj,
                method: MethodTag::OversaturatedHold,
                red_start: b.red_start,
                green_start: b.green_start,
                breakpoint_a: None,
                breakpoint_b: None,
                breakpoint_c: None,
                defaults_used: false,
            }
        }
        Some(tc) => {
            let mut defaults = false;
            let discharge =
                estimate_traffic_state(obs.advanced, (b.green_start + cfg.discharge_settle, b.next_red_start));
            let arrival_from = prev.and_then(|p| p.breakpoint_c).filter(|&c| c < ta).unwrap_or(b.red_start);
            let arrival = estimate_traffic_state(obs.advanced, (arrival_from, ta));
            let waves = if discharge.reliable && arrival.reliable {
                shockwave_velocities(arrival.state, discharge.state, kj, Some((ta, tb)), ld, b.green_start, None).ok()
            } else {
                None
            };
            let v2_mag = if tb > b.green_start && ld > 0.0 {
                ld / (tb - b.green_start)
            } else if let Some(w) = waves.filter(|w| w.v2 < 0.0) {
                w.v2.abs()
            } else {
                defaults = true;
                v2_default
            };
            let v3 = match waves.filter(|w| w.v3 > 0.0 && w.v3.is_finite()) {
                Some(w) => w.v3,
                None => {
                    defaults = true;
                    cfg.default_v3
                }
            };
            let mut e = match cfg.model {
                LongQueueModel::Basic => basic_model(tb, tc, v2_mag, v3, ld, b.next_red_start).expect("C follows B"),
                LongQueueModel::Expansion => {
                    let n = count_through(obs.advanced, b.green_start, tc) as f64;
                    expansion_model(n, kj, ld, v2_mag, b.green_start)
                }
            };
            e.defaults_used = defaults;
            e.breakpoint_c = Some(tc);
            e
        }
    };
    est.n_max = est.l_max * kj;
    est.red_start = b.red_start;
    est.green_start = b.green_start;
    est.breakpoint_a = Some(ta);
    est.breakpoint_b = Some(tb);
    est
}

fn short_queue(
    obs: &CycleObservation<'_>,
    cfg: &LiuConfig,
    prev: Option<&QueueEstimate>,
    v2_default: f64,
) -> QueueEstimate {
    let b = obs.bounds;
    let kj = cfg.jam_density;
    match cfg.short_queue {
        ShortQueueMethod::InputOutput => {
            // arrivals this close to red reach the line after it turns red
            let shifted = b.red_start - cfg.detector_distance / cfg.free_speed;
            let (n_prev, left, arrived_green, red_from) = match prev {
                Some(p) => (
                    p.n_max,
                    // a vehicle waiting at the line passed the loop during red
                    count_in(obs.stop_bar, p.red_start, b.red_start) as f64,
                    count_in(obs.advanced, p.green_start, shifted) as f64,
                    shifted,
                ),
                None => (0.0, 0.0, 0.0, shifted.max(0.0).min(b.red_start)),
            };
            let arrived_red = count_in(obs.advanced, red_from, b.green_start) as f64;
            let n = input_output_method(n_prev, left, arrived_green, arrived_red);
            QueueEstimate {
                l_max: n / kj,
                t_max: b.green_start,
                l_min: None,
                t_min: None,
                n_max: n,
                method: MethodTag::InputOutput,
                red_start: b.red_start,
                green_start: b.green_start,
                breakpoint_a: None,
                breakpoint_b: None,
                breakpoint_c: None,
                defaults_used: false,
            }
        }
        ShortQueueMethod::ExpansionOnStopBar => {
            let tc = detect_breakpoint_c(obs.stop_bar, b.green_start, b.next_red_start, cfg.gap_threshold, cfg.variant);
            let n = match tc {
                Some(tc) => count_through(obs.stop_bar, b.green_start, tc),
                None => count_in(obs.stop_bar, b.green_start, b.next_red_start),
            } as f64;
            let mut e = expansion_model(n, kj, 0.0, v2_default, b.green_start);
            e.red_start = b.red_start;
            e.n_max = n;
            e.breakpoint_c = tc;
            e
        }
    }
}

fn flatten(records: &[crate::sim::E1Record]) -> Vec<DetectorEvent> {
    records.iter().flat_map(|r| r.events.iter().copied()).collect()
}

/// Estimates for every complete cycle of a simulated lane.
pub fn estimate_lane(lane: &LaneOutput, cfg: &LiuConfig) -> Vec<QueueEstimate> {
    let advanced = flatten(&lane.advanced);
    let stop_bar = flatten(&lane.stop_bar);
    let occupancy: Vec<f64> = lane.advanced.iter().map(|r| r.occupancy).collect();
    let mut out: Vec<QueueEstimate> = Vec::with_capacity(lane.cycles.len());
    for (index, &bounds) in lane.cycles.iter().enumerate() {
        let obs = CycleObservation {
            index,
            bounds,
            advanced: &advanced,
            stop_bar: &stop_bar,
            advanced_occupancy: &occupancy,
        };
        let e = estimate_cycle(&obs, cfg, out.last());
        out.push(e);
    }
    out
}
