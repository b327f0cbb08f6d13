use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::network::Side;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum TlsMode {
    /// Each approach direction is green on its own; no conflicting movements.
    Simplified,
    /// Opposing approaches share green; left turns yield to oncoming traffic.
    Realistic,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Phase {
    pub duration: f64,
    pub green: Vec<Side>,
}

/// A fixed-time program shared by every intersection.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TlsProgram {
    pub phases: Vec<Phase>,
}

/// One signal cycle of a lane: red from `red_start`, green from
/// `green_start`, ending when red returns at `next_red_start`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CycleBounds {
    pub red_start: f64,
    pub green_start: f64,
    pub next_red_start: f64,
}

impl TlsProgram {
    pub fn simplified(green: f64) -> Self {
        TlsProgram { phases: Side::ALL.iter().map(|&s| Phase { duration: green, green: vec![s] }).collect() }
    }

    pub fn realistic(green: f64) -> Self {
        TlsProgram {
            phases: vec![
                Phase { duration: green, green: vec![Side::North, Side::South] },
                Phase { duration: green, green: vec![Side::East, Side::West] },
            ],
        }
    }

    pub fn for_mode(mode: TlsMode, green: f64) -> Self {
        match mode {
            TlsMode::Simplified => TlsProgram::simplified(green),
            TlsMode::Realistic => TlsProgram::realistic(green),
        }
    }

    pub fn cycle_length(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    pub fn is_valid(&self) -> bool {
        !self.phases.is_empty() && self.phases.iter().all(|p| p.duration > 0.0)
    }

    pub fn is_green(&self, side: Side, t: f64) -> bool {
        let c = self.cycle_length();
        let mut tt = t - c * crate::math::floor(t / c);
        for p in &self.phases {
            if tt < p.duration {
                return p.green.contains(&side);
            }
            tt -= p.duration;
        }
        false
    }

    /// Times in `[0, horizon]` where the signal of `side` changes, with the new state.
    pub fn switches(&self, side: Side, horizon: f64) -> Vec<(f64, bool)> {
        let mut out = Vec::new();
        let mut state = self.is_green(side, 0.0);
        out.push((0.0, state));
        let mut t = 0.0;
        'outer: loop {
            for p in &self.phases {
                t += p.duration;
                if t > horizon {
                    break 'outer;
                }
                let g = self.is_green(side, t);
                if g != state {
                    out.push((t, g));
                    state = g;
                }
            }
        }
        out
    }

    /// Complete cycles ending no later than `horizon`. A lane that is red at
    /// time 0 starts its first cycle there.
    pub fn cycles(&self, side: Side, horizon: f64) -> Vec<CycleBounds> {
        let sw = self.switches(side, horizon);
        let reds: Vec<f64> = sw.iter().filter(|s| !s.1).map(|s| s.0).collect();
        let greens: Vec<f64> = sw.iter().filter(|s| s.1).map(|s| s.0).collect();
        let mut out = Vec::new();
        for w in reds.windows(2) {
            if let Some(&g) = greens.iter().find(|&&g| g > w[0] && g < w[1]) {
                out.push(CycleBounds { red_start: w[0], green_start: g, next_red_start: w[1] });
            }
        }
        out
    }

    /// Most recent switch to red at or before `t`, if the side is red at `t`.
    pub fn red_since(&self, side: Side, t: f64) -> Option<f64> {
        if self.is_green(side, t) {
            return None;
        }
        let c = self.cycle_length();
        let base = c * crate::math::floor(t / c);
        let mut start = None;
        let mut acc = base - c;
        let mut prev_green = false;
        // walk the previous and current cycle to find the last green→red edge
        for _ in 0..2 {
            for p in &self.phases {
                let g = p.green.contains(&side);
                if prev_green && !g && acc <= t {
                    start = Some(acc);
                }
                prev_green = g;
                acc += p.duration;
            }
        }
        start
    }
}
