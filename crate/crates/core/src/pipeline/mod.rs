//! Windowed design tensors, dataset splits, training and evaluation.
//!
//! Tensors are laid out `sims×T×N×F` (row-major) with lanes in network
//! order. Raw feature values stay in the [`Dataset`]; a [`Standardizer`]
//! fitted on the training split maps them into model space and back.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::liu::{estimate_lane, LiuConfig};
use crate::metrics::{error_metrics, mad, mean_signed_error};
use crate::model::{model_forward, model_loss_and_grads, Model, ModelConfig, ModelError};
use crate::nn::{optimizer_step, OptState, OptimizerKind, ParamSet, Tensor};
use crate::sim::{cycle_ground_truth, GroundTruth, LaneOutput, SimulationOutput};

pub const FEATURE_NAMES: [&str; 8] =
    ["stopCount", "stopOccupancy", "stopSpeed", "advCount", "advOccupancy", "advSpeed", "tlsGreen", "liuEstimate"];
pub const LIU_FEATURE: usize = 7;
pub const TARGET_NAMES: [&str; 2] = ["maxQueueLength", "nVehSeen"];

#[derive(Clone, Debug, PartialEq)]
pub enum PipelineError {
    LengthMismatch(String),
    InvalidFractions,
    TooFewSimulations { sims: usize, split: [usize; 3] },
    DivergenceDetected { epoch: usize },
    Shape(String),
    Model(ModelError),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::LengthMismatch(m) => write!(f, "stream length mismatch: {m}"),
            PipelineError::InvalidFractions => f.write_str("split fractions must be non-negative and sum to 1"),
            PipelineError::TooFewSimulations { sims, split } => {
                write!(f, "{sims} simulations give an empty split {split:?}")
            }
            PipelineError::DivergenceDetected { epoch } => {
                write!(f, "loss became non-finite in epoch {epoch}; best checkpoint kept")
            }
            PipelineError::Shape(m) => write!(f, "dataset shape: {m}"),
            PipelineError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        PipelineError::Model(e)
    }
}

/// A 1 Hz series built from scattered knots.
#[derive(Clone, Debug, PartialEq)]
pub struct Interpolated {
    pub values: Vec<f64>,
    /// There were no knots and `values` is all zero.
    pub empty: bool,
}

/// Piecewise-linear through `(t, value)` knots at `t = 0, 1, ..,
/// duration-1`, held constant outside the first and last knot.
pub fn liu_interpolate(knots: &[(f64, f64)], duration: usize) -> Interpolated {
    if knots.is_empty() {
        return Interpolated { values: vec![0.0; duration], empty: true };
    }
    let mut values = Vec::with_capacity(duration);
    let mut k = 0;
    for s in 0..duration {
        let t = s as f64;
        while k + 1 < knots.len() && knots[k + 1].0 <= t {
            k += 1;
        }
        let (t0, v0) = knots[k];
        let v = if t <= t0 || k + 1 == knots.len() {
            v0
        } else {
            let (t1, v1) = knots[k + 1];
            if t1 > t0 {
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            } else {
                v1
            }
        };
        values.push(v);
    }
    Interpolated { values, empty: false }
}

/// Per-cycle `(T_max, L_max)` knots of the Liu estimate for one lane.
pub fn liu_knots(lane: &LaneOutput, cfg: &LiuConfig) -> Vec<(f64, f64)> {
    let mut knots: Vec<(f64, f64)> = estimate_lane(lane, cfg).iter().map(|e| (e.t_max, e.l_max)).collect();
    knots.sort_by(|a, b| a.0.total_cmp(&b.0));
    knots
}

/// Per-cycle ground-truth knots in metres, placed at the second the
/// cycle's queue is complete.
pub fn truth_knots(lane: &LaneOutput, mode: GroundTruth, effective_length: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(lane.cycles.len());
    for c in &lane.cycles {
        let lo = crate::math::floor(c.red_start) as usize;
        let hi = (crate::math::ceil(c.next_red_start) as usize).min(lane.e2.len());
        if lo >= hi {
            continue;
        }
        let window = &lane.e2[lo..hi];
        let at = match mode {
            GroundTruth::MaxJam => {
                let mut best = 0;
                for (i, r) in window.iter().enumerate() {
                    if r.max_jam_length > window[best].max_jam_length {
                        best = i;
                    }
                }
                best
            }
            GroundTruth::StartedHalts => window.iter().rposition(|r| r.started_halts > 0).unwrap_or(0),
        };
        let v = cycle_ground_truth(lane, c, mode, effective_length) * effective_length;
        out.push(((lo + at) as f64, v));
    }
    out
}

/// Liu estimate and ground truth (both in metres) for every complete cycle
/// of a lane.
pub fn lane_cycle_errors(
    lane: &LaneOutput,
    cfg: &LiuConfig,
    mode: GroundTruth,
    effective_length: f64,
) -> Vec<(f64, f64)> {
    estimate_lane(lane, cfg)
        .iter()
        .zip(&lane.cycles)
        .map(|(e, c)| (e.l_max, cycle_ground_truth(lane, c, mode, effective_length) * effective_length))
        .collect()
}

/// Windowed features, targets and the Liu baseline for a set of runs.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Dataset {
    pub sims: usize,
    pub steps: usize,
    pub lanes: usize,
    pub features: usize,
    pub window: usize,
    pub feature_names: Vec<String>,
    /// `sims×T×N×features`, raw units.
    pub x: Vec<f64>,
    /// `sims×T×N×2`, metres and vehicles.
    pub y: Vec<f64>,
    /// `sims×T×N` window means of the interpolated Liu estimate, metres.
    pub liu: Vec<f64>,
    /// Lanes that carry a queue target.
    pub evaluated: Vec<bool>,
    pub seeds: Vec<u64>,
}

fn window_means(series: &[f64], window: usize, steps: usize) -> impl Iterator<Item = f64> + '_ {
    (0..steps).map(move |t| series[t * window..(t + 1) * window].iter().sum::<f64>() / window as f64)
}

impl Dataset {
    fn per_x(&self) -> usize {
        self.steps * self.lanes * self.features
    }

    fn per_y(&self) -> usize {
        self.steps * self.lanes * 2
    }

    pub fn x_at(&self, sim: usize, t: usize, lane: usize, f: usize) -> f64 {
        self.x[((sim * self.steps + t) * self.lanes + lane) * self.features + f]
    }

    pub fn y_at(&self, sim: usize, t: usize, lane: usize, k: usize) -> f64 {
        self.y[((sim * self.steps + t) * self.lanes + lane) * 2 + k]
    }

    pub fn liu_at(&self, sim: usize, t: usize, lane: usize) -> f64 {
        self.liu[(sim * self.steps + t) * self.lanes + lane]
    }

    pub fn x_tensor(&self) -> Tensor {
        Tensor::new(vec![self.sims, self.steps, self.lanes, self.features], self.x.clone()).expect("dataset shape")
    }

    pub fn y_tensor(&self) -> Tensor {
        Tensor::new(vec![self.sims, self.steps, self.lanes, 2], self.y.clone()).expect("dataset shape")
    }

    /// The listed simulations, in that order.
    pub fn select(&self, sims: &[usize]) -> Dataset {
        let (px, py, pl) = (self.per_x(), self.per_y(), self.steps * self.lanes);
        let mut out = Dataset {
            sims: sims.len(),
            x: Vec::new(),
            y: Vec::new(),
            liu: Vec::new(),
            seeds: Vec::new(),
            ..self.clone()
        };
        for &s in sims {
            out.x.extend_from_slice(&self.x[s * px..(s + 1) * px]);
            out.y.extend_from_slice(&self.y[s * py..(s + 1) * py]);
            out.liu.extend_from_slice(&self.liu[s * pl..(s + 1) * pl]);
            out.seeds.push(self.seeds[s]);
        }
        out
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let ok = self.x.len() == self.sims * self.per_x()
            && self.y.len() == self.sims * self.per_y()
            && self.liu.len() == self.sims * self.steps * self.lanes
            && self.evaluated.len() == self.lanes
            && self.seeds.len() == self.sims
            && self.feature_names.len() == self.features;
        if ok {
            Ok(())
        } else {
            Err(PipelineError::Shape(format!(
                "{} sims x {} steps x {} lanes x {} features does not match the stored buffers",
                self.sims, self.steps, self.lanes, self.features
            )))
        }
    }
}

/// Builds `X` and `Y` from simulation runs and per-lane Liu knots
/// (`liu[sim][lane]`). Lanes without signal cycles get zero queue targets.
pub fn build_design_tensors(
    runs: &[SimulationOutput],
    liu: &[Vec<Vec<(f64, f64)>>],
    window: usize,
    mode: GroundTruth,
    effective_length: f64,
) -> Result<Dataset, PipelineError> {
    let first = runs.first().ok_or_else(|| PipelineError::LengthMismatch("no simulations".into()))?;
    if window == 0 {
        return Err(PipelineError::Shape("window must be at least one second".into()));
    }
    let duration = first.duration;
    let lanes = first.lanes.len();
    if liu.len() != runs.len() {
        return Err(PipelineError::LengthMismatch(format!("{} runs but {} Liu sets", runs.len(), liu.len())));
    }
    let steps = duration / window;
    if steps == 0 {
        return Err(PipelineError::LengthMismatch(format!("duration {duration} s is shorter than one window")));
    }
    let evaluated: Vec<bool> = first.lanes.iter().map(|l| !l.cycles.is_empty()).collect();
    let n_feat = FEATURE_NAMES.len();
    let mut x = vec![0.0; runs.len() * steps * lanes * n_feat];
    let mut y = vec![0.0; runs.len() * steps * lanes * 2];
    let mut liu_w = vec![0.0; runs.len() * steps * lanes];
    for (s, run) in runs.iter().enumerate() {
        if run.duration != duration || run.lanes.len() != lanes || liu[s].len() != lanes {
            return Err(PipelineError::LengthMismatch(format!("simulation {s} differs in duration or lane count")));
        }
        for (n, lane) in run.lanes.iter().enumerate() {
            let lens = [lane.stop_bar.len(), lane.advanced.len(), lane.e2.len(), lane.tls.len()];
            if lens.iter().any(|&l| l != duration) {
                return Err(PipelineError::LengthMismatch(format!(
                    "simulation {s} lane {n}: stream lengths {lens:?} for duration {duration}"
                )));
            }
            let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n_feat);
            for rec in [&lane.stop_bar, &lane.advanced] {
                cols.push(rec.iter().map(|r| r.vehicle_count as f64).collect());
                cols.push(rec.iter().map(|r| r.occupancy).collect());
                cols.push(rec.iter().map(|r| r.mean_speed).collect());
            }
            cols.push(lane.tls.iter().map(|&g| g as f64).collect());
            let liu_series = liu_interpolate(&liu[s][n], duration).values;
            cols.push(liu_series);
            let queue = if evaluated[n] {
                liu_interpolate(&truth_knots(lane, mode, effective_length), duration).values
            } else {
                vec![0.0; duration]
            };
            let seen: Vec<f64> = lane.e2.iter().map(|r| r.n_veh_seen as f64).collect();
            for (f, col) in cols.iter().enumerate() {
                for (t, v) in window_means(col, window, steps).enumerate() {
                    x[((s * steps + t) * lanes + n) * n_feat + f] = v;
                }
            }
            for (t, v) in window_means(&cols[LIU_FEATURE], window, steps).enumerate() {
                liu_w[(s * steps + t) * lanes + n] = v;
            }
            for (k, col) in [queue, seen].iter().enumerate() {
                for (t, v) in window_means(col, window, steps).enumerate() {
                    y[((s * steps + t) * lanes + n) * 2 + k] = v;
                }
            }
        }
    }
    Ok(Dataset {
        sims: runs.len(),
        steps,
        lanes,
        features: n_feat,
        window,
        feature_names: FEATURE_NAMES.iter().map(|s| String::from(*s)).collect(),
        x,
        y,
        liu: liu_w,
        evaluated,
        seeds: runs.iter().map(|r| r.seed).collect(),
    })
}

/// Drops the Liu feature; the Liu baseline stays available for evaluation.
pub fn ablate_liu_feature(data: &Dataset) -> Result<Dataset, PipelineError> {
    let idx = data
        .feature_names
        .iter()
        .position(|n| n == FEATURE_NAMES[LIU_FEATURE])
        .ok_or_else(|| PipelineError::Shape("dataset has no Liu feature".into()))?;
    let f = data.features;
    let x =
        data.x.chunks(f).flat_map(|row| row.iter().enumerate().filter(|&(i, _)| i != idx).map(|(_, v)| *v)).collect();
    let mut names = data.feature_names.clone();
    names.remove(idx);
    Ok(Dataset { features: f - 1, feature_names: names, x, ..data.clone() })
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of simulation indices cut by `fractions`.
pub fn split_dataset(sims: usize, fractions: [f64; 3], seed: u64) -> Result<Split, PipelineError> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(PipelineError::InvalidFractions);
    }
    let n_train = crate::math::round(fractions[0] * sims as f64) as usize;
    let n_val = (crate::math::round(fractions[1] * sims as f64) as usize).min(sims - n_train.min(sims));
    let n_test = sims.saturating_sub(n_train + n_val);
    let split = [n_train, n_val, n_test];
    if split.contains(&0) {
        return Err(PipelineError::TooFewSimulations { sims, split });
    }
    let mut order: Vec<usize> = (0..sims).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    })
}

/// Per-column affine scaling fitted on training data.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

fn column_stats(data: &[f64], width: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = (data.len() / width).max(1) as f64;
    let mut mean = vec![0.0; width];
    for row in data.chunks(width) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / rows;
        }
    }
    let mut var = vec![0.0; width];
    for row in data.chunks(width) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / rows;
        }
    }
    let std = var.iter().map(|&v| if v > 1e-12 { crate::math::sqrt(v) } else { 1.0 }).collect();
    (mean, std)
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Self {
        let (x_mean, x_std) = column_stats(&train.x, train.features);
        let (y_mean, y_std) = column_stats(&train.y, 2);
        Standardizer { x_mean, x_std, y_mean, y_std }
    }

    pub fn identity(features: usize) -> Self {
        Standardizer {
            x_mean: vec![0.0; features],
            x_std: vec![1.0; features],
            y_mean: vec![0.0; 2],
            y_std: vec![1.0; 2],
        }
    }

    pub fn scale_x(&self, x: &[f64]) -> Vec<f64> {
        let w = self.x_mean.len();
        x.iter().enumerate().map(|(i, v)| (v - self.x_mean[i % w]) / self.x_std[i % w]).collect()
    }

    pub fn scale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().enumerate().map(|(i, v)| (v - self.y_mean[i % 2]) / self.y_std[i % 2]).collect()
    }

    pub fn unscale_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().enumerate().map(|(i, v)| v * self.y_std[i % 2] + self.y_mean[i % 2]).collect()
    }

    /// Model-space copy of a dataset.
    pub fn apply(&self, data: &Dataset) -> Dataset {
        Dataset { x: self.scale_x(&data.x), y: self.scale_y(&data.y), ..data.clone() }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub lambda: f64,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    pub split: [f64; 3],
    pub seed: u64,
    /// Arrival rates (veh/s) drawn from when generating training runs.
    pub arrival_rate_range: (f64, f64),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 100,
            lambda: 1e-4,
            dropout: 0.2,
            optimizer: OptimizerKind::Adam,
            split: [0.8, 0.1, 0.1],
            seed: 0,
            arrival_rate_range: (0.3, 1.5),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.epochs == 0 {
            return Err(PipelineError::Shape("epochs must be >= 1".into()));
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PipelineError::InvalidFractions);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EpochLoss {
    /// Mean of the per-step training losses of the epoch.
    pub train: f64,
    /// Model-space MSE on the validation set, without dropout or penalty.
    pub val: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    /// Epoch whose parameters the model holds on return.
    pub best_epoch: usize,
}

/// Everything needed to run a trained model on raw data.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub scaler: Standardizer,
    /// Largest nVehSeen target of the training data.
    pub train_max_n_veh: f64,
    pub history: Vec<EpochLoss>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model, PipelineError> {
        Ok(Model::from_params(self.config.clone(), self.params.clone())?)
    }
}

fn one_sim(data: &Dataset, s: usize) -> (Tensor, Tensor) {
    let (px, py) = (data.per_x(), data.per_y());
    let x = Tensor::new(vec![1, data.steps, data.lanes, data.features], data.x[s * px..(s + 1) * px].to_vec());
    let y = Tensor::new(vec![1, data.steps, data.lanes, 2], data.y[s * py..(s + 1) * py].to_vec());
    (x.expect("dataset shape"), y.expect("dataset shape"))
}

/// Model-space MSE without dropout or penalty.
pub fn dataset_loss(model: &Model, data: &Dataset, adj: &Tensor) -> Result<f64, PipelineError> {
    let pred = model_forward(model, &data.x_tensor(), adj)?;
    let n = data.y.len().max(1) as f64;
    Ok(pred.data().iter().zip(&data.y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n)
}

/// One simulation per optimizer step, in a seeded order per epoch. Both
/// datasets must already be in model space. The model ends up holding the
/// parameters of the best validation epoch (the last epoch without one).
pub fn train(
    model: &mut Model,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    adj: &Tensor,
    cfg: &TrainConfig,
) -> Result<TrainReport, PipelineError> {
    cfg.validate()?;
    train_set.validate()?;
    if train_set.sims == 0 {
        return Err(PipelineError::TooFewSimulations { sims: 0, split: [0, 0, 0] });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptState::new(cfg.optimizer, cfg.learning_rate, &model.params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut order: Vec<usize> = (0..train_set.sims).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &s in &order {
            let (x, y) = one_sim(train_set, s);
            let (loss, grads) = model_loss_and_grads(model, &x, &y, adj, cfg.lambda, cfg.dropout, &mut rng)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                if let Some((_, _, p)) = best {
                    model.params = p;
                }
                return Err(PipelineError::DivergenceDetected { epoch });
            }
            total += loss;
            optimizer_step(&mut model.params, &grads, &mut opt);
        }
        let val = match val_set {
            Some(v) => Some(dataset_loss(model, v, adj)?),
            None => None,
        };
        history.push(EpochLoss { train: total / order.len() as f64, val });
        let score = val.unwrap_or(0.0);
        if !score.is_finite() {
            if let Some((_, _, p)) = best {
                model.params = p;
            }
            return Err(PipelineError::DivergenceDetected { epoch });
        }
        if best.as_ref().is_none_or(|b| score < b.0 || val.is_none()) {
            best = Some((score, epoch, model.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainReport { history, best_epoch })
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct LaneReport {
    pub lane: usize,
    pub queue_mape: f64,
    pub queue_mae: f64,
    pub n_veh_mape: f64,
    pub n_veh_mae: f64,
    pub liu_mape: f64,
    pub liu_mae: f64,
    /// Mean of Liu minus truth; negative means underestimation.
    pub liu_signed_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EvalReport {
    pub lanes: Vec<LaneReport>,
    pub network_queue_mae: f64,
    pub network_queue_mape: f64,
    pub network_n_veh_mae: f64,
    pub network_liu_mae: f64,
    pub network_liu_mape: f64,
    pub queue_mad: f64,
    pub liu_mad: f64,
    /// Lanes whose predicted nVehSeen goes below zero or above 1.5 times
    /// the training maximum at any step.
    pub instability_count: usize,
}

fn finite_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Scores raw-unit predictions `sims×T×N×2` against `data`.
pub fn evaluate_predictions(pred: &[f64], data: &Dataset, train_max_n_veh: f64) -> Result<EvalReport, PipelineError> {
    data.validate()?;
    if pred.len() != data.y.len() {
        return Err(PipelineError::Shape(format!("{} predictions for {} targets", pred.len(), data.y.len())));
    }
    let n = data.lanes;
    let mut lanes = Vec::new();
    let mut instability = 0;
    for lane in 0..n {
        let mut unstable = false;
        let (mut q_obs, mut q_hat, mut v_obs, mut v_hat, mut liu) = (vec![], vec![], vec![], vec![], vec![]);
        for s in 0..data.sims {
            for t in 0..data.steps {
                let i = ((s * data.steps + t) * n + lane) * 2;
                let nv = pred[i + 1];
                if nv < 0.0 || nv > 1.5 * train_max_n_veh {
                    unstable = true;
                }
                q_obs.push(data.y[i]);
                q_hat.push(pred[i]);
                v_obs.push(data.y[i + 1]);
                v_hat.push(nv);
                liu.push(data.liu_at(s, t, lane));
            }
        }
        instability += unstable as usize;
        if !data.evaluated[lane] || q_obs.is_empty() {
            continue;
        }
        let q = error_metrics(&q_obs, &q_hat).expect("equal lengths");
        let v = error_metrics(&v_obs, &v_hat).expect("equal lengths");
        let l = error_metrics(&q_obs, &liu).expect("equal lengths");
        lanes.push(LaneReport {
            lane,
            queue_mape: q.mape,
            queue_mae: q.mae,
            n_veh_mape: v.mape,
            n_veh_mae: v.mae,
            liu_mape: l.mape,
            liu_mae: l.mae,
            liu_signed_error: mean_signed_error(&q_obs, &liu).expect("equal lengths"),
        });
    }
    let q_maes: Vec<f64> = lanes.iter().map(|l| l.queue_mae).collect();
    let l_maes: Vec<f64> = lanes.iter().map(|l| l.liu_mae).collect();
    Ok(EvalReport {
        network_queue_mae: finite_mean(q_maes.iter().copied()),
        network_queue_mape: finite_mean(lanes.iter().map(|l| l.queue_mape)),
        network_n_veh_mae: finite_mean(lanes.iter().map(|l| l.n_veh_mae)),
        network_liu_mae: finite_mean(l_maes.iter().copied()),
        network_liu_mape: finite_mean(lanes.iter().map(|l| l.liu_mape)),
        queue_mad: mad(&q_maes).unwrap_or(f64::NAN),
        liu_mad: mad(&l_maes).unwrap_or(f64::NAN),
        instability_count: instability,
        lanes,
    })
}

/// Raw-unit predictions of a checkpointed model on raw `data`.
pub fn predict(model: &Model, scaler: &Standardizer, data: &Dataset, adj: &Tensor) -> Result<Vec<f64>, PipelineError> {
    let x = Tensor::new(vec![data.sims, data.steps, data.lanes, data.features], scaler.scale_x(&data.x))
        .map_err(|_| PipelineError::Shape("feature buffer".into()))?;
    let pred = model_forward(model, &x, adj)?;
    Ok(scaler.unscale_y(pred.data()))
}

pub fn evaluate(checkpoint: &Checkpoint, data: &Dataset, adj: &Tensor) -> Result<EvalReport, PipelineError> {
    let model = checkpoint.model()?;
    let pred = predict(&model, &checkpoint.scaler, data, adj)?;
    evaluate_predictions(&pred, data, checkpoint.train_max_n_veh)
}

/// Largest nVehSeen target in a raw dataset.
pub fn max_n_veh(data: &Dataset) -> f64 {
    data.y.chunks(2).map(|p| p[1]).fold(0.0, f64::max)
}
