use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use shockgat_core::liu::{estimate_lane, BreakpointVariant, LiuConfig, ShortQueueMethod};
use shockgat_core::model::{Model, ModelConfig};
use shockgat_core::network::{adjacency_matrix, build_grid_network, lane_graph, RoadNetwork};
use shockgat_core::nn::Tensor;
use shockgat_core::pipeline::{
    ablate_liu_feature, build_design_tensors, evaluate_predictions, max_n_veh, predict, split_dataset, train,
    Checkpoint, Dataset, EvalReport, Standardizer, TrainConfig,
};
use shockgat_core::sim::{run_simulation, GroundTruth, SimConfig, SimulationOutput, TlsMode};

use crate::formats::{self, CheckpointFile, DataFile};

pub fn gen_net(
    rows: usize,
    cols: usize,
    lane_len: f64,
    lanes_per_dir: usize,
    ld: f64,
    out: &Path,
) -> Result<RoadNetwork> {
    let net = build_grid_network(rows, cols, lane_len, lanes_per_dir, ld).map_err(|e| anyhow!("{e}"))?;
    formats::write_json(out, &net)?;
    Ok(net)
}

pub fn simulate(
    net_path: &Path,
    rate: f64,
    duration: usize,
    seed: u64,
    tls: TlsMode,
    lane_changing: bool,
    out: &Path,
) -> Result<SimulationOutput> {
    let net: RoadNetwork = formats::read_json(net_path)?;
    net.validate().map_err(|e| anyhow!("{}: {e}", net_path.display()))?;
    let cfg = SimConfig { lane_changing, ..SimConfig::with_mode(tls) };
    let output = run_simulation(&net, &cfg, rate, duration, seed).map_err(|e| anyhow!("{e}"))?;
    formats::write_run(out, &net, &output)?;
    Ok(output)
}

pub fn liu_config(net: &RoadNetwork, variant: BreakpointVariant, short_queue: ShortQueueMethod) -> Result<LiuConfig> {
    let ld = net.detectors.first().map(|d| d.advanced - d.stop_bar).context("network has no detectors")?;
    let cfg = LiuConfig { detector_distance: ld, variant, short_queue, ..LiuConfig::default() };
    cfg.validate().map_err(|e| anyhow!("{e}"))?;
    Ok(cfg)
}

pub fn liu(run_dir: &Path, variant: BreakpointVariant, short_queue: ShortQueueMethod, out: &Path) -> Result<usize> {
    let run = formats::read_run(run_dir)?;
    let cfg = liu_config(&run.network, variant, short_queue)?;
    let per_lane: Vec<_> =
        run.output.lanes.iter().filter(|l| !l.cycles.is_empty()).map(|l| (l.lane, estimate_lane(l, &cfg))).collect();
    formats::write_liu(out, &per_lane)?;
    Ok(per_lane.iter().map(|(_, e)| e.len()).sum())
}

/// Simulates `count` runs with rates drawn from `rates`, writing each run
/// directory and its Liu CSV. Runs are spread over the available cores.
pub fn batch(
    net_path: &Path,
    count: usize,
    rates: (f64, f64),
    duration: usize,
    seed: u64,
    tls: TlsMode,
    lane_changing: bool,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    ensure!(rates.0 > 0.0 && rates.1 >= rates.0, "rate range must be positive and ordered");
    let runs_dir = out.join("runs");
    let liu_dir = out.join("liu");
    fs::create_dir_all(&runs_dir)?;
    fs::create_dir_all(&liu_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(usize, f64, u64)> = (0..count).map(|i| (i, rng.gen_range(rates.0..=rates.1), rng.gen())).collect();
    let workers = thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(count.max(1));
    let dirs: Vec<PathBuf> = jobs.iter().map(|(i, _, _)| runs_dir.join(format!("run{i:04}"))).collect();
    thread::scope(|s| -> Result<()> {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (jobs, dirs, liu_dir) = (&jobs, &dirs, &liu_dir);
                s.spawn(move || -> Result<()> {
                    for (i, rate, run_seed) in jobs.iter().copied().skip(w).step_by(workers) {
                        simulate(net_path, rate, duration, run_seed, tls, lane_changing, &dirs[i])?;
                        let name = formats::run_name(&dirs[i]);
                        liu(
                            &dirs[i],
                            BreakpointVariant::CPrime,
                            ShortQueueMethod::InputOutput,
                            &liu_dir.join(format!("{name}.csv")),
                        )?;
                    }
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join().map_err(|_| anyhow!("simulation worker panicked"))??;
        }
        Ok(())
    })?;
    Ok(dirs)
}

pub fn truth_mode(runs: &[SimulationOutput], forced: Option<GroundTruth>) -> Result<GroundTruth> {
    if let Some(m) = forced {
        return Ok(m);
    }
    let mode = runs.first().context("no runs")?.tls_mode;
    ensure!(runs.iter().all(|r| r.tls_mode == mode), "runs mix signal modes; pass --truth to choose the ground truth");
    Ok(GroundTruth::for_mode(mode))
}

pub fn dataset(
    runs_root: &Path,
    liu_dir: &Path,
    window: usize,
    truth: Option<GroundTruth>,
    out: &Path,
) -> Result<DataFile> {
    let dirs = formats::list_runs(runs_root)?;
    let mut runs = Vec::with_capacity(dirs.len());
    let mut network: Option<RoadNetwork> = None;
    for d in &dirs {
        let r = formats::read_run(d)?;
        match &network {
            Some(n) => ensure!(*n == r.network, "{} uses a different network", d.display()),
            None => network = Some(r.network.clone()),
        }
        runs.push(r.output);
    }
    let net = network.expect("at least one run");
    let names: Vec<String> = dirs.iter().map(|d| formats::run_name(d)).collect();
    let liu = formats::read_liu_dir(liu_dir, &names, net.lane_count())?;
    let mode = truth_mode(&runs, truth)?;
    let effective_length = SimConfig::default().vehicle.effective_length;
    let data = build_design_tensors(&runs, &liu, window, mode, effective_length).map_err(|e| anyhow!("{e}"))?;
    let file = DataFile { adjacency: adjacency_matrix(&lane_graph(&net)), runs: names, dataset: data };
    formats::write_data(out, &file)?;
    Ok(file)
}

pub fn adjacency_tensor(file: &DataFile) -> Tensor {
    let a = &file.adjacency;
    Tensor::matrix(a.n, a.n, a.as_f64())
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub dropout: f64,
    pub seed: u64,
    pub width: usize,
}

pub fn train_cmd(data_path: &Path, args: &TrainArgs, out: &Path) -> Result<CheckpointFile> {
    let file = formats::read_data(data_path)?;
    let data = &file.dataset;
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        lambda: args.l2,
        dropout: args.dropout,
        seed: args.seed,
        ..TrainConfig::default()
    };
    ensure!((0.0..1.0).contains(&cfg.dropout), "dropout must be in [0, 1)");
    let split = split_dataset(data.sims, cfg.split, cfg.seed).map_err(|e| anyhow!("{e}"))?;
    let train_raw = data.select(&split.train);
    let scaler = Standardizer::fit(&train_raw);
    let train_set = scaler.apply(&train_raw);
    let val_set = scaler.apply(&data.select(&split.val));
    let adj = adjacency_tensor(&file);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model =
        Model::new(ModelConfig::with_width(data.features, args.width), &mut rng).map_err(|e| anyhow!("{e}"))?;
    let report = train(&mut model, &train_set, Some(&val_set), &adj, &cfg);
    let history = match &report {
        Ok(r) => r.history.clone(),
        Err(_) => Vec::new(),
    };
    let ck = CheckpointFile {
        format: formats::CHECKPOINT_FORMAT.into(),
        version: formats::CHECKPOINT_VERSION,
        split,
        feature_names: data.feature_names.clone(),
        checkpoint: Checkpoint {
            config: model.config.clone(),
            params: model.params.clone(),
            scaler,
            train_max_n_veh: max_n_veh(&train_raw),
            history,
        },
    };
    // a diverged run still leaves its best parameters behind
    formats::write_checkpoint(out, &ck)?;
    report.map_err(|e| anyhow!("{e}"))?;
    Ok(ck)
}

#[derive(Serialize)]
pub struct ReportFile<'a> {
    pub test_runs: Vec<String>,
    pub report: &'a EvalReport,
}

pub fn eval_cmd(
    model_path: &Path,
    data_path: &Path,
    liu_dir: Option<&Path>,
    report_path: &Path,
    plots: Option<&Path>,
) -> Result<EvalReport> {
    let ck = formats::read_checkpoint(model_path)?;
    let file = formats::read_data(data_path)?;
    ensure!(
        ck.feature_names == file.dataset.feature_names,
        "model was trained on features {:?} but the data has {:?}",
        ck.feature_names,
        file.dataset.feature_names
    );
    ensure!(ck.split.test.iter().all(|&s| s < file.dataset.sims), "checkpoint split does not fit this dataset");
    let mut test = file.dataset.select(&ck.split.test);
    let names: Vec<String> = ck.split.test.iter().map(|&s| file.runs[s].clone()).collect();
    if let Some(dir) = liu_dir {
        test.liu = liu_windows(&test, &formats::read_liu_dir(dir, &names, test.lanes)?);
    }
    let model = ck.checkpoint.model().map_err(|e| anyhow!("{e}"))?;
    let adj = adjacency_tensor(&file);
    let pred = predict(&model, &ck.checkpoint.scaler, &test, &adj).map_err(|e| anyhow!("{e}"))?;
    let report = evaluate_predictions(&pred, &test, ck.checkpoint.train_max_n_veh).map_err(|e| anyhow!("{e}"))?;
    formats::write_json(report_path, &ReportFile { test_runs: names.clone(), report: &report })?;
    write_lane_csv(&lanes_csv_path(report_path), &report)?;
    if let Some(p) = plots {
        write_plots(p, &test, &names, &pred)?;
    }
    Ok(report)
}

fn liu_windows(data: &Dataset, knots: &[Vec<Vec<(f64, f64)>>]) -> Vec<f64> {
    let duration = data.steps * data.window;
    let mut out = vec![0.0; data.sims * data.steps * data.lanes];
    for (s, lanes) in knots.iter().enumerate() {
        for (n, k) in lanes.iter().enumerate() {
            let series = shockgat_core::pipeline::liu_interpolate(k, duration).values;
            for t in 0..data.steps {
                let w = &series[t * data.window..(t + 1) * data.window];
                out[(s * data.steps + t) * data.lanes + n] = w.iter().sum::<f64>() / data.window as f64;
            }
        }
    }
    out
}

pub fn lanes_csv_path(report: &Path) -> PathBuf {
    report.with_extension("lanes.csv")
}

fn write_lane_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lane", "queue_mape", "queue_mae", "n_veh_mape", "n_veh_mae", "liu_mape", "liu_mae"])?;
    for l in &report.lanes {
        w.write_record([
            l.lane.to_string(),
            l.queue_mape.to_string(),
            l.queue_mae.to_string(),
            l.n_veh_mape.to_string(),
            l.n_veh_mae.to_string(),
            l.liu_mape.to_string(),
            l.liu_mae.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_plots(path: &Path, data: &Dataset, names: &[String], pred: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["run", "time", "lane", "queue_truth", "queue_model", "queue_liu", "n_veh_truth", "n_veh_model"])?;
    for s in 0..data.sims {
        for t in 0..data.steps {
            for n in (0..data.lanes).filter(|&n| data.evaluated[n]) {
                let i = ((s * data.steps + t) * data.lanes + n) * 2;
                w.write_record([
                    names[s].clone(),
                    ((t * data.window) as f64).to_string(),
                    n.to_string(),
                    data.y[i].to_string(),
                    pred[i].to_string(),
                    data.liu_at(s, t, n).to_string(),
                    data.y[i + 1].to_string(),
                    pred[i + 1].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn ablate(data_path: &Path, drop_liu: bool, out: &Path) -> Result<DataFile> {
    if !drop_liu {
        bail!("nothing to ablate; pass --drop-liu");
    }
    let mut file = formats::read_data(data_path)?;
    file.dataset = ablate_liu_feature(&file.dataset).map_err(|e| anyhow!("{e}"))?;
    formats::write_data(out, &file)?;
    Ok(file)
}
