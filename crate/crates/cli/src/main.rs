use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use shockgat::commands::{self, TrainArgs};
use shockgat_core::liu::{BreakpointVariant, ShortQueueMethod};
use shockgat_core::sim::{GroundTruth, TlsMode};

#[derive(Parser)]
#[command(name = "shockgat", version, about = "Queue-length estimation on simulated signalized grids")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Tls {
    Simplified,
    Realistic,
}

impl From<Tls> for TlsMode {
    fn from(t: Tls) -> Self {
        match t {
            Tls::Simplified => TlsMode::Simplified,
            Tls::Realistic => TlsMode::Realistic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    C,
    Cprime,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShortQueue {
    Io,
    Expansion,
}

#[derive(Clone, Copy, ValueEnum)]
enum Truth {
    StartedHalts,
    MaxJam,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a grid network and write it as JSON.
    GenNet {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        lane_len: f64,
        #[arg(long)]
        lanes_per_dir: usize,
        /// Distance of the advanced loop from the stop bar, m.
        #[arg(long, default_value_t = 122.0)]
        detector_distance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one run and write its detector streams.
    Simulate {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        duration: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum)]
        tls: Tls,
        #[arg(long)]
        lane_changing: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate many runs with random arrival rates, plus their Liu estimates.
    Batch {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0.3)]
        rate_min: f64,
        #[arg(long, default_value_t = 1.5)]
        rate_max: f64,
        #[arg(long)]
        duration: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum)]
        tls: Tls,
        #[arg(long)]
        lane_changing: bool,
        /// Receives `runs/` and `liu/`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-cycle Liu queue estimates for every signalized lane of a run.
    Liu {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "cprime")]
        variant: Variant,
        #[arg(long, value_enum, default_value = "io")]
        short_queue: ShortQueue,
        #[arg(long)]
        out: PathBuf,
    },
    /// Window the runs into model inputs and targets.
    Dataset {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        liu: PathBuf,
        #[arg(long, default_value_t = 10)]
        window: usize,
        /// Defaults to the ground truth matching the runs' signal mode.
        #[arg(long, value_enum)]
        truth: Option<Truth>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model on the training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = 0.2)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Width of every layer.
        #[arg(long, default_value_t = 128)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint and Liu on the test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Re-read Liu estimates from this directory instead of the dataset copy.
        #[arg(long)]
        liu: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Remove a feature from a dataset.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        drop_liu: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    Ok(match cli.cmd {
        Cmd::GenNet { rows, cols, lane_len, lanes_per_dir, detector_distance, out } => {
            let net = commands::gen_net(rows, cols, lane_len, lanes_per_dir, detector_distance, &out)?;
            json!({ "lanes": net.lane_count(), "links": net.links.len(), "out": out })
        }
        Cmd::Simulate { net, rate, duration, seed, tls, lane_changing, out } => {
            let o = commands::simulate(&net, rate, duration, seed, tls.into(), lane_changing, &out)?;
            json!({ "stats": o.stats, "out": out })
        }
        Cmd::Batch { net, count, rate_min, rate_max, duration, seed, tls, lane_changing, out } => {
            let dirs =
                commands::batch(&net, count, (rate_min, rate_max), duration, seed, tls.into(), lane_changing, &out)?;
            json!({ "runs": dirs.len(), "out": out })
        }
        Cmd::Liu { run, variant, short_queue, out } => {
            let variant = match variant {
                Variant::C => BreakpointVariant::C,
                Variant::Cprime => BreakpointVariant::CPrime,
            };
            let short_queue = match short_queue {
                ShortQueue::Io => ShortQueueMethod::InputOutput,
                ShortQueue::Expansion => ShortQueueMethod::ExpansionOnStopBar,
            };
            let n = commands::liu(&run, variant, short_queue, &out)?;
            json!({ "estimates": n, "out": out })
        }
        Cmd::Dataset { runs, liu, window, truth, out } => {
            let truth = truth.map(|t| match t {
                Truth::StartedHalts => GroundTruth::StartedHalts,
                Truth::MaxJam => GroundTruth::MaxJam,
            });
            let f = commands::dataset(&runs, &liu, window, truth, &out)?;
            let d = &f.dataset;
            json!({ "shape": [d.sims, d.steps, d.lanes, d.features], "out": out })
        }
        Cmd::Train { data, epochs, lr, l2, dropout, seed, width, out } => {
            let args = TrainArgs { epochs, lr, l2, dropout, seed, width };
            let ck = commands::train_cmd(&data, &args, &out)?;
            let last = ck.checkpoint.history.last();
            json!({ "epochs": ck.checkpoint.history.len(), "last": last, "out": out })
        }
        Cmd::Eval { model, data, liu, report, plots } => {
            let r = commands::eval_cmd(&model, &data, liu.as_deref(), &report, plots.as_deref())?;
            json!({
                "network_queue_mae": r.network_queue_mae,
                "network_liu_mae": r.network_liu_mae,
                "network_n_veh_mae": r.network_n_veh_mae,
                "instability_count": r.instability_count,
                "report": report,
            })
        }
        Cmd::Ablate { data, drop_liu, out } => {
            let f = commands::ablate(&data, drop_liu, &out)?;
            json!({ "features": f.dataset.feature_names, "out": out })
        }
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
