//! On-disk formats: network JSON, run directories of per-stream CSVs, Liu
//! estimate CSVs, binary datasets and JSON checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use shockgat_core::liu::QueueEstimate;
use shockgat_core::network::{AdjacencyMatrix, RoadNetwork};
use shockgat_core::pipeline::{Checkpoint, Dataset, Split};
use shockgat_core::sim::{
    CycleBounds, DetectorEvent, E1Record, E2Record, LaneOutput, SimStats, SimulationOutput, TlsMode,
};

pub const NETWORK_FILE: &str = "network.json";
pub const MANIFEST_FILE: &str = "manifest.json";
const DATA_MAGIC: &[u8; 8] = b"SGDATA01";
pub const CHECKPOINT_FORMAT: &str = "shockgat-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn network_hash(net: &RoadNetwork) -> Result<String> {
    let bytes = serde_json::to_vec(net)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub rate: f64,
    pub duration: usize,
    pub tls_mode: TlsMode,
    pub network_hash: String,
    pub lanes: usize,
    pub stats: SimStats,
}

#[derive(Serialize, Deserialize)]
struct E1Row {
    time: u32,
    lane: usize,
    vehicle_count: u32,
    occupancy: f64,
    mean_speed: f64,
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    lane: usize,
    time: f64,
    occupancy_time: f64,
    time_gap: f64,
    speed: f64,
}

#[derive(Serialize, Deserialize)]
struct E2Row {
    time: u32,
    lane: usize,
    started_halts: u32,
    max_jam_length: f64,
    n_veh_seen: u32,
    entered: u32,
    left: u32,
}

#[derive(Serialize, Deserialize)]
struct TlsRow {
    time: u32,
    lane: usize,
    green: u8,
}

#[derive(Serialize, Deserialize)]
struct CycleRow {
    lane: usize,
    cycle: usize,
    red_start: f64,
    green_start: f64,
    next_red_start: f64,
}

#[derive(Serialize, Deserialize)]
struct LaneRow {
    lane: usize,
    multi_halts: u32,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Result<Vec<T>, _> = r.deserialize().collect();
    rows.with_context(|| format!("parsing {}", path.display()))
}

/// Writes one CSV per stream plus the manifest and a copy of the network.
pub fn write_run(dir: &Path, net: &RoadNetwork, out: &SimulationOutput) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join(NETWORK_FILE), net)?;
    let manifest = RunManifest {
        seed: out.seed,
        rate: out.arrival_rate,
        duration: out.duration,
        tls_mode: out.tls_mode,
        network_hash: network_hash(net)?,
        lanes: out.lanes.len(),
        stats: out.stats,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    for (name, pick) in [("stop_bar", 0), ("advanced", 1)] {
        let records = |l: &LaneOutput| if pick == 0 { l.stop_bar.clone() } else { l.advanced.clone() };
        write_rows(
            &dir.join(format!("{name}.csv")),
            out.lanes.iter().flat_map(|l| {
                records(l).into_iter().map(move |r| E1Row {
                    time: r.time,
                    lane: l.lane,
                    vehicle_count: r.vehicle_count,
                    occupancy: r.occupancy,
                    mean_speed: r.mean_speed,
                })
            }),
        )?;
        write_rows(
            &dir.join(format!("{name}_events.csv")),
            out.lanes.iter().flat_map(|l| {
                records(l).into_iter().flat_map(|r| r.events).map(move |e| EventRow {
                    lane: l.lane,
                    time: e.time,
                    occupancy_time: e.occupancy_time,
                    time_gap: e.time_gap,
                    speed: e.speed,
                })
            }),
        )?;
    }
    write_rows(
        &dir.join("e2.csv"),
        out.lanes.iter().flat_map(|l| {
            l.e2.iter().map(move |r| E2Row {
                time: r.time,
                lane: l.lane,
                started_halts: r.started_halts,
                max_jam_length: r.max_jam_length,
                n_veh_seen: r.n_veh_seen,
                entered: r.entered,
                left: r.left,
            })
        }),
    )?;
    write_rows(
        &dir.join("tls.csv"),
        out.lanes.iter().flat_map(|l| {
            l.tls.iter().enumerate().map(move |(t, &g)| TlsRow { time: t as u32, lane: l.lane, green: g })
        }),
    )?;
    write_rows(
        &dir.join("cycles.csv"),
        out.lanes.iter().flat_map(|l| {
            l.cycles.iter().enumerate().map(move |(i, c)| CycleRow {
                lane: l.lane,
                cycle: i,
                red_start: c.red_start,
                green_start: c.green_start,
                next_red_start: c.next_red_start,
            })
        }),
    )?;
    write_rows(&dir.join("lanes.csv"), out.lanes.iter().map(|l| LaneRow { lane: l.lane, multi_halts: l.multi_halts }))?;
    Ok(())
}

fn read_e1(dir: &Path, name: &str, lanes: usize, duration: usize) -> Result<Vec<Vec<E1Record>>> {
    let mut out: Vec<Vec<E1Record>> = vec![Vec::with_capacity(duration); lanes];
    for r in read_rows::<E1Row>(&dir.join(format!("{name}.csv")))? {
        ensure!(r.lane < lanes, "{name}.csv: lane {} out of range", r.lane);
        out[r.lane].push(E1Record {
            time: r.time,
            vehicle_count: r.vehicle_count,
            occupancy: r.occupancy,
            mean_speed: r.mean_speed,
            events: Vec::new(),
        });
    }
    for e in read_rows::<EventRow>(&dir.join(format!("{name}_events.csv")))? {
        ensure!(e.lane < lanes, "{name}_events.csv: lane {} out of range", e.lane);
        let second = e.time.floor() as usize;
        let rec = out[e.lane]
            .get_mut(second)
            .with_context(|| format!("{name}_events.csv: time {} beyond the run", e.time))?;
        rec.events.push(DetectorEvent {
            time: e.time,
            occupancy_time: e.occupancy_time,
            time_gap: e.time_gap,
            speed: e.speed,
        });
    }
    Ok(out)
}

pub struct Run {
    pub network: RoadNetwork,
    pub manifest: RunManifest,
    pub output: SimulationOutput,
}

pub fn read_run(dir: &Path) -> Result<Run> {
    let network: RoadNetwork = read_json(&dir.join(NETWORK_FILE))?;
    let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
    ensure!(
        network_hash(&network)? == manifest.network_hash,
        "{}: network does not match the manifest hash",
        dir.display()
    );
    let (n, d) = (manifest.lanes, manifest.duration);
    let stop_bar = read_e1(dir, "stop_bar", n, d)?;
    let advanced = read_e1(dir, "advanced", n, d)?;
    let mut e2: Vec<Vec<E2Record>> = vec![Vec::with_capacity(d); n];
    for r in read_rows::<E2Row>(&dir.join("e2.csv"))? {
        ensure!(r.lane < n, "e2.csv: lane {} out of range", r.lane);
        e2[r.lane].push(E2Record {
            time: r.time,
            started_halts: r.started_halts,
            max_jam_length: r.max_jam_length,
            n_veh_seen: r.n_veh_seen,
            entered: r.entered,
            left: r.left,
        });
    }
    let mut tls: Vec<Vec<u8>> = vec![Vec::with_capacity(d); n];
    for r in read_rows::<TlsRow>(&dir.join("tls.csv"))? {
        ensure!(r.lane < n, "tls.csv: lane {} out of range", r.lane);
        tls[r.lane].push(r.green);
    }
    let mut cycles: Vec<Vec<CycleBounds>> = vec![Vec::new(); n];
    for r in read_rows::<CycleRow>(&dir.join("cycles.csv"))? {
        ensure!(r.lane < n, "cycles.csv: lane {} out of range", r.lane);
        cycles[r.lane].push(CycleBounds {
            red_start: r.red_start,
            green_start: r.green_start,
            next_red_start: r.next_red_start,
        });
    }
    let mut multi = vec![0u32; n];
    for r in read_rows::<LaneRow>(&dir.join("lanes.csv"))? {
        ensure!(r.lane < n, "lanes.csv: lane {} out of range", r.lane);
        multi[r.lane] = r.multi_halts;
    }
    let lanes = stop_bar
        .into_iter()
        .zip(advanced)
        .zip(e2)
        .zip(tls)
        .zip(cycles)
        .enumerate()
        .map(|(lane, ((((stop_bar, advanced), e2), tls), cycles))| LaneOutput {
            lane,
            stop_bar,
            advanced,
            e2,
            tls,
            cycles,
            multi_halts: multi[lane],
        })
        .collect();
    let output = SimulationOutput {
        seed: manifest.seed,
        arrival_rate: manifest.rate,
        duration: d,
        tls_mode: manifest.tls_mode,
        lanes,
        stats: manifest.stats,
    };
    Ok(Run { network, manifest, output })
}

/// Run directories directly below `root`, sorted by name.
pub fn list_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("listing {}", root.display()))? {
        let p = entry?.path();
        if p.join(MANIFEST_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        bail!("no run directories with a {MANIFEST_FILE} under {}", root.display());
    }
    Ok(dirs)
}

pub fn run_name(dir: &Path) -> String {
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiuRow {
    pub lane: usize,
    pub cycle: usize,
    #[serde(rename = "T_r")]
    pub t_r: f64,
    #[serde(rename = "L_max")]
    pub l_max: f64,
    #[serde(rename = "T_max")]
    pub t_max: f64,
    #[serde(rename = "methodTag")]
    pub method: String,
}

pub fn write_liu(path: &Path, per_lane: &[(usize, Vec<QueueEstimate>)]) -> Result<()> {
    write_rows(
        path,
        per_lane.iter().flat_map(|(lane, ests)| {
            ests.iter().enumerate().map(move |(cycle, e)| LiuRow {
                lane: *lane,
                cycle,
                t_r: e.red_start,
                l_max: e.l_max,
                t_max: e.t_max,
                method: e.method.as_str().to_string(),
            })
        }),
    )
}

/// `(T_max, L_max)` knots per lane, time-ordered.
pub fn read_liu_knots(path: &Path, lanes: usize) -> Result<Vec<Vec<(f64, f64)>>> {
    let mut out = vec![Vec::new(); lanes];
    for r in read_rows::<LiuRow>(path)? {
        ensure!(r.lane < lanes, "{}: lane {} out of range", path.display(), r.lane);
        out[r.lane].push((r.t_max, r.l_max));
    }
    for k in &mut out {
        k.sort_by(|a: &(f64, f64), b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}

/// Dataset plus what training needs to know about the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataFile {
    pub adjacency: AdjacencyMatrix,
    pub runs: Vec<String>,
    pub dataset: Dataset,
}

pub fn write_data(path: &Path, data: &DataFile) -> Result<()> {
    let mut bytes = DATA_MAGIC.to_vec();
    bytes.extend(bincode::serialize(data)?);
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn read_data(path: &Path) -> Result<DataFile> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ensure!(bytes.starts_with(DATA_MAGIC), "{} is not a dataset file", path.display());
    let data: DataFile =
        bincode::deserialize(&bytes[DATA_MAGIC.len()..]).with_context(|| format!("decoding {}", path.display()))?;
    data.dataset.validate().map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub version: u32,
    pub split: Split,
    pub feature_names: Vec<String>,
    pub checkpoint: Checkpoint,
}

pub fn config_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

pub fn write_checkpoint(path: &Path, ck: &CheckpointFile) -> Result<()> {
    write_json(path, ck)?;
    write_json(&config_sidecar(path), &ck.checkpoint.config)
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointFile> {
    let ck: CheckpointFile = read_json(path)?;
    ensure!(
        ck.format == CHECKPOINT_FORMAT && ck.version == CHECKPOINT_VERSION,
        "{}: unsupported checkpoint {} v{}",
        path.display(),
        ck.format,
        ck.version
    );
    Ok(ck)
}

/// Liu knots for every run in `names`, looked up as `<liu_dir>/<name>.csv`.
pub fn read_liu_dir(liu_dir: &Path, names: &[String], lanes: usize) -> Result<Vec<Vec<Vec<(f64, f64)>>>> {
    let mut out = Vec::with_capacity(names.len());
    for n in names {
        out.push(read_liu_knots(&liu_dir.join(format!("{n}.csv")), lanes)?);
    }
    Ok(out)
}
