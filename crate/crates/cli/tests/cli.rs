use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shockgat::formats::{self, DataFile};
use shockgat_core::liu::{estimate_lane, LiuConfig};
use shockgat_core::network::build_grid_network;
use shockgat_core::pipeline::liu_knots;
use shockgat_core::sim::{run_simulation, SimConfig, TlsMode};
use tempfile::tempdir;

fn shockgat(args: &str, dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shockgat")).args(args.split_whitespace()).current_dir(dir).output().unwrap()
}

fn ok(args: &str, dir: &Path) -> serde_json::Value {
    let out = shockgat(args, dir);
    assert!(out.status.success(), "{args}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn run_directory_round_trips() {
    let dir = tempdir().unwrap();
    let net = build_grid_network(2, 1, 250.0, 2, 80.0).unwrap();
    for mode in [TlsMode::Simplified, TlsMode::Realistic] {
        let out = run_simulation(&net, &SimConfig::with_mode(mode), 0.8, 240, 3).unwrap();
        let run = dir.path().join(format!("{mode:?}"));
        formats::write_run(&run, &net, &out).unwrap();
        let back = formats::read_run(&run).unwrap();
        assert_eq!(back.network, net);
        assert_eq!(back.output, out);
    }
}

#[test]
fn tampered_network_is_rejected() {
    let dir = tempdir().unwrap();
    let net = build_grid_network(1, 1, 200.0, 1, 60.0).unwrap();
    let out = run_simulation(&net, &SimConfig::default(), 0.3, 60, 0).unwrap();
    formats::write_run(dir.path(), &net, &out).unwrap();
    let other = build_grid_network(1, 1, 210.0, 1, 60.0).unwrap();
    formats::write_json(&dir.path().join(formats::NETWORK_FILE), &other).unwrap();
    let err = formats::read_run(dir.path()).err().unwrap();
    assert!(err.to_string().contains("hash"), "{err}");
}

#[test]
fn liu_csv_keeps_the_knots() {
    let dir = tempdir().unwrap();
    let net = build_grid_network(1, 1, 300.0, 1, 100.0).unwrap();
    let out = run_simulation(&net, &SimConfig::default(), 0.6, 600, 5).unwrap();
    let cfg = LiuConfig { detector_distance: 100.0, ..Default::default() };
    let per_lane: Vec<_> =
        out.lanes.iter().filter(|l| !l.cycles.is_empty()).map(|l| (l.lane, estimate_lane(l, &cfg))).collect();
    let path = dir.path().join("liu.csv");
    formats::write_liu(&path, &per_lane).unwrap();
    let knots = formats::read_liu_knots(&path, net.lane_count()).unwrap();
    for l in &out.lanes {
        assert_eq!(knots[l.lane], liu_knots(l, &cfg), "lane {}", l.lane);
    }
    let header = fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "lane,cycle,T_r,L_max,T_max,methodTag");
}

#[test]
fn data_file_rejects_foreign_bytes() {
    let dir = tempdir().unwrap();
    let p = dir.path().join("x.bin");
    fs::write(&p, b"not a dataset").unwrap();
    assert!(formats::read_data(&p).is_err());
}

#[test]
fn end_to_end() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let net = ok("gen-net --rows 2 --cols 2 --lane-len 300 --lanes-per-dir 1 --detector-distance 50 --out net.json", d);
    assert_eq!(net["lanes"], 24);

    // one run by hand, the rest through batch
    let sim = ok("simulate --net net.json --rate 0.8 --duration 120 --seed 1 --tls realistic --out single", d);
    assert!(sim["stats"]["inserted"].as_u64().unwrap() > 0);
    let liu = ok("liu --run single --variant c --short-queue expansion --out single.csv", d);
    assert!(liu["estimates"].as_u64().unwrap() > 0);

    ok("batch --net net.json --count 10 --duration 120 --tls realistic --out b", d);
    let ds = ok("dataset --runs b/runs --liu b/liu --window 10 --out data.bin", d);
    assert_eq!(ds["shape"], serde_json::json!([10, 12, 24, 8]));

    let tr =
        ok("train --data data.bin --epochs 2 --lr 0.005 --l2 0 --dropout 0 --seed 3 --width 8 --out model.ckpt", d);
    assert_eq!(tr["epochs"], 2);
    assert!(d.join("model.ckpt.config.json").is_file());

    let ev = ok("eval --model model.ckpt --data data.bin --liu b/liu --report report.json --plots plots.csv", d);
    assert!(ev["network_liu_mae"].as_f64().unwrap() >= 0.0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["test_runs"].as_array().unwrap().len(), 1);
    assert!(fs::read_to_string(d.join("report.lanes.csv")).unwrap().starts_with("lane,queue_mape"));
    assert!(fs::read_to_string(d.join("plots.csv")).unwrap().lines().count() > 1);

    // re-reading the Liu CSVs gives the same baseline as the stored copy
    let ev2 = ok("eval --model model.ckpt --data data.bin --report report2.json", d);
    assert_eq!(ev["network_liu_mae"], ev2["network_liu_mae"]);

    ok("ablate --data data.bin --drop-liu --out data7.bin", d);
    let DataFile { dataset, .. } = formats::read_data(&d.join("data7.bin")).unwrap();
    assert_eq!(dataset.features, 7);
    assert!(!dataset.feature_names.iter().any(|n| n.contains("liu")));

    // a model trained on eight features refuses the ablated data
    let out = shockgat("eval --model model.ckpt --data data7.bin --report r.json", d);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].as_str().unwrap().contains("features"));
}

#[test]
fn errors_are_json_on_stderr() {
    let dir = tempdir().unwrap();
    let out = shockgat("gen-net --rows 0 --cols 2 --lane-len 300 --lanes-per-dir 1 --out n.json", dir.path());
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"].as_str().unwrap().contains("invalid geometry"));

    let out =
        shockgat("simulate --net missing.json --rate 1 --duration 10 --seed 0 --tls simplified --out r", dir.path());
    assert!(!out.status.success());
    assert!(serde_json::from_slice::<serde_json::Value>(&out.stderr).unwrap()["error"].is_string());
}
