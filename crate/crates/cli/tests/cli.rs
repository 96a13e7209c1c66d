use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn invnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invnet"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn invnet")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = invnet(dir, args);
    assert!(
        out.status.success(),
        "invnet {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"{"hidden":[16],"max_epochs":15,"batch_size":64}"#;

/// gen + simulate for train/val/test and three small networks.
fn pipeline(dir: &Path, seed: &str) {
    fs::write(dir.join("small.json"), SMALL).unwrap();
    ok(dir, &["gen", "--n", "200", "--s-max", "30", "--seed", seed, "--out", "train.jsonl"]);
    ok(dir, &["gen", "--n", "40", "--seed", seed, "--first-id", "1000000", "--out", "val.jsonl"]);
    ok(dir, &["gen", "--per-group", "1", "--seed", seed, "--first-id", "2000000", "--out", "test.jsonl"]);
    for name in ["train", "val", "test"] {
        let (i, o) = (format!("{name}.jsonl"), format!("{name}_l.jsonl"));
        ok(dir, &["simulate", "--in", &i, "--arrivals", "1e4", "--warmup", "0.1", "--seed", seed, "--workers", "1", "--out", &o]);
    }
    for t in ["pmf", "cycle", "fulfill"] {
        let out = format!("models/{t}.json");
        ok(dir, &[
            "train", "--target", t, "--data", "train_l.jsonl", "--val", "val_l.jsonl", "--moments", "5",
            "--config", "small.json", "--seed", seed, "--out", &out,
        ]);
    }
}

#[test]
fn zerolead_oracle_prints_uniform_pmf() {
    let dir = tempfile::tempdir().unwrap();
    let v: Value = serde_json::from_str(&ok(dir.path(), &["oracle", "--kind", "zerolead", "--s", "2", "--S", "5", "--md1", "1"])).unwrap();
    let p: Vec<f64> = v["P"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(p.len(), 6);
    for (i, x) in p.iter().enumerate() {
        let want = if i >= 3 { 1.0 / 3.0 } else { 0.0 };
        assert!((x - want).abs() < 1e-12, "P[{i}] = {x}");
    }
    assert!((v["EC"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(v["pi0"].as_f64().unwrap(), 0.0);
}

#[test]
fn mm_oracle_needs_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = invnet(dir.path(), &["oracle", "--kind", "mm", "--s", "1", "--S", "4"]);
    assert!(!out.status.success());
    let v: Value = serde_json::from_str(&ok(dir.path(), &["oracle", "--kind", "mm", "--s", "1", "--S", "4", "--lambda", "1", "--mu", "0.5"])).unwrap();
    let total: f64 = v["P"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn bad_invocations_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[&[&str]] = &[
        &["gen", "--n", "5", "--seed", "1", "--out", "x.jsonl", "--bogus"],
        &["gen", "--seed", "1", "--out", "x.jsonl"],
        &["simulate", "--in", "missing.jsonl", "--arrivals", "1e4", "--seed", "1", "--out", "y.jsonl"],
        &["simulate", "--in", "missing.jsonl", "--arrivals", "1.5", "--seed", "1", "--out", "y.jsonl"],
        &["train", "--target", "nope", "--data", "a", "--val", "b", "--out", "c"],
        &["eval", "--models", "nowhere", "--test", "t.jsonl", "--report", "r.csv"],
        &["optimize", "--backend", "ctmc", "--lambda", "1", "--ko", "1", "--cr", "1", "--ch", "1", "--cl", "1", "--out", "o.csv"],
        &["frobnicate"],
    ];
    for args in cases {
        let out = invnet(dir.path(), args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty(), "{args:?} printed no message");
    }
}

#[test]
fn schema_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("junk.jsonl"), "{\"hello\": 1}\n").unwrap();
    let out = invnet(dir.path(), &["stats", "--in", "junk.jsonl"]);
    assert!(!out.status.success());
    fs::write(dir.path().join("cfg.json"), r#"{"learning_rate": 0.1}"#).unwrap();
    ok(dir.path(), &["gen", "--n", "3", "--seed", "1", "--out", "a.jsonl"]);
    ok(dir.path(), &["simulate", "--in", "a.jsonl", "--arrivals", "10000", "--seed", "1", "--out", "b.jsonl"]);
    let out = invnet(dir.path(), &["train", "--target", "pmf", "--data", "b.jsonl", "--val", "b.jsonl", "--config", "cfg.json", "--out", "m.json"]);
    assert!(!out.status.success());
}

#[test]
fn full_pipeline_and_predict_consistency() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    pipeline(dir, "11");

    let stats: Value = serde_json::from_str(&ok(dir, &["stats", "--in", "test_l.jsonl"])).unwrap();
    assert!(stats.is_object());

    ok(dir, &["eval", "--models", "models", "--test", "test_l.jsonl", "--report", "report.csv"]);
    let csv = fs::read_to_string(dir.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "group,n,scvD,scvL,rho,S,s,SAE,REM,REc,AEpi0");
    let groups: Vec<&str> = lines[1..].iter().filter(|l| !l.starts_with("overall")).copied().collect();
    assert_eq!(groups.len(), 32);
    assert!(groups.iter().all(|l| l.split(',').nth(1) == Some("1")));
    assert!(dir.join("report.csv.manifest.json").exists());

    // Each test record, predicted alone, must reproduce its eval row.
    let rows: Vec<Value> = fs::read_to_string(dir.join("report.csv.rows.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 32);
    let records: Vec<Value> = fs::read_to_string(dir.join("test_l.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for rec in records.iter().step_by(5) {
        let nums = |k: &str| -> Vec<String> {
            rec[k].as_array().unwrap()[..5].iter().map(|x| x.as_f64().unwrap().to_string()).collect()
        };
        let (md, ml) = (nums("mom_D"), nums("mom_L"));
        let (s, big_s) = (rec["s"].to_string(), rec["S"].to_string());
        let mut args = vec!["predict", "--models", "models", "--s", &s, "--S", &big_s, "--mom-d"];
        args.extend(md.iter().map(String::as_str));
        args.push("--mom-l");
        args.extend(ml.iter().map(String::as_str));
        let pred: Value = serde_json::from_str(&ok(dir, &args)).unwrap();
        let row = rows.iter().find(|r| r["id"] == rec["id"]).unwrap();
        for k in ["EC_hat", "pi0_hat"] {
            let (a, b) = (pred[k].as_f64().unwrap(), row[k].as_f64().unwrap());
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{k}: {a} vs {b}");
        }
        let (pa, pb) = (pred["P_hat"].as_array().unwrap(), row["P_hat"].as_array().unwrap());
        assert_eq!(pa.len(), pb.len());
        for (a, b) in pa.iter().zip(pb) {
            assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() <= 1e-12);
        }
    }

    // File mode gives the identical bytes as the eval intermediates.
    ok(dir, &["predict", "--models", "models", "--in", "test_l.jsonl", "--out", "pred.jsonl"]);
    let preds: Vec<Value> = fs::read_to_string(dir.join("pred.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for (p, r) in preds.iter().zip(&rows) {
        assert_eq!(p["id"], r["id"]);
        assert_eq!(p["P_hat"], r["P_hat"]);
        assert_eq!(p["EC_hat"], r["EC_hat"]);
        assert_eq!(p["pi0_hat"], r["pi0_hat"]);
    }

    let summary: Value = serde_json::from_str(&ok(dir, &[
        "optimize", "--models", "models", "--mom-d", "1", "2", "6", "24", "120", "--mom-l", "0.5", "0.5", "0.75", "1.5", "3.75",
        "--ko", "100", "--cr", "100", "--ch", "4", "--cl", "10000", "--md1", "1", "--s-max", "30", "--out", "grid.csv",
    ]))
    .unwrap();
    assert_eq!(summary["backend"], "nn");
    assert_eq!(summary["pairs"], 465);
    assert_eq!(fs::read_to_string(dir.join("grid.csv")).unwrap().lines().count(), 466);

    // md1 must agree with the first demand moment.
    let out = invnet(dir, &[
        "optimize", "--models", "models", "--mom-d", "1", "2", "6", "24", "120", "--mom-l", "1", "2", "6", "24", "120",
        "--ko", "1", "--cr", "1", "--ch", "1", "--cl", "1", "--md1", "3", "--out", "g2.csv",
    ]);
    assert!(!out.status.success());

    let abl = ok(dir, &[
        "ablate", "--data", "train_l.jsonl", "--val", "val_l.jsonl", "--moments-list", "1,3", "--config", "small.json",
        "--seed", "2", "--out", "ablation.csv",
    ]);
    let lines: Vec<&str> = abl.lines().collect();
    assert_eq!(lines[0], "moments,val_sae,best_val_loss,epochs_run,best_epoch");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,") && lines[2].starts_with("3,"));
}

#[test]
fn ctmc_optimize_writes_grid_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let v: Value = serde_json::from_str(&ok(dir, &[
        "optimize", "--backend", "ctmc", "--lambda", "1", "--mu", "0.5", "--ko", "100", "--cr", "100", "--ch", "4",
        "--cl", "10000", "--constraint", "5:0.995", "--s-max", "30", "--out", "grid.csv",
    ]))
    .unwrap();
    let (u, c) = (&v["unconstrained"], &v["constrained"]);
    assert!(c["g"].as_f64().unwrap() >= u["g"].as_f64().unwrap());
    assert_eq!(v["infeasible"], false);
    let csv = fs::read_to_string(dir.join("grid.csv")).unwrap();
    let best = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .min_by(|a, b| a[2].parse::<f64>().unwrap().total_cmp(&b[2].parse::<f64>().unwrap()))
        .unwrap();
    assert_eq!(best[0], u["s"].to_string());
    assert_eq!(best[1], u["S"].to_string());
    assert!(dir.join("grid.csv.summary.json").exists());
    assert!(dir.join("grid.csv.manifest.json").exists());
}

#[test]
fn sim_optimize_reads_ph_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("d.json"), r#"{"alpha":[1.0],"T":[[-1.0]]}"#).unwrap();
    fs::write(dir.join("l.json"), r#"{"alpha":[1.0,0.0],"T":[[-4.0,4.0],[0.0,-4.0]]}"#).unwrap();
    let v: Value = serde_json::from_str(&ok(dir, &[
        "optimize", "--backend", "sim", "--ph-d", "d.json", "--ph-l", "l.json", "--arrivals", "2e4", "--seed", "3",
        "--ko", "100", "--cr", "100", "--ch", "4", "--cl", "10000", "--s-max", "5", "--out", "grid.csv",
    ]))
    .unwrap();
    assert_eq!(v["backend"], "sim");
    assert_eq!(v["pairs"], 15);
}

#[test]
fn pipeline_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), "5");
    pipeline(b.path(), "5");
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "train_l.jsonl", "val_l.jsonl", "test_l.jsonl", "models/pmf.json", "models/cycle.json", "models/fulfill.json"] {
        let (x, y) = (fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        assert!(x == y, "{f} differs between runs");
    }
    // Thread count must not leak into the labels.
    ok(a.path(), &["simulate", "--in", "val.jsonl", "--arrivals", "1e4", "--warmup", "0.1", "--seed", "5", "--workers", "3", "--out", "val_w3.jsonl"]);
    assert_eq!(fs::read(a.path().join("val_l.jsonl")).unwrap(), fs::read(a.path().join("val_w3.jsonl")).unwrap());
}
