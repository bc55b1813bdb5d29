use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use seqlearn_core::downstream::parse_saif;
use serde_json::Value;

fn seqlearn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqlearn"))
        .args(args)
        .current_dir(dir)
        .env_remove("SEQLEARN_CONFIG")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = seqlearn(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(d, &["--seed", "11", "gen", "--n", "3", "--out", "corpus"]);
    }
    let ta = tree(&a.path().join("corpus"));
    assert_eq!(ta.len(), 5);
    assert_eq!(ta, tree(&b.path().join("corpus")));
    ok(a.path(), &["--seed", "12", "gen", "--n", "3", "--out", "other"]);
    assert_ne!(fs::read(a.path().join("corpus/c0000.aag")).unwrap(), fs::read(a.path().join("other/c0000.aag")).unwrap());
}

#[test]
fn sim_writes_stats_and_saif() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--n", "1", "--out", "c"]);
    ok(
        d.path(),
        &["sim", "--aig", "c/c0000.aag", "--patterns", "30", "--cycles", "7", "--out", "s.json", "--saif", "s.saif"],
    );
    let doc = parse_saif(&fs::read_to_string(d.path().join("s.saif")).unwrap()).unwrap();
    assert_eq!(doc.duration, 210);
    let stats = json(&d.path().join("s.json"));
    assert_eq!(stats["nodes"].as_array().unwrap().len(), doc.nets.len());
    let m = json(&d.path().join("s.json.manifest.json"));
    assert_eq!(m["command"], "sim");
    assert_eq!(m["config"]["simulate"]["n_patterns"], 30);
}

#[test]
fn bench_input_keeps_names() {
    let d = tempfile::tempdir().unwrap();
    fs::write(
        d.path().join("t.bench"),
        "INPUT(a)\nINPUT(b)\nOUTPUT(y)\nq = DFF(y)\ny = NAND(a, q)\nz = OR(a, b)\n",
    )
    .unwrap();
    ok(d.path(), &["sim", "--bench", "t.bench", "--out", "s.json", "--saif", "s.saif", "--patterns", "8"]);
    let doc = parse_saif(&fs::read_to_string(d.path().join("s.saif")).unwrap()).unwrap();
    for n in ["a", "b", "q", "y", "z"] {
        assert!(doc.net(n).is_some(), "{n}");
    }
    let o = ok(d.path(), &["inspect", "--bench", "t.bench"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["ffs"], 1);
    assert_eq!(v["cyclic_regions"].as_array().unwrap().len(), 1);
}

const SMALL: &[&str] = &["--epochs-phase1", "1", "--epochs-phase2", "1", "--dim", "8", "--hidden", "8"];

fn pipeline(dir: &Path) {
    ok(dir, &["--seed", "5", "gen", "--n", "3", "--out", "corpus"]);
    ok(
        dir,
        &["--seed", "5", "label", "--corpus", "corpus", "--out", "data/ds.jsonl", "--patterns", "64", "--cycles", "10"],
    );
}

#[test]
fn label_train_eval_reports_every_task() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let first = fs::read_to_string(d.path().join("data/ds.jsonl")).unwrap();
    let rec: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(rec["circuit_path"], "../corpus/c0000.aag");
    let mut args = vec!["train", "--dataset", "data/ds.jsonl", "--out", "m.ckpt", "--history", "h.jsonl"];
    args.extend(SMALL);
    ok(d.path(), &args);
    let hist = fs::read_to_string(d.path().join("h.jsonl")).unwrap();
    assert_eq!(hist.lines().count(), 2);
    ok(d.path(), &["eval", "--dataset", "data/ds.jsonl", "--model", "m.ckpt", "--out", "r.json"]);
    let r = json(&d.path().join("r.json"));
    assert_eq!(r["per_circuit"].as_array().unwrap().len(), 3);
    for t in ["rc", "lg", "tr", "f", "ffsim"] {
        let x = r["pooled"][t].as_f64().unwrap_or_else(|| panic!("missing {t}"));
        assert!((0.0..=1.0).contains(&x));
    }
}

#[test]
fn manifest_reproduces_training() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let mut args = vec!["--seed", "9", "train", "--dataset", "data/ds.jsonl", "--out", "a.ckpt"];
    args.extend(SMALL);
    ok(d.path(), &args);
    let m = json(&d.path().join("a.ckpt.manifest.json"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["train"]["model"]["dim"], 8);
    ok(
        d.path(),
        &["--config", "a.ckpt.manifest.json", "train", "--dataset", "data/ds.jsonl", "--out", "b.ckpt"],
    );
    assert_eq!(fs::read(d.path().join("a.ckpt")).unwrap(), fs::read(d.path().join("b.ckpt")).unwrap());
    let mb = json(&d.path().join("b.ckpt.manifest.json"));
    assert_eq!(m["config_hash"], mb["config_hash"]);
    assert_eq!(m["config"], mb["config"]);
}

#[test]
fn config_file_and_flag_precedence() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--n", "1", "--out", "c"]);
    fs::write(d.path().join("run.toml"), "[simulate]\nn_patterns = 12\nn_cycles = 4\n").unwrap();
    ok(d.path(), &["--config", "run.toml", "sim", "--aig", "c/c0000.aag", "--out", "a.json", "--cycles", "6"]);
    let m = json(&d.path().join("a.json.manifest.json"));
    assert_eq!(m["config"]["simulate"]["n_patterns"], 12);
    assert_eq!(m["config"]["simulate"]["n_cycles"], 6);
    let o = Command::new(env!("CARGO_BIN_EXE_seqlearn"))
        .args(["sim", "--aig", "c/c0000.aag", "--out", "b.json"])
        .current_dir(d.path())
        .env("SEQLEARN_CONFIG", "run.toml")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(json(&d.path().join("b.json"))["n_patterns"], 12);
}

#[test]
fn reliability_labels_and_tuning() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let mut args = vec!["train", "--dataset", "data/ds.jsonl", "--out", "m.ckpt"];
    args.extend(SMALL);
    ok(d.path(), &args);
    ok(
        d.path(),
        &[
            "reliab", "--aig", "corpus/c0000.aag", "--flip-prob", "0.01", "--patterns", "64", "--cycles", "20", "--out",
            "r.jsonl", "--model", "m.ckpt", "--tuned", "t.ckpt", "--epochs", "2",
        ],
    );
    let lines = fs::read_to_string(d.path().join("r.jsonl")).unwrap();
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for k in ["node", "p01", "p10", "n0", "n1"] {
        assert!(first.get(k).is_some(), "{k}");
    }
    assert!(d.path().join("t.ckpt").exists());
    ok(d.path(), &["power", "--aig", "corpus/c0001.aag", "--model", "t.ckpt", "--out", "p.json", "--patterns", "32"]);
    let p = json(&d.path().join("p.json"));
    assert!(p["power_simulated"].as_f64().unwrap() > 0.0);
    assert!(p["relative_error"].is_number());
}

#[test]
fn exit_codes_separate_usage_from_data_errors() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(seqlearn(d.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(seqlearn(d.path(), &["sim", "--out", "x.json"]).status.code(), Some(1));
    fs::write(d.path().join("bad.toml"), "[train]\nbatchsize = 2\n").unwrap();
    let o = seqlearn(d.path(), &["--config", "bad.toml", "gen", "--n", "1", "--out", "c"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("batchsize"));

    assert_eq!(seqlearn(d.path(), &["sim", "--aig", "missing.aag", "--out", "x.json"]).status.code(), Some(2));
    fs::write(d.path().join("bad.aag"), "aag 3 1 0 1 1\n2\n6\n6 2 9\n").unwrap();
    let o = seqlearn(d.path(), &["sim", "--aig", "bad.aag", "--out", "x.json"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.aag:"), "{err}");

    fs::write(d.path().join("ds.jsonl"), "{\"circuit_path\": 3}\n").unwrap();
    let o = seqlearn(d.path(), &["train", "--dataset", "ds.jsonl", "--out", "m.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ds.jsonl:1"));
}

#[test]
fn json_logs_are_one_object_per_line() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path());
    let mut args = vec!["--json-logs", "train", "--dataset", "data/ds.jsonl", "--out", "m.ckpt"];
    args.extend(SMALL);
    let o = ok(d.path(), &args);
    let err = String::from_utf8(o.stderr).unwrap();
    let mut epochs = 0;
    for line in err.lines() {
        let v: Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("{line}: {e}"));
        if v["event"] == "epoch" {
            epochs += 1;
        }
    }
    assert_eq!(epochs, 2);
}
