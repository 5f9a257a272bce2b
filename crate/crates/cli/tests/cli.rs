use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn styled2t(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_styled2t"))
        .args(args)
        .env_remove("STYLED2T_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&styled2t(&["gen-data", "--out", p(&a), "--seed", "3", "--per-style", "20,20"]));
    ok(&styled2t(&["gen-data", "--out", p(&b), "--seed", "3", "--per-style", "20,20"]));
    ok(&styled2t(&["gen-data", "--out", p(&c), "--seed", "4", "--per-style", "20,20"]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 40);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&styled2t(&["gen-data", "--out", p(&a), "--seed", "9", "--per-style", "5,5"]));
    let out = Command::new(env!("CARGO_BIN_EXE_styled2t"))
        .args(["gen-data", "--out", p(&b), "--per-style", "5,5"])
        .env("STYLED2T_SEED", "9")
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn usage_errors_exit_1() {
    let out = styled2t(&["gen-data", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let out = styled2t(&["train", "--data", "x", "--out", "y", "--set", "nonsense=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("styled2t: error[usage]:"));
    assert_eq!(styled2t(&["--help"]).status.code(), Some(0));
    assert_eq!(styled2t(&["--version"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = styled2t(&["stats", "--data", p(&dir.path().join("missing.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("styled2t: error[data]:"));
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"data\": []}\n").unwrap();
    assert_eq!(styled2t(&["stats", "--data", p(&bad)]).status.code(), Some(2));
}

#[test]
fn stats_report_generator_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    ok(&styled2t(&["gen-data", "--out", p(&data), "--per-style", "60,40", "--min-pairs", "3", "--max-pairs", "5"]));
    let out = styled2t(&["stats", "--data", p(&data), "--json"]);
    ok(&out);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0]["samples"], 60);
    assert_eq!(rows[1]["samples"], 40);
    assert_eq!(rows[2]["samples"], 100);
    for r in rows {
        let pairs = r["avg_attr_val"].as_f64().unwrap();
        assert!((3.0..=5.0).contains(&pairs));
        assert!(r["avg_len"].as_f64().unwrap() > pairs);
    }
    let table = styled2t(&["stats", "--data", p(&data)]);
    ok(&table);
    assert!(String::from_utf8_lossy(&table.stdout).contains("#Avg Attr-val"));
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n);
    ok(&styled2t(&[
        "gen-data", "--out", p(&d("train.jsonl")), "--per-style", "14,14", "--holdout", "4", "--test-out",
        p(&d("test.jsonl")),
    ]));
    ok(&styled2t(&["build-graphs", "--data", p(&d("test.jsonl")), "--corpus", p(&d("train.jsonl")), "--out", p(&d("graphs.jsonl"))]));
    let graphs = fs::read_to_string(d("graphs.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(graphs.lines().next().unwrap()).unwrap();
    assert!(first["nodes"].is_array() && first["weights"].is_array());

    fs::write(d("cfg.toml"), "dim = 16\nheads = 2\nff_dim = 32\nlayers = 1\nbatch_per_style = 5\n").unwrap();
    let ck = d("ck");
    ok(&styled2t(&[
        "train", "--data", p(&d("train.jsonl")), "--out", p(&ck), "--config", p(&d("cfg.toml")), "--epochs", "1",
        "--set", "max_decode_len=40",
    ]));
    assert!(ck.join("params/manifest.json").exists() && ck.join("gate/lm.json").exists());
    assert_eq!(fs::read_to_string(ck.join("metrics.jsonl")).unwrap().lines().count(), 2);

    ok(&styled2t(&["plan", "--checkpoint", p(&ck), "--data", p(&d("test.jsonl")), "--out", p(&d("plans.jsonl"))]));
    let plans = fs::read_to_string(d("plans.jsonl")).unwrap();
    for line in plans.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let mut order: Vec<u64> = v["plan"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect();
        order.sort_unstable();
        assert_eq!(order, (1..=order.len() as u64).collect::<Vec<_>>());
    }

    ok(&styled2t(&[
        "infer", "--checkpoint", p(&ck), "--data", p(&d("test.jsonl")), "--out", p(&d("gen.jsonl")), "--style", "1",
        "--max-len", "20",
    ]));
    let generated = fs::read_to_string(d("gen.jsonl")).unwrap();
    assert_eq!(generated.lines().count(), 8);
    assert!(generated.lines().all(|l| l.contains("\"style\":1")));
    assert_eq!(
        styled2t(&["infer", "--checkpoint", p(&ck), "--data", p(&d("test.jsonl")), "--out", p(&d("x")), "--style", "7"])
            .status
            .code(),
        Some(1)
    );

    ok(&styled2t(&["gate", "--checkpoint", p(&ck), "--candidates", p(&d("test.jsonl")), "--out", p(&d("verdicts.jsonl"))]));
    let verdict: serde_json::Value =
        serde_json::from_str(fs::read_to_string(d("verdicts.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    assert!(verdict["tau"].is_boolean() && verdict["scores"]["perplexity"].is_number());

    ok(&styled2t(&[
        "evaluate", "--checkpoint", p(&ck), "--test", p(&d("test.jsonl")), "--out", p(&d("report.json")), "--max-len", "20",
    ]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d("report.json")).unwrap()).unwrap();
    for k in ["style_accuracy", "coverage", "rouge_l", "bleu_4"] {
        let v = report["metrics"][k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{k} = {v}");
    }
    assert_eq!(report["samples"].as_array().unwrap().len(), 16);
}
