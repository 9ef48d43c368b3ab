use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{"sim":{"impressions":24000,"num_queries":40,"num_items":200,"feature_dim":4},"train":{"max_iters":100}}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sponsored-ctr"))
        .args(args)
        .arg("--out")
        .arg(dir.join("out"))
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
    dir
}

#[test]
fn simulate_is_deterministic() {
    let dir = setup();
    let first = run(dir.path(), &["--config", "cfg.json", "simulate"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let logs = fs::read(dir.path().join("out/logs.jsonl")).unwrap();
    let truth = fs::read(dir.path().join("out/truth.json")).unwrap();
    assert_eq!(logs.iter().filter(|&&b| b == b'\n').count(), 24000);

    let again = run(dir.path(), &["--config", "cfg.json", "simulate"]);
    assert!(again.status.success());
    assert_eq!(logs, fs::read(dir.path().join("out/logs.jsonl")).unwrap());
    assert_eq!(truth, fs::read(dir.path().join("out/truth.json")).unwrap());

    let other = run(dir.path(), &["--config", "cfg.json", "--seed", "99", "simulate"]);
    assert!(other.status.success());
    assert_ne!(logs, fs::read(dir.path().join("out/logs.jsonl")).unwrap());
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = setup();
    fs::write(dir.path().join("bad.json"), r#"{"sim":{"propensity_decay":1.5}}"#).unwrap();
    let out = run(dir.path(), &["--config", "bad.json", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("propensity_decay"));

    let out = run(dir.path(), &["--config", "cfg.json", "evaluate", "--method", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_one() {
    let dir = setup();
    let out = run(dir.path(), &["--config", "cfg.json", "train", "--logs", "nowhere.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn pipeline_subcommands_write_their_outputs() {
    let dir = setup();
    let p = dir.path();
    assert!(run(p, &["--config", "cfg.json", "simulate"]).status.success());

    let out = run(p, &["--config", "cfg.json", "features", "--as-of-day", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("out/history_day10.json")).unwrap()).unwrap();
    assert_eq!(table["as_of_day"], 10);

    let out = run(p, &["--config", "cfg.json", "train"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(p.join("out/models/model.json").exists());

    let out = run(p, &["--config", "cfg.json", "predict", "--model", "out/models/model.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let preds = fs::read_to_string(p.join("out/predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 24000);
    for line in preds.lines().take(50) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let pctr = v["pctr"].as_f64().unwrap();
        assert!(pctr > 0.0 && pctr < 1.0);
    }

    let out = run(p, &["--config", "cfg.json", "evaluate", "--method", "prac"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("out/reports/prac.json")).unwrap()).unwrap();
    for key in ["ctr_auroc", "ctr_auprc", "ctcvr_auroc", "ctcvr_auprc", "logloss"] {
        assert!(report["offline"][key].is_f64(), "missing offline {key}");
    }
    for key in ["eCTR", "eCPMV", "ROAS"] {
        assert!(report["online"][key].is_f64(), "missing online {key}");
    }
    assert!(p.join("out/models/prac.json").exists());
}

#[test]
fn rank_orders_by_squashed_score() {
    let dir = setup();
    fs::write(
        dir.path().join("cands.json"),
        r#"[
            {"item_id":"a","pctr":0.10,"cpc":1.0,"expected_order_value":50.0},
            {"item_id":"b","pctr":0.02,"cpc":8.0,"expected_order_value":50.0},
            {"item_id":"c","pctr":0.05,"cpc":1.0,"expected_order_value":50.0}
        ]"#,
    )
    .unwrap();
    let ids = |c: &str| {
        let out = run(dir.path(), &["rank", "--candidates", "cands.json", "--c", c, "--slate-size", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let slate: Vec<serde_json::Value> =
            serde_json::from_slice(&fs::read(dir.path().join("out/slate.json")).unwrap()).unwrap();
        slate.iter().map(|v| v["item_id"].as_str().unwrap().to_owned()).collect::<Vec<_>>()
    };
    // c=1: b (0.16) > a (0.10) > c; c=3: a (1e-3) > b (6.4e-5) ~ c (1.25e-4) -> a, c.
    assert_eq!(ids("1"), ["b", "a"]);
    assert_eq!(ids("3"), ["a", "c"]);

    let out = run(dir.path(), &["rank", "--candidates", "cands.json", "--c", "-1", "--slate-size", "2"]);
    assert_eq!(out.status.code(), Some(2));
}
