use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kgfuse::model::FusionVariant;

struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    /// A scratch directory with a small, fast config.
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = format!(
            r#"{{
  "data": {{ "synthetic": {{ "records_per_class": 6 }}, "dir": "data" }},
  "model": {{ "d": 8, "d_hidden": 4 }},
  "train": {{ "learning_rate": 0.001, "epochs": 2 }}{extra}
}}"#
        );
        std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn kgfuse(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_kgfuse"))
            .current_dir(self.dir.path())
            .args(args)
            .args(["--config", "cfg.json"])
            .output()
            .unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn text(out: &Output) -> String {
    format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    )
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn generate_writes_three_splits_deterministically() {
    let run = Run::new("");
    let out = run.kgfuse(&["generate", "--out", "data"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("24 train, 3 val, 3 test"));
    let first: Vec<String> = ["train", "val", "test"]
        .iter()
        .map(|s| read(&run.path(&format!("data/{s}.jsonl"))))
        .collect();
    assert_eq!(
        run.kgfuse(&["generate", "--out", "data"]).status.code(),
        Some(0)
    );
    for (s, before) in ["train", "val", "test"].iter().zip(first) {
        assert_eq!(read(&run.path(&format!("data/{s}.jsonl"))), before);
    }
}

#[test]
fn invalid_generation_writes_nothing() {
    let run = Run::new("");
    let out = run.kgfuse(&[
        "generate",
        "--out",
        "data",
        "--set",
        "data.synthetic.records_per_class=0",
    ]);
    assert_eq!(code(&out), 1, "{}", text(&out));
    assert!(!run.path("data").exists());
}

#[test]
fn default_output_directory_is_named_after_the_command() {
    let run = Run::new("");
    assert_eq!(
        code(&run.kgfuse(&["generate", "--set", "data.dir=runs/generate"])),
        0
    );
    assert!(run.path("runs/generate/train.jsonl").exists());
    let out = run.kgfuse(&["train", "--set", "data.dir=runs/generate"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    for f in [
        "checkpoint.json",
        "trace.csv",
        "metrics.json",
        "config.json",
    ] {
        assert!(run.path("runs/train").join(f).exists(), "{f}");
    }
    // eval reads runs/train/checkpoint.json by default
    let out = run.kgfuse(&["eval", "--set", "data.dir=runs/generate"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert_eq!(
        read(&run.path("runs/eval/metrics.json")),
        read(&run.path("runs/train/metrics.json"))
    );
}

#[test]
fn train_and_eval_outputs() {
    let run = Run::new(r#", "checkpoint": "t/checkpoint.json""#);
    run.kgfuse(&["generate", "--out", "data"]);
    let out = run.kgfuse(&["train", "--out", "t"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let trace = read(&run.path("t/trace.csv"));
    assert_eq!(
        trace.lines().next().unwrap(),
        "epoch,mean_loss,val_accuracy,val_weighted_f1"
    );
    assert_eq!(trace.lines().count(), 3);
    let metrics: serde_json::Value =
        serde_json::from_str(&read(&run.path("t/metrics.json"))).unwrap();
    for key in [
        "accuracy",
        "per_class_f1",
        "weighted_f1",
        "confusion",
        "support",
    ] {
        assert!(metrics.get(key).is_some(), "{key}");
    }

    assert_eq!(code(&run.kgfuse(&["eval", "--out", "e1"])), 0);
    assert_eq!(code(&run.kgfuse(&["eval", "--out", "e2"])), 0);
    assert_eq!(
        read(&run.path("e1/metrics.json")),
        read(&run.path("e2/metrics.json"))
    );

    let out = run.kgfuse(&["eval", "--out", "e3", "--set", "model.num_classes=3"]);
    assert_eq!(code(&out), 1, "{}", text(&out));
    assert!(text(&out).contains("num_classes"));
}

#[test]
fn missing_inputs_are_io_errors() {
    let run = Run::new("");
    let out = run.kgfuse(&["train", "--out", "t"]);
    assert_eq!(code(&out), 2, "{}", text(&out));
    let out = Command::new(env!("CARGO_BIN_EXE_kgfuse"))
        .args(["train", "--config", "/nonexistent/cfg.json"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn config_errors_exit_with_one() {
    let run = Run::new(r#", "trian": {}"#);
    assert_eq!(code(&run.kgfuse(&["generate"])), 1);
    let run = Run::new("");
    assert_eq!(
        code(&run.kgfuse(&["generate", "--set", "train.epochz=1"])),
        1
    );
    assert_eq!(code(&run.kgfuse(&["generate", "--set", "nonsense"])), 1);
    let out = Command::new(env!("CARGO_BIN_EXE_kgfuse"))
        .arg("train")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    let out = Command::new(env!("CARGO_BIN_EXE_kgfuse"))
        .arg("frobnicate")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn mismatched_dataset_dimensions_are_config_errors() {
    let run = Run::new("");
    run.kgfuse(&["generate", "--out", "data"]);
    let out = run.kgfuse(&["train", "--out", "t", "--set", "model.d_t=8"]);
    assert_eq!(code(&out), 1, "{}", text(&out));
}

#[test]
fn compare_emits_five_rows_in_table_order() {
    let run = Run::new("");
    run.kgfuse(&["generate", "--out", "data"]);
    let out = run.kgfuse(&["compare", "--out", "c"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let csv = read(&run.path("c/comparison.csv"));
    let names: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    let expected: Vec<&str> = FusionVariant::TABLE_ORDER
        .iter()
        .map(|v| v.display_name())
        .collect();
    assert_eq!(names, expected);
    assert_eq!(
        names,
        [
            "Concat Fusion",
            "Self-att Fusion",
            "GCN",
            "Independent GAT",
            "KGF"
        ]
    );

    let table = read(&run.path("c/comparison.txt"));
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let row = table
            .lines()
            .find(|l| l.starts_with(&format!("{} ", cols[0])))
            .unwrap();
        assert!(
            row.contains(cols[1]) && row.contains(cols[2]),
            "{row} vs {line}"
        );
    }
    let json: serde_json::Value =
        serde_json::from_str(&read(&run.path("c/comparison.json"))).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 5);
    assert_eq!(json["test_records"], 3);
}

#[test]
fn ablate_renders_deltas_against_full_model() {
    let run = Run::new("");
    run.kgfuse(&["generate", "--out", "data"]);
    let out = run.kgfuse(&["ablate", "--out", "a"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let table = read(&run.path("a/comparison.txt"));
    let rows: Vec<&str> = table.lines().skip(3).take(4).collect();
    assert!(rows[0].starts_with("KGF") && !rows[0].contains('('));
    for (row, name) in
        rows[1..]
            .iter()
            .zip(["w/o Multi-Knowledge", "w/o Graph Fusion", "w/o Global"])
    {
        assert!(row.starts_with(name), "{row}");
        assert_eq!(row.matches(['↓', '↑']).count(), 2, "{row}");
    }
    assert!(text(&out).contains("id hash"));
}

#[test]
fn log_level_from_environment() {
    let run = Run::new("");
    run.kgfuse(&["generate", "--out", "data"]);
    let out = Command::new(env!("CARGO_BIN_EXE_kgfuse"))
        .current_dir(run.dir.path())
        .env("KGFUSE_LOG", "info")
        .args(["train", "--config", "cfg.json", "--out", "t"])
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 2: loss"));
    let quiet = Command::new(env!("CARGO_BIN_EXE_kgfuse"))
        .current_dir(run.dir.path())
        .env("KGFUSE_LOG", "error")
        .args(["train", "--config", "cfg.json", "--out", "t"])
        .output()
        .unwrap();
    assert!(quiet.stderr.is_empty());
}

#[test]
fn gradcheck_reports_every_variant() {
    let run = Run::new("");
    let out = run.kgfuse(&[
        "gradcheck",
        "--out",
        "g",
        "--set",
        "model.d_t=8",
        "--set",
        "model.d_v=8",
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let report: serde_json::Value =
        serde_json::from_str(&read(&run.path("g/gradcheck.json"))).unwrap();
    let variants = report["variants"].as_array().unwrap();
    assert_eq!(variants.len(), 5);
    for v in variants {
        assert!(v["max_rel_error"].as_f64().unwrap() < 1e-4);
    }
    let out = run.kgfuse(&[
        "gradcheck",
        "--out",
        "g2",
        "--corrupt-grad",
        "classifier.hidden.weight=0.01",
        "--set",
        "model.d_t=8",
        "--set",
        "model.d_v=8",
    ]);
    assert_eq!(code(&out), 3);
    assert!(text(&out).contains("classifier.hidden.weight"));
    assert!(text(&out).contains("FAIL"));
}
