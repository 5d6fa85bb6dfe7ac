use std::path::Path;
use std::process::{Command, Output};

use stmlp::checkpoint::Checkpoint;
use stmlp::error::exit;

fn stmlp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stmlp")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = stmlp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const RUN: &str = "[model]
layers = 1
joints = 5
hidden = 16
time_steps = 16
spatial_hidden = 8
temporal_hidden = 16
classes = 4

[train]
optimizer = \"adam\"
epochs = 6
batch_size = 32
seed = 3

[schedule]
kind = \"cosine\"
base_lr = 0.01
final_lr = 0.001

[data]
test = [\"s4\"]
";

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, RUN).unwrap();
    ok(&["synth", "--out", p(&data), "--samples", "120"]);

    let a = dir.path().join("a.stmlp");
    let b = dir.path().join("b.stmlp");
    for out in [&a, &b] {
        ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(out)]);
    }
    let log_a = std::fs::read_to_string(dir.path().join("a.stmlp.log")).unwrap();
    let log_b = std::fs::read_to_string(dir.path().join("b.stmlp.log")).unwrap();
    assert_eq!(log_a.lines().count(), 6);
    assert_eq!(log_a, log_b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let last = log_a.lines().last().unwrap();
    let logged: f64 = last.split("train_acc=").nth(1).unwrap().parse().unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["eval", "--checkpoint", p(&a), "--data", p(&data), "--split", "train", "--json"])).unwrap();
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((acc - logged).abs() <= 1e-9, "{acc} vs {logged}");
    let ckpt = Checkpoint::load(&a).unwrap();
    assert_eq!(ckpt.header.metadata["final_train_accuracy"].as_f64().unwrap(), logged);

    let text = ok(&["eval", "--checkpoint", p(&a), "--data", p(&data), "--split", "test"]);
    for needle in ["accuracy", "macro jaccard", "macro f1", "mean per-class accuracy", "true\\pred"] {
        assert!(text.contains(needle), "{text}");
    }
    assert!(text.contains("samples                  24"), "{text}");

    let inspect = ok(&["inspect", "--checkpoint", p(&a), "--json"]);
    let v: serde_json::Value = serde_json::from_str(&inspect).unwrap();
    assert_eq!(v["param_count"], v["analytic_param_count"]);
    assert_eq!(v["param_count"].as_u64().unwrap() as usize, ckpt.config().param_count());
    assert!(ok(&["inspect", "--checkpoint", p(&a)]).contains("(match)"));

    let bench = ok(&["bench", "--checkpoint", p(&a), "--iterations", "50", "--warmup", "5", "--precision", "both", "--json"]);
    for line in bench.lines() {
        let s: serde_json::Value = serde_json::from_str(line).unwrap();
        let (min, p50, p99) = (s["min_ms"].as_f64().unwrap(), s["p50_ms"].as_f64().unwrap(), s["p99_ms"].as_f64().unwrap());
        assert!(min <= p50 && p50 <= p99);
    }
    assert_eq!(bench.lines().count(), 2);
}

#[test]
fn failures_map_to_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    ok(&["synth", "--out", p(&data), "--samples", "12", "--joints", "3"]);
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, RUN).unwrap();

    let mismatch = stmlp(&["train", "--config", p(&cfg), "--data", p(&data)]);
    assert_eq!(mismatch.status.code(), Some(exit::DATA));
    let err = String::from_utf8_lossy(&mismatch.stderr);
    assert!(err.contains("K=3") && err.contains("K=5"), "{err}");

    let bad = stmlp(&["train", "--config", p(&cfg), "--set", "model.layers=0", "--data", p(&data)]);
    assert_eq!(bad.status.code(), Some(exit::CONFIG));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("model"));

    let no_data = stmlp(&["train", "--config", p(&cfg)]);
    assert_eq!(no_data.status.code(), Some(exit::CONFIG));

    let missing = stmlp(&["eval", "--checkpoint", p(&dir.path().join("none")), "--data", p(&data)]);
    assert_eq!(missing.status.code(), Some(exit::IO));

    let garbage = dir.path().join("garbage.stmlp");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(stmlp(&["inspect", "--checkpoint", p(&garbage)]).status.code(), Some(exit::DATA));

    assert_eq!(stmlp(&["train", "--variant", "sideways"]).status.code(), Some(exit::USAGE));
}

#[test]
fn eval_rejects_a_checkpoint_for_other_joints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let small = dir.path().join("small.jsonl");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, RUN.replace("epochs = 6", "epochs = 1")).unwrap();
    ok(&["synth", "--out", p(&data), "--samples", "20"]);
    ok(&["synth", "--out", p(&small), "--samples", "4", "--joints", "2"]);
    let ck = dir.path().join("m.stmlp");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ck)]);
    let out = stmlp(&["eval", "--checkpoint", p(&ck), "--data", p(&small)]);
    assert_eq!(out.status.code(), Some(exit::DATA));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("K=2") && err.contains("K=5"), "{err}");
}

#[test]
fn predict_streams_one_line_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, RUN.replace("epochs = 6", "epochs = 1")).unwrap();
    ok(&["synth", "--out", p(&data), "--samples", "20"]);
    let ck = dir.path().join("m.stmlp");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ck)]);
    let frame = serde_json::to_string(&serde_json::json!({"joints": vec![[0.1, 0.2, 0.3]; 5]})).unwrap();
    let mut input = String::new();
    for i in 0..16 {
        input.push_str(&frame);
        input.push('\n');
        if i == 7 {
            input.push_str("{broken\n");
        }
    }
    let stream_in = dir.path().join("frames.jsonl");
    std::fs::write(&stream_in, input).unwrap();
    let out = stmlp(&["predict", "--checkpoint", p(&ck), "--input", p(&stream_in)]);
    assert!(out.status.success());
    let lines: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 16);
    assert!(lines[15].starts_with("{\"frame\":15,\"class\":"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 9: skipped"));
}
