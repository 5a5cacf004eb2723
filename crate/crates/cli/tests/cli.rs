use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use softsense::checkpoint::{Checkpoint, Stage, Task};
use softsense::config::RunConfig;
use softsense::data::{load_csv, save_csv};
use softsense::error::CliError;
use softsense::pipeline::{self, Split};
use softsense_core::tasks::regress::predict_raw;

const BIN: &str = env!("CARGO_BIN_EXE_softsense");

fn tiny_config() -> RunConfig {
    RunConfig {
        d: 8,
        heads: 2,
        n_ctx: 80,
        r_lora: 2,
        frozen_layers: 1,
        lora_layers: 1,
        r_adapter: 4,
        lr: 1e-2,
        batch: 16,
        epochs: 2,
        anomaly_epochs: 2,
        window: 8,
        prompt_window: 2,
        train_stride: 4,
        val_stride: 8,
        test_stride: 4,
        detect_stride: 4,
        ..RunConfig::default()
    }
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self { dir: tempfile::tempdir().unwrap() };
        std::fs::write(ws.path("tiny.json"), serde_json::to_string_pretty(&tiny_config()).unwrap()).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN).args(args).env_remove("SSFM_THREADS").output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        out
    }

    /// Small dataset plus a stage-1 checkpoint trained on it.
    fn with_ssfm(self) -> Self {
        self.ok(&["gen-data", "--out", &self.arg("data.csv"), "--samples", "400", "--seed", "7"]);
        self.ok(&["pretrain", "--data", &self.arg("data.csv"), "--config", &self.arg("tiny.json"), "--out", &self.arg("ssfm.ckpt")]);
        self
    }

    fn adapt(&self, task: &str, out: &str, extra: &[&str]) {
        let mut args = vec!["adapt", "--task", task, "--data", self.path("data.csv").to_str().unwrap()]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        args.extend(["--ssfm".into(), self.arg("ssfm.ckpt"), "--config".into(), self.arg("tiny.json"), "--out".into(), self.arg(out)]);
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        self.ok(&refs);
    }
}

fn read_rows(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().filter(|l| !l.starts_with("timestamp")).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn gen_data_is_byte_identical_and_round_trips() {
    let ws = Workspace::new();
    ws.ok(&["gen-data", "--out", &ws.arg("a.csv"), "--samples", "300", "--seed", "42"]);
    ws.ok(&["gen-data", "--out", &ws.arg("b.csv"), "--samples", "300", "--seed", "42"]);
    let a = std::fs::read(ws.path("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(ws.path("b.csv")).unwrap());
    assert!(a.starts_with(b"timestamp,v1,v2,v3,v4,v5,y\n"));
    assert!(!a.contains(&b'\r'));
    let data = load_csv(&ws.path("a.csv")).unwrap();
    assert_eq!(data, pipeline::generate(300, 42).unwrap());
    save_csv(&data, &ws.path("c.csv")).unwrap();
    assert_eq!(a, std::fs::read(ws.path("c.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    assert_eq!(ws.run(&[]).status.code(), Some(1));
    assert_eq!(ws.run(&["--help"]).status.code(), Some(0));
    assert_eq!(ws.run(&["gen-data", "--bogus"]).status.code(), Some(1));
    assert_eq!(ws.run(&["gen-data", "--out", &ws.arg("x.csv"), "--samples", "10"]).status.code(), Some(2));
    let missing = ws.run(&["pretrain", "--data", &ws.arg("nope.csv"), "--out", &ws.arg("x.ckpt")]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.csv"));

    ws.ok(&["gen-data", "--out", &ws.arg("data.csv"), "--samples", "300"]);
    std::fs::write(ws.path("bad.json"), r#"{"window": 8, "windw": 9}"#).unwrap();
    let bad = ws.run(&["pretrain", "--data", &ws.arg("data.csv"), "--config", &ws.arg("bad.json"), "--out", &ws.arg("x.ckpt")]);
    assert_eq!(bad.status.code(), Some(1));

    std::fs::write(ws.path("broken.csv"), "timestamp,v1,y\n0,1,2\n1,oops,3\n").unwrap();
    let broken = ws.run(&["pretrain", "--data", &ws.arg("broken.csv"), "--out", &ws.arg("x.ckpt")]);
    assert_eq!(broken.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&broken.stderr).contains("line 3"));

    let threads = Command::new(BIN).args(["gen-data", "--out", &ws.arg("t.csv"), "--samples", "300"]).env("SSFM_THREADS", "zero").output().unwrap();
    assert_eq!(threads.status.code(), Some(1));

    let mut cfg = tiny_config();
    cfg.lr = 1e300;
    std::fs::write(ws.path("wild.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let wild = ws.run(&["pretrain", "--data", &ws.arg("data.csv"), "--config", &ws.arg("wild.json"), "--out", &ws.arg("x.ckpt")]);
    assert_eq!(wild.status.code(), Some(3), "{}", String::from_utf8_lossy(&wild.stderr));
    assert!(!ws.path("x.ckpt").exists());
}

#[test]
fn checkpoint_round_trip_is_byte_and_output_exact() {
    let data = pipeline::generate(400, 3).unwrap();
    let ssfm = pipeline::pretrain(&data, &tiny_config()).unwrap().checkpoint;
    let ck = pipeline::adapt(Task::Regress, Some(&ssfm), &data, &tiny_config()).unwrap().checkpoint;
    let bytes = ck.to_bytes().unwrap();
    assert_eq!(&bytes[..8], b"SSFMCKPT");
    let loaded = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(loaded, ck);
    assert_eq!(loaded.to_bytes().unwrap(), bytes);

    let test = pipeline::select(&data, Split::Test).unwrap();
    let set = pipeline::window_set(&ck, &test, 1).unwrap();
    let before = predict_raw(&ck.model, &set, 7).unwrap();
    let after = predict_raw(&loaded.model, &set, 7).unwrap();
    assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1, "temporary file left behind");
}

fn data_error(bytes: &[u8]) -> String {
    match Checkpoint::from_bytes(bytes) {
        Err(CliError::Data(msg)) => msg,
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let data = pipeline::generate(300, 5).unwrap();
    let mut cfg = tiny_config();
    cfg.epochs = 1;
    let bytes = pipeline::pretrain(&data, &cfg).unwrap().checkpoint.to_bytes().unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(data_error(&bad).contains("magic"));

    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(data_error(&bad).contains("version"));

    assert!(data_error(&bytes[..bytes.len() - 3]).contains("truncated"));
    assert!(data_error(&bytes[..10]).contains("truncated"));

    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0; 4]);
    assert!(data_error(&extra).contains("payload"));

    // Declare a shape one row larger than what the payload holds.
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let manifest = std::str::from_utf8(&bytes[16..16 + len]).unwrap();
    let edited = manifest.replacen("\"shape\":[5,8]", "\"shape\":[6,8]", 1);
    assert_ne!(edited, manifest, "expected a [5,8] tensor in the manifest");
    let mut bad = Vec::new();
    bad.extend_from_slice(&bytes[..12]);
    bad.extend_from_slice(&(edited.len() as u32).to_le_bytes());
    bad.extend_from_slice(edited.as_bytes());
    bad.extend_from_slice(&bytes[16 + len..]);
    let msg = data_error(&bad);
    assert!(msg.contains("offset") || msg.contains("payload"), "{msg}");
}

#[test]
fn adapt_requires_a_stage_one_checkpoint() {
    let ws = Workspace::new().with_ssfm();
    ws.adapt("regress", "reg.ckpt", &[]);
    let ck = Checkpoint::load(&ws.path("reg.ckpt")).unwrap();
    assert_eq!(ck.stage, Stage::Adapted);
    let out = ws.run(&[
        "adapt", "--task", "regress", "--ssfm", &ws.arg("reg.ckpt"), "--data", &ws.arg("data.csv"),
        "--config", &ws.arg("tiny.json"), "--out", &ws.arg("again.ckpt"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ssfm"));
    let out = ws.run(&["adapt", "--task", "regress", "--data", &ws.arg("data.csv"), "--out", &ws.arg("again.ckpt")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn regression_commands() {
    let ws = Workspace::new().with_ssfm();
    ws.adapt("regress", "reg.ckpt", &[]);
    let out = ws.ok(&["eval", "--task", "regress", "--ckpt", &ws.arg("reg.ckpt"), "--data", &ws.arg("data.csv"), "--split", "train"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["r2"].as_f64().unwrap() > 0.0, "{report}");
    assert!(report["rmse"].as_f64().unwrap() >= report["mae"].as_f64().unwrap());

    let wrong = ws.run(&["eval", "--task", "impute", "--ckpt", &ws.arg("reg.ckpt"), "--data", &ws.arg("data.csv")]);
    assert_eq!(wrong.status.code(), Some(1));

    ws.ok(&["predict", "--ckpt", &ws.arg("reg.ckpt"), "--data", &ws.arg("data.csv"), "--out", &ws.arg("pred.csv"), "--split", "test"]);
    let rows = read_rows(&ws.path("pred.csv"));
    assert_eq!(rows.len(), 58 - 8 + 1, "390 rows split 274/58/58");
    assert!(rows.iter().all(|r| r.len() == 2 && r[1].is_finite()));
}

#[test]
fn attention_dump_is_causal_and_normalised() {
    let ws = Workspace::new().with_ssfm();
    ws.ok(&[
        "dump-attention", "--ckpt", &ws.arg("ssfm.ckpt"), "--data", &ws.arg("data.csv"),
        "--sample", "3", "--layer", "1", "--head", "1", "--out", &ws.arg("attn.csv"),
    ]);
    let rows = read_rows(&ws.path("attn.csv"));
    assert_eq!(rows.len(), 8);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 8);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row[i + 1..].iter().all(|&p| p == 0.0));
    }
    let bad = ws.run(&[
        "dump-attention", "--ckpt", &ws.arg("ssfm.ckpt"), "--data", &ws.arg("data.csv"),
        "--sample", "0", "--layer", "5", "--head", "0", "--out", &ws.arg("attn.csv"),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn anomaly_detection_commands() {
    let ws = Workspace::new().with_ssfm();
    ws.adapt("anomaly", "anom.ckpt", &[]);
    ws.ok(&[
        "detect", "--ckpt", &ws.arg("anom.ckpt"), "--data", &ws.arg("data.csv"), "--out", &ws.arg("flags.csv"),
        "--quantile", "1.0", "--split", "val",
    ]);
    let rows = read_rows(&ws.path("flags.csv"));
    assert_eq!(rows.len(), 58);
    assert!(rows.iter().all(|r| r[1..].iter().all(|&f| f == 0.0)));

    ws.ok(&["detect", "--ckpt", &ws.arg("anom.ckpt"), "--data", &ws.arg("data.csv"), "--out", &ws.arg("all.csv"), "--quantile", "0.5"]);
    let flagged: f64 = read_rows(&ws.path("all.csv")).iter().map(|r| r[1..].iter().sum::<f64>()).sum();
    assert!(flagged > 0.0);

    let out = ws.ok(&["eval", "--task", "anomaly", "--ckpt", &ws.arg("anom.ckpt"), "--data", &ws.arg("data.csv")]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["kinds"].as_array().unwrap().len(), 4);
    assert_eq!(report["kinds"][0]["per_variable"].as_array().unwrap().len(), 5);
}

#[test]
fn imputation_commands() {
    let ws = Workspace::new().with_ssfm();
    ws.adapt("impute", "imp.ckpt", &[]);
    let out = ws.ok(&[
        "impute", "--ckpt", &ws.arg("imp.ckpt"), "--data", &ws.arg("data.csv"), "--mask-ratio", "0.2", "--out", &ws.arg("filled.csv"),
    ]);
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    // 390 rows after warm-up, 5 variables, 20% masked.
    assert_eq!(metrics["c"], 390);
    let data = load_csv(&ws.path("data.csv")).unwrap();
    let rows = read_rows(&ws.path("filled.csv"));
    assert_eq!(rows.len(), 390);
    for (t, row) in rows.iter().enumerate() {
        for s in 0..5 {
            if row[6 + s] == 0.0 {
                assert_eq!(row[1 + s], data.series.values[t * 5 + s]);
            }
        }
    }
    let out = ws.ok(&["eval", "--task", "impute", "--ckpt", &ws.arg("imp.ckpt"), "--data", &ws.arg("data.csv")]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ratios: Vec<f64> = report.as_array().unwrap().iter().map(|r| r["mask_ratio"].as_f64().unwrap()).collect();
    assert_eq!(ratios, vec![0.1, 0.2, 0.3, 0.4]);
}

#[test]
fn prompt_tasks_and_ablation_flags() {
    let ws = Workspace::new().with_ssfm();
    ws.adapt("pdss", "pdss.ckpt", &["--train-fraction", "0.5"]);
    let pdss = Checkpoint::load(&ws.path("pdss.ckpt")).unwrap();
    assert_eq!(pdss.prompt.as_ref().unwrap().len, 80 - 8);
    ws.ok(&["eval", "--task", "pdss", "--ckpt", &ws.arg("pdss.ckpt"), "--data", &ws.arg("data.csv")]);

    ws.ok(&["adapt", "--task", "pss", "--data", &ws.arg("data.csv"), "--config", &ws.arg("tiny.json"), "--out", &ws.arg("pss.ckpt")]);
    let pss = Checkpoint::load(&ws.path("pss.ckpt")).unwrap();
    assert_eq!(pss.stage, Stage::Full);
    assert_eq!(pss.model.config.backbone.n_ctx, pss.prompt.as_ref().unwrap().len);
    ws.ok(&["predict", "--ckpt", &ws.arg("pss.ckpt"), "--data", &ws.arg("data.csv"), "--out", &ws.arg("pss.csv"), "--split", "test"]);

    for (flags, stage) in [
        (vec!["--window", "1"], Stage::Adapted),
        (vec!["--no-pretrain"], Stage::Full),
        (vec!["--peft-mode", "ln-only"], Stage::Adapted),
        (vec!["--skip-stage1"], Stage::Adapted),
    ] {
        ws.adapt("regress", "abl.ckpt", &flags);
        let ck = Checkpoint::load(&ws.path("abl.ckpt")).unwrap();
        assert_eq!(ck.stage, stage, "{flags:?}");
    }
    let ln = {
        ws.adapt("regress", "ln.ckpt", &["--peft-mode", "ln-only"]);
        Checkpoint::load(&ws.path("ln.ckpt")).unwrap()
    };
    assert!(!ln.model.params.names().any(|n| n.contains("adapter")));

    ws.ok(&[
        "pretrain", "--data", &ws.arg("data.csv"), "--config", &ws.arg("tiny.json"), "--out", &ws.arg("flat.ckpt"),
        "--encoder", "flat", "--window", "4",
    ]);
    let flat = Checkpoint::load(&ws.path("flat.ckpt")).unwrap();
    assert!(flat.model.params.contains("encoder.flat.w"));
    let too_long = ws.run(&[
        "pretrain", "--data", &ws.arg("data.csv"), "--config", &ws.arg("tiny.json"), "--out", &ws.arg("x.ckpt"), "--encoder", "flat",
        "--window", "20",
    ]);
    assert_eq!(too_long.status.code(), Some(1));
}
