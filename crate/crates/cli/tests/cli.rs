use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_bsc");

fn smoke_config() -> PathBuf {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.json")).to_path_buf()
}

fn bsc(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BSC_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_json(dir: &Path, name: &str, value: serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, value.to_string()).unwrap();
    path
}

fn run_smoke(out: &Path) {
    let res = bsc(&[
        "run",
        "--config",
        smoke_config().to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
}

#[test]
fn missing_config_is_a_usage_error() {
    let res = bsc(&["run", "--config", "/nonexistent/run.json"]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("/nonexistent/run.json"));
}

#[test]
fn unknown_key_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "bad.json", serde_json::json!({"pretrain": {"epochz": 3}}));
    let res = bsc(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&res), 2);
    assert!(stderr(&res).contains("pretrain"), "{}", stderr(&res));
}

#[test]
fn runtime_failure_exits_one_with_the_phase() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(smoke_config()).unwrap()).unwrap();
    cfg["pretrain"]["optimizer"] =
        serde_json::json!({"lr": 1e200, "momentum": 0.9, "weight_decay": 0.0, "schedule": {"kind": "cosine"}});
    let path = write_json(dir.path(), "diverge.json", cfg);
    let out = dir.path().join("out");
    let res = bsc(&[
        "run",
        "--config",
        path.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("pretrain"), "{}", stderr(&res));
}

#[test]
fn run_writes_every_output_with_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_smoke(&out);
    for name in ["run_record.json", "metrics.csv", "timings.json", "angles.json"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        assert!(
            text.contains("\"samples_per_class\":30") || text.contains("\"samples_per_class\": 30"),
            "{name}"
        );
    }
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_record.json")).unwrap()).unwrap();
    assert_eq!(record["sessions"].as_array().unwrap().len(), 3);
    for c in record["checkpoints"].as_array().unwrap() {
        assert!(out.join(c["path"].as_str().unwrap()).is_file());
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# config: "));
    let res = bsc(&["metrics", out.join("metrics.csv").to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
}

#[test]
fn output_dir_flag_beats_environment_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("from-env");
    let flag_dir = dir.path().join("from-flag");
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(smoke_config()).unwrap()).unwrap();
    cfg["output_dir"] = dir.path().join("from-file").to_str().unwrap().into();
    let path = write_json(dir.path(), "run.json", cfg);
    let run = |extra: &[&str]| {
        let mut cmd = Command::new(BIN);
        cmd.args(["run", "--config", path.to_str().unwrap()])
            .args(extra)
            .env("BSC_OUTPUT_DIR", &env_dir);
        assert!(cmd.output().unwrap().status.success());
    };
    run(&[]);
    assert!(env_dir.join("metrics.csv").is_file());
    assert!(!dir.path().join("from-file").exists());
    run(&["--output-dir", flag_dir.to_str().unwrap()]);
    assert!(flag_dir.join("metrics.csv").is_file());

    let plain = bsc(&["run", "--config", path.to_str().unwrap()]);
    assert!(plain.status.success());
    assert!(dir.path().join("from-file").join("metrics.csv").is_file());
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_smoke(&a);
    let cfg = smoke_config();
    let res = bsc(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output-dir",
        b.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert_eq!(code(&res), 0);
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(b.join("run_record.json")).unwrap()).unwrap();
    assert_eq!(
        record["config"]["seeds"],
        serde_json::json!({"data": 7, "plan": 7, "run": 7})
    );
    assert_ne!(
        std::fs::read(a.join("run_record.json")).unwrap(),
        std::fs::read(b.join("run_record.json")).unwrap()
    );
}

#[test]
fn metrics_reproduces_a_published_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("row.csv");
    let row = [75.88, 70.29, 67.93, 64.5, 61.55, 59.98, 58.28, 56.38, 55.51];
    let mut text = String::from("t,acc_all,acc_base,acc_new,active_classes\n");
    for (i, v) in row.iter().enumerate() {
        text += &format!("{},{v},,,{}\n", i + 1, 60 + 5 * i);
    }
    std::fs::write(&csv, text).unwrap();
    let res = bsc(&["metrics", csv.to_str().unwrap(), "--percent"]);
    assert_eq!(code(&res), 0);
    assert!(String::from_utf8_lossy(&res.stdout).contains("20.37"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("row.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rendered"]["pd"], "20.37");
}

#[test]
fn constant_accuracy_has_no_drop() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flat.csv");
    std::fs::write(
        &csv,
        "t,acc_all,acc_base,acc_new,active_classes\n1,0.5,0.5,,4\n2,0.5,0.5,0.5,6\n3,0.5,0.5,0.5,8\n",
    )
    .unwrap();
    let out = dir.path().join("flat.json");
    assert_eq!(
        code(&bsc(&[
            "metrics",
            csv.to_str().unwrap(),
            "--output",
            out.to_str().unwrap()
        ])),
        0
    );
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(s["pd"], 0.0);
    assert_eq!(s["nla"], 0.5);
    assert_eq!(s["bma"], 0.5);
}

#[test]
fn malformed_metrics_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "session,accuracy\n1,0.5\n").unwrap();
    assert_eq!(code(&bsc(&["metrics", csv.to_str().unwrap()])), 2);
}

#[test]
fn gradcheck_exit_codes() {
    let ok = bsc(&["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    for loss in ["bsc", "supcon", "simclr", "ce", "cskd", "finetune"] {
        assert!(String::from_utf8_lossy(&ok.stdout).contains(loss));
    }

    let corrupt = bsc(&["gradcheck", "--corrupt-scale", "2"]);
    assert_eq!(code(&corrupt), 1);
    assert!(stderr(&corrupt).contains("bsc at "), "{}", stderr(&corrupt));

    let dir = tempfile::tempdir().unwrap();
    let empty = write_json(
        dir.path(),
        "empty.json",
        serde_json::json!({"gradcheck": {"labels": []}}),
    );
    assert_eq!(code(&bsc(&["gradcheck", "--config", empty.to_str().unwrap()])), 2);
}

#[test]
fn minangle_is_reproducible() {
    let a = bsc(&["angles", "minangle", "--n", "100", "--d", "8", "--seed", "1"]);
    let b = bsc(&["angles", "minangle", "--n", "100", "--d", "8", "--seed", "1"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let seq = bsc(&[
        "angles",
        "minangle",
        "--n",
        "100",
        "--d",
        "8",
        "--seed",
        "1",
        "--sequential",
    ]);
    assert_eq!(a.stdout, seq.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["phi_degrees"].as_f64().unwrap() > 0.0);
}

#[test]
fn angle_commands_on_saved_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_smoke(&out);
    let cfg = smoke_config();
    let ckpt = out.join("checkpoints").join("finetune_00002.json");
    assert!(ckpt.is_file());

    let one = bsc(&[
        "angles",
        "psi",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--classes",
        "3",
    ]);
    assert_eq!(code(&one), 2, "{}", stderr(&one));

    let psi_out = dir.path().join("psi.json");
    let psi = bsc(&[
        "angles",
        "psi",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        psi_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&psi), 0, "{}", stderr(&psi));
    assert!(psi_out.is_file());

    let trace_out = dir.path().join("trace.json");
    let trace = bsc(&[
        "angles",
        "trace",
        "--record",
        out.join("run_record.json").to_str().unwrap(),
        "--output",
        trace_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&trace), 0, "{}", stderr(&trace));
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&trace_out).unwrap()).unwrap();
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_record.json")).unwrap()).unwrap();
    let rows = rows.as_array().or_else(|| rows["rows"].as_array()).expect("trace rows");
    assert_eq!(rows.len(), record["checkpoints"].as_array().unwrap().len());

    let emb = dir.path().join("emb.csv");
    let export = bsc(&[
        "angles",
        "export",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        emb.to_str().unwrap(),
    ]);
    assert_eq!(code(&export), 0, "{}", stderr(&export));
    let from_embeddings = bsc(&["angles", "psi", "--embeddings", emb.to_str().unwrap()]);
    assert_eq!(code(&from_embeddings), 0, "{}", stderr(&from_embeddings));
}
