//! End-to-end checks of the command-line interface: exit codes, file
//! outputs, determinism, and agreement with the library path.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relaxconv"))
}

fn tiny_config(dir: &Path, family: &str, delta: f64) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        format!(
            r#"{{
  "seed": 11,
  "dtype": "f64",
  "data": {{ "grid": 8, "dt": 0.25, "steps": 14, "kind": "rotsmoke", "delta": {delta}, "seed": 5 }},
  "model": {{ "family": "{family}", "group": 4, "depth": 2, "hidden": 1, "k": 1 }},
  "train": {{ "lr": 0.005, "batch": 4, "epochs": 2, "unroll": 2, "input_len": 3, "patience": 0 }},
  "eval": {{ "probes": 8, "rollout_steps": 5 }}
}}"#
        ),
    )
    .unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to spawn relaxconv")
}

fn assert_status(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn gen_data_is_deterministic_and_reports_ee() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "steer", 0.1);
    let out1 = tmp.path().join("d1");
    let out2 = tmp.path().join("d2");
    let r1 = run(bin().args(["gen-data"])
        .arg("--config").arg(&cfg)
        .arg("--out").arg(&out1));
    assert_status(&r1, 0);
    assert!(String::from_utf8_lossy(&r1.stdout).contains("data EE"));
    let r2 = run(bin().args(["gen-data"])
        .arg("--config").arg(&cfg)
        .arg("--out").arg(&out2));
    assert_status(&r2, 0);
    assert_eq!(dir_bytes(&out1), dir_bytes(&out2), "byte-identical reruns");
}

#[test]
fn gen_data_delta_override_changes_recorded_ee() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "steer", 0.0);
    let mut ees = Vec::new();
    for (i, delta) in ["0.0", "0.2", "0.4"].iter().enumerate() {
        let out = tmp.path().join(format!("d{i}"));
        let r = run(bin().args(["gen-data"])
            .arg("--config").arg(&cfg)
            .arg("--delta").arg(delta)
            .arg("--out").arg(&out));
        assert_status(&r, 0);
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
        ees.push(meta["declared_data_ee"].as_f64().unwrap());
    }
    assert!(ees[0] < 1e-12);
    assert!(ees[0] < ees[1] && ees[1] < ees[2], "EE not increasing: {ees:?}");
}

#[test]
fn invalid_config_exits_2_and_bad_output_path_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{ "seed": 1, "unknown_key": true }"#).unwrap();
    let r = run(bin().args(["gen-data"])
        .arg("--config").arg(&bad)
        .arg("--out").arg(tmp.path().join("x")));
    assert_status(&r, 2);

    // output path nested under a regular file cannot be created
    let cfg = tiny_config(tmp.path(), "steer", 0.1);
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, "file").unwrap();
    let r = run(bin().args(["gen-data"])
        .arg("--config").arg(&cfg)
        .arg("--out").arg(blocker.join("sub")));
    assert_status(&r, 3);
}

#[test]
fn train_writes_checkpoint_and_deterministic_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "rsteer", 0.2);
    let out1 = tmp.path().join("run1");
    let out2 = tmp.path().join("run2");
    for out in [&out1, &out2] {
        let r = run(bin().args(["train"])
            .arg("--config").arg(&cfg)
            .arg("--out").arg(out));
        assert_status(&r, 0);
        assert!(String::from_utf8_lossy(&r.stdout).contains("final val RMSE"));
    }
    let m1 = fs::read_to_string(out1.join("metrics.csv")).unwrap();
    let m2 = fs::read_to_string(out2.join("metrics.csv")).unwrap();
    assert_eq!(m1, m2, "seed determinism of the metrics log");
    assert!(m1.starts_with("epoch,train_loss,val_loss,reg_value,model_ee"));
    assert!(out1.join("checkpoint/manifest.json").exists());

    // alpha override is reflected in the run banner
    let r = run(bin().args(["train"])
        .arg("--config").arg(&cfg)
        .arg("--alpha").arg("0.01")
        .arg("--out").arg(tmp.path().join("run3")));
    assert_status(&r, 0);
    assert!(String::from_utf8_lossy(&r.stdout).contains("alpha=0.01"));
}

#[test]
fn ee_report_matches_library_bit_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "steer", 0.1);
    let train_out = tmp.path().join("run");
    assert_status(
        &run(bin().args(["train"]).arg("--config").arg(&cfg).arg("--out").arg(&train_out)),
        0,
    );
    let data_out = tmp.path().join("data");
    assert_status(
        &run(bin().args(["gen-data"]).arg("--config").arg(&cfg).arg("--out").arg(&data_out)),
        0,
    );
    let report_path = tmp.path().join("ee.json");
    let r = run(bin().args(["ee"])
        .arg("--checkpoint").arg(train_out.join("checkpoint"))
        .arg("--dataset").arg(&data_out)
        .arg("--out").arg(&report_path));
    assert_status(&r, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    // strict steerable model: tiny equivariance error
    assert!(report["model_ee"].as_f64().unwrap() <= 1e-5);
    assert_eq!(report["model_kind"], "steer");
    assert_eq!(report["norm"], "l1");

    // library path computes the identical number
    let model: relaxconv::Model64 =
        relaxconv::train::load_checkpoint(&train_out.join("checkpoint")).unwrap();
    let ds = relaxconv::datagen::load_dataset(&data_out).unwrap();
    let windows = relaxconv::datagen::sliding_windows(&ds, model.input_len, 1).unwrap();
    let probes =
        relaxconv::eval::probes_from_windows::<f64>(&ds, &windows, model.input_len, 100).unwrap();
    let lib_report =
        relaxconv::eval::model_ee(&model, &probes, relaxconv::eval::NormKind::L1).unwrap();
    assert_eq!(report["model_ee"].as_f64().unwrap(), lib_report.overall);

    // a dataset with a different channel action does not match the
    // checkpoint and exits 5
    let heat_cfg = tmp.path().join("heat.json");
    fs::write(
        &heat_cfg,
        r#"{
  "seed": 11, "dtype": "f64",
  "data": { "grid": 8, "dt": 0.4, "steps": 14, "kind": "heat", "delta": 0.1, "seed": 5 },
  "model": { "family": "steer", "group": 4, "depth": 2, "hidden": 1, "k": 1 },
  "train": { "lr": 0.005, "batch": 4, "epochs": 1, "unroll": 2, "input_len": 3, "patience": 0 }
}"#,
    )
    .unwrap();
    let heat_data = tmp.path().join("heat_data");
    assert_status(
        &run(bin().args(["gen-data"]).arg("--config").arg(&heat_cfg).arg("--out").arg(&heat_data)),
        0,
    );
    let r = run(bin().args(["ee"])
        .arg("--checkpoint").arg(train_out.join("checkpoint"))
        .arg("--dataset").arg(&heat_data));
    assert_status(&r, 5);
}

#[test]
fn sweep_writes_sorted_rows_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path(), "rsteer", 0.1);
    let out = tmp.path().join("sweep_alpha");
    let r = run(bin().args(["sweep"])
        .arg("--config").arg(&cfg)
        .arg("--axis").arg("alpha")
        .arg("--out").arg(&out)
        .env("RELAXCONV_THREADS", "2"));
    assert_status(&r, 0);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(lines[0], "axis,value,data_ee,model_ee,rollout_rmse,reg_raw,model_kind,status");
    assert_eq!(lines.len(), 5, "{csv}");
    let values: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values, vec![0.0, 1e-6, 1e-4, 1e-2]);
    for l in &lines[1..] {
        assert!(l.ends_with(",ok"), "{l}");
    }
}

#[test]
fn verify_suites_run_from_the_cli() {
    for suite in ["basis", "reductions"] {
        let r = run(bin().args(["verify", "--suite", suite, "--seed", "3"]));
        assert_status(&r, 0);
        let stdout = String::from_utf8_lossy(&r.stdout);
        assert!(stdout.contains(&format!("suite {suite}: PASS")), "{stdout}");
    }
    let r = run(bin().args(["verify", "--suite", "bogus"]));
    assert_status(&r, 2);
}
