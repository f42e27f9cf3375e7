//! End-to-end checks of the `cmsc` binary: output files, exit codes, and
//! the machine-readable error contract.

use std::process::{Command, Output};

fn cmsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmsc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn masks_prints_the_equivalent_rate() {
    let out = cmsc(&["masks", "--sizes", "1,3,5,7"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("112/196"), "{text}");
    assert!(text.contains("0.5714"), "{text}");
    assert!(text.contains("24 border weights dropped"), "{text}");
}

#[test]
fn count_params_reports_totals_and_ratio() {
    let out = cmsc(&[
        "count-params",
        "--preset",
        "competitive-singlescale",
        "--width-profile",
        "desk",
        "--json",
    ]);
    assert!(out.status.success());
    let body: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(body["total_params"].as_u64().unwrap() > 0);
    assert_eq!(
        body["multiscale_vs_singlescale"]["ratio"].as_str().unwrap(),
        "3/7" // 84/196 reduced
    );
}

#[test]
fn grad_check_passes_and_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("gc");
    let out = cmsc(&["grad-check", "--out-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS"));
    assert!(out_dir.join("gradcheck.csv").exists());
    assert!(out_dir.join("config_echo.json").exists());
}

#[test]
fn unknown_preset_is_a_config_error() {
    let out = cmsc(&[
        "train",
        "--preset",
        "no-such-net",
        "--out-dir",
        "/tmp/unused-cmsc-test",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stderr)).unwrap();
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn missing_data_path_is_a_data_error_naming_the_path() {
    let out = cmsc(&[
        "train",
        "--preset",
        "competitive-multiscale",
        "--dataset",
        "mnist",
        "--data-dir",
        "/definitely/not/here",
        "--out-dir",
        "/tmp/unused-cmsc-test2",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stderr)).unwrap();
    assert_eq!(err["error"]["kind"], "data");
    assert!(
        err["error"]["message"]
            .as_str()
            .unwrap()
            .contains("/definitely/not/here"),
        "{err}"
    );
}

#[test]
fn train_eval_analyze_round_trip_on_synth() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = cmsc(&[
        "train",
        "--preset",
        "competitive-multiscale",
        "--dataset",
        "synth",
        "--synth-train",
        "300",
        "--synth-test",
        "100",
        "--epochs",
        "2",
        "--seeds",
        "1",
        "--width-profile",
        "6",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let seed_dir = out_dir.join("seed_1");
    for file in ["results.csv", "timing.csv", "summary.json", "best.ckpt"] {
        assert!(seed_dir.join(file).exists(), "missing {file}");
    }
    for file in ["config_echo.json", "aggregate.json", "metadata.json"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    let results = std::fs::read_to_string(seed_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3, "header + 2 epoch rows");
    assert!(results.starts_with("epoch,lr,train_loss,train_err,val_err,test_err\n"));

    // Evaluate the checkpoint on the same test split.
    let ckpt = seed_dir.join("best.ckpt");
    let out = cmsc(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        "synth",
        "--synth-test",
        "100",
    ]);
    assert!(out.status.success());
    let body: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rate = body["error_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));

    // Analysis artifacts from the checkpoint.
    let an_dir = dir.path().join("analysis");
    let out = cmsc(&[
        "analyze",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out-dir",
        an_dir.to_str().unwrap(),
        "--dataset",
        "synth",
        "--probe-samples",
        "50",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "gamma.csv",
        "coadapt_cosine.csv",
        "winners.csv",
        "entropy.csv",
        "params.csv",
        "config_echo.json",
    ] {
        assert!(an_dir.join(file).exists(), "missing {file}");
    }
    let gamma = std::fs::read_to_string(an_dir.join("gamma.csv")).unwrap();
    assert!(gamma.starts_with("block,module,branch,filter_size,mean,std\n"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| -> (Vec<u8>, String) {
        let out_dir = dir.path().join(tag);
        let out = cmsc(&[
            "train",
            "--preset",
            "competitive-multiscale",
            "--dataset",
            "synth",
            "--synth-train",
            "200",
            "--synth-test",
            "50",
            "--epochs",
            "1",
            "--seeds",
            "9",
            "--width-profile",
            "6",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        (
            std::fs::read(out_dir.join("seed_9").join("best.ckpt")).unwrap(),
            std::fs::read_to_string(out_dir.join("seed_9").join("results.csv")).unwrap(),
        )
    };
    let (ckpt_a, csv_a) = run("a");
    let (ckpt_b, csv_b) = run("b");
    assert_eq!(ckpt_a, ckpt_b);
    assert_eq!(csv_a, csv_b);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, tag: &str| -> Vec<u8> {
        let out_dir = dir.path().join(tag);
        let out = Command::new(env!("CARGO_BIN_EXE_cmsc"))
            .env("CMSC_THREADS", threads)
            .args([
                "train",
                "--preset",
                "competitive-multiscale",
                "--dataset",
                "synth",
                "--synth-train",
                "200",
                "--synth-test",
                "50",
                "--epochs",
                "1",
                "--seeds",
                "3",
                "--width-profile",
                "6",
                "--out-dir",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .expect("binary runs");
        assert!(out.status.success());
        std::fs::read(out_dir.join("seed_3").join("best.ckpt")).unwrap()
    };
    // Reductions run in a fixed order regardless of thread count, so the
    // trained parameters must be bitwise identical.
    assert_eq!(run("1", "t1"), run("2", "t2"));
}

#[test]
fn spec_file_round_trip() {
    // A spec exported by the library loads back through --spec-file.
    let dir = tempfile::tempdir().unwrap();
    let spec = cmsc::net::preset(
        cmsc::net::PresetName::CompetitiveMultiscale,
        &cmsc::net::WidthProfile::uniform(6, 9),
        (1, 28, 28),
        10,
    )
    .unwrap();
    let path = dir.path().join("net.json");
    std::fs::write(&path, spec.to_json()).unwrap();
    let out = cmsc(&[
        "count-params",
        "--spec-file",
        path.to_str().unwrap(),
        "--input-shape",
        "1,28,28",
        "--json",
    ]);
    assert!(out.status.success());
    let body: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(body["total_params"].as_u64().unwrap() > 0);
}
