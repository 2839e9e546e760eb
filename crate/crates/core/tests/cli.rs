use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn mvo(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvo"))
        .args(args)
        .arg("--output")
        .arg(out)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&mvo(&["run"], tmp.path())), 1);
    assert_eq!(code(&mvo(&["frobnicate"], tmp.path())), 1);
    let cfg = config("static.json");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&mvo(&["run", "--config", cfg, "--window", "100"], tmp.path())), 1);
    assert_eq!(code(&mvo(&["run", "--config", cfg, "--stride", "0"], tmp.path())), 1);

    let bad = tmp.path().join("bad.json");
    let mut value: serde_json::Value = serde_json::from_str(&fs::read_to_string(config("static.json")).unwrap()).unwrap();
    value["pipeline"]["energy"]["lambdaa"] = serde_json::json!(1.0);
    fs::write(&bad, value.to_string()).unwrap();
    let o = mvo(&["simulate", "--config", bad.to_str().unwrap()], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lambdaa"));
}

#[test]
fn runtime_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("static.json");
    let o = mvo(&["run", "--config", cfg.to_str().unwrap()], &tmp.path().join("empty"));
    assert_eq!(code(&o), 2);
    assert_eq!(code(&mvo(&["evaluate"], &tmp.path().join("empty"))), 2);
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&mvo(&["--help"], tmp.path())), 0);
}

#[test]
fn all_writes_outputs_and_evaluate_reproduces_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = config("static.json");
    let o = mvo(&["all", "--config", cfg.to_str().unwrap(), "--seed", "3"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    for f in ["tracklets.jsonl", "truth.json", "report.json", "run/window_0000.json", "baseline/window_0000.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(out.join("run/window_0000/camera.csv").is_file());
    assert!(out.join("errors/camera.csv").is_file());
    assert!(out.join("baseline/errors/camera.csv").is_file());

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for method in ["mvo", "baseline"] {
        let r = &report[method];
        assert_eq!(r["method"], method);
        assert_eq!(r["windows"], 1);
        assert!(r["model_count_fraction"].is_number());
        let motions = r["motions"].as_array().unwrap();
        assert_eq!(motions[0]["name"], "camera");
        for m in motions {
            assert!(m["coverage"].as_f64().unwrap() <= 1.0);
        }
    }

    let first = fs::read(out.join("report.json")).unwrap();
    fs::remove_file(out.join("report.json")).unwrap();
    let o = mvo(&["evaluate"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first, fs::read(out.join("report.json")).unwrap());
}
