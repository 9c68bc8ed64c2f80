use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cbmoco::geometry::ScanGeometry;
use cbmoco::harness::{files, ExperimentConfig, GridSpec};
use cbmoco::io::{read_json, write_json};
use cbmoco::optimizer::OptimConfig;

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.geometry = ScanGeometry {
        n_views: 24,
        detector_rows: 40,
        detector_cols: 32,
        pixel_spacing_mm: 8.0,
        ..ScanGeometry::desk()
    };
    let grid = GridSpec { dims: [16; 3], spacing_mm: 10.0 };
    c.phantom.grid = grid;
    c.estimation.grid = grid;
    c.reconstruction_grid = grid;
    c.motion.n_nodes = 4;
    c.estimation.n_nodes = 5;
    c.estimation.optim = OptimConfig { n_iters: 3, ..OptimConfig::default() };
    c
}

fn cbmoco(args: &[&str], extra: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbmoco")).args(args).args(extra).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn assert_close(a: &serde_json::Value, b: &serde_json::Value, rel: f64) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.len(), y.len());
            for (k, v) in x {
                assert_close(v, &y[k], rel);
            }
        }
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= rel * x.abs().max(y.abs()).max(1e-3), "{x} vs {y}");
        }
        _ => assert_eq!(a, b),
    }
}

#[test]
fn staged_commands_reproduce_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.json");
    write_json(&cfg_path, &tiny()).unwrap();
    let staged = dir.path().join("staged");
    let whole = dir.path().join("whole");

    let o = cbmoco(&["simulate", "--seed", "3", "--config"], &[&cfg_path, Path::new("--out"), &staged]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for stage in ["estimate", "reconstruct", "evaluate"] {
        let o = cbmoco(&[stage, "--out"], &[&staged]);
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = cbmoco(&["run", "--seed", "3", "--config"], &[&cfg_path, Path::new("--out"), &whole]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // The staged path reads float32 projections back from disk.
    let a: serde_json::Value = read_json(&staged.join(files::REPORT)).unwrap();
    let b: serde_json::Value = read_json(&whole.join(files::REPORT)).unwrap();
    assert_close(&a, &b, 1e-5);
    let stored: ExperimentConfig = read_json(&whole.join(files::CONFIG)).unwrap();
    assert_eq!(stored.motion.seed, 3);
    for f in [files::TRACE_CSV, files::CURVES_CSV, files::REPORT_CSV, files::TIMING, files::VOLUME_COMPENSATED] {
        assert!(whole.join(f).exists(), "{f}");
    }
    let curves = fs::read_to_string(whole.join(files::CURVES_CSV)).unwrap();
    assert_eq!(curves.lines().count(), 1 + 24);
    assert!(curves.starts_with("view,gt_t_x,"));
}

#[test]
fn config_problems_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cbmoco(&["run"], &[])), 2);
    assert_eq!(code(&cbmoco(&["run", "--threads", "0", "--out"], &[dir.path()])), 2);

    let bad = dir.path().join("bad.json");
    let mut v = serde_json::to_value(tiny()).unwrap();
    v["estimation"]["optim"]["learning_rate"] = 0.1.into();
    write_json(&bad, &v).unwrap();
    let o = cbmoco(&["simulate", "--config"], &[&bad, Path::new("--out"), dir.path()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));

    let mut c = tiny();
    c.estimation.n_nodes = 2;
    write_json(&bad, &c).unwrap();
    assert_eq!(code(&cbmoco(&["run", "--config"], &[&bad, Path::new("--out"), dir.path()])), 2);
}

#[test]
fn pipeline_errors_exit_with_3_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = cbmoco(&["estimate", "--out"], &[dir.path()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("estimate:"));

    let cfg_path = dir.path().join("tiny.json");
    write_json(&cfg_path, &tiny()).unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&cbmoco(&["simulate", "--config"], &[&cfg_path, Path::new("--out"), &out])), 0);
    let o = cbmoco(&["evaluate", "--out"], &[&out]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("evaluate:"));
    assert!(out.join(files::PROJECTIONS).exists());
}
