use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use cbmoco::backprojector::{backproject, backproject_geometry_vjp, GradientSampling};
use cbmoco::geometry::{build_circular_trajectory, ScanGeometry};
use cbmoco::harness::{ExperimentConfig, GridSpec};
use cbmoco::io::write_json;
use cbmoco::optimizer::OptimConfig;
use cbmoco::volume::{ProjectionStack, StackState, Volume, VolumeGrid};
use cbmoco_ffi::*;

fn last_error() -> String {
    let p = cbm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn flat_matrices(n_views: usize) -> (ScanGeometry, Vec<f64>) {
    let g = ScanGeometry {
        n_views,
        detector_rows: 24,
        detector_cols: 20,
        pixel_spacing_mm: 6.0,
        ..ScanGeometry::desk()
    };
    let m = build_circular_trajectory(&g).unwrap();
    (g, m.iter().flat_map(|p| p.to_row_major()).collect())
}

fn stack_data(n: usize) -> Vec<f64> {
    (0..n).map(|k| ((k as f64) * 0.37).sin() + 0.1 * (k % 7) as f64).collect()
}

#[test]
fn unknown_preset_is_a_config_error() {
    let name = CString::new("laptop").unwrap();
    let mut cfg = ptr::null_mut();
    let s = unsafe { cbm_config_from_preset(name.as_ptr(), &mut cfg) };
    assert_eq!(s, CbmStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("laptop"));
}

#[test]
fn null_arguments_are_reported() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { cbm_config_from_preset(ptr::null(), &mut cfg) }, CbmStatus::NullPointer);
    assert!(last_error().contains("name"));
    let mut out = 0.0;
    let (_, m) = flat_matrices(3);
    let s = unsafe { cbm_reprojection_error(m.as_ptr(), ptr::null(), 3, 6.0, &mut out) };
    assert_eq!(s, CbmStatus::NullPointer);
    unsafe { cbm_config_free(ptr::null_mut()) };
    unsafe { cbm_report_free(ptr::null_mut()) };
}

#[test]
fn success_clears_the_last_error() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { cbm_config_from_preset(ptr::null(), &mut cfg) }, CbmStatus::NullPointer);
    let name = CString::new("desk").unwrap();
    assert_eq!(unsafe { cbm_config_from_preset(name.as_ptr(), &mut cfg) }, CbmStatus::Ok);
    assert!(cbm_last_error_message().is_null());
    assert_eq!(unsafe { cbm_config_set_iterations(cfg, 0) }, CbmStatus::Config);
    assert_eq!(unsafe { cbm_config_set_iterations(cfg, 5) }, CbmStatus::Ok);
    unsafe { cbm_config_free(cfg) };
}

#[test]
fn array_entry_points_match_the_library() {
    let n_views = 5;
    let (g, m) = flat_matrices(n_views);
    let (rows, cols) = (g.detector_rows, g.detector_cols);
    let data = stack_data(n_views * rows * cols);
    let grid = VolumeGrid::centered([6, 7, 5], 8.0);
    let cgrid = CbmGrid { dims: grid.dims, spacing_mm: grid.spacing_mm, origin_mm: grid.origin_mm };

    let mut vol = vec![0.0; grid.len()];
    let s = unsafe { cbm_backproject(data.as_ptr(), n_views, rows, cols, m.as_ptr(), cgrid, vol.as_mut_ptr()) };
    assert_eq!(s, CbmStatus::Ok);
    let stack = ProjectionStack::from_data(n_views, rows, cols, 1.0, StackState::RampFiltered, data.clone()).unwrap();
    let mats = build_circular_trajectory(&g).unwrap();
    assert_eq!(vol, backproject(&stack, &mats, &grid).unwrap().data);

    let up: Vec<f64> = (0..grid.len()).map(|k| (k as f64 * 0.11).cos()).collect();
    let mut grad = vec![0.0; 12 * n_views];
    let s = unsafe {
        cbm_backproject_geometry_vjp(data.as_ptr(), n_views, rows, cols, m.as_ptr(), cgrid, up.as_ptr(), grad.as_mut_ptr())
    };
    assert_eq!(s, CbmStatus::Ok);
    let want = backproject_geometry_vjp(&stack, &mats, &grid, &Volume::from_data(grid, up).unwrap(), GradientSampling::Exact)
        .unwrap();
    for (j, w) in want.views().iter().enumerate() {
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(grad[12 * j + 4 * r + c], w[(r, c)]);
            }
        }
    }

    let mut rpe = f64::NAN;
    assert_eq!(unsafe { cbm_reprojection_error(m.as_ptr(), m.as_ptr(), n_views, 6.0, &mut rpe) }, CbmStatus::Ok);
    assert_eq!(rpe, 0.0);
}

#[test]
fn invalid_grid_is_rejected() {
    let (g, m) = flat_matrices(2);
    let data = stack_data(2 * g.detector_rows * g.detector_cols);
    let cgrid = CbmGrid { dims: [0, 4, 4], spacing_mm: [1.0; 3], origin_mm: [0.0; 3] };
    let mut vol = vec![0.0; 16];
    let s = unsafe { cbm_backproject(data.as_ptr(), 2, g.detector_rows, g.detector_cols, m.as_ptr(), cgrid, vol.as_mut_ptr()) };
    assert_ne!(s, CbmStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn experiment_roundtrip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::desk();
    c.geometry = ScanGeometry { n_views: 24, detector_rows: 40, detector_cols: 32, pixel_spacing_mm: 8.0, ..ScanGeometry::desk() };
    let grid = GridSpec { dims: [16; 3], spacing_mm: 10.0 };
    c.phantom.grid = grid;
    c.estimation.grid = grid;
    c.reconstruction_grid = grid;
    c.motion.n_nodes = 4;
    c.estimation.n_nodes = 5;
    c.estimation.optim = OptimConfig { n_iters: 2, ..OptimConfig::default() };
    let path = dir.path().join("c.json");
    write_json(&path, &c).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { cbm_config_from_json_file(cpath.as_ptr(), &mut cfg) }, CbmStatus::Ok);
    assert_eq!(unsafe { cbm_config_set_seed(cfg, 11) }, CbmStatus::Ok);
    let out = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { cbm_run_experiment(cfg, out.as_ptr(), &mut report) }, CbmStatus::Ok, "{}", last_error());

    let (mut a, mut b) = (0.0, 0.0);
    assert_eq!(unsafe { cbm_report_rpe(report, &mut a, &mut b) }, CbmStatus::Ok);
    assert!(a > 0.0 && b.is_finite());
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { cbm_report_to_json(report, &mut json) }, CbmStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    assert_eq!(v["rpe_initial_mm"].as_f64().unwrap(), a);
    assert_eq!(v["eval_count"], 3);
    unsafe {
        cbm_string_free(json);
        cbm_report_free(report);
        cbm_config_free(cfg);
    }
    assert!(dir.path().join("out").join("report.json").exists());
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(cbm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("cbmoco.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "CbmStatus",
        "CBM_STATUS_OK",
        "typedef struct CbmConfig CbmConfig",
        "cbm_last_error_message",
        "cbm_run_experiment",
        "cbm_backproject_geometry_vjp",
        "CbmGrid",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler found; skipping header syntax check");
        return;
    };
    assert!(status.success());
}
