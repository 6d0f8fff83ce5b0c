use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ctmc_move_ffi::*;

fn write_grid(dir: &Path, name: &str, nrows: usize, ncols: usize, value: impl Fn(usize, usize) -> f64) -> CString {
    let mut text = format!("ncols {ncols}\nnrows {nrows}\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n");
    for r in 0..nrows {
        let row: Vec<String> = (0..ncols).map(|c| value(r, c).to_string()).collect();
        text += &row.join(" ");
        text += "\n";
    }
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(cm_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn simulate_expand_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let grid_path = write_grid(dir.path(), "grid.asc", 8, 8, |_, _| 0.0);
    let cover_path = write_grid(dir.path(), "cover.asc", 8, 8, |r, c| ((r * 3 + c * 5) % 7) as f64 / 7.0);
    unsafe {
        let mut grid = ptr::null_mut();
        assert_eq!(cm_grid_read_ascii(grid_path.as_ptr(), &mut grid), CmStatus::Ok);
        let (mut nr, mut nc) = (0, 0);
        assert_eq!(cm_grid_shape(grid, &mut nr, &mut nc), CmStatus::Ok);
        assert_eq!((nr, nc), (8, 8));
        let mut cover = ptr::null_mut();
        assert_eq!(cm_grid_read_ascii(cover_path.as_ptr(), &mut cover), CmStatus::Ok);

        let model = CString::new(r#"{"motility": [{"layer": "cover", "label": "cover"}]}"#).unwrap();
        let name = CString::new("cover").unwrap();
        let names = [name.as_ptr()];
        let layers = [cover as *const CmGrid];
        let mut ctx = ptr::null_mut();
        assert_eq!(
            cm_context_new(model.as_ptr(), grid, names.as_ptr(), layers.as_ptr(), 1, &mut ctx),
            CmStatus::Ok
        );
        assert_eq!(cm_context_n_columns(ctx), 2);
        cm_grid_free(cover);

        let beta = [-0.3, 0.8];
        let mut path = ptr::null_mut();
        assert_eq!(
            cm_simulate(ctx, beta.as_ptr(), 2, 4, 4, 0.0, 500.0, 3, &mut path),
            CmStatus::Ok
        );
        assert!(cm_path_n_transitions(path) > 100);
        assert_eq!(cm_path_n_cells(path), cm_path_n_transitions(path) + 1);
        let mut ll = 0.0;
        assert_eq!(
            cm_path_log_likelihood(path, ctx, beta.as_ptr(), 2, true, &mut ll),
            CmStatus::Ok
        );
        assert!(ll.is_finite() && ll < 0.0);

        let mut data = ptr::null_mut();
        assert_eq!(cm_expand(path, ctx, true, &mut data), CmStatus::Ok);
        assert!(cm_expanded_n_rows(data) >= 2 * cm_path_n_transitions(path));

        let mut fit = ptr::null_mut();
        assert_eq!(cm_fit(data, 0.0, &mut fit), CmStatus::Ok);
        assert!(cm_fit_converged(fit));
        assert_eq!(cm_fit_n_coefficients(fit), 2);
        let mut est = [0.0; 2];
        let mut se = [0.0; 2];
        assert_eq!(cm_fit_coefficients(fit, est.as_mut_ptr(), 2), CmStatus::Ok);
        assert_eq!(cm_fit_standard_errors(fit, se.as_mut_ptr(), 2), CmStatus::Ok);
        for j in 0..2 {
            assert!((est[j] - beta[j]).abs() < 4.0 * se[j], "{est:?} {se:?}");
        }
        let mut json = ptr::null_mut();
        assert_eq!(cm_fit_to_json(fit, &mut json), CmStatus::Ok);
        assert!(CStr::from_ptr(json).to_str().unwrap().contains("\"cover\""));
        cm_string_free(json);

        let mut lasso = ptr::null_mut();
        assert_eq!(cm_fit(data, 1e6, &mut lasso), CmStatus::Ok);
        let mut zeroed = [1.0; 2];
        assert_eq!(cm_fit_coefficients(lasso, zeroed.as_mut_ptr(), 2), CmStatus::Ok);
        assert_eq!(zeroed[1], 0.0);

        cm_fit_free(lasso);
        cm_fit_free(fit);
        cm_expanded_free(data);
        cm_path_free(path);
        cm_context_free(ctx);
        cm_grid_free(grid);
    }
}

#[test]
fn errors_are_reported_through_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut grid = ptr::null_mut();
        let missing = CString::new(dir.path().join("nope.asc").to_str().unwrap()).unwrap();
        assert_eq!(cm_grid_read_ascii(missing.as_ptr(), &mut grid), CmStatus::Io);
        assert!(last_error().contains("nope.asc"));
        assert!(grid.is_null());

        assert_eq!(cm_grid_read_ascii(ptr::null(), &mut grid), CmStatus::NullPointer);
        assert_eq!(
            cm_grid_read_ascii(missing.as_ptr(), ptr::null_mut()),
            CmStatus::NullPointer
        );

        let bad = write_grid(dir.path(), "bad.asc", 2, 2, |_, _| 0.0);
        std::fs::write(
            bad.to_str().unwrap(),
            "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\n0 0\n0\n",
        )
        .unwrap();
        assert_eq!(cm_grid_read_ascii(bad.as_ptr(), &mut grid), CmStatus::Parse);

        let ok = write_grid(dir.path(), "ok.asc", 3, 3, |_, _| 0.0);
        assert_eq!(cm_grid_read_ascii(ok.as_ptr(), &mut grid), CmStatus::Ok);
        assert_eq!(last_error(), "");
        let mut ctx = ptr::null_mut();
        let unknown = CString::new(r#"{"motility": [{"layer": "missing", "label": "m"}]}"#).unwrap();
        assert_eq!(
            cm_context_new(unknown.as_ptr(), grid, ptr::null(), ptr::null(), 0, &mut ctx),
            CmStatus::InvalidArgument
        );
        assert!(last_error().contains("missing"));
        let malformed = CString::new("{not json").unwrap();
        assert_eq!(
            cm_context_new(malformed.as_ptr(), grid, ptr::null(), ptr::null(), 0, &mut ctx),
            CmStatus::Parse
        );

        let empty = CString::new("{}").unwrap();
        assert_eq!(
            cm_context_new(empty.as_ptr(), grid, ptr::null(), ptr::null(), 0, &mut ctx),
            CmStatus::Ok
        );
        let mut path = ptr::null_mut();
        let beta = [0.0];
        assert_eq!(
            cm_simulate(ctx, beta.as_ptr(), 1, 9, 9, 0.0, 1.0, 1, &mut path),
            CmStatus::InvalidArgument
        );
        assert_eq!(
            cm_simulate(ctx, beta.as_ptr(), 3, 1, 1, 0.0, 1.0, 1, &mut path),
            CmStatus::InvalidArgument
        );

        assert_eq!(cm_context_n_columns(ptr::null()), 0);
        cm_context_free(ptr::null_mut());
        cm_string_free(ptr::null_mut());
        cm_context_free(ctx);
        cm_grid_free(grid);
    }
    assert!(!unsafe { CStr::from_ptr(cm_version()) }.to_str().unwrap().is_empty());
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libctmc_move_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let grid = write_grid(dir.path(), "grid.asc", 5, 5, |_, _| 0.0);
    let out = Command::new(&exe).arg(grid.to_str().unwrap()).output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert!(fields[0].parse::<usize>().unwrap() > 100);
    assert!(fields[1].parse::<f64>().unwrap().abs() < 0.5);
}
