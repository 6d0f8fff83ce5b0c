use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctmc_move::cli::{load_expanded, ExpandManifest, SimulateManifest, EXPANDED_FILE, EXPAND_MANIFEST};
use ctmc_move::ctmc::read_path_csv;
use ctmc_move::inference::{CvResult, FitResult};
use ctmc_move::pipeline::ContinuousPath;
use ctmc_move::raster::{read_ascii_grid, write_ascii_grid, GridGeometry, RasterGrid};
use serde_json::json;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_ctmc-move");

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(model: serde_json::Value, extra: serde_json::Value) -> Workspace {
        let dir = tempfile::tempdir().unwrap();
        let g = GridGeometry::new(10, 10, 0.0, 0.0, 1.0).unwrap();
        write_ascii_grid(&RasterGrid::filled(g, 0.0).unwrap(), dir.path().join("grid.asc")).unwrap();
        let cover = RasterGrid::from_fn(g, |x, y| Some((x * 0.7).sin() + (y * 0.4).cos())).unwrap();
        write_ascii_grid(&cover, dir.path().join("cover.asc")).unwrap();
        fs::write(
            dir.path().join("telemetry.csv"),
            "x,y,t\n1.5,1.5,0\n4.2,2.5,3\n6.5,6.1,7\n3.3,8.5,12\n8.5,8.5,16\n",
        )
        .unwrap();
        let mut config = json!({
            "telemetry": "telemetry.csv",
            "grid": "grid.asc",
            "layers": {"cover": "cover.asc"},
            "model": model,
            "imputations": 3,
            "seed": 11
        });
        for (k, v) in extra.as_object().unwrap() {
            config[k] = v.clone();
        }
        fs::write(
            dir.path().join("run.json"),
            serde_json::to_string_pretty(&config).unwrap(),
        )
        .unwrap();
        Workspace { dir }
    }

    fn basic() -> Workspace {
        Workspace::new(json!({"motility": [{"layer": "cover", "label": "cover"}]}), json!({}))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        Command::new(BIN)
            .arg("--config")
            .arg(self.path("run.json"))
            .arg("--out")
            .arg(self.path(out))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, out: &str, args: &[&str]) {
        let o = self.run(out, args);
        assert!(
            o.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_config_gives_byte_identical_outputs() {
    let ws = Workspace::basic();
    for out in ["a", "b"] {
        ws.ok(out, &["expand", "--impute"]);
        ws.ok(out, &["fit"]);
        ws.ok(out, &["simulate"]);
    }
    let (a, b) = (files_under(&ws.path("a")), files_under(&ws.path("b")));
    assert_eq!(a, b);
    assert!(a.len() > 5);
    for f in &a {
        assert_eq!(
            fs::read(ws.path("a").join(f)).unwrap(),
            fs::read(ws.path("b").join(f)).unwrap(),
            "{f:?}"
        );
    }
}

#[test]
fn seed_flag_changes_imputations() {
    let ws = Workspace::basic();
    ws.ok("a", &["impute"]);
    ws.ok("b", &["--seed", "12", "impute"]);
    let a = fs::read(ws.path("a/imputed/path_0000.csv")).unwrap();
    let b = fs::read(ws.path("b/imputed/path_0000.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn missing_telemetry_column_exits_with_input_error() {
    let ws = Workspace::basic();
    fs::write(ws.path("telemetry.csv"), "x,t\n1,0\n2,1\n").unwrap();
    let o = ws.run("out", &["impute"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&o.stderr);
    assert!(
        msg.contains("`y`") || msg.contains("\"y\"") || msg.contains(" y"),
        "{msg}"
    );
}

#[test]
fn unknown_config_key_and_missing_config_are_input_errors() {
    let ws = Workspace::new(json!({}), json!({"imputation": 3}));
    assert_eq!(ws.run("out", &["impute"]).status.code(), Some(2));
    let o = Command::new(BIN).arg("impute").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_sigma_single_imputation_is_linear_interpolation() {
    let ws = Workspace::new(json!({}), json!({"imputations": 1, "sigma": 0.0, "time_step": 0.25}));
    ws.ok("out", &["impute"]);
    let path = ContinuousPath::read_csv(ws.path("out/imputed/path_0000.csv")).unwrap();
    let fixes = [
        (1.5, 1.5, 0.0),
        (4.2, 2.5, 3.0),
        (6.5, 6.1, 7.0),
        (3.3, 8.5, 12.0),
        (8.5, 8.5, 16.0),
    ];
    for s in path.samples() {
        let k = fixes.windows(2).position(|w| s.t >= w[0].2 && s.t <= w[1].2).unwrap();
        let (a, b) = (fixes[k], fixes[k + 1]);
        let u = (s.t - a.2) / (b.2 - a.2);
        assert!((s.x - (a.0 + u * (b.0 - a.0))).abs() < 1e-12);
        assert!((s.y - (a.1 + u * (b.1 - a.1))).abs() < 1e-12);
    }
    for f in fixes {
        assert!(path.samples().iter().any(|s| s.t == f.2 && s.x == f.0 && s.y == f.1));
    }
}

#[test]
fn two_identical_imputations_double_rows_with_half_weights() {
    let one = Workspace::new(json!({}), json!({"imputations": 1, "sigma": 0.0}));
    let two = Workspace::new(json!({}), json!({"imputations": 2, "sigma": 0.0}));
    one.ok("out", &["expand", "--impute"]);
    two.ok("out", &["expand", "--impute"]);
    let d1 = load_expanded(&one.path("out")).unwrap();
    let d2 = load_expanded(&two.path("out")).unwrap();
    assert_eq!(d2.n_rows(), 2 * d1.n_rows());
    assert!(d1.weight().iter().all(|&w| w == 1.0));
    assert!(d2.weight().iter().all(|&w| w == 0.5));
    let m: ExpandManifest = read_json(&two.path("out").join(EXPAND_MANIFEST));
    assert_eq!(m.rows_per_path, vec![d1.n_rows(); 2]);
}

#[test]
fn expanded_rows_match_discretized_neighbor_counts() {
    let ws = Workspace::basic();
    ws.ok("out", &["impute"]);
    ws.ok("out", &["discretize"]);
    ws.ok("out", &["expand"]);
    let grid = read_ascii_grid(ws.path("grid.asc")).unwrap();
    let g = *grid.geometry();
    let mut expected = 0;
    let mut transitions = 0;
    let mut dir: Vec<_> = fs::read_dir(ws.path("out/discretized"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    dir.sort();
    for p in dir {
        let path = read_path_csv(fs::File::open(p).unwrap(), &g).unwrap();
        let cells = path.cells();
        let degree = |c| grid.neighbors(c).unwrap().len();
        expected += cells[..cells.len() - 1].iter().map(|&c| degree(c)).sum::<usize>();
        if path
            .final_residence()
            .is_some_and(|r| r >= ctmc_move::pipeline::MIN_SOJOURN)
        {
            expected += degree(*cells.last().unwrap());
        }
        transitions += path.n_transitions();
    }
    let data = load_expanded(&ws.path("out")).unwrap();
    assert_eq!(data.n_rows(), expected);
    assert_eq!(data.n_transitions(), transitions);
    let weighted: f64 = data.z().iter().zip(data.weight()).map(|(z, w)| z * w).sum();
    assert!((weighted - transitions as f64 / 3.0).abs() < 1e-9);
}

#[test]
fn intercept_only_fit_matches_closed_form() {
    let ws = Workspace::new(json!({}), json!({}));
    ws.ok("out", &["expand", "--impute"]);
    ws.ok("out", &["fit"]);
    let data = load_expanded(&ws.path("out")).unwrap();
    let events: f64 = data.z().iter().zip(data.weight()).map(|(z, w)| z * w).sum();
    let exposure: f64 = data
        .log_offset()
        .iter()
        .zip(data.weight())
        .map(|(o, w)| o.exp() * w)
        .sum();
    let fit = FitResult::read_json(ws.path("out/fit.json")).unwrap();
    assert_eq!(fit.labels, vec!["intercept"]);
    assert!((fit.coefficients[0] - (events / exposure).ln()).abs() < 1e-8);
    let first = fs::read(ws.path("out/fit.json")).unwrap();
    ws.ok("out", &["fit"]);
    assert_eq!(first, fs::read(ws.path("out/fit.json")).unwrap());
}

#[test]
fn single_lambda_cv_returns_it_and_fit_uses_it() {
    let ws = Workspace::new(
        json!({"motility": [{"layer": "cover", "label": "cover"}]}),
        json!({"imputations": 2, "penalty": {"kind": "l1", "lambdas": [0.5], "folds": 2}}),
    );
    ws.ok("out", &["expand", "--impute"]);
    ws.ok("out", &["cv"]);
    let cv: CvResult = read_json(&ws.path("out/cv.json"));
    assert_eq!(cv.lambdas, vec![0.5]);
    assert_eq!(cv.best_lambda, 0.5);
    ws.ok("out", &["fit"]);
    let fit = FitResult::read_json(ws.path("out/fit.json")).unwrap();
    assert_eq!(fit.lambda, Some(0.5));
}

#[test]
fn tampered_expanded_file_is_refused() {
    let ws = Workspace::basic();
    ws.ok("out", &["expand", "--impute"]);
    let p = ws.path("out").join(EXPANDED_FILE);
    let mut bytes = fs::read(&p).unwrap();
    bytes.extend_from_slice(b"\n");
    fs::write(&p, bytes).unwrap();
    let o = ws.run("out", &["fit"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sha256"));
}

#[test]
fn model_change_after_expand_is_refused() {
    let ws = Workspace::basic();
    ws.ok("out", &["expand", "--impute"]);
    let mut config: serde_json::Value = read_json(&ws.path("run.json"));
    config["model"] = json!({});
    fs::write(ws.path("run.json"), config.to_string()).unwrap();
    assert_eq!(ws.run("out", &["fit"]).status.code(), Some(2));
}

#[test]
fn zero_duration_simulation_is_a_single_cell() {
    let ws = Workspace::new(json!({}), json!({"simulate": {"duration": 0.0, "n_paths": 2}}));
    ws.ok("out", &["expand", "--impute"]);
    ws.ok("out", &["fit"]);
    ws.ok("out", &["simulate"]);
    let m: SimulateManifest = read_json(&ws.path("out/simulate_manifest.json"));
    assert!(m.paths.iter().all(|p| p.rows == 1));
    let occ = read_ascii_grid(ws.path("out/occupancy.asc")).unwrap();
    assert_eq!(occ.valid_cells().map(|c| occ.value(c).unwrap()).sum::<f64>(), 0.0);
}

#[test]
fn occupancy_sums_to_simulated_time() {
    let ws = Workspace::new(
        json!({"motility": [{"layer": "cover", "label": "cover"}]}),
        json!({"simulate": {"duration": 40.0, "n_paths": 5, "start": [5.5, 5.5]}}),
    );
    ws.ok("out", &["expand", "--impute"]);
    ws.ok("out", &["fit"]);
    ws.ok("out", &["simulate"]);
    let occ = read_ascii_grid(ws.path("out/occupancy.asc")).unwrap();
    let total: f64 = occ.valid_cells().map(|c| occ.value(c).unwrap()).sum();
    assert!((total - 200.0).abs() < 1e-6, "{total}");
    let m: SimulateManifest = read_json(&ws.path("out/simulate_manifest.json"));
    assert_eq!(m.start_cell, (5, 5));
}

#[test]
fn fit_before_expand_is_an_input_error() {
    let ws = Workspace::basic();
    assert_eq!(ws.run("out", &["fit"]).status.code(), Some(2));
    assert_eq!(ws.run("out", &["expand"]).status.code(), Some(2));
}

#[test]
fn quadratic_cv_then_fit_uses_chosen_lambda() {
    let ws = Workspace::new(
        json!({
            "motility": [{"layer": "cover", "label": "cover"}],
            "varying": [{"base": {"kind": "motility", "layer": "cover"}, "label": "cover_t", "basis": {"n_basis": 5}}]
        }),
        json!({"imputations": 2, "penalty": {"kind": "quadratic", "n_lambda": 4, "folds": 2}}),
    );
    ws.ok("out", &["expand", "--impute"]);
    ws.ok("out", &["cv"]);
    let cv: CvResult = read_json(&ws.path("out/cv.json"));
    assert_eq!(cv.lambdas.len(), 4);
    let curve = fs::read_to_string(ws.path("out/cv.csv")).unwrap();
    assert_eq!(curve.lines().count(), 5);
    let o = ws.run("out", &["fit"]);
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", String::from_utf8_lossy(&o.stderr));
    let fit = FitResult::read_json(ws.path("out/fit.json")).unwrap();
    assert_eq!(fit.lambda, Some(cv.best_lambda));
    assert_eq!(fit.labels.len(), 7);
}
