//! The workflow verbs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{PenaltyChoice, RunConfig};
use crate::covariates::DesignContext;
use crate::ctmc::{simulate_path_with_rng, write_path_csv, CtmcPath};
use crate::error::{Error, Result};
use crate::inference::{
    cross_validate, design_penalty, fit_poisson_weighted, lambda_grid, lambda_max, quadratic_lambda_grid,
    surface_penalty_mask, CvFamily, CvResult, FitResult, Penalty,
};
use crate::pipeline::{
    default_time_step, discretize, expand, fit_bridge_sigma, imputation_rng, stack, BrownianBridge, ContinuousPath,
    ExpandedData, PathImputer,
};
use crate::raster::{write_ascii_grid, RasterGrid};

pub const IMPUTE_MANIFEST: &str = "impute_manifest.json";
pub const DISCRETIZE_MANIFEST: &str = "discretize_manifest.json";
pub const EXPAND_MANIFEST: &str = "expand_manifest.json";
pub const SIMULATE_MANIFEST: &str = "simulate_manifest.json";
pub const EXPANDED_FILE: &str = "expanded.csv";
pub const FIT_FILE: &str = "fit.json";
pub const COEFFICIENTS_FILE: &str = "coefficients.csv";
pub const CV_FILE: &str = "cv.json";
pub const CV_CURVE_FILE: &str = "cv.csv";
pub const OCCUPANCY_FILE: &str = "occupancy.asc";

/// Settings shared by every verb after flags and config are merged.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Run {
    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::invalid("a seed is required (config `seed` or --seed)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeManifest {
    pub sigma: f64,
    pub time_step: f64,
    pub seed: u64,
    /// Imputation `i` uses ChaCha8 seeded from `seed` on stream `i`.
    pub streams: Vec<u64>,
    pub paths: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizeManifest {
    pub imputation: Vec<usize>,
    pub paths: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandManifest {
    pub labels: Vec<String>,
    pub n_imputations: usize,
    pub censor_final: bool,
    /// Rows contributed by each imputation.
    pub rows_per_path: Vec<usize>,
    pub data: FileEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateManifest {
    pub seed: u64,
    pub start_time: f64,
    pub duration: f64,
    pub start_cell: (usize, usize),
    pub absorbed: Vec<bool>,
    pub paths: Vec<FileEntry>,
    pub occupancy: FileEntry,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_entry(out: &Path, name: String, bytes: &[u8], rows: usize) -> Result<FileEntry> {
    write_file(&out.join(&name), bytes)?;
    Ok(FileEntry {
        file: name,
        sha256: sha256_hex(bytes),
        rows,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}

/// Reads a manifest-listed file and checks its hash.
fn read_verified(out: &Path, entry: &FileEntry) -> Result<Vec<u8>> {
    let path = out.join(&entry.file);
    let bytes = read_file(&path)?;
    let found = sha256_hex(&bytes);
    if found != entry.sha256 {
        return Err(Error::invalid(format!(
            "{} does not match its manifest (sha256 {found}, expected {})",
            path.display(),
            entry.sha256
        )));
    }
    Ok(bytes)
}

pub fn impute(run: &Run) -> Result<ImputeManifest> {
    let config = &run.config;
    let seed = run.seed()?;
    let telemetry = config.telemetry()?;
    let sigma = match config.sigma {
        Some(s) if s >= 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::invalid(format!("sigma must be finite and nonnegative, got {s}"))),
        None => fit_bridge_sigma(&telemetry)?,
    };
    let time_step = match config.time_step {
        Some(dt) => dt,
        None => default_time_step(&telemetry, sigma, config.grid()?.geometry().cell_size),
    };
    let bridge = BrownianBridge::new(sigma, time_step)?;
    let n = config.imputations;
    let files: Vec<(Vec<u8>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let path = bridge.impute(&telemetry, &mut imputation_rng(seed, i))?;
            let mut buf = Vec::new();
            path.write_csv(&mut buf)?;
            Ok((buf, path.samples().len()))
        })
        .collect::<Result<_>>()?;
    let paths = files
        .iter()
        .enumerate()
        .map(|(i, (bytes, rows))| write_entry(&run.out, format!("imputed/path_{i:04}.csv"), bytes, *rows))
        .collect::<Result<_>>()?;
    let manifest = ImputeManifest {
        sigma,
        time_step,
        seed,
        streams: (0..n as u64).collect(),
        paths,
    };
    write_json(&run.out.join(IMPUTE_MANIFEST), &manifest)?;
    Ok(manifest)
}

fn imputed_paths(run: &Run) -> Result<Vec<ContinuousPath>> {
    let manifest: ImputeManifest = read_json(&run.out.join(IMPUTE_MANIFEST))?;
    manifest
        .paths
        .iter()
        .map(|entry| {
            let bytes = read_verified(&run.out, entry)?;
            ContinuousPath::from_reader(bytes.as_slice())
        })
        .collect()
}

pub fn discretize_paths(run: &Run) -> Result<DiscretizeManifest> {
    let grid = run.config.grid()?;
    let paths = imputed_paths(run)?;
    let pieces: Vec<Vec<CtmcPath>> = paths.par_iter().map(|p| discretize(p, &grid)).collect::<Result<_>>()?;
    let mut manifest = DiscretizeManifest {
        imputation: Vec::new(),
        paths: Vec::new(),
    };
    for (i, list) in pieces.iter().enumerate() {
        for (k, piece) in list.iter().enumerate() {
            let mut buf = Vec::new();
            write_path_csv(piece, grid.geometry(), &mut buf)?;
            let rows = piece.cells().len();
            manifest.paths.push(write_entry(
                &run.out,
                format!("discretized/path_{i:04}_{k:03}.csv"),
                &buf,
                rows,
            )?);
            manifest.imputation.push(i);
        }
    }
    write_json(&run.out.join(DISCRETIZE_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn expand_paths(run: &Run, impute_first: bool) -> Result<ExpandManifest> {
    if impute_first {
        impute(run)?;
    } else if !run.out.join(IMPUTE_MANIFEST).exists() {
        return Err(Error::invalid(format!(
            "no imputed paths in {}; run `impute` first or pass --impute",
            run.out.display()
        )));
    }
    let ctx = run.config.context()?;
    let censor = run.config.censor_final;
    let paths = imputed_paths(run)?;
    let parts: Vec<ExpandedData> = paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut e = ExpandedData::empty(ctx.labels().to_vec());
            for piece in discretize(p, ctx.grid())? {
                e.append(&expand(&piece, &ctx, censor, i as u32)?)?;
            }
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let rows_per_path = parts.iter().map(ExpandedData::n_rows).collect();
    let stacked = stack(&parts)?;
    let mut buf = Vec::new();
    stacked.write_csv(&mut buf)?;
    let manifest = ExpandManifest {
        labels: ctx.labels().to_vec(),
        n_imputations: parts.len(),
        censor_final: censor,
        rows_per_path,
        data: write_entry(&run.out, EXPANDED_FILE.to_string(), &buf, stacked.n_rows())?,
    };
    write_json(&run.out.join(EXPAND_MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Stacked data from the output directory, refused if it no longer matches
/// the hash recorded by `expand`.
pub fn load_expanded(out: &Path) -> Result<ExpandedData> {
    let manifest: ExpandManifest = read_json(&out.join(EXPAND_MANIFEST))?;
    let bytes = read_verified(out, &manifest.data)?;
    let data = ExpandedData::read_csv(bytes.as_slice())?;
    if data.labels() != manifest.labels.as_slice() {
        return Err(Error::ColumnMismatch(format!(
            "{:?} in data vs {:?} in manifest",
            data.labels(),
            manifest.labels
        )));
    }
    Ok(data)
}

fn check_labels(ctx: &DesignContext, labels: &[String], what: &str) -> Result<()> {
    if ctx.labels() != labels {
        return Err(Error::ColumnMismatch(format!(
            "{what} has columns {labels:?}, the model has {:?}",
            ctx.labels()
        )));
    }
    Ok(())
}

fn cv_family(run: &Run, ctx: &DesignContext) -> Result<CvFamily> {
    match run.config.penalty.kind {
        PenaltyChoice::None => Err(Error::invalid(
            "cross-validation needs penalty.kind `quadratic` or `l1`",
        )),
        PenaltyChoice::Quadratic => Ok(CvFamily::Quadratic {
            omega: design_penalty(ctx)?,
        }),
        PenaltyChoice::L1 => Ok(CvFamily::L1 {
            penalized: surface_penalty_mask(ctx),
        }),
    }
}

pub fn fit(run: &Run) -> Result<FitResult> {
    let ctx = run.config.context()?;
    let data = load_expanded(&run.out)?;
    check_labels(&ctx, data.labels(), "the expanded data")?;
    let lambda = || -> Result<f64> {
        if let Some(l) = run.config.penalty.lambda {
            return Ok(l);
        }
        let cv_path = run.out.join(CV_FILE);
        if cv_path.exists() {
            let cv: CvResult = read_json(&cv_path)?;
            return Ok(cv.best_lambda);
        }
        Err(Error::invalid(
            "penalized fit needs penalty.lambda or a previous `cv` run",
        ))
    };
    let penalty = match cv_family(run, &ctx) {
        Err(_) if run.config.penalty.kind == PenaltyChoice::None => Penalty::None,
        Err(e) => return Err(e),
        Ok(CvFamily::Quadratic { omega }) => Penalty::Quadratic {
            lambda: lambda()?,
            omega,
        },
        Ok(CvFamily::L1 { penalized }) => Penalty::L1 {
            lambda: lambda()?,
            penalized,
        },
    };
    let result = fit_poisson_weighted(&data, &penalty)?;
    write_json(&run.out.join(FIT_FILE), &result)?;
    let mut buf = Vec::new();
    result.write_coefficients_csv(&mut buf)?;
    write_file(&run.out.join(COEFFICIENTS_FILE), &buf)?;
    Ok(result)
}

pub fn cv(run: &Run) -> Result<CvResult> {
    let ctx = run.config.context()?;
    let data = load_expanded(&run.out)?;
    check_labels(&ctx, data.labels(), "the expanded data")?;
    let family = cv_family(run, &ctx)?;
    let pc = &run.config.penalty;
    let lambdas = match (&pc.lambdas, &family) {
        (Some(l), _) => l.clone(),
        (None, CvFamily::Quadratic { omega }) => quadratic_lambda_grid(&data, omega, pc.n_lambda)?,
        (None, CvFamily::L1 { penalized }) => lambda_grid(lambda_max(&data, penalized)?, pc.n_lambda, 1e-3),
    };
    let result = cross_validate(&data, &family, &lambdas, pc.folds)?;
    write_json(&run.out.join(CV_FILE), &result)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["lambda".to_string(), "mean_deviance".to_string()];
    header.extend((0..result.n_folds).map(|f| format!("fold_{f}")));
    w.write_record(&header)?;
    for (l, lambda) in result.lambdas.iter().enumerate() {
        let mut rec = vec![lambda.to_string(), result.mean_scores[l].to_string()];
        rec.extend(result.fold_scores.iter().map(|s| s[l].to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_file(&run.out.join(CV_CURVE_FILE), &bytes)?;
    Ok(result)
}

pub fn simulate(run: &Run) -> Result<SimulateManifest> {
    let config = &run.config;
    let seed = run.seed()?;
    let ctx = config.context()?;
    let coef_path = config
        .simulate
        .coefficients
        .clone()
        .unwrap_or_else(|| run.out.join(FIT_FILE));
    let fit = FitResult::read_json(&coef_path)?;
    check_labels(&ctx, &fit.labels, &format!("{}", coef_path.display()))?;
    let sim = &config.simulate;
    let telemetry = match (&config.telemetry, sim.start, sim.duration, sim.start_time) {
        (Some(_), None, _, _) | (Some(_), _, None, _) | (Some(_), _, _, None) => Some(config.telemetry()?),
        _ => None,
    };
    let start_xy = match (sim.start, &telemetry) {
        (Some(s), _) => s,
        (None, Some(t)) => [t.fixes()[0].x, t.fixes()[0].y],
        (None, None) => return Err(Error::invalid("simulate.start is required without telemetry")),
    };
    let start_time = sim
        .start_time
        .or(telemetry.as_ref().map(|t| t.time_range().0))
        .unwrap_or(0.0);
    let duration = match (sim.duration, &telemetry) {
        (Some(d), _) => d,
        (None, Some(t)) => t.time_range().1 - t.time_range().0,
        (None, None) => return Err(Error::invalid("simulate.duration is required without telemetry")),
    };
    let grid = ctx.grid();
    let geometry = *grid.geometry();
    let start = grid
        .cell_index(start_xy[0], start_xy[1])
        .filter(|&c| grid.is_valid(c))
        .ok_or_else(|| Error::invalid(format!("start location {start_xy:?} is not on a valid cell")))?;
    let sims = (0..sim.n_paths)
        .into_par_iter()
        .map(|i| {
            simulate_path_with_rng(
                &ctx,
                &fit.coefficients,
                start,
                start_time,
                duration,
                &mut imputation_rng(seed, i),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut occupancy = vec![0.0; geometry.len()];
    let mut paths = Vec::with_capacity(sims.len());
    for (i, s) in sims.iter().enumerate() {
        s.path.accumulate_occupancy(&mut occupancy);
        let mut buf = Vec::new();
        write_path_csv(&s.path, &geometry, &mut buf)?;
        paths.push(write_entry(
            &run.out,
            format!("simulated/sim_{i:04}.csv"),
            &buf,
            s.path.cells().len(),
        )?);
    }
    let mut occ = RasterGrid::new(geometry, occupancy)?;
    for c in 0..geometry.len() {
        let cell = crate::raster::CellId(c);
        if !grid.is_valid(cell) {
            occ.set(cell, None);
        }
    }
    let occ_path = run.out.join(OCCUPANCY_FILE);
    write_ascii_grid(&occ, &occ_path)?;
    let occ_bytes = read_file(&occ_path)?;
    let manifest = SimulateManifest {
        seed,
        start_time,
        duration,
        start_cell: geometry.row_col(start),
        absorbed: sims.iter().map(|s| s.absorbed).collect(),
        paths,
        occupancy: FileEntry {
            file: OCCUPANCY_FILE.to_string(),
            sha256: sha256_hex(&occ_bytes),
            rows: geometry.nrows,
        },
    };
    write_json(&run.out.join(SIMULATE_MANIFEST), &manifest)?;
    Ok(manifest)
}
