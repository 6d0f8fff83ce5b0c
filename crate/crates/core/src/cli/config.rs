//! Run configuration document.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::covariates::{DesignContext, Layers, ModelSpec};
use crate::error::{Error, Result};
use crate::pipeline::Telemetry;
use crate::raster::{read_ascii_grid, RasterGrid};

/// Model specification, inline or as a path to a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(ModelSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyChoice {
    #[default]
    None,
    Quadratic,
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyConfig {
    #[serde(default)]
    pub kind: PenaltyChoice,
    /// Fixed penalty weight for `fit`. When absent, `fit` uses the weight
    /// chosen by a previous `cv` run in the output directory.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Grid for `cv`. When absent a log-spaced grid is generated.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default = "default_n_lambda")]
    pub n_lambda: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

fn default_n_lambda() -> usize {
    20
}

fn default_folds() -> usize {
    5
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            kind: PenaltyChoice::None,
            lambda: None,
            lambdas: None,
            n_lambda: default_n_lambda(),
            folds: default_folds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Fitted coefficients; defaults to `fit.json` in the output directory.
    #[serde(default)]
    pub coefficients: Option<PathBuf>,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    /// Defaults to the telemetry time span.
    #[serde(default)]
    pub duration: Option<f64>,
    /// Defaults to the telemetry start time, or 0.
    #[serde(default)]
    pub start_time: Option<f64>,
    /// Start location `[x, y]`; defaults to the first telemetry fix.
    #[serde(default)]
    pub start: Option<[f64; 2]>,
}

fn default_n_paths() -> usize {
    1
}

/// One JSON document describing a full run. Relative paths are resolved
/// against the directory containing the document. Command-line flags take
/// precedence over the document, which takes precedence over defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub telemetry: Option<PathBuf>,
    /// State-space raster; its valid cells are the chain's states.
    pub grid: PathBuf,
    /// Covariate rasters by layer name, as referenced from the model.
    #[serde(default)]
    pub layers: BTreeMap<String, PathBuf>,
    pub model: ModelSource,
    #[serde(default = "default_imputations")]
    pub imputations: usize,
    /// Imputation sampling step; defaults to `default_time_step`.
    #[serde(default)]
    pub time_step: Option<f64>,
    /// Bridge scale; defaults to the estimate from the telemetry.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_true")]
    pub censor_final: bool,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_imputations() -> usize {
    10
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = &mut self.telemetry {
            fix(t);
        }
        fix(&mut self.grid);
        self.layers.values_mut().for_each(fix);
        if let ModelSource::Path(p) = &mut self.model {
            fix(p);
        }
        if let Some(c) = &mut self.simulate.coefficients {
            fix(c);
        }
        if let Some(o) = &mut self.output {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.imputations == 0 {
            return Err(Error::invalid("imputations must be at least 1"));
        }
        if self.penalty.folds < 2 {
            return Err(Error::invalid("penalty.folds must be at least 2"));
        }
        Ok(())
    }

    pub fn telemetry(&self) -> Result<Telemetry> {
        let path = self
            .telemetry
            .as_ref()
            .ok_or_else(|| Error::invalid("config has no `telemetry` file"))?;
        Telemetry::read_csv(path)
    }

    pub fn model(&self) -> Result<ModelSpec> {
        match &self.model {
            ModelSource::Inline(spec) => Ok(spec.clone()),
            ModelSource::Path(p) => ModelSpec::from_path(p),
        }
    }

    pub fn grid(&self) -> Result<RasterGrid> {
        read_ascii_grid(&self.grid)
    }

    pub fn layers(&self) -> Result<Layers> {
        self.layers
            .iter()
            .map(|(name, path)| Ok((name.clone(), read_ascii_grid(path)?)))
            .collect()
    }

    /// Design context over the grid; varying-coefficient bases default to
    /// the telemetry time span when telemetry is configured.
    pub fn context(&self) -> Result<DesignContext> {
        let time_range = match &self.telemetry {
            Some(_) => Some(self.telemetry()?.time_range()),
            None => None,
        };
        DesignContext::new(self.model()?, self.grid()?, &self.layers()?, time_range)
    }
}
