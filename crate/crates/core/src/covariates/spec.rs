//! Model declarations (the JSON `ModelSpec` document).

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INTERCEPT_LABEL: &str = "intercept";

fn default_true() -> bool {
    true
}

fn default_degree() -> usize {
    3
}

fn default_n_basis() -> usize {
    10
}

/// Declares the columns of the log-rate linear predictor.
///
/// Column order is fixed: intercept, motility terms, directional terms,
/// autocovariate, varying-coefficient expansions, motility surface, potential
/// surface. Within each group the declaration order is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default)]
    pub motility: Vec<LayerTerm>,
    #[serde(default)]
    pub directional: Vec<LayerTerm>,
    #[serde(default)]
    pub autocovariate: Option<AutocovariateTerm>,
    #[serde(default)]
    pub varying: Vec<VaryingTerm>,
    #[serde(default)]
    pub surface: Option<SurfaceTerms>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            intercept: true,
            motility: Vec::new(),
            directional: Vec::new(),
            autocovariate: None,
            varying: Vec::new(),
            surface: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerTerm {
    pub layer: String,
    pub label: String,
}

impl LayerTerm {
    pub fn new(layer: impl Into<String>, label: impl Into<String>) -> Self {
        LayerTerm {
            layer: layer.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutocovariateTerm {
    pub label: String,
}

/// The static column a time-varying coefficient multiplies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermBase {
    Motility { layer: String },
    Directional { layer: String },
    Autocovariate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_n_basis")]
    pub n_basis: usize,
    /// Basis domain; defaults to the observed time span.
    #[serde(default)]
    pub range: Option<[f64; 2]>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            degree: default_degree(),
            n_basis: default_n_basis(),
            range: None,
        }
    }
}

/// `gamma(t) * base`, with `gamma` expanded in a B-spline basis over time.
/// Produces columns `label[0] .. label[K-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaryingTerm {
    pub base: TermBase,
    pub label: String,
    #[serde(default)]
    pub basis: BasisConfig,
}

/// Tensor-product basis over the grid extent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceBasisConfig {
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_n_basis")]
    pub n_basis_x: usize,
    #[serde(default = "default_n_basis")]
    pub n_basis_y: usize,
}

impl Default for SurfaceBasisConfig {
    fn default() -> Self {
        SurfaceBasisConfig {
            degree: default_degree(),
            n_basis_x: default_n_basis(),
            n_basis_y: default_n_basis(),
        }
    }
}

/// Spatially varying motility `m(x, y)` and potential `p(x, y)` surfaces.
/// Columns are labelled `m[ix,iy]` and `p[ix,iy]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceTerms {
    #[serde(default)]
    pub motility: Option<SurfaceBasisConfig>,
    #[serde(default)]
    pub potential: Option<SurfaceBasisConfig>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    /// Every raster layer the spec references, deduplicated, in first-use order.
    pub fn layer_names(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let bases = self.varying.iter().filter_map(|v| match &v.base {
            TermBase::Motility { layer } | TermBase::Directional { layer } => Some(layer.as_str()),
            TermBase::Autocovariate => None,
        });
        for name in self
            .motility
            .iter()
            .chain(&self.directional)
            .map(|t| t.layer.as_str())
            .chain(bases)
        {
            if seen.insert(name) {
                out.push(name);
            }
        }
        out
    }

    /// Labels of the scalar terms and varying-term prefixes, checked for
    /// uniqueness.
    pub(crate) fn check_labels(&self) -> Result<()> {
        let mut seen = HashSet::new();
        if self.intercept {
            seen.insert(INTERCEPT_LABEL.to_string());
        }
        let labels = self
            .motility
            .iter()
            .chain(&self.directional)
            .map(|t| t.label.clone())
            .chain(self.autocovariate.iter().map(|a| a.label.clone()))
            .chain(self.varying.iter().map(|v| v.label.clone()));
        for label in labels {
            if label.is_empty() {
                return Err(Error::invalid("coefficient labels must be non-empty"));
            }
            if !seen.insert(label.clone()) {
                return Err(Error::invalid(format!("duplicate coefficient label `{label}`")));
            }
        }
        Ok(())
    }
}
