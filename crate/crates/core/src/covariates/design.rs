use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

use super::spec::{ModelSpec, TermBase, INTERCEPT_LABEL};
use super::spline::{SplineBasis1D, SplineBasis2D};
use super::{autocovariate, directional_covariate};
use crate::error::{Error, Result};
use crate::raster::{CellId, RasterGrid, VectorField};

/// Named raster layers, all aligned to the state-space grid.
pub type Layers = BTreeMap<String, RasterGrid>;

/// The chain state a design row is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowState {
    pub cur: CellId,
    pub prev: Option<CellId>,
    pub time: f64,
}

impl RowState {
    pub fn new(cur: CellId, prev: Option<CellId>, time: f64) -> Self {
        RowState { cur, prev, time }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupKind {
    Intercept,
    Motility,
    Directional,
    Autocovariate,
    /// `motility` is true when the varying coefficient multiplies a motility
    /// layer (the block then shares the motility invariance).
    Varying {
        basis: SplineBasis1D,
        motility: bool,
    },
    SurfaceMotility,
    SurfacePotential,
}

/// A contiguous block of design columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnGroup {
    pub kind: GroupKind,
    pub columns: Range<usize>,
}

impl ColumnGroup {
    /// Columns whose value is the same for every candidate of a cell.
    pub fn is_motility(&self) -> bool {
        matches!(
            self.kind,
            GroupKind::Intercept
                | GroupKind::Motility
                | GroupKind::SurfaceMotility
                | GroupKind::Varying { motility: true, .. }
        )
    }
}

#[derive(Debug, Clone)]
enum VaryingBase {
    Motility(RasterGrid),
    Directional(VectorField),
    Autocovariate,
}

/// A [`ModelSpec`] resolved against a state-space grid and its layers.
///
/// The state space is the set of valid cells of `grid`. Motility layers read
/// no-data as zero.
#[derive(Debug, Clone)]
pub struct DesignContext {
    spec: ModelSpec,
    grid: RasterGrid,
    labels: Vec<String>,
    groups: Vec<ColumnGroup>,
    motility: Vec<RasterGrid>,
    directional: Vec<VectorField>,
    varying: Vec<(VaryingBase, SplineBasis1D)>,
    surface_motility: Option<SurfaceCache>,
    surface_potential: Option<SurfaceCache>,
}

#[derive(Debug, Clone)]
struct SurfaceCache {
    basis: SplineBasis2D,
    per_cell: Vec<Vec<f64>>,
}

impl SurfaceCache {
    fn new(basis: SplineBasis2D, grid: &RasterGrid) -> Self {
        let g = grid.geometry();
        let per_cell = (0..g.len())
            .map(|i| {
                let (x, y) = g.center(CellId(i));
                basis.evaluate_clamped(x, y)
            })
            .collect();
        SurfaceCache { basis, per_cell }
    }
}

impl DesignContext {
    /// `time_range` supplies the domain for varying-coefficient bases that do
    /// not declare one.
    pub fn new(spec: ModelSpec, grid: RasterGrid, layers: &Layers, time_range: Option<(f64, f64)>) -> Result<Self> {
        spec.check_labels()?;
        let layer = |name: &str| -> Result<&RasterGrid> {
            let l = layers.get(name).ok_or_else(|| Error::UnknownLayer(name.to_string()))?;
            if !l.is_aligned(&grid) {
                return Err(Error::Misaligned {
                    layer: name.to_string(),
                    expected: *grid.geometry(),
                    found: *l.geometry(),
                });
            }
            Ok(l)
        };

        let mut labels = Vec::new();
        let mut groups = Vec::new();
        let mut push_group = |kind: GroupKind, names: Vec<String>, labels: &mut Vec<String>| {
            let start = labels.len();
            labels.extend(names);
            groups.push(ColumnGroup {
                kind,
                columns: start..labels.len(),
            });
        };

        if spec.intercept {
            push_group(GroupKind::Intercept, vec![INTERCEPT_LABEL.to_string()], &mut labels);
        }
        let motility = spec
            .motility
            .iter()
            .map(|t| layer(&t.layer).cloned())
            .collect::<Result<Vec<_>>>()?;
        if !spec.motility.is_empty() {
            push_group(
                GroupKind::Motility,
                spec.motility.iter().map(|t| t.label.clone()).collect(),
                &mut labels,
            );
        }
        let directional = spec
            .directional
            .iter()
            .map(|t| layer(&t.layer).map(RasterGrid::gradient))
            .collect::<Result<Vec<_>>>()?;
        if !spec.directional.is_empty() {
            push_group(
                GroupKind::Directional,
                spec.directional.iter().map(|t| t.label.clone()).collect(),
                &mut labels,
            );
        }
        if let Some(a) = &spec.autocovariate {
            push_group(GroupKind::Autocovariate, vec![a.label.clone()], &mut labels);
        }

        let mut varying = Vec::new();
        for term in &spec.varying {
            let (t_min, t_max) = match term.basis.range {
                Some([a, b]) => (a, b),
                None => time_range.ok_or_else(|| {
                    Error::invalid(format!(
                        "varying term `{}` declares no basis range and no time range is available",
                        term.label
                    ))
                })?,
            };
            let basis = SplineBasis1D::uniform(t_min, t_max, term.basis.n_basis, term.basis.degree)?;
            let (base, is_motility) = match &term.base {
                TermBase::Motility { layer: name } => (VaryingBase::Motility(layer(name)?.clone()), true),
                TermBase::Directional { layer: name } => (VaryingBase::Directional(layer(name)?.gradient()), false),
                TermBase::Autocovariate => (VaryingBase::Autocovariate, false),
            };
            let names = (0..basis.n_basis()).map(|k| format!("{}[{k}]", term.label)).collect();
            push_group(
                GroupKind::Varying {
                    basis: basis.clone(),
                    motility: is_motility,
                },
                names,
                &mut labels,
            );
            varying.push((base, basis));
        }

        let geometry = *grid.geometry();
        let surface_basis = |cfg: &super::spec::SurfaceBasisConfig| -> Result<SplineBasis2D> {
            let (x0, x1) = geometry.x_extent();
            let (y0, y1) = geometry.y_extent();
            Ok(SplineBasis2D::new(
                SplineBasis1D::uniform(x0, x1, cfg.n_basis_x, cfg.degree)?,
                SplineBasis1D::uniform(y0, y1, cfg.n_basis_y, cfg.degree)?,
            ))
        };
        let surface_names = |prefix: &str, b: &SplineBasis2D| -> Vec<String> {
            let ny = b.y.n_basis();
            (0..b.n_basis())
                .map(|k| format!("{prefix}[{},{}]", k / ny, k % ny))
                .collect()
        };
        let mut surface_motility = None;
        let mut surface_potential = None;
        if let Some(surface) = &spec.surface {
            if let Some(cfg) = &surface.motility {
                let b = surface_basis(cfg)?;
                push_group(GroupKind::SurfaceMotility, surface_names("m", &b), &mut labels);
                surface_motility = Some(SurfaceCache::new(b, &grid));
            }
            if let Some(cfg) = &surface.potential {
                let b = surface_basis(cfg)?;
                push_group(GroupKind::SurfacePotential, surface_names("p", &b), &mut labels);
                surface_potential = Some(SurfaceCache::new(b, &grid));
            }
        }

        let mut seen = HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::invalid(format!("duplicate coefficient label `{dup}`")));
        }
        if labels.is_empty() {
            return Err(Error::invalid("model declares no columns"));
        }

        Ok(DesignContext {
            spec,
            grid,
            labels,
            groups,
            motility,
            directional,
            varying,
            surface_motility,
            surface_potential,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &RasterGrid {
        &self.grid
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_columns(&self) -> usize {
        self.labels.len()
    }

    pub fn groups(&self) -> &[ColumnGroup] {
        &self.groups
    }

    /// `true` for columns that take the same value for every candidate.
    pub fn motility_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_columns()];
        for g in self.groups.iter().filter(|g| g.is_motility()) {
            mask[g.columns.clone()].fill(true);
        }
        mask
    }

    pub fn surface_motility_basis(&self) -> Option<&SplineBasis2D> {
        self.surface_motility.as_ref().map(|s| &s.basis)
    }

    pub fn surface_potential_basis(&self) -> Option<&SplineBasis2D> {
        self.surface_potential.as_ref().map(|s| &s.basis)
    }

    /// Writes the covariate row for the move `state.cur -> candidate`.
    pub fn fill_row(&self, state: RowState, candidate: CellId, out: &mut [f64]) -> Result<()> {
        if out.len() != self.n_columns() {
            return Err(Error::Dimension {
                expected: self.n_columns(),
                found: out.len(),
            });
        }
        let cur = state.cur;
        let geometry = self.grid.geometry();
        if !geometry.contains_cell(cur) {
            return Err(Error::InvalidCell(cur.0));
        }
        if self.grid.direction_between(cur, candidate).is_none() {
            return Err(Error::NotNeighbors {
                from: cur.0,
                to: candidate.0,
            });
        }
        let mut k = 0;
        let mut put = |v: f64| {
            out[k] = v;
            k += 1;
        };
        if self.spec.intercept {
            put(1.0);
        }
        for layer in &self.motility {
            put(layer.value_or_zero(cur));
        }
        for field in &self.directional {
            put(directional_covariate(field, cur, candidate)?);
        }
        let auto = if self.spec.autocovariate.is_some()
            || self
                .varying
                .iter()
                .any(|(b, _)| matches!(b, VaryingBase::Autocovariate))
        {
            autocovariate(geometry, state.prev, cur, candidate)?
        } else {
            0.0
        };
        if self.spec.autocovariate.is_some() {
            put(auto);
        }
        for (base, basis) in &self.varying {
            let b = match base {
                VaryingBase::Motility(layer) => layer.value_or_zero(cur),
                VaryingBase::Directional(field) => directional_covariate(field, cur, candidate)?,
                VaryingBase::Autocovariate => auto,
            };
            for phi in basis.evaluate_clamped(state.time) {
                put(b * phi);
            }
        }
        if let Some(s) = &self.surface_motility {
            for &phi in &s.per_cell[cur.0] {
                put(phi);
            }
        }
        if let Some(s) = &self.surface_potential {
            // Downhill moves (decreasing potential) get positive values.
            for (a, b) in s.per_cell[cur.0].iter().zip(&s.per_cell[candidate.0]) {
                put(a - b);
            }
        }
        debug_assert_eq!(k, out.len());
        Ok(())
    }

    /// Covariate row for the move `state.cur -> candidate`.
    pub fn design_row(&self, state: RowState, candidate: CellId) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.n_columns()];
        self.fill_row(state, candidate, &mut row)?;
        Ok(row)
    }

    /// Potential surface `p(x, y) = sum_k gamma_k phi_k(x, y)` at every cell
    /// center, from a full coefficient vector. Rates favour moves toward lower
    /// values of this surface.
    pub fn potential_surface(&self, coefficients: &[f64]) -> Option<RasterGrid> {
        self.surface_layer(
            coefficients,
            GroupKind::SurfacePotential,
            self.surface_potential.as_ref()?,
        )
    }

    /// Motility surface `m(x, y)` at every cell center.
    pub fn motility_surface(&self, coefficients: &[f64]) -> Option<RasterGrid> {
        self.surface_layer(
            coefficients,
            GroupKind::SurfaceMotility,
            self.surface_motility.as_ref()?,
        )
    }

    fn surface_layer(&self, coefficients: &[f64], kind: GroupKind, cache: &SurfaceCache) -> Option<RasterGrid> {
        let group = self.groups.iter().find(|g| g.kind == kind)?;
        let beta = coefficients.get(group.columns.clone())?;
        let values = (0..self.grid.len())
            .map(|i| {
                if self.grid.is_valid(CellId(i)) {
                    cache.per_cell[i].iter().zip(beta).map(|(p, b)| p * b).sum()
                } else {
                    f64::NAN
                }
            })
            .collect();
        RasterGrid::new(*self.grid.geometry(), values).ok()
    }
}

/// One row of the log-rate design for the move `state.cur -> candidate`.
pub fn build_design_row(ctx: &DesignContext, state: RowState, candidate: CellId) -> Result<Vec<f64>> {
    ctx.design_row(state, candidate)
}
