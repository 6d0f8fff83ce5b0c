//! Covariate construction for the log-linear transition rates.
//!
//! Motility columns depend only on the current cell and scale every outgoing
//! rate equally. Directional columns are dot products of the candidate
//! displacement `e_ij = (x_j - x_i, y_j - y_i)` with a gradient evaluated at
//! the current cell. Displacements keep their `cell_size` magnitude, so
//! directional coefficients scale inversely with the cell size.

mod design;
mod spec;
mod spline;

pub use design::{build_design_row, ColumnGroup, DesignContext, GroupKind, Layers, RowState};
pub use spec::{
    AutocovariateTerm, BasisConfig, LayerTerm, ModelSpec, SurfaceBasisConfig, SurfaceTerms, TermBase, VaryingTerm,
    INTERCEPT_LABEL,
};
pub use spline::{SplineBasis1D, SplineBasis2D};

use crate::ctmc::CtmcPath;
use crate::error::{Error, Result};
use crate::raster::{CellId, GridGeometry, RasterGrid, VectorField};

/// `e_ij . g_i` for the gradient field of a directional layer.
pub fn directional_covariate(field: &VectorField, from: CellId, to: CellId) -> Result<f64> {
    let geometry = field.geometry();
    let direction = field
        .gx
        .direction_between(from, to)
        .ok_or(Error::NotNeighbors { from: from.0, to: to.0 })?;
    let (ux, uy) = direction.unit();
    let (gx, gy) = field.at(from);
    Ok(geometry.cell_size * (ux * gx + uy * gy))
}

/// Dot product of the candidate displacement `cur -> to` with the unit
/// heading `prev -> cur`. Zero at the start of a path.
pub fn autocovariate(geometry: &GridGeometry, prev: Option<CellId>, cur: CellId, to: CellId) -> Result<f64> {
    let dir = step_direction(geometry, cur, to)?;
    let Some(prev) = prev.filter(|&p| p != cur) else {
        return Ok(0.0);
    };
    let (px, py) = geometry.center(prev);
    let (cx, cy) = geometry.center(cur);
    let (hx, hy) = (cx - px, cy - py);
    let norm = hx.hypot(hy);
    let (ux, uy) = dir.unit();
    Ok(geometry.cell_size * (ux * hx + uy * hy) / norm)
}

fn step_direction(geometry: &GridGeometry, from: CellId, to: CellId) -> Result<crate::raster::Direction> {
    if !geometry.contains_cell(from) {
        return Err(Error::InvalidCell(from.0));
    }
    crate::raster::Direction::ALL
        .into_iter()
        .find(|&d| geometry.step(from, d) == Some(to))
        .ok_or(Error::NotNeighbors { from: from.0, to: to.0 })
}

/// Euclidean distance from every cell center to `(px, py)`.
pub fn distance_to_point_layer(grid: &RasterGrid, px: f64, py: f64) -> RasterGrid {
    RasterGrid::from_fn(*grid.geometry(), |x, y| Some((x - px).hypot(y - py))).expect("source geometry is valid")
}

/// Per-cell distance to the nearest cell center visited strictly before `up_to`.
pub fn memory_layer(past: &CtmcPath, grid: &RasterGrid, up_to: f64) -> Result<RasterGrid> {
    let geometry = grid.geometry();
    let mut visited: Vec<CellId> = past
        .cells()
        .iter()
        .zip(past.entry_times())
        .filter(|&(_, t)| t < up_to)
        .map(|(&c, _)| c)
        .collect();
    visited.sort_unstable();
    visited.dedup();
    if visited.is_empty() {
        return Err(Error::invalid(format!("no cells visited before t = {up_to}")));
    }
    if let Some(bad) = visited.iter().find(|c| !geometry.contains_cell(**c)) {
        return Err(Error::InvalidCell(bad.0));
    }
    let centers: Vec<(f64, f64)> = visited.iter().map(|&c| geometry.center(c)).collect();
    RasterGrid::from_fn(*geometry, |x, y| {
        Some(
            centers
                .iter()
                .map(|&(cx, cy)| (x - cx).hypot(y - cy))
                .fold(f64::INFINITY, f64::min),
        )
    })
}

/// B-spline basis values at `t`; errors outside the basis domain.
pub fn bspline_basis_1d(t: f64, basis: &SplineBasis1D) -> Result<Vec<f64>> {
    basis.evaluate(t)
}

/// Columns `base * phi_k(t)` of a varying-coefficient term.
pub fn expand_varying_term(base: f64, t: f64, basis: &SplineBasis1D) -> Result<Vec<f64>> {
    let mut phi = basis.evaluate(t)?;
    for v in phi.iter_mut() {
        *v *= base;
    }
    Ok(phi)
}
