//! Rectangular raster grids: the discrete state space of the movement chain.
//!
//! Cells are addressed row-major with row 0 at the *southern* (lowest y) edge,
//! so that cell ids grow with both x and y. ESRI ASCII files store the
//! northern row first; [`ascii`] flips rows on the way in and out.

mod ascii;

use std::fmt;

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ascii::{format_ascii_grid, parse_ascii_grid, read_ascii_grid, write_ascii_grid};

pub const DEFAULT_NODATA: f64 = -9999.0;

/// Row-major cell id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId(pub usize);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Rook directions, in the fixed candidate order used everywhere (E, N, W, S).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    East,
    North,
    West,
    South,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::East, Direction::North, Direction::West, Direction::South];

    /// (d_col, d_row)
    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::East => (1, 0),
            Direction::North => (0, 1),
            Direction::West => (-1, 0),
            Direction::South => (0, -1),
        }
    }

    pub fn unit(self) -> (f64, f64) {
        let (dc, dr) = self.offset();
        (dc as f64, dr as f64)
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::East => Direction::West,
            Direction::North => Direction::South,
            Direction::West => Direction::East,
            Direction::South => Direction::North,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub cell: CellId,
    pub direction: Direction,
}

pub type Neighbors = ArrayVec<Neighbor, 4>;

/// Geometry shared by every aligned layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub nrows: usize,
    pub ncols: usize,
    pub x_origin: f64,
    pub y_origin: f64,
    pub cell_size: f64,
}

impl fmt::Display for GridGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} cells of size {} at ({}, {})",
            self.nrows, self.ncols, self.cell_size, self.x_origin, self.y_origin
        )
    }
}

impl GridGeometry {
    pub fn new(nrows: usize, ncols: usize, x_origin: f64, y_origin: f64, cell_size: f64) -> Result<Self> {
        let geometry = GridGeometry {
            nrows,
            ncols,
            x_origin,
            y_origin,
            cell_size,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nrows == 0 || self.ncols == 0 {
            return Err(Error::invalid("grid must have at least one row and one column"));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::invalid(format!(
                "cell size must be positive, got {}",
                self.cell_size
            )));
        }
        if !self.x_origin.is_finite() || !self.y_origin.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nrows * self.ncols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bit-exact comparison of all five geometry fields.
    pub fn is_aligned(&self, other: &GridGeometry) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.x_origin.to_bits() == other.x_origin.to_bits()
            && self.y_origin.to_bits() == other.y_origin.to_bits()
            && self.cell_size.to_bits() == other.cell_size.to_bits()
    }

    pub fn cell_at(&self, row: usize, col: usize) -> Option<CellId> {
        (row < self.nrows && col < self.ncols).then(|| CellId(row * self.ncols + col))
    }

    pub fn row_col(&self, cell: CellId) -> (usize, usize) {
        (cell.0 / self.ncols, cell.0 % self.ncols)
    }

    pub fn contains_cell(&self, cell: CellId) -> bool {
        cell.0 < self.len()
    }

    pub fn center(&self, cell: CellId) -> (f64, f64) {
        let (row, col) = self.row_col(cell);
        (
            self.x_origin + (col as f64 + 0.5) * self.cell_size,
            self.y_origin + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Half-open containment: a point on an interior cell boundary belongs to
    /// the cell with the larger column (row) index.
    pub fn cell_index(&self, x: f64, y: f64) -> Option<CellId> {
        let u = ((x - self.x_origin) / self.cell_size).floor();
        let v = ((y - self.y_origin) / self.cell_size).floor();
        if !(u >= 0.0 && v >= 0.0) || u >= self.ncols as f64 || v >= self.nrows as f64 {
            return None;
        }
        self.cell_at(v as usize, u as usize)
    }

    /// Neighbor of `cell` in `direction`, ignoring masks.
    pub fn step(&self, cell: CellId, direction: Direction) -> Option<CellId> {
        let (row, col) = self.row_col(cell);
        let (dc, dr) = direction.offset();
        let row = row.checked_add_signed(dr)?;
        let col = col.checked_add_signed(dc)?;
        self.cell_at(row, col)
    }

    pub fn x_extent(&self) -> (f64, f64) {
        (self.x_origin, self.x_origin + self.ncols as f64 * self.cell_size)
    }

    pub fn y_extent(&self) -> (f64, f64) {
        (self.y_origin, self.y_origin + self.nrows as f64 * self.cell_size)
    }
}

/// One scalar layer over a grid. Cells are either finite values or no-data.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    geometry: GridGeometry,
    values: Vec<f64>,
    valid: Vec<bool>,
    nodata: f64,
}

impl RasterGrid {
    /// Builds a grid from row-major values (row 0 south). Non-finite values
    /// become no-data.
    pub fn new(geometry: GridGeometry, values: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(Error::Dimension {
                expected: geometry.len(),
                found: values.len(),
            });
        }
        let valid: Vec<bool> = values.iter().map(|v| v.is_finite()).collect();
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v } else { 0.0 })
            .collect();
        Ok(RasterGrid {
            geometry,
            values,
            valid,
            nodata: DEFAULT_NODATA,
        })
    }

    pub fn filled(geometry: GridGeometry, value: f64) -> Result<Self> {
        RasterGrid::new(geometry, vec![value; geometry.len()])
    }

    /// Evaluates `f(x, y)` at every cell center; `None` marks no-data.
    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(f64, f64) -> Option<f64>) -> Result<Self> {
        let values = (0..geometry.len())
            .map(|i| f(geometry.center(CellId(i)).0, geometry.center(CellId(i)).1).unwrap_or(f64::NAN))
            .collect();
        RasterGrid::new(geometry, values)
    }

    pub fn with_nodata_value(mut self, nodata: f64) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn nodata_value(&self) -> f64 {
        self.nodata
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_valid(&self, cell: CellId) -> bool {
        self.valid.get(cell.0).copied().unwrap_or(false)
    }

    pub fn value(&self, cell: CellId) -> Option<f64> {
        self.is_valid(cell).then(|| self.values[cell.0])
    }

    /// Value with no-data read as zero.
    pub fn value_or_zero(&self, cell: CellId) -> f64 {
        self.value(cell).unwrap_or(0.0)
    }

    pub fn set(&mut self, cell: CellId, value: Option<f64>) {
        match value {
            Some(v) if v.is_finite() => {
                self.values[cell.0] = v;
                self.valid[cell.0] = true;
            }
            _ => {
                self.values[cell.0] = 0.0;
                self.valid[cell.0] = false;
            }
        }
    }

    /// Iterates `(cell, Option<value>)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (CellId, Option<f64>)> + '_ {
        (0..self.len()).map(move |i| (CellId(i), self.value(CellId(i))))
    }

    pub fn valid_cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.len()).map(CellId).filter(move |&c| self.is_valid(c))
    }

    pub fn is_aligned(&self, other: &RasterGrid) -> bool {
        self.geometry.is_aligned(&other.geometry)
    }

    pub fn cell_index(&self, x: f64, y: f64) -> Option<CellId> {
        self.geometry.cell_index(x, y)
    }

    /// Rook neighbors of `cell` that are inside the grid and not no-data,
    /// in E, N, W, S order.
    pub fn neighbors(&self, cell: CellId) -> Result<Neighbors> {
        if !self.geometry.contains_cell(cell) {
            return Err(Error::InvalidCell(cell.0));
        }
        if !self.is_valid(cell) {
            return Err(Error::NoDataCell(cell.0));
        }
        let mut out = Neighbors::new();
        for direction in Direction::ALL {
            if let Some(n) = self.geometry.step(cell, direction) {
                if self.is_valid(n) {
                    out.push(Neighbor { cell: n, direction });
                }
            }
        }
        Ok(out)
    }

    /// Direction of the move `from -> to` when they are rook neighbors in the
    /// geometry (masks ignored).
    pub fn direction_between(&self, from: CellId, to: CellId) -> Option<Direction> {
        Direction::ALL
            .into_iter()
            .find(|&d| self.geometry.step(from, d) == Some(to))
    }

    /// Finite-difference gradient at cell centers.
    ///
    /// Central differences where both stencil neighbors hold data, one-sided
    /// differences where only one does, and zero where neither does. No-data
    /// cells get a zero gradient and stay masked in the result.
    pub fn gradient(&self) -> VectorField {
        let g = self.geometry;
        let mut gx = vec![f64::NAN; g.len()];
        let mut gy = vec![f64::NAN; g.len()];
        let diff = |cell: CellId, plus: Direction, minus: Direction| -> f64 {
            let v = self.values[cell.0];
            let hi = g.step(cell, plus).and_then(|c| self.value(c));
            let lo = g.step(cell, minus).and_then(|c| self.value(c));
            match (hi, lo) {
                (Some(h), Some(l)) => (h - l) / (2.0 * g.cell_size),
                (Some(h), None) => (h - v) / g.cell_size,
                (None, Some(l)) => (v - l) / g.cell_size,
                (None, None) => 0.0,
            }
        };
        for cell in self.valid_cells() {
            gx[cell.0] = diff(cell, Direction::East, Direction::West);
            gy[cell.0] = diff(cell, Direction::North, Direction::South);
        }
        VectorField {
            gx: RasterGrid::new(g, gx).expect("geometry already validated"),
            gy: RasterGrid::new(g, gy).expect("geometry already validated"),
        }
    }
}

/// Gradient components on the cell centers of a source grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub gx: RasterGrid,
    pub gy: RasterGrid,
}

impl VectorField {
    /// Gradient at `cell`; (0, 0) on no-data cells.
    pub fn at(&self, cell: CellId) -> (f64, f64) {
        (self.gx.value_or_zero(cell), self.gy.value_or_zero(cell))
    }

    pub fn geometry(&self) -> &GridGeometry {
        self.gx.geometry()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(nrows: usize, ncols: usize) -> GridGeometry {
        GridGeometry::new(nrows, ncols, 0.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn cell_index_basic() {
        let g = unit(3, 3);
        assert_eq!(g.cell_index(0.5, 0.5), Some(CellId(0)));
        assert_eq!(g.cell_index(-0.1, 0.5), None);
        assert_eq!(g.cell_index(0.5, 3.0), None);
        assert_eq!(g.cell_index(f64::NAN, 0.5), None);
    }

    #[test]
    fn cell_index_boundary_matches_brute_force_containment() {
        let g = GridGeometry::new(4, 5, -2.0, 1.0, 0.5).unwrap();
        let brute = |x: f64, y: f64| {
            (0..g.len()).map(CellId).find(|&c| {
                let (row, col) = g.row_col(c);
                let x0 = g.x_origin + col as f64 * g.cell_size;
                let y0 = g.y_origin + row as f64 * g.cell_size;
                x0 <= x && x < x0 + g.cell_size && y0 <= y && y < y0 + g.cell_size
            })
        };
        for i in -1..=12 {
            for j in -1..=10 {
                let x = g.x_origin + i as f64 * 0.25;
                let y = g.y_origin + j as f64 * 0.25;
                assert_eq!(g.cell_index(x, y), brute(x, y), "({x}, {y})");
            }
        }
        // x = 1.0 on a unit grid lies in column 1.
        assert_eq!(unit(3, 3).cell_index(1.0, 0.5), Some(CellId(1)));
        assert_eq!(unit(3, 3).cell_index(0.5, 1.0), Some(CellId(3)));
    }

    #[test]
    fn neighbor_counts() {
        let grid = RasterGrid::filled(unit(3, 3), 1.0).unwrap();
        assert_eq!(grid.neighbors(CellId(4)).unwrap().len(), 4);
        assert_eq!(grid.neighbors(CellId(0)).unwrap().len(), 2);
        assert_eq!(grid.neighbors(CellId(1)).unwrap().len(), 3);
        assert!(matches!(grid.neighbors(CellId(9)), Err(Error::InvalidCell(9))));

        let mut masked = grid.clone();
        masked.set(CellId(5), None);
        let n = masked.neighbors(CellId(4)).unwrap();
        let cells: Vec<_> = n.iter().map(|n| n.cell.0).collect();
        assert_eq!(cells, vec![7, 3, 1]);
        assert!(matches!(masked.neighbors(CellId(5)), Err(Error::NoDataCell(5))));
    }

    #[test]
    fn neighbor_order_and_directions() {
        let grid = RasterGrid::filled(unit(3, 3), 1.0).unwrap();
        let n = grid.neighbors(CellId(4)).unwrap();
        let got: Vec<_> = n.iter().map(|n| (n.cell.0, n.direction.unit())).collect();
        assert_eq!(
            got,
            vec![(5, (1.0, 0.0)), (7, (0.0, 1.0)), (3, (-1.0, 0.0)), (1, (0.0, -1.0))]
        );
    }

    #[test]
    fn gradient_of_linear_fields() {
        let g = GridGeometry::new(4, 5, 10.0, -3.0, 2.0).unwrap();
        let xs = RasterGrid::from_fn(g, |x, _| Some(x)).unwrap().gradient();
        for c in 0..g.len() {
            let (gx, gy) = xs.at(CellId(c));
            assert!((gx - 1.0).abs() < 1e-12 && gy.abs() < 1e-12);
        }
        let constant = RasterGrid::filled(g, 4.2).unwrap().gradient();
        assert!((0..g.len()).all(|c| constant.at(CellId(c)) == (0.0, 0.0)));

        let plane = RasterGrid::from_fn(g, |x, y| Some(x + 2.0 * y)).unwrap().gradient();
        let (gx, gy) = plane.at(g.cell_at(1, 2).unwrap());
        assert!((gx - 1.0).abs() < 1e-12);
        assert!((gy - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_falls_back_around_nodata() {
        let g = unit(1, 3);
        let mut grid = RasterGrid::new(g, vec![0.0, 1.0, 5.0]).unwrap();
        let f = grid.gradient();
        assert_eq!(f.at(CellId(1)).0, 2.5);
        assert_eq!(f.at(CellId(0)).0, 1.0);
        grid.set(CellId(2), None);
        let f = grid.gradient();
        assert_eq!(f.at(CellId(1)).0, 1.0);
        assert_eq!(f.at(CellId(2)), (0.0, 0.0));
        assert!(!f.gx.is_valid(CellId(2)));

        let isolated = RasterGrid::new(g, vec![f64::NAN, 3.0, f64::NAN]).unwrap();
        assert_eq!(isolated.gradient().at(CellId(1)), (0.0, 0.0));
    }

    #[test]
    fn alignment_is_exact() {
        let a = unit(2, 2);
        let mut b = a;
        assert!(a.is_aligned(&b));
        b.cell_size = 1.0 + f64::EPSILON;
        assert!(!a.is_aligned(&b));
    }
}
