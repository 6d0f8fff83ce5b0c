//! Poisson-regression rows from chain paths, and stacking over imputations.

use std::io::{Read, Write};

use super::discretize::MIN_SOJOURN;
use crate::covariates::{DesignContext, RowState};
use crate::ctmc::CtmcPath;
use crate::error::{Error, Result};
use crate::raster::CellId;

const FIXED_COLUMNS: [&str; 9] = [
    "z",
    "log_offset",
    "weight",
    "path_id",
    "from_row",
    "from_col",
    "to_row",
    "to_col",
    "time",
];

/// Stacked Poisson rows in columnar form. Row `r` has response `z[r]`,
/// offset `log_offset[r]` (log residence time), prior weight `weight[r]`,
/// and covariates `covariates()[r * p .. (r + 1) * p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedData {
    labels: Vec<String>,
    z: Vec<f64>,
    log_offset: Vec<f64>,
    weight: Vec<f64>,
    path_id: Vec<u32>,
    from: Vec<(u32, u32)>,
    to: Vec<(u32, u32)>,
    time: Vec<f64>,
    x: Vec<f64>,
}

/// Borrowed view of one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpandedRow<'a> {
    pub z: f64,
    pub log_offset: f64,
    pub weight: f64,
    pub path_id: u32,
    pub from: (u32, u32),
    pub to: (u32, u32),
    pub time: f64,
    pub covariates: &'a [f64],
}

impl ExpandedData {
    pub fn empty(labels: Vec<String>) -> Self {
        ExpandedData {
            labels,
            z: Vec::new(),
            log_offset: Vec::new(),
            weight: Vec::new(),
            path_id: Vec::new(),
            from: Vec::new(),
            to: Vec::new(),
            time: Vec::new(),
            x: Vec::new(),
        }
    }

    /// Builds data from plain arrays, e.g. for regression problems that did
    /// not come from a path. Bookkeeping columns are zero.
    pub fn from_arrays(
        labels: Vec<String>,
        x: Vec<f64>,
        z: Vec<f64>,
        log_offset: Vec<f64>,
        weight: Vec<f64>,
    ) -> Result<Self> {
        let n = z.len();
        let p = labels.len();
        if x.len() != n * p || log_offset.len() != n || weight.len() != n {
            return Err(Error::invalid(format!(
                "inconsistent array lengths: x {}, z {n}, offset {}, weight {}, {p} labels",
                x.len(),
                log_offset.len(),
                weight.len()
            )));
        }
        Ok(ExpandedData {
            labels,
            z,
            log_offset,
            weight,
            path_id: vec![0; n],
            from: vec![(0, 0); n],
            to: vec![(0, 0); n],
            time: vec![0.0; n],
            x,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_rows(&self) -> usize {
        self.z.len()
    }

    pub fn n_columns(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn log_offset(&self) -> &[f64] {
        &self.log_offset
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn path_ids(&self) -> &[u32] {
        &self.path_id
    }

    pub fn times(&self) -> &[f64] {
        &self.time
    }

    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    pub fn covariate_row(&self, r: usize) -> &[f64] {
        let p = self.n_columns();
        &self.x[r * p..(r + 1) * p]
    }

    pub fn row(&self, r: usize) -> ExpandedRow<'_> {
        ExpandedRow {
            z: self.z[r],
            log_offset: self.log_offset[r],
            weight: self.weight[r],
            path_id: self.path_id[r],
            from: self.from[r],
            to: self.to[r],
            time: self.time[r],
            covariates: self.covariate_row(r),
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = ExpandedRow<'_>> {
        (0..self.n_rows()).map(move |r| self.row(r))
    }

    pub fn total_weight(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// Number of realized transitions (rows with `z = 1`).
    pub fn n_transitions(&self) -> usize {
        self.z.iter().filter(|&&z| z > 0.0).count()
    }

    /// Row ranges of consecutive rows sharing one sojourn (same path, cell
    /// and entry time).
    pub fn sojourn_blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for r in 1..=self.n_rows() {
            let boundary = r == self.n_rows()
                || self.path_id[r] != self.path_id[start]
                || self.from[r] != self.from[start]
                || self.time[r].to_bits() != self.time[start].to_bits();
            if boundary {
                out.push(start..r);
                start = r;
            }
        }
        out
    }

    /// Rows selected by `keep`, in order.
    pub fn select_rows(&self, keep: impl Fn(usize) -> bool) -> ExpandedData {
        let mut out = ExpandedData::empty(self.labels.clone());
        for r in (0..self.n_rows()).filter(|&r| keep(r)) {
            out.push_row(self.row(r));
        }
        out
    }

    /// The same rows restricted to `columns`, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<ExpandedData> {
        let p = self.n_columns();
        if let Some(&bad) = columns.iter().find(|&&c| c >= p) {
            return Err(Error::invalid(format!("column {bad} out of range for {p} columns")));
        }
        let mut out = self.clone();
        out.labels = columns.iter().map(|&c| self.labels[c].clone()).collect();
        out.x = (0..self.n_rows())
            .flat_map(|r| columns.iter().map(move |&c| self.x[r * p + c]))
            .collect();
        Ok(out)
    }

    pub fn set_weights(&mut self, w: f64) {
        self.weight.fill(w);
    }

    /// Replaces the path ids and sojourn entry times of all rows.
    pub fn set_bookkeeping(&mut self, path_ids: Vec<u32>, times: Vec<f64>) -> Result<()> {
        if path_ids.len() != self.n_rows() || times.len() != self.n_rows() {
            return Err(Error::Dimension {
                expected: self.n_rows(),
                found: path_ids.len().min(times.len()),
            });
        }
        self.path_id = path_ids;
        self.time = times;
        Ok(())
    }

    pub fn set_path_id(&mut self, id: u32) {
        self.path_id.fill(id);
    }

    fn push_row(&mut self, row: ExpandedRow<'_>) {
        self.z.push(row.z);
        self.log_offset.push(row.log_offset);
        self.weight.push(row.weight);
        self.path_id.push(row.path_id);
        self.from.push(row.from);
        self.to.push(row.to);
        self.time.push(row.time);
        self.x.extend_from_slice(row.covariates);
    }

    /// Appends `other`'s rows unchanged.
    pub fn append(&mut self, other: &ExpandedData) -> Result<()> {
        if other.labels != self.labels {
            return Err(Error::ColumnMismatch(format!(
                "{:?} vs {:?}",
                self.labels, other.labels
            )));
        }
        self.z.extend_from_slice(&other.z);
        self.log_offset.extend_from_slice(&other.log_offset);
        self.weight.extend_from_slice(&other.weight);
        self.path_id.extend_from_slice(&other.path_id);
        self.from.extend_from_slice(&other.from);
        self.to.extend_from_slice(&other.to);
        self.time.extend_from_slice(&other.time);
        self.x.extend_from_slice(&other.x);
        Ok(())
    }

    /// Writes the CSV table `z, log_offset, weight, path_id, from_row,
    /// from_col, to_row, to_col, time, <covariates>`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(
            FIXED_COLUMNS
                .iter()
                .copied()
                .chain(self.labels.iter().map(String::as_str)),
        )?;
        let mut rec: Vec<String> = Vec::with_capacity(FIXED_COLUMNS.len() + self.n_columns());
        for row in self.rows() {
            rec.clear();
            rec.push(row.z.to_string());
            rec.push(row.log_offset.to_string());
            rec.push(row.weight.to_string());
            rec.push(row.path_id.to_string());
            rec.push(row.from.0.to_string());
            rec.push(row.from.1.to_string());
            rec.push(row.to.0.to_string());
            rec.push(row.to.1.to_string());
            rec.push(row.time.to_string());
            rec.extend(row.covariates.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        for (i, name) in FIXED_COLUMNS.iter().enumerate() {
            if headers.get(i) != Some(name) {
                return Err(Error::MissingColumn {
                    path: None,
                    column: name.to_string(),
                });
            }
        }
        let labels: Vec<String> = headers.iter().skip(FIXED_COLUMNS.len()).map(String::from).collect();
        let mut out = ExpandedData::empty(labels);
        let mut cov = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let perr = |m: String| Error::Parse {
                path: None,
                line,
                message: m,
            };
            let f = |k: usize| -> Result<f64> {
                rec[k]
                    .trim()
                    .parse()
                    .map_err(|_| perr(format!("column {}: `{}` is not a number", k + 1, &rec[k])))
            };
            let u = |k: usize| -> Result<u32> {
                rec[k]
                    .trim()
                    .parse()
                    .map_err(|_| perr(format!("column {}: `{}` is not an index", k + 1, &rec[k])))
            };
            cov.clear();
            for k in FIXED_COLUMNS.len()..rec.len() {
                cov.push(f(k)?);
            }
            out.push_row(ExpandedRow {
                z: f(0)?,
                log_offset: f(1)?,
                weight: f(2)?,
                path_id: u(3)?,
                from: (u(4)?, u(5)?),
                to: (u(6)?, u(7)?),
                time: f(8)?,
                covariates: &cov,
            });
        }
        Ok(out)
    }
}

/// Poisson rows for one path: for every sojourn in `c_t` and every valid
/// neighbor `k`, a row with `z = [k == c_{t+1}]`, offset `log tau_t`, and
/// the design row at `(c_t, c_{t-1}, entry time)`. With `censor_final`, a
/// known final residence adds all-zero rows.
pub fn expand(path: &CtmcPath, ctx: &DesignContext, censor_final: bool, path_id: u32) -> Result<ExpandedData> {
    let grid = ctx.grid();
    let geometry = grid.geometry();
    let p = ctx.n_columns();
    let mut out = ExpandedData::empty(ctx.labels().to_vec());
    let rc = |c: CellId| {
        let (r, c) = geometry.row_col(c);
        (r as u32, c as u32)
    };
    let cells = path.cells();
    let mut cov = vec![0.0; p];
    let mut t = path.start_time();
    let n = cells.len();
    for k in 0..n {
        let (tau, next) = if k + 1 < n {
            (path.residence_times()[k], Some(cells[k + 1]))
        } else {
            match path.final_residence() {
                Some(tau) if censor_final && tau >= MIN_SOJOURN => (tau, None),
                _ => break,
            }
        };
        if !(tau > 0.0) {
            return Err(Error::invalid(format!(
                "zero-length sojourn in cell {} at t = {t}",
                cells[k]
            )));
        }
        let state = RowState::new(cells[k], k.checked_sub(1).map(|j| cells[j]), t);
        let neighbors = grid.neighbors(cells[k])?;
        if let Some(next) = next {
            if !neighbors.iter().any(|nb| nb.cell == next) {
                return Err(Error::NotNeighbors {
                    from: cells[k].0,
                    to: next.0,
                });
            }
        }
        let offset = tau.ln();
        for nb in &neighbors {
            ctx.fill_row(state, nb.cell, &mut cov)?;
            out.push_row(ExpandedRow {
                z: if Some(nb.cell) == next { 1.0 } else { 0.0 },
                log_offset: offset,
                weight: 1.0,
                path_id,
                from: rc(cells[k]),
                to: rc(nb.cell),
                time: t,
                covariates: &cov,
            });
        }
        t += tau;
    }
    Ok(out)
}

/// Concatenates `P` expansions and gives every row weight `1/P`.
pub fn stack(expansions: &[ExpandedData]) -> Result<ExpandedData> {
    let first = expansions.first().ok_or_else(|| Error::invalid("nothing to stack"))?;
    let mut out = ExpandedData::empty(first.labels.clone());
    for e in expansions {
        out.append(e)?;
    }
    out.set_weights(1.0 / expansions.len() as f64);
    Ok(out)
}
