//! Exact discretization of piecewise-linear paths onto the raster.

use super::telemetry::ContinuousPath;
use crate::ctmc::CtmcPath;
use crate::error::{Error, Result};
use crate::raster::{CellId, RasterGrid};

/// Sojourns shorter than this are merged away (see [`discretize`]).
pub const MIN_SOJOURN: f64 = 1e-9;

struct Run {
    cells: Vec<CellId>,
    entries: Vec<f64>,
}

/// Converts a continuous path into chain paths on the valid cells of `grid`.
///
/// Cell entry times come from exact intersections of each linear segment
/// with the grid lines; when a segment passes exactly through a cell corner
/// the x-crossing is taken first. Each maximal on-grid run becomes its own
/// path, with the time until it leaves the grid (or the path ends) as the
/// censored final residence.
///
/// Sojourns shorter than [`MIN_SOJOURN`] are merged into the following one:
/// a momentary excursion `a -> b -> a` collapses back into `a`, a tiny first
/// sojourn hands its time to the next cell, and a zero-time pass through a
/// cell corner keeps the intermediate cell with [`MIN_SOJOURN`] borrowed from
/// the next sojourn so consecutive cells remain rook neighbors.
pub fn discretize(path: &ContinuousPath, grid: &RasterGrid) -> Result<Vec<CtmcPath>> {
    let g = grid.geometry();
    let samples = path.samples();
    let state_of = |col: i64, row: i64| -> Option<CellId> {
        if col < 0 || row < 0 {
            return None;
        }
        g.cell_at(row as usize, col as usize).filter(|&c| grid.is_valid(c))
    };
    let to_grid = |x: f64, y: f64| ((x - g.x_origin) / g.cell_size, (y - g.y_origin) / g.cell_size);

    let mut out = Vec::new();
    let mut run: Option<Run> = None;
    let (u0, v0) = to_grid(samples[0].x, samples[0].y);
    let (mut col, mut row) = (u0.floor() as i64, v0.floor() as i64);
    if let Some(c) = state_of(col, row) {
        run = Some(Run {
            cells: vec![c],
            entries: vec![samples[0].t],
        });
    }

    let mut events: Vec<(f64, bool, i64)> = Vec::new();
    for w in samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ua, va) = to_grid(a.x, a.y);
        let (ub, vb) = to_grid(b.x, b.y);
        events.clear();
        // (parameter, is_y, new index)
        if ub > ua {
            for k in (col + 1)..=(ub.floor() as i64) {
                events.push(((k as f64 - ua) / (ub - ua), false, k));
            }
        } else if ub < ua {
            for k in ((ub.floor() as i64 + 1)..=col).rev() {
                events.push(((k as f64 - ua) / (ub - ua), false, k - 1));
            }
        }
        if vb > va {
            for k in (row + 1)..=(vb.floor() as i64) {
                events.push(((k as f64 - va) / (vb - va), true, k));
            }
        } else if vb < va {
            for k in ((vb.floor() as i64 + 1)..=row).rev() {
                events.push(((k as f64 - va) / (vb - va), true, k - 1));
            }
        }
        events.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        for &(s, is_y, idx) in &events {
            let t = a.t + s.clamp(0.0, 1.0) * (b.t - a.t);
            if is_y {
                row = idx;
            } else {
                col = idx;
            }
            match (state_of(col, row), run.as_mut()) {
                (Some(c), Some(r)) => {
                    r.cells.push(c);
                    r.entries.push(t);
                }
                (Some(c), None) => {
                    run = Some(Run {
                        cells: vec![c],
                        entries: vec![t],
                    })
                }
                (None, Some(_)) => {
                    out.push(finish(run.take().expect("run is open"), t)?);
                }
                (None, None) => {}
            }
        }
        debug_assert_eq!((col, row), (ub.floor() as i64, vb.floor() as i64));
    }
    if let Some(r) = run.take() {
        out.push(finish(r, samples[samples.len() - 1].t)?);
    }
    if out.is_empty() {
        return Err(Error::invalid("path never enters a valid grid cell"));
    }
    Ok(out)
}

fn finish(mut run: Run, end: f64) -> Result<CtmcPath> {
    let start = run.entries[0];
    let mut i = 0;
    while i + 1 < run.cells.len() {
        let tau = run.entries[i + 1] - run.entries[i];
        if tau >= MIN_SOJOURN {
            i += 1;
            continue;
        }
        if i == 0 {
            run.cells.remove(0);
            run.entries.remove(0);
            run.entries[0] = start;
        } else if run.cells[i - 1] == run.cells[i + 1] {
            run.cells.drain(i..=i + 1);
            run.entries.drain(i..=i + 1);
            i -= 1;
        } else if i + 2 == run.cells.len() && end - run.entries[i] < 2.0 * MIN_SOJOURN {
            // Too little time left to keep both: the last cell is dropped and
            // the censored remainder stays with cell i.
            run.cells.pop();
            run.entries.pop();
        } else {
            run.entries[i + 1] = run.entries[i] + MIN_SOJOURN;
            i += 1;
        }
    }
    let last = *run.entries.last().expect("run is non-empty");
    let taus = run.entries.windows(2).map(|w| w[1] - w[0]).collect();
    CtmcPath::new(run.cells, taus, start)?.with_final_residence(Some((end - last).max(0.0)))
}
