//! The movement chain itself: rates, jump probabilities, the exact path
//! likelihood, and Gillespie simulation.

use std::io::{Read, Write};

use arrayvec::ArrayVec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covariates::{DesignContext, RowState};
use crate::error::{Error, Result};
use crate::numeric::{dot, CompensatedSum};
use crate::raster::{CellId, GridGeometry, RasterGrid};

/// Embedded chain plus residence times.
///
/// `residence_times[k]` is the completed sojourn in `cells[k]`; the time spent
/// in the last cell, when known, is the censored `final_residence`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcPath {
    cells: Vec<CellId>,
    residence_times: Vec<f64>,
    start_time: f64,
    final_residence: Option<f64>,
}

impl CtmcPath {
    pub fn new(cells: Vec<CellId>, residence_times: Vec<f64>, start_time: f64) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::invalid("a path needs at least one cell"));
        }
        if residence_times.len() + 1 != cells.len() {
            return Err(Error::Dimension {
                expected: cells.len() - 1,
                found: residence_times.len(),
            });
        }
        if !start_time.is_finite() {
            return Err(Error::NonFinite("path start time".into()));
        }
        if let Some(tau) = residence_times.iter().find(|t| !(**t > 0.0) || !t.is_finite()) {
            return Err(Error::invalid(format!(
                "residence times must be positive and finite, got {tau}"
            )));
        }
        if let Some(w) = cells.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("consecutive cells repeat ({})", w[0])));
        }
        Ok(CtmcPath {
            cells,
            residence_times,
            start_time,
            final_residence: None,
        })
    }

    /// Sets the censored time spent in the last cell.
    pub fn with_final_residence(mut self, final_residence: Option<f64>) -> Result<Self> {
        if let Some(t) = final_residence {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(Error::invalid(format!("final residence must be nonnegative, got {t}")));
            }
        }
        self.final_residence = final_residence;
        Ok(self)
    }

    /// Checks that every cell is in the state space of `grid` and that
    /// consecutive cells are rook neighbors.
    pub fn validate_on(&self, grid: &RasterGrid) -> Result<()> {
        for &c in &self.cells {
            if !grid.geometry().contains_cell(c) {
                return Err(Error::InvalidCell(c.0));
            }
            if !grid.is_valid(c) {
                return Err(Error::NoDataCell(c.0));
            }
        }
        for w in self.cells.windows(2) {
            if grid.direction_between(w[0], w[1]).is_none() {
                return Err(Error::NotNeighbors {
                    from: w[0].0,
                    to: w[1].0,
                });
            }
        }
        Ok(())
    }

    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn residence_times(&self) -> &[f64] {
        &self.residence_times
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn final_residence(&self) -> Option<f64> {
        self.final_residence
    }

    pub fn n_transitions(&self) -> usize {
        self.residence_times.len()
    }

    /// Entry time of every cell in the embedded chain.
    pub fn entry_times(&self) -> Vec<f64> {
        let mut t = self.start_time;
        let mut out = Vec::with_capacity(self.cells.len());
        out.push(t);
        for tau in &self.residence_times {
            t += tau;
            out.push(t);
        }
        out
    }

    /// Time of the last jump plus the censored remainder, if known.
    pub fn end_time(&self) -> f64 {
        self.start_time + self.residence_times.iter().sum::<f64>() + self.final_residence.unwrap_or(0.0)
    }

    /// Total residence time per cell of the grid.
    pub fn accumulate_occupancy(&self, occupancy: &mut [f64]) {
        for (c, tau) in self.cells.iter().zip(&self.residence_times) {
            occupancy[c.0] += tau;
        }
        if let (Some(last), Some(tau)) = (self.cells.last(), self.final_residence) {
            occupancy[last.0] += tau;
        }
    }
}

/// Outgoing rates from one cell, in E, N, W, S candidate order.
#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub from: CellId,
    pub candidates: ArrayVec<CellId, 4>,
    pub rates: ArrayVec<f64, 4>,
    pub total_rate: f64,
}

impl RateRow {
    pub fn rate_to(&self, cell: CellId) -> Option<f64> {
        self.candidates.iter().position(|&c| c == cell).map(|i| self.rates[i])
    }

    pub fn is_absorbing(&self) -> bool {
        !(self.total_rate > 0.0)
    }
}

fn check_coefficients(ctx: &DesignContext, coefficients: &[f64]) -> Result<()> {
    if coefficients.len() != ctx.n_columns() {
        return Err(Error::Dimension {
            expected: ctx.n_columns(),
            found: coefficients.len(),
        });
    }
    Ok(())
}

/// Covariate rows for every candidate of `state.cur`, flattened row-major.
pub(crate) fn candidate_rows(ctx: &DesignContext, state: RowState) -> Result<(ArrayVec<CellId, 4>, Vec<f64>)> {
    let p = ctx.n_columns();
    let neighbors = ctx.grid().neighbors(state.cur)?;
    let mut rows = vec![0.0; p * neighbors.len()];
    let mut cells = ArrayVec::new();
    for (n, chunk) in neighbors.iter().zip(rows.chunks_mut(p)) {
        ctx.fill_row(state, n.cell, chunk)?;
        cells.push(n.cell);
    }
    Ok((cells, rows))
}

/// `alpha_ij = exp(x_ij' beta)` for every valid neighbor `j` of `state.cur`.
pub fn transition_rates(ctx: &DesignContext, coefficients: &[f64], state: RowState) -> Result<RateRow> {
    check_coefficients(ctx, coefficients)?;
    let (candidates, rows) = candidate_rows(ctx, state)?;
    let mut rates = ArrayVec::new();
    for row in rows.chunks(ctx.n_columns()) {
        let eta = dot(row, coefficients);
        let rate = eta.exp();
        if !eta.is_finite() || !rate.is_finite() {
            return Err(Error::NonFinite(format!(
                "linear predictor {eta} at cell {}",
                state.cur
            )));
        }
        rates.push(rate);
    }
    let total_rate = rates.iter().sum();
    Ok(RateRow {
        from: state.cur,
        candidates,
        rates,
        total_rate,
    })
}

/// Jump probabilities `alpha_ij / sum_k alpha_ik`.
pub fn transition_probabilities(row: &RateRow) -> Result<Vec<f64>> {
    if row.is_absorbing() {
        return Err(Error::AbsorbingCell(row.from.0));
    }
    Ok(row.rates.iter().map(|r| r / row.total_rate).collect())
}

/// Visits each sojourn with its state, residence time, and realized next cell
/// (`None` for the censored final sojourn).
fn for_each_sojourn(
    path: &CtmcPath,
    censor_final: bool,
    mut f: impl FnMut(RowState, f64, Option<CellId>) -> Result<()>,
) -> Result<()> {
    let cells = path.cells();
    let mut t = path.start_time();
    for (k, &tau) in path.residence_times().iter().enumerate() {
        let prev = k.checked_sub(1).map(|j| cells[j]);
        f(RowState::new(cells[k], prev, t), tau, Some(cells[k + 1]))?;
        t += tau;
    }
    if censor_final {
        if let Some(tau) = path.final_residence().filter(|&t| t > 0.0) {
            let k = cells.len() - 1;
            let prev = k.checked_sub(1).map(|j| cells[j]);
            f(RowState::new(cells[k], prev, t), tau, None)?;
        }
    }
    Ok(())
}

/// Exact log-likelihood of a fully observed path:
/// `sum_t [log alpha(c_t, c_{t+1}) - tau_t sum_k alpha(c_t, k)]`.
///
/// With `censor_final`, a known final residence adds its survival term
/// `-tau_final * sum_k alpha`. A realized move with zero rate gives
/// `f64::NEG_INFINITY`.
pub fn path_log_likelihood(
    path: &CtmcPath,
    ctx: &DesignContext,
    coefficients: &[f64],
    censor_final: bool,
) -> Result<f64> {
    check_coefficients(ctx, coefficients)?;
    let mut sum = CompensatedSum::new();
    let mut impossible = false;
    for_each_sojourn(path, censor_final, |state, tau, next| {
        let row = transition_rates(ctx, coefficients, state)?;
        sum.add(-tau * row.total_rate);
        if let Some(next) = next {
            match row.rate_to(next) {
                Some(rate) if rate > 0.0 => sum.add(rate.ln()),
                _ => impossible = true,
            }
        }
        Ok(())
    })?;
    Ok(if impossible { f64::NEG_INFINITY } else { sum.value() })
}

/// Gradient of [`path_log_likelihood`] with respect to the coefficients.
pub fn path_score(path: &CtmcPath, ctx: &DesignContext, coefficients: &[f64], censor_final: bool) -> Result<Vec<f64>> {
    check_coefficients(ctx, coefficients)?;
    let p = ctx.n_columns();
    let mut score = vec![0.0; p];
    for_each_sojourn(path, censor_final, |state, tau, next| {
        let (cells, rows) = candidate_rows(ctx, state)?;
        for (cell, row) in cells.iter().zip(rows.chunks(p)) {
            let rate = dot(row, coefficients).exp();
            let hit = if Some(*cell) == next { 1.0 } else { 0.0 };
            let w = hit - tau * rate;
            for (s, x) in score.iter_mut().zip(row) {
                *s += w * x;
            }
        }
        if let Some(next) = next {
            if !cells.contains(&next) {
                return Err(Error::NotNeighbors {
                    from: state.cur.0,
                    to: next.0,
                });
            }
        }
        Ok(())
    })?;
    Ok(score)
}

/// A simulated path; `absorbed` marks early termination in a cell with no
/// outgoing rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub path: CtmcPath,
    pub absorbed: bool,
}

/// Gillespie simulation for `duration` time units from `start_cell`.
///
/// Rates are re-evaluated at every jump (entry time, previous cell) and held
/// constant over the sojourn. The time remaining when the clock runs out is
/// stored as the path's censored final residence.
pub fn simulate_path(
    ctx: &DesignContext,
    coefficients: &[f64],
    start_cell: CellId,
    start_time: f64,
    duration: f64,
    seed: u64,
) -> Result<Simulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_path_with_rng(ctx, coefficients, start_cell, start_time, duration, &mut rng)
}

pub fn simulate_path_with_rng<R: Rng + ?Sized>(
    ctx: &DesignContext,
    coefficients: &[f64],
    start_cell: CellId,
    start_time: f64,
    duration: f64,
    rng: &mut R,
) -> Result<Simulation> {
    check_coefficients(ctx, coefficients)?;
    if !(duration >= 0.0) || !duration.is_finite() || !start_time.is_finite() {
        return Err(Error::invalid(format!(
            "invalid simulation window ({start_time}, {duration})"
        )));
    }
    let first = transition_rates(ctx, coefficients, RowState::new(start_cell, None, start_time))?;
    if first.is_absorbing() {
        return Err(Error::AbsorbingCell(start_cell.0));
    }

    let mut cells = vec![start_cell];
    let mut taus = Vec::new();
    let mut elapsed = 0.0;
    let mut prev = None;
    let mut row = first;
    let mut absorbed = false;
    loop {
        let u: f64 = rng.random();
        let tau = -(1.0 - u).ln() / row.total_rate;
        if elapsed + tau > duration {
            break;
        }
        let target = rng.random::<f64>() * row.total_rate;
        let mut acc = 0.0;
        let mut pick = row.candidates.len() - 1;
        for (i, r) in row.rates.iter().enumerate() {
            acc += r;
            if target < acc {
                pick = i;
                break;
            }
        }
        let cur = row.candidates[pick];
        prev = Some(row.from);
        elapsed += tau;
        cells.push(cur);
        taus.push(tau);
        row = transition_rates(ctx, coefficients, RowState::new(cur, prev, start_time + elapsed))?;
        if row.is_absorbing() {
            absorbed = true;
            break;
        }
    }
    let _ = prev;
    let path = CtmcPath::new(cells, taus, start_time)?.with_final_residence(Some(duration - elapsed))?;
    Ok(Simulation { path, absorbed })
}

/// Writes `cell_row,cell_col,entry_time`, one row per cell of the embedded
/// chain. A known end of observation is written as a final row with empty
/// cell fields.
pub fn write_path_csv<W: Write>(path: &CtmcPath, geometry: &GridGeometry, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["cell_row", "cell_col", "entry_time"])?;
    for (c, t) in path.cells().iter().zip(path.entry_times()) {
        let (row, col) = geometry.row_col(*c);
        w.write_record([row.to_string(), col.to_string(), t.to_string()])?;
    }
    if path.final_residence().is_some() {
        w.write_record(["", "", &path.end_time().to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_path_csv<R: Read>(reader: R, geometry: &GridGeometry) -> Result<CtmcPath> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                path: None,
                column: name.to_string(),
            })
    };
    let (ir, ic, it) = (col("cell_row")?, col("cell_col")?, col("entry_time")?);
    let mut cells = Vec::new();
    let mut entries = Vec::new();
    let mut end = None;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let perr = |m: String| Error::Parse {
            path: None,
            line,
            message: m,
        };
        if end.is_some() {
            return Err(perr("rows after the end-of-observation row".into()));
        }
        let t: f64 = rec[it]
            .trim()
            .parse()
            .map_err(|_| perr(format!("bad entry_time `{}`", &rec[it])))?;
        if rec[ir].trim().is_empty() && rec[ic].trim().is_empty() {
            end = Some(t);
            continue;
        }
        let row: usize = rec[ir]
            .trim()
            .parse()
            .map_err(|_| perr(format!("bad cell_row `{}`", &rec[ir])))?;
        let c: usize = rec[ic]
            .trim()
            .parse()
            .map_err(|_| perr(format!("bad cell_col `{}`", &rec[ic])))?;
        let cell = geometry
            .cell_at(row, c)
            .ok_or_else(|| perr(format!("cell ({row}, {c}) is outside the grid")))?;
        cells.push(cell);
        entries.push(t);
    }
    let start = *entries
        .first()
        .ok_or_else(|| Error::invalid("path file has no cells"))?;
    let taus = entries.windows(2).map(|w| w[1] - w[0]).collect();
    let final_residence = end.map(|e| e - entries[entries.len() - 1]);
    CtmcPath::new(cells, taus, start)?.with_final_residence(final_residence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::{LayerTerm, Layers, ModelSpec};

    fn grid(n: usize) -> RasterGrid {
        RasterGrid::filled(GridGeometry::new(n, n, 0.0, 0.0, 1.0).unwrap(), 0.0).unwrap()
    }

    fn intercept_ctx(n: usize) -> DesignContext {
        DesignContext::new(ModelSpec::default(), grid(n), &Layers::new(), None).unwrap()
    }

    #[test]
    fn rates_with_zero_and_log2_intercept() {
        let ctx = intercept_ctx(3);
        let row = transition_rates(&ctx, &[0.0], RowState::new(CellId(4), None, 0.0)).unwrap();
        assert_eq!(row.rates.as_slice(), &[1.0; 4]);
        let row = transition_rates(&ctx, &[2f64.ln()], RowState::new(CellId(4), None, 0.0)).unwrap();
        assert!(row.rates.iter().all(|r| (r - 2.0).abs() < 1e-15));
        assert!((row.total_rate - 8.0).abs() < 1e-14);
        assert!(matches!(
            transition_rates(&ctx, &[0.0, 1.0], RowState::new(CellId(4), None, 0.0)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn directional_rates() {
        let g = grid(3);
        let mut layers = Layers::new();
        layers.insert("x".into(), RasterGrid::from_fn(*g.geometry(), |x, _| Some(x)).unwrap());
        let spec = ModelSpec {
            intercept: false,
            directional: vec![LayerTerm::new("x", "gamma")],
            ..Default::default()
        };
        let ctx = DesignContext::new(spec, g, &layers, None).unwrap();
        let row = transition_rates(&ctx, &[1.0], RowState::new(CellId(4), None, 0.0)).unwrap();
        let e = std::f64::consts::E;
        let expect = [e, 1.0, 1.0 / e, 1.0];
        for (r, x) in row.rates.iter().zip(expect) {
            assert!((r - x).abs() < 1e-14);
        }
    }

    #[test]
    fn probabilities() {
        let mut row = transition_rates(&intercept_ctx(3), &[0.3], RowState::new(CellId(4), None, 0.0)).unwrap();
        let p = transition_probabilities(&row).unwrap();
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));

        row.candidates.truncate(3);
        row.rates = [2.0, 1.0, 1.0].into_iter().collect();
        row.total_rate = 4.0;
        assert_eq!(transition_probabilities(&row).unwrap(), vec![0.5, 0.25, 0.25]);
        let scaled = RateRow {
            rates: row.rates.iter().map(|r| r * 7.5).collect(),
            total_rate: 30.0,
            ..row.clone()
        };
        assert_eq!(transition_probabilities(&scaled).unwrap(), vec![0.5, 0.25, 0.25]);

        row.rates = [0.0; 3].into_iter().collect();
        row.total_rate = 0.0;
        assert!(matches!(transition_probabilities(&row), Err(Error::AbsorbingCell(4))));
    }

    #[test]
    fn log_likelihood_examples() {
        let ctx = intercept_ctx(3);
        let path = CtmcPath::new(vec![CellId(4), CellId(5)], vec![0.3], 0.0).unwrap();
        // log 4 - 4 * 0.3 + log(1/4)
        let ll = path_log_likelihood(&path, &ctx, &[0.0], false).unwrap();
        assert!((ll + 1.2).abs() < 1e-14);

        let single = CtmcPath::new(vec![CellId(4)], vec![], 0.0).unwrap();
        assert_eq!(path_log_likelihood(&single, &ctx, &[0.7], false).unwrap(), 0.0);

        // Doubling rates and halving tau: log 2 + log 1 - 8 * 0.15 vs 0 - 4 * 0.3.
        let halved = CtmcPath::new(vec![CellId(4), CellId(5)], vec![0.15], 0.0).unwrap();
        let ll2 = path_log_likelihood(&halved, &ctx, &[2f64.ln()], false).unwrap();
        assert!((ll2 - ll - 2f64.ln()).abs() < 1e-14);

        let censored = path.clone().with_final_residence(Some(0.5)).unwrap();
        let llc = path_log_likelihood(&censored, &ctx, &[0.0], true).unwrap();
        // cell 5 is an edge cell with three neighbors
        assert!((llc - (ll - 3.0 * 0.5)).abs() < 1e-14);
        assert_eq!(path_log_likelihood(&censored, &ctx, &[0.0], false).unwrap(), ll);
    }

    #[test]
    fn impossible_transition_is_negative_infinity() {
        let ctx = intercept_ctx(3);
        let path = CtmcPath::new(vec![CellId(4), CellId(8)], vec![0.3], 0.0).unwrap();
        assert_eq!(
            path_log_likelihood(&path, &ctx, &[0.0], false).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn score_matches_finite_differences() {
        let g = grid(5);
        let mut layers = Layers::new();
        layers.insert(
            "s".into(),
            RasterGrid::from_fn(*g.geometry(), |x, y| Some((x * 0.7).sin() + y * 0.1)).unwrap(),
        );
        let spec = ModelSpec {
            motility: vec![LayerTerm::new("s", "m")],
            directional: vec![LayerTerm::new("s", "d")],
            autocovariate: Some(crate::covariates::AutocovariateTerm { label: "rho".into() }),
            ..Default::default()
        };
        let ctx = DesignContext::new(spec, g, &layers, None).unwrap();
        let sim = simulate_path(&ctx, &[0.2, 0.4, -0.5, 0.3], CellId(12), 0.0, 20.0, 9).unwrap();
        let beta = [0.1, -0.3, 0.6, 0.2];
        let score = path_score(&sim.path, &ctx, &beta, true).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut up = beta;
            let mut dn = beta;
            up[j] += h;
            dn[j] -= h;
            let fd = (path_log_likelihood(&sim.path, &ctx, &up, true).unwrap()
                - path_log_likelihood(&sim.path, &ctx, &dn, true).unwrap())
                / (2.0 * h);
            assert!(
                (score[j] - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "{j}: {} vs {fd}",
                score[j]
            );
        }
    }

    #[test]
    fn simulation_is_reproducible_and_valid() {
        let ctx = intercept_ctx(6);
        let a = simulate_path(&ctx, &[0.0], CellId(14), 2.0, 50.0, 42).unwrap();
        let b = simulate_path(&ctx, &[0.0], CellId(14), 2.0, 50.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(!a.absorbed);
        a.path.validate_on(ctx.grid()).unwrap();
        assert!((a.path.end_time() - 52.0).abs() < 1e-9);

        let zero = simulate_path(&ctx, &[0.0], CellId(14), 0.0, 0.0, 1).unwrap();
        assert_eq!(zero.path.cells(), &[CellId(14)]);
        assert_eq!(zero.path.final_residence(), Some(0.0));
    }

    #[test]
    fn absorbing_start_is_rejected() {
        let mut g = grid(3);
        for c in [1, 3, 5, 7] {
            g.set(CellId(c), None);
        }
        let ctx = DesignContext::new(ModelSpec::default(), g, &Layers::new(), None).unwrap();
        assert!(matches!(
            simulate_path(&ctx, &[0.0], CellId(4), 0.0, 1.0, 0),
            Err(Error::AbsorbingCell(4))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let ctx = intercept_ctx(4);
        let sim = simulate_path(&ctx, &[0.0], CellId(5), 1.5, 10.0, 3).unwrap();
        let g = *ctx.grid().geometry();
        let mut buf = Vec::new();
        write_path_csv(&sim.path, &g, &mut buf).unwrap();
        let back = read_path_csv(buf.as_slice(), &g).unwrap();
        assert_eq!(back.cells(), sim.path.cells());
        for (a, b) in back.entry_times().iter().zip(sim.path.entry_times()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((back.end_time() - sim.path.end_time()).abs() < 1e-12);
    }
}
