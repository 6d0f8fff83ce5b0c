//! Stochastic imputation of continuous paths between telemetry fixes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::telemetry::{ContinuousPath, Fix, Telemetry};
use crate::error::{Error, Result};

/// Draws one continuous path consistent with the telemetry.
pub trait PathImputer: Sync {
    fn impute(&self, telemetry: &Telemetry, rng: &mut ChaCha8Rng) -> Result<ContinuousPath>;
}

/// Maximum-likelihood scale of isotropic planar Brownian motion observed at
/// the fix times: `sigma^2 = sum |dxy|^2 / dt / (2 (n - 1))`.
pub fn fit_bridge_sigma(telemetry: &Telemetry) -> Result<f64> {
    let fixes = telemetry.fixes();
    if fixes.len() < 3 {
        return Err(Error::invalid(format!(
            "estimating the bridge scale needs at least 3 fixes, got {}",
            fixes.len()
        )));
    }
    let mut acc = 0.0;
    for w in fixes.windows(2) {
        let dt = w[1].t - w[0].t;
        if !(dt > 0.0) {
            return Err(Error::invalid(format!("non-positive time step {dt} between fixes")));
        }
        let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
        acc += (dx * dx + dy * dy) / dt;
    }
    Ok((acc / (2.0 * (fixes.len() - 1) as f64)).sqrt())
}

/// Default sampling step: a twentieth of the shortest fix gap, reduced so a
/// single step has per-axis standard deviation of at most half a cell.
pub fn default_time_step(telemetry: &Telemetry, sigma: f64, cell_size: f64) -> f64 {
    let base = telemetry.min_gap() / 20.0;
    if sigma > 0.0 {
        base.min((cell_size / (2.0 * sigma)).powi(2))
    } else {
        base
    }
}

/// Planar Brownian bridge between consecutive fixes, sampled every
/// `time_step` after each fix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianBridge {
    pub sigma: f64,
    pub time_step: f64,
}

impl BrownianBridge {
    pub fn new(sigma: f64, time_step: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("bridge scale must be nonnegative, got {sigma}")));
        }
        if !(time_step > 0.0) || !time_step.is_finite() {
            return Err(Error::invalid(format!("time step must be positive, got {time_step}")));
        }
        Ok(BrownianBridge { sigma, time_step })
    }
}

impl PathImputer for BrownianBridge {
    fn impute(&self, telemetry: &Telemetry, rng: &mut ChaCha8Rng) -> Result<ContinuousPath> {
        let fixes = telemetry.fixes();
        let mut samples = vec![fixes[0]];
        for w in fixes.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mut cur = a;
            let mut k = 1u64;
            loop {
                let s = a.t + k as f64 * self.time_step;
                if s >= b.t {
                    break;
                }
                // Condition on the previous sample and the end fix.
                let frac = (s - cur.t) / (b.t - cur.t);
                let sd = self.sigma * ((s - cur.t) * (b.t - s) / (b.t - cur.t)).sqrt();
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                cur = Fix::new(
                    cur.x + frac * (b.x - cur.x) + sd * nx,
                    cur.y + frac * (b.y - cur.y) + sd * ny,
                    s,
                );
                samples.push(cur);
                k += 1;
            }
            samples.push(b);
        }
        ContinuousPath::new(samples)
    }
}

/// Deterministic generator for imputation `index` under `seed`.
pub fn imputation_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws `n_paths` independent imputations; path `p` uses stream `p` of the
/// master seed, so output does not depend on scheduling.
pub fn impute_with<I: PathImputer>(
    imputer: &I,
    telemetry: &Telemetry,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<ContinuousPath>> {
    if n_paths == 0 {
        return Err(Error::invalid("number of imputations must be at least 1"));
    }
    (0..n_paths)
        .into_par_iter()
        .map(|p| imputer.impute(telemetry, &mut imputation_rng(seed, p)))
        .collect()
}

/// `n_paths` Brownian-bridge imputations with scale `sigma` on a `time_step`
/// lattice.
pub fn impute_paths(
    telemetry: &Telemetry,
    n_paths: usize,
    time_step: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<ContinuousPath>> {
    impute_with(&BrownianBridge::new(sigma, time_step)?, telemetry, n_paths, seed)
}
