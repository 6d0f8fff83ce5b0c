//! L1-penalized weighted Poisson regression by coordinate descent.

use nalgebra::{DMatrix, DVector};

use super::fit::{
    check_lambda, fit_poisson_weighted, Convergence, FitResult, FitStatus, Penalty, PenaltyKind, SEPARATION_THRESHOLD,
};
use super::glm::{accumulate, validate_data};
use crate::covariates::INTERCEPT_LABEL;
use crate::error::{Error, Result};
use crate::pipeline::ExpandedData;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoOptions {
    /// Outer (quadratic approximation) iterations per lambda.
    pub max_iterations: usize,
    /// Coordinate sweeps per quadratic approximation.
    pub max_sweeps: usize,
    /// Coordinate updates stop once the largest change is below this.
    pub coordinate_tolerance: f64,
    /// Outer iterations stop once the KKT residual is below this.
    pub kkt_tolerance: f64,
    /// Refit the selected support without penalty to obtain standard errors.
    pub refit: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            max_iterations: 100,
            max_sweeps: 10_000,
            coordinate_tolerance: 1e-8,
            kkt_tolerance: 1e-7,
            refit: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    /// Penalized estimates. `convergence.gradient_norm` holds the KKT
    /// residual and `edf` the number of nonzero coefficients.
    pub fit: FitResult,
    /// Unpenalized fit on the selected support, when requested.
    pub refit: Option<FitResult>,
    pub kkt_residual: f64,
    pub n_nonzero: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    pub lambda_max: f64,
    pub fits: Vec<LassoFit>,
}

/// Weighted means and standard deviations of the columns. Centering is only
/// applied when an intercept column is present.
pub(crate) struct Standardization {
    intercept: Option<usize>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl Standardization {
    fn new(data: &ExpandedData) -> Self {
        let p = data.n_columns();
        let intercept = data.labels().iter().position(|l| l == INTERCEPT_LABEL);
        let w = data.weight();
        let total: f64 = w.iter().sum();
        let mut means = vec![0.0; p];
        for (r, wr) in w.iter().enumerate() {
            for (m, x) in means.iter_mut().zip(data.covariate_row(r)) {
                *m += wr * x;
            }
        }
        means.iter_mut().for_each(|m| *m /= total);
        let mut vars = vec![0.0; p];
        for (r, wr) in w.iter().enumerate() {
            for ((v, x), m) in vars.iter_mut().zip(data.covariate_row(r)).zip(&means) {
                *v += wr * (x - m) * (x - m);
            }
        }
        let scales = vars
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let s = (v / total).sqrt();
                if Some(j) == intercept || !(s > 1e-12) {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        if intercept.is_none() {
            means.fill(0.0);
        }
        if let Some(i) = intercept {
            means[i] = 0.0;
        }
        Standardization {
            intercept,
            means,
            scales,
        }
    }

    /// `T` with `beta = T b` for standardized coefficients `b`.
    fn transform(&self) -> DMatrix<f64> {
        let p = self.scales.len();
        let mut t = DMatrix::zeros(p, p);
        for j in 0..p {
            t[(j, j)] = 1.0 / self.scales[j];
            if let Some(i) = self.intercept {
                if i != j {
                    t[(i, j)] = -self.means[j] / self.scales[j];
                }
            }
        }
        t
    }

    fn to_standardized(&self, beta: &[f64]) -> DVector<f64> {
        let mut b = DVector::from_iterator(beta.len(), beta.iter().zip(&self.scales).map(|(b, s)| b * s));
        if let Some(i) = self.intercept {
            b[i] = beta[i] + beta.iter().zip(&self.means).map(|(b, m)| b * m).sum::<f64>();
        }
        b
    }
}

pub(crate) fn column_scales(data: &ExpandedData) -> Vec<f64> {
    Standardization::new(data).scales
}

fn kkt_residual(gb: &DVector<f64>, b: &DVector<f64>, lambda: f64, penalized: &[bool]) -> f64 {
    (0..b.len())
        .map(|j| {
            if !penalized[j] {
                gb[j].abs()
            } else if b[j] == 0.0 {
                (gb[j].abs() - lambda).max(0.0)
            } else {
                (gb[j] - lambda * b[j].signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

fn unpenalized_start(data: &ExpandedData, penalized: &[bool]) -> Result<Vec<f64>> {
    let free: Vec<usize> = (0..penalized.len()).filter(|&j| !penalized[j]).collect();
    let mut beta = vec![0.0; penalized.len()];
    if free.is_empty() {
        return Ok(beta);
    }
    let fit = fit_poisson_weighted(&data.select_columns(&free)?, &Penalty::None)?;
    for (k, &j) in free.iter().enumerate() {
        beta[j] = fit.coefficients[k];
    }
    Ok(beta)
}

fn check_mask(data: &ExpandedData, penalized: &[bool]) -> Result<()> {
    if penalized.len() != data.n_columns() {
        return Err(Error::Dimension {
            expected: data.n_columns(),
            found: penalized.len(),
        });
    }
    if data
        .labels()
        .iter()
        .position(|l| l == INTERCEPT_LABEL)
        .is_some_and(|i| penalized[i])
    {
        return Err(Error::invalid("the intercept cannot be penalized"));
    }
    Ok(())
}

/// Largest absolute standardized score of a penalized column at the fit
/// with all penalized coefficients at zero; every `lambda >= lambda_max`
/// gives an all-zero penalized solution.
pub fn lambda_max(data: &ExpandedData, penalized: &[bool]) -> Result<f64> {
    validate_data(data)?;
    check_mask(data, penalized)?;
    let beta = unpenalized_start(data, penalized)?;
    let st = Standardization::new(data);
    let gb = st.transform().transpose() * accumulate(data, &beta, false).score;
    Ok((0..gb.len())
        .filter(|&j| penalized[j])
        .map(|j| gb[j].abs())
        .fold(0.0, f64::max))
}

/// `n` log-spaced values from `lambda_max` down to `min_ratio * lambda_max`.
pub fn lambda_grid(lambda_max: f64, n: usize, min_ratio: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => (0..n)
            .map(|i| lambda_max * min_ratio.powf(i as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Solution path over a nonincreasing `lambdas` grid with warm starts.
///
/// Maximizes `loglik(beta) - lambda * sum_j |s_j beta_j|` over penalized
/// columns `j`, where `s_j` is the weighted standard deviation of column `j`.
/// Each outer iteration forms the quadratic approximation at the current
/// estimate and solves it by cyclic coordinate descent with soft
/// thresholding; the step is halved if the penalized objective decreases.
pub fn fit_lasso(
    data: &ExpandedData,
    lambdas: &[f64],
    penalized: &[bool],
    options: &LassoOptions,
) -> Result<LassoPath> {
    validate_data(data)?;
    check_mask(data, penalized)?;
    if lambdas.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    for l in lambdas {
        check_lambda(*l)?;
    }
    if lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("lambda grid must be nonincreasing"));
    }
    let p = data.n_columns();
    let st = Standardization::new(data);
    let t = st.transform();
    let tt = t.transpose();
    let start = unpenalized_start(data, penalized)?;
    let lmax = {
        let gb = &tt * accumulate(data, &start, false).score;
        (0..p)
            .filter(|&j| penalized[j])
            .map(|j| gb[j].abs())
            .fold(0.0, f64::max)
    };
    let mut b = st.to_standardized(&start);
    let mut fits = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let penalty = |b: &DVector<f64>| lambda * (0..p).filter(|&j| penalized[j]).map(|j| b[j].abs()).sum::<f64>();
        let mut status = FitStatus::MaxIterations;
        let mut iterations = 0;
        let (mut loglik, mut kkt);
        loop {
            let beta = &t * &b;
            let acc = accumulate(data, beta.as_slice(), true);
            let gb = &tt * &acc.score;
            let hb = &tt * &acc.info * &t;
            loglik = acc.loglik;
            kkt = kkt_residual(&gb, &b, lambda, penalized);
            if kkt < options.kkt_tolerance {
                status = FitStatus::Converged;
                break;
            }
            if iterations == options.max_iterations {
                break;
            }
            iterations += 1;
            let u = coordinate_descent(&gb, &hb, &b, lambda, penalized, options);
            let f = loglik - penalty(&b);
            let dir = &u - &b;
            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &b + step * &dir;
                let f_c = accumulate(data, (&t * &cand).as_slice(), false).loglik - penalty(&cand);
                if f_c.is_finite() && f_c >= f - 1e-13 * (1.0 + f.abs()) {
                    b = cand;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                status = FitStatus::Stalled;
                break;
            }
            if (&t * &b).iter().any(|v| v.abs() > SEPARATION_THRESHOLD) {
                status = FitStatus::Separation;
                break;
            }
        }
        if status != FitStatus::Converged {
            log::warn!("lasso at lambda = {lambda} stopped without convergence: {status:?} (KKT residual {kkt:e})");
        }
        let beta: Vec<f64> = (&t * &b).iter().copied().collect();
        let n_nonzero = beta.iter().filter(|&&v| v != 0.0).count();
        let mut fit = FitResult {
            labels: data.labels().to_vec(),
            coefficients: beta.clone(),
            standard_errors: vec![0.0; p],
            log_likelihood: loglik,
            penalized_objective: loglik - penalty(&b),
            aic: -2.0 * loglik + 2.0 * n_nonzero as f64,
            penalty: PenaltyKind::L1,
            lambda: Some(lambda),
            edf: n_nonzero as f64,
            convergence: Convergence {
                iterations,
                gradient_norm: kkt,
                status,
            },
        };
        let refit = if options.refit {
            refit_support(data, &beta, penalized)
        } else {
            None
        };
        if let Some(r) = &refit {
            let support = support_columns(&beta, penalized);
            for (k, &j) in support.iter().enumerate() {
                fit.standard_errors[j] = r.standard_errors[k];
            }
        }
        fits.push(LassoFit {
            fit,
            refit,
            kkt_residual: kkt,
            n_nonzero,
        });
    }
    Ok(LassoPath { lambda_max: lmax, fits })
}

fn support_columns(beta: &[f64], penalized: &[bool]) -> Vec<usize> {
    (0..beta.len()).filter(|&j| !penalized[j] || beta[j] != 0.0).collect()
}

fn refit_support(data: &ExpandedData, beta: &[f64], penalized: &[bool]) -> Option<FitResult> {
    let support = support_columns(beta, penalized);
    if support.is_empty() {
        return None;
    }
    match data
        .select_columns(&support)
        .and_then(|d| fit_poisson_weighted(&d, &Penalty::None))
    {
        Ok(fit) => Some(fit),
        Err(e) => {
            log::warn!("unpenalized refit on the selected support failed: {e}");
            None
        }
    }
}

/// Maximizes `g'(u - b) - (u - b)'H(u - b)/2 - lambda * sum |u_j|` over `u`.
fn coordinate_descent(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    penalized: &[bool],
    options: &LassoOptions,
) -> DVector<f64> {
    let p = b.len();
    let mut u = b.clone();
    let mut q = DVector::<f64>::zeros(p);
    let update = |j: usize, u: &mut DVector<f64>, q: &mut DVector<f64>| -> f64 {
        let hjj = h[(j, j)];
        let new = if hjj <= 0.0 {
            if penalized[j] {
                0.0
            } else {
                u[j]
            }
        } else {
            let r = g[j] - q[j] + hjj * u[j];
            if penalized[j] {
                soft_threshold(r, lambda) / hjj
            } else {
                r / hjj
            }
        };
        let delta = new - u[j];
        if delta != 0.0 {
            u[j] = new;
            q.axpy(delta, &h.column(j), 1.0);
        }
        delta.abs() * hjj.max(1.0)
    };
    let mut sweeps = 0;
    while sweeps < options.max_sweeps {
        sweeps += 1;
        let mut max_change = (0..p).map(|j| update(j, &mut u, &mut q)).fold(0.0, f64::max);
        if max_change < options.coordinate_tolerance {
            break;
        }
        let active: Vec<usize> = (0..p).filter(|&j| !penalized[j] || u[j] != 0.0).collect();
        while max_change >= options.coordinate_tolerance && sweeps < options.max_sweeps {
            sweeps += 1;
            max_change = active.iter().map(|&j| update(j, &mut u, &mut q)).fold(0.0, f64::max);
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(n: usize, p: usize, seed: u64) -> ExpandedData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels = vec![INTERCEPT_LABEL.to_string()];
        labels.extend((1..p).map(|j| format!("x{j}")));
        let truth: Vec<f64> = (0..p)
            .map(|j| {
                if j == 0 {
                    -0.5
                } else if j <= 3 {
                    0.6
                } else {
                    0.0
                }
            })
            .collect();
        let (mut x, mut z) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let mut row = vec![1.0];
            row.extend((1..p).map(|j| (rng.random::<f64>() - 0.5) * j as f64 * 0.5 + 0.3));
            let mu = row.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>().exp();
            z.push(if rng.random::<f64>() < 1.0 - (-mu).exp() {
                1.0
            } else {
                0.0
            });
            x.extend(row);
        }
        ExpandedData::from_arrays(labels, x, z, vec![0.0; n], vec![1.0; n]).unwrap()
    }

    fn mask(p: usize) -> Vec<bool> {
        (0..p).map(|j| j > 0).collect()
    }

    #[test]
    fn zero_lambda_matches_irls() {
        let d = synthetic(500, 4, 1);
        let lasso = fit_lasso(&d, &[0.0], &mask(4), &LassoOptions::default()).unwrap();
        let irls = fit_poisson_weighted(&d, &Penalty::None).unwrap();
        for j in 0..4 {
            assert!((lasso.fits[0].fit.coefficients[j] - irls.coefficients[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn above_lambda_max_is_exactly_zero() {
        let d = synthetic(300, 5, 2);
        let m = mask(5);
        let lmax = lambda_max(&d, &m).unwrap();
        let path = fit_lasso(&d, &[lmax * 1.5, lmax], &m, &LassoOptions::default()).unwrap();
        assert!((path.lambda_max - lmax).abs() < 1e-12 * lmax);
        for f in &path.fits {
            assert!(f.fit.coefficients[1..].iter().all(|&b| b == 0.0));
            assert!(f.fit.converged());
        }
    }

    #[test]
    fn kkt_along_path_and_refit() {
        let d = synthetic(800, 8, 3);
        let m = mask(8);
        let grid = lambda_grid(lambda_max(&d, &m).unwrap(), 15, 1e-3);
        let opts = LassoOptions {
            refit: true,
            ..LassoOptions::default()
        };
        let path = fit_lasso(&d, &grid, &m, &opts).unwrap();
        for f in &path.fits {
            assert!(f.kkt_residual < 1e-6, "{}", f.kkt_residual);
            assert!(f.fit.converged());
            let refit = f.refit.as_ref().unwrap();
            assert_eq!(refit.coefficients.len(), f.n_nonzero.max(1));
        }
        assert!(path.fits.last().unwrap().n_nonzero > path.fits[0].n_nonzero);
    }

    #[test]
    fn rejects_increasing_grid_and_penalized_intercept() {
        let d = synthetic(50, 3, 4);
        assert!(fit_lasso(&d, &[0.1, 0.2], &mask(3), &LassoOptions::default()).is_err());
        assert!(fit_lasso(&d, &[0.1], &[true, true, true], &LassoOptions::default()).is_err());
    }
}
