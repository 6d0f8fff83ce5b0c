//! Weighted Poisson log-likelihood, score and information.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::CompensatedSum;
use crate::pipeline::ExpandedData;

const CHUNK_ROWS: usize = 2048;

pub(crate) struct Accumulated {
    pub loglik: f64,
    pub score: DVector<f64>,
    pub info: DMatrix<f64>,
}

struct Partial {
    loglik: CompensatedSum,
    score: Vec<f64>,
    info: Vec<f64>,
}

/// Sums over fixed row chunks, combined in chunk order, so the result does
/// not depend on the thread count.
pub(crate) fn accumulate(data: &ExpandedData, beta: &[f64], with_info: bool) -> Accumulated {
    let p = data.n_columns();
    assert_eq!(beta.len(), p, "coefficient length");
    let n = data.n_rows();
    let x = data.covariates();
    let (z, off, w) = (data.z(), data.log_offset(), data.weight());
    let partials: Vec<Partial> = (0..n.div_ceil(CHUNK_ROWS))
        .into_par_iter()
        .map(|c| {
            let mut part = Partial {
                loglik: CompensatedSum::new(),
                score: vec![0.0; p],
                info: if with_info { vec![0.0; p * p] } else { Vec::new() },
            };
            for r in c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n) {
                let xr = &x[r * p..(r + 1) * p];
                let eta = off[r] + xr.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
                let mu = eta.exp();
                part.loglik.add(w[r] * (z[r] * eta - mu));
                let resid = w[r] * (z[r] - mu);
                for (s, xj) in part.score.iter_mut().zip(xr) {
                    *s += resid * xj;
                }
                if with_info {
                    let wm = w[r] * mu;
                    for j in 0..p {
                        let a = wm * xr[j];
                        if a == 0.0 {
                            continue;
                        }
                        let row = &mut part.info[j * p..j * p + p];
                        for k in j..p {
                            row[k] += a * xr[k];
                        }
                    }
                }
            }
            part
        })
        .collect();
    let mut loglik = CompensatedSum::new();
    let mut score = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    for part in &partials {
        loglik.add(part.loglik.value());
        for j in 0..p {
            score[j] += part.score[j];
        }
        if with_info {
            for j in 0..p {
                for k in j..p {
                    info[(j, k)] += part.info[j * p + k];
                }
            }
        }
    }
    if with_info {
        for j in 0..p {
            for k in 0..j {
                info[(j, k)] = info[(k, j)];
            }
        }
    }
    Accumulated {
        loglik: loglik.value(),
        score,
        info,
    }
}

/// `sum_r w_r (z_r eta_r - exp(eta_r))` with `eta = x beta + offset`.
pub fn poisson_log_likelihood(data: &ExpandedData, beta: &[f64]) -> f64 {
    accumulate(data, beta, false).loglik
}

/// Gradient of [`poisson_log_likelihood`].
pub fn poisson_score(data: &ExpandedData, beta: &[f64]) -> Vec<f64> {
    accumulate(data, beta, false).score.iter().copied().collect()
}

/// Negative Hessian of [`poisson_log_likelihood`], `X' diag(w mu) X`.
pub fn poisson_information(data: &ExpandedData, beta: &[f64]) -> DMatrix<f64> {
    accumulate(data, beta, true).info
}

/// Weighted Poisson deviance `2 sum w (z log(z/mu) - (z - mu))` at `beta`.
pub fn poisson_deviance(data: &ExpandedData, beta: &[f64]) -> f64 {
    let p = data.n_columns();
    let x = data.covariates();
    let mut dev = CompensatedSum::new();
    for r in 0..data.n_rows() {
        let eta = data.log_offset()[r] + x[r * p..(r + 1) * p].iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        let mu = eta.exp();
        let z = data.z()[r];
        let term = if z > 0.0 { z * (z.ln() - eta) } else { 0.0 };
        dev.add(2.0 * data.weight()[r] * (term - (z - mu)));
    }
    dev.value()
}

pub(crate) fn validate_data(data: &ExpandedData) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("no data rows"));
    }
    if data.n_columns() == 0 {
        return Err(Error::invalid("no covariate columns"));
    }
    if let Some(r) = data.z().iter().position(|&z| z != 0.0 && z != 1.0) {
        return Err(Error::invalid(format!("row {r}: response must be 0 or 1")));
    }
    if let Some(r) = data.weight().iter().position(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::invalid(format!("row {r}: weights must be positive and finite")));
    }
    if let Some(r) = data.log_offset().iter().position(|o| !o.is_finite()) {
        return Err(Error::NonFinite(format!("offset in row {r}")));
    }
    if let Some(i) = data.covariates().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("covariate in row {}", i / data.n_columns())));
    }
    Ok(())
}

/// Cholesky factor of a symmetric positive-definite matrix; one retry with
/// `1e-10 * max(1, max diag)` added to the diagonal.
pub(crate) fn spd_factor(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let scale = m.diagonal().iter().fold(1.0f64, |a, d| a.max(d.abs()));
    let mut jittered = m.clone();
    for i in 0..m.nrows() {
        jittered[(i, i)] += 1e-10 * scale;
    }
    jittered
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("matrix is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> ExpandedData {
        ExpandedData::from_arrays(
            vec!["a".into(), "b".into()],
            vec![1.0, 0.5, 1.0, -1.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.0],
            vec![0.1, -0.3, 0.0],
            vec![1.0, 0.5, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn score_and_information_match_finite_differences() {
        let d = data();
        let beta = [0.2, -0.4];
        let g = poisson_score(&d, &beta);
        let h = poisson_information(&d, &beta);
        let eps = 1e-6;
        for j in 0..2 {
            let mut up = beta;
            let mut dn = beta;
            up[j] += eps;
            dn[j] -= eps;
            let fd = (poisson_log_likelihood(&d, &up) - poisson_log_likelihood(&d, &dn)) / (2.0 * eps);
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()));
            let gu = poisson_score(&d, &up);
            let gd = poisson_score(&d, &dn);
            for k in 0..2 {
                let fd = -(gu[k] - gd[k]) / (2.0 * eps);
                assert!((fd - h[(k, j)]).abs() < 1e-6 * (1.0 + h[(k, j)].abs()));
            }
        }
    }

    #[test]
    fn deviance_is_zero_for_saturated_rows() {
        let d = ExpandedData::from_arrays(
            vec!["a".into()],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!(poisson_deviance(&d, &[0.0]).abs() < 1e-15);
    }
}
