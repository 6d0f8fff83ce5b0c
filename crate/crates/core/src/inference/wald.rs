//! Wald tests and Rubin's rules.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::fit::FitResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    /// `None` when the standard error is zero or not finite.
    pub z: Option<f64>,
    pub p_value: Option<f64>,
}

/// `z = estimate / se` with a two-sided normal p-value, per coefficient.
pub fn wald_tests(fit: &FitResult) -> Vec<WaldTest> {
    fit.labels
        .iter()
        .zip(&fit.coefficients)
        .zip(&fit.standard_errors)
        .map(|((label, &estimate), &std_error)| {
            let z = (std_error > 0.0 && std_error.is_finite()).then(|| estimate / std_error);
            WaldTest {
                label: label.clone(),
                estimate,
                std_error,
                z,
                p_value: z.map(|z| erfc(z.abs() / std::f64::consts::SQRT_2)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubinResult {
    pub labels: Vec<String>,
    /// Mean of the per-imputation estimates.
    pub estimates: Vec<f64>,
    /// Mean within-imputation variance `W`.
    pub within: Vec<f64>,
    /// Between-imputation variance `B` (denominator `P - 1`).
    pub between: Vec<f64>,
    /// `W + (1 + 1/P) B`.
    pub total_variance: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub n_imputations: usize,
}

/// Pools `P >= 2` fits with identical labels by Rubin's rules.
pub fn rubin_combine(fits: &[FitResult]) -> Result<RubinResult> {
    let n = fits.len();
    if n < 2 {
        return Err(Error::invalid(format!("pooling needs at least 2 fits, got {n}")));
    }
    let labels = fits[0].labels.clone();
    if let Some(f) = fits.iter().find(|f| f.labels != labels) {
        return Err(Error::ColumnMismatch(format!("{:?} vs {:?}", labels, f.labels)));
    }
    let p = labels.len();
    let pf = n as f64;
    let mut estimates = vec![0.0; p];
    let mut within = vec![0.0; p];
    for f in fits {
        for j in 0..p {
            estimates[j] += f.coefficients[j] / pf;
            within[j] += f.standard_errors[j].powi(2) / pf;
        }
    }
    let between: Vec<f64> = (0..p)
        .map(|j| {
            fits.iter()
                .map(|f| (f.coefficients[j] - estimates[j]).powi(2))
                .sum::<f64>()
                / (pf - 1.0)
        })
        .collect();
    let total_variance: Vec<f64> = within
        .iter()
        .zip(&between)
        .map(|(w, b)| w + (1.0 + 1.0 / pf) * b)
        .collect();
    Ok(RubinResult {
        labels,
        estimates,
        within,
        between,
        standard_errors: total_variance.iter().map(|v| v.sqrt()).collect(),
        total_variance,
        n_imputations: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{Convergence, FitStatus, PenaltyKind};

    fn fit(beta: f64, se: f64) -> FitResult {
        FitResult {
            labels: vec!["a".into()],
            coefficients: vec![beta],
            standard_errors: vec![se],
            log_likelihood: 0.0,
            penalized_objective: 0.0,
            aic: 0.0,
            penalty: PenaltyKind::None,
            lambda: None,
            edf: 1.0,
            convergence: Convergence {
                iterations: 1,
                gradient_norm: 0.0,
                status: FitStatus::Converged,
            },
        }
    }

    #[test]
    fn wald_p_values() {
        assert_eq!(wald_tests(&fit(0.0, 1.0))[0].p_value, Some(1.0));
        let p = wald_tests(&fit(1.96 * 0.3, 0.3))[0].p_value.unwrap();
        assert!((p - 0.05).abs() < 1e-3);
        let undefined = &wald_tests(&fit(1.0, 0.0))[0];
        assert_eq!((undefined.z, undefined.p_value), (None, None));
    }

    #[test]
    fn rubin_two_fits() {
        let r = rubin_combine(&[fit(0.0, 1.0), fit(2.0, 1.0)]).unwrap();
        assert_eq!(r.estimates, vec![1.0]);
        assert_eq!(r.between, vec![2.0]);
        assert_eq!(r.total_variance, vec![4.0]);
    }

    #[test]
    fn rubin_identical_fits() {
        let r = rubin_combine(&[fit(0.7, 0.2), fit(0.7, 0.2), fit(0.7, 0.2)]).unwrap();
        assert!((r.estimates[0] - 0.7).abs() < 1e-15);
        assert_eq!(r.between, vec![0.0]);
        assert!((r.total_variance[0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn rubin_errors() {
        assert!(rubin_combine(&[fit(0.0, 1.0)]).is_err());
        let mut other = fit(0.0, 1.0);
        other.labels = vec!["b".into()];
        assert!(matches!(
            rubin_combine(&[fit(0.0, 1.0), other]),
            Err(Error::ColumnMismatch(_))
        ));
    }
}
