//! Weighted Poisson IRLS with an optional quadratic penalty.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::glm::{accumulate, spd_factor, validate_data, Accumulated};
use super::lasso::{fit_lasso, LassoOptions};
use super::wald::wald_tests;
use crate::covariates::INTERCEPT_LABEL;
use crate::error::{Error, Result};
use crate::pipeline::ExpandedData;

/// Coefficients with absolute value above this are taken as separation.
pub const SEPARATION_THRESHOLD: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    MaxIterations,
    /// Some coefficient exceeded [`SEPARATION_THRESHOLD`].
    Separation,
    /// No further ascent was possible before the tolerances were met.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub status: FitStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    None,
    Quadratic,
    L1,
}

/// Penalty added to the weighted Poisson log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub enum Penalty {
    None,
    /// `(lambda / 2) beta' omega beta`; `omega` must be symmetric PSD.
    Quadratic {
        lambda: f64,
        omega: DMatrix<f64>,
    },
    /// `lambda * sum |beta_j|` over columns with `penalized[j]`, on the
    /// standardized scale.
    L1 {
        lambda: f64,
        penalized: Vec<bool>,
    },
}

impl Penalty {
    pub fn kind(&self) -> PenaltyKind {
        match self {
            Penalty::None => PenaltyKind::None,
            Penalty::Quadratic { .. } => PenaltyKind::Quadratic,
            Penalty::L1 { .. } => PenaltyKind::L1,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            Penalty::None => None,
            Penalty::Quadratic { lambda, .. } | Penalty::L1 { lambda, .. } => Some(*lambda),
        }
    }

    pub(crate) fn validate(&self, labels: &[String]) -> Result<()> {
        let p = labels.len();
        let intercept = labels.iter().position(|l| l == INTERCEPT_LABEL);
        match self {
            Penalty::None => Ok(()),
            Penalty::Quadratic { lambda, omega } => {
                check_lambda(*lambda)?;
                if omega.nrows() != p || omega.ncols() != p {
                    return Err(Error::Dimension {
                        expected: p,
                        found: omega.nrows(),
                    });
                }
                let scale = omega.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
                if (0..p).any(|i| (0..i).any(|j| (omega[(i, j)] - omega[(j, i)]).abs() > 1e-12 * scale)) {
                    return Err(Error::invalid("penalty matrix is not symmetric"));
                }
                if let Some(i) = intercept {
                    if omega.row(i).iter().any(|&v| v != 0.0) {
                        return Err(Error::invalid("the intercept cannot be penalized"));
                    }
                }
                Ok(())
            }
            Penalty::L1 { lambda, penalized } => {
                check_lambda(*lambda)?;
                if penalized.len() != p {
                    return Err(Error::Dimension {
                        expected: p,
                        found: penalized.len(),
                    });
                }
                if intercept.is_some_and(|i| penalized[i]) {
                    return Err(Error::invalid("the intercept cannot be penalized"));
                }
                Ok(())
            }
        }
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "penalty weight must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative change in the penalized objective.
    pub objective_tolerance: f64,
    /// Euclidean norm of the penalized score.
    pub gradient_tolerance: f64,
    pub start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 100,
            objective_tolerance: 1e-10,
            gradient_tolerance: 1e-6,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    /// From the inverse penalized information. For L1 fits these come from
    /// the unpenalized refit on the selected support and are 0 off it.
    pub standard_errors: Vec<f64>,
    /// Weighted log-likelihood at the optimum, without the penalty.
    pub log_likelihood: f64,
    pub penalized_objective: f64,
    pub aic: f64,
    pub penalty: PenaltyKind,
    pub lambda: Option<f64>,
    pub edf: f64,
    pub convergence: Convergence,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.convergence.status == FitStatus::Converged
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.coefficients[i])
    }

    pub fn standard_error(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.standard_errors[i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Flat table `label, estimate, std_error, z, p_value`; undefined tests
    /// are left empty.
    pub fn write_coefficients_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["label", "estimate", "std_error", "z", "p_value"])?;
        for t in wald_tests(self) {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                t.label.clone(),
                t.estimate.to_string(),
                t.std_error.to_string(),
                opt(t.z),
                opt(t.p_value),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Maximizes `sum_r w_r (z_r eta_r - exp(eta_r)) - penalty(beta)` with
/// default [`FitOptions`].
pub fn fit_poisson_weighted(data: &ExpandedData, penalty: &Penalty) -> Result<FitResult> {
    fit_poisson_with(data, penalty, &FitOptions::default())
}

pub fn fit_poisson_with(data: &ExpandedData, penalty: &Penalty, options: &FitOptions) -> Result<FitResult> {
    validate_data(data)?;
    penalty.validate(data.labels())?;
    match penalty {
        Penalty::None => irls(data, None, options),
        Penalty::Quadratic { lambda, omega } => irls(data, Some((*lambda, omega)), options),
        Penalty::L1 { lambda, penalized } => {
            let opts = LassoOptions {
                refit: true,
                ..LassoOptions::default()
            };
            let path = fit_lasso(data, &[*lambda], penalized, &opts)?;
            Ok(path.fits.into_iter().next().map(|f| f.fit).expect("one lambda"))
        }
    }
}

/// Starting value: zero, except an intercept column set to the rate MLE of
/// the intercept-only model.
fn default_start(data: &ExpandedData) -> Vec<f64> {
    let mut beta = vec![0.0; data.n_columns()];
    if let Some(i) = data.labels().iter().position(|l| l == INTERCEPT_LABEL) {
        let events: f64 = data.z().iter().zip(data.weight()).map(|(z, w)| z * w).sum();
        let exposure: f64 = data
            .log_offset()
            .iter()
            .zip(data.weight())
            .map(|(o, w)| w * o.exp())
            .sum();
        if events > 0.0 && exposure > 0.0 {
            beta[i] = (events / exposure).ln();
        }
    }
    beta
}

fn penalized(
    acc: &Accumulated,
    beta: &DVector<f64>,
    pen: Option<(f64, &DMatrix<f64>)>,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    match pen {
        None => (acc.loglik, acc.score.clone(), acc.info.clone()),
        Some((lambda, omega)) => {
            let ob = omega * beta;
            (
                acc.loglik - 0.5 * lambda * beta.dot(&ob),
                &acc.score - lambda * ob,
                &acc.info + lambda * omega,
            )
        }
    }
}

fn irls(data: &ExpandedData, pen: Option<(f64, &DMatrix<f64>)>, options: &FitOptions) -> Result<FitResult> {
    let p = data.n_columns();
    let start = match &options.start {
        Some(s) if s.len() != p => {
            return Err(Error::Dimension {
                expected: p,
                found: s.len(),
            })
        }
        Some(s) => s.clone(),
        None => default_start(data),
    };
    let mut beta = DVector::from_vec(start);
    let mut acc = accumulate(data, beta.as_slice(), true);
    let (mut f, mut grad, mut hess) = penalized(&acc, &beta, pen);
    if !f.is_finite() {
        return Err(Error::NonFinite("objective at the starting value".into()));
    }
    let mut status = FitStatus::MaxIterations;
    let mut iterations = 0;
    for it in 1..=options.max_iterations {
        iterations = it;
        let step = spd_factor(&hess)?.solve(&grad);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &beta + t * &step;
            let acc_c = accumulate(data, cand.as_slice(), true);
            let (f_c, g_c, h_c) = penalized(&acc_c, &cand, pen);
            if f_c.is_finite() && f_c >= f - 1e-13 * (1.0 + f.abs()) {
                accepted = Some((cand, acc_c, f_c, g_c, h_c));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, acc_c, f_c, g_c, h_c)) = accepted else {
            status = if grad.norm() < options.gradient_tolerance {
                FitStatus::Converged
            } else {
                FitStatus::Stalled
            };
            break;
        };
        let rel = (f_c - f).abs() / (f.abs() + 0.1);
        beta = cand;
        acc = acc_c;
        f = f_c;
        grad = g_c;
        hess = h_c;
        if beta.iter().any(|b| b.abs() > SEPARATION_THRESHOLD) {
            log::warn!("coefficient exceeded {SEPARATION_THRESHOLD} in absolute value; likely separation");
            status = FitStatus::Separation;
            break;
        }
        if rel < options.objective_tolerance && grad.norm() < options.gradient_tolerance {
            status = FitStatus::Converged;
            break;
        }
    }
    if status != FitStatus::Converged {
        log::warn!("IRLS stopped without convergence: {status:?} after {iterations} iterations");
    }
    let chol = spd_factor(&hess)?;
    let cov = chol.inverse();
    let standard_errors = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let edf = match pen {
        None => p as f64,
        Some(_) => (&cov * &acc.info).trace(),
    };
    Ok(FitResult {
        labels: data.labels().to_vec(),
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        log_likelihood: acc.loglik,
        penalized_objective: f,
        aic: -2.0 * acc.loglik + 2.0 * edf,
        penalty: if pen.is_some() {
            PenaltyKind::Quadratic
        } else {
            PenaltyKind::None
        },
        lambda: pen.map(|(l, _)| l),
        edf,
        convergence: Convergence {
            iterations,
            gradient_norm: grad.norm(),
            status,
        },
    })
}

/// Penalized objective `loglik - penalty` at `beta`.
pub fn penalized_objective(data: &ExpandedData, beta: &[f64], penalty: &Penalty) -> f64 {
    let ll = accumulate(data, beta, false).loglik;
    match penalty {
        Penalty::None => ll,
        Penalty::Quadratic { lambda, omega } => {
            let b = DVector::from_column_slice(beta);
            ll - 0.5 * lambda * b.dot(&(omega * &b))
        }
        Penalty::L1 { lambda, penalized } => {
            let scales = super::lasso::column_scales(data);
            ll - lambda
                * beta
                    .iter()
                    .zip(penalized)
                    .zip(&scales)
                    .filter(|((_, &pen), _)| pen)
                    .map(|((b, _), s)| (b * s).abs())
                    .sum::<f64>()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(n: usize, beta: &[f64], seed: u64) -> ExpandedData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = beta.len();
        let mut labels = vec![INTERCEPT_LABEL.to_string()];
        labels.extend((1..p).map(|j| format!("x{j}")));
        let mut x = Vec::new();
        let mut z = Vec::new();
        let mut off = Vec::new();
        for _ in 0..n {
            let mut row = vec![1.0];
            row.extend((1..p).map(|_| rng.random::<f64>() * 2.0 - 1.0));
            let o = (rng.random::<f64>() * 2.0).ln();
            let mu = (o + row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()).exp();
            z.push(if rng.random::<f64>() < 1.0 - (-mu).exp() {
                1.0
            } else {
                0.0
            });
            off.push(o);
            x.extend(row);
        }
        ExpandedData::from_arrays(labels, x, z, off, vec![1.0; n]).unwrap()
    }

    #[test]
    fn intercept_only_closed_form() {
        let off = [0.5f64, 1.0, 2.0, 0.25];
        let w = [1.0, 0.5, 2.0, 1.5];
        let z = [1.0, 0.0, 1.0, 1.0];
        let d = ExpandedData::from_arrays(
            vec![INTERCEPT_LABEL.into()],
            vec![1.0; 4],
            z.to_vec(),
            off.iter().map(|t| t.ln()).collect(),
            w.to_vec(),
        )
        .unwrap();
        let fit = fit_poisson_weighted(&d, &Penalty::None).unwrap();
        let events: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
        let exposure: f64 = off.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!(fit.converged());
        assert!((fit.coefficients[0] - (events / exposure).ln()).abs() < 1e-12);
        assert!((fit.standard_errors[0] - events.sqrt().recip()).abs() < 1e-9);
    }

    #[test]
    fn duplicated_rows_with_halved_weights_are_invariant() {
        let d = synthetic(400, &[-0.5, 0.7, -0.3], 1);
        let mut doubled = stack_twice(&d);
        doubled.set_weights(0.5);
        let a = fit_poisson_weighted(&d, &Penalty::None).unwrap();
        let b = fit_poisson_weighted(&doubled, &Penalty::None).unwrap();
        for j in 0..3 {
            assert!((a.coefficients[j] - b.coefficients[j]).abs() < 1e-10);
            assert!((a.standard_errors[j] - b.standard_errors[j]).abs() < 1e-10);
        }
    }

    fn stack_twice(d: &ExpandedData) -> ExpandedData {
        let mut out = d.clone();
        out.append(d).unwrap();
        out
    }

    #[test]
    fn random_starts_reach_the_same_optimum() {
        let d = synthetic(600, &[-0.2, 0.5, 0.4], 2);
        let pen = Penalty::Quadratic {
            lambda: 2.0,
            omega: DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, -0.5, 0.0, -0.5, 1.0]),
        };
        let reference = fit_poisson_weighted(&d, &pen).unwrap();
        assert!(reference.converged());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let start: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let opts = FitOptions {
                start: Some(start),
                ..FitOptions::default()
            };
            let fit = fit_poisson_with(&d, &pen, &opts).unwrap();
            assert!(fit.converged());
            assert!(fit.convergence.gradient_norm < 1e-6);
            for j in 0..3 {
                assert!((fit.coefficients[j] - reference.coefficients[j]).abs() < 1e-6);
            }
        }
        assert!(reference.edf < 3.0 && reference.edf > 1.0);
    }

    #[test]
    fn separated_data_is_flagged_or_uninformative() {
        let d = ExpandedData::from_arrays(
            vec![INTERCEPT_LABEL.into(), "x".into()],
            vec![1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0; 4],
            vec![1.0; 4],
        )
        .unwrap();
        let fit = fit_poisson_weighted(&d, &Penalty::None).unwrap();
        assert!(fit.convergence.status != FitStatus::Converged || fit.standard_errors[1] > 10.0);
    }

    #[test]
    fn penalty_validation() {
        let d = synthetic(50, &[0.0, 0.0], 4);
        let bad = Penalty::Quadratic {
            lambda: 1.0,
            omega: DMatrix::identity(2, 2),
        };
        assert!(fit_poisson_weighted(&d, &bad).is_err());
        let neg = Penalty::Quadratic {
            lambda: -1.0,
            omega: DMatrix::zeros(2, 2),
        };
        assert!(fit_poisson_weighted(&d, &neg).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = synthetic(200, &[-0.5, 0.3], 5);
        let fit = fit_poisson_weighted(&d, &Penalty::None).unwrap();
        assert_eq!(FitResult::from_json(&fit.to_json().unwrap()).unwrap(), fit);
        let mut buf = Vec::new();
        fit.write_coefficients_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,estimate,std_error,z,p_value\nintercept,"));
    }
}
