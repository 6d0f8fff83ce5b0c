//! Second-derivative roughness penalties for spline coefficient blocks.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::covariates::{DesignContext, GroupKind, SplineBasis1D};
use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Golub-Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "at least one node");
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `Omega_ij = integral of phi_i''(t) phi_j''(t)` over the basis domain.
///
/// Each knot span is integrated with `degree + 1` Gauss-Legendre nodes,
/// which is exact for the piecewise polynomial integrand.
pub fn penalty_matrix(basis: &SplineBasis1D) -> Result<DMatrix<f64>> {
    let d = basis.degree();
    if d < 2 {
        return Err(Error::invalid(format!(
            "second-derivative penalty needs degree >= 2, got {d}"
        )));
    }
    let k = basis.n_basis();
    let (nodes, weights) = gauss_legendre(d + 1);
    let mut omega = DMatrix::zeros(k, k);
    for span in basis.breakpoints().windows(2) {
        let (a, b) = (span[0], span[1]);
        let half = 0.5 * (b - a);
        for (x, w) in nodes.iter().zip(&weights) {
            let t = a + half * (x + 1.0);
            let d2 = basis.derivative(t, 2)?;
            for i in 0..k {
                if d2[i] == 0.0 {
                    continue;
                }
                for j in 0..k {
                    omega[(i, j)] += w * half * d2[i] * d2[j];
                }
            }
        }
    }
    Ok(omega)
}

/// Block-diagonal penalty over the whole design: one [`penalty_matrix`] per
/// varying-coefficient term, zero elsewhere.
pub fn design_penalty(ctx: &DesignContext) -> Result<DMatrix<f64>> {
    let p = ctx.n_columns();
    let mut omega = DMatrix::zeros(p, p);
    for g in ctx.groups() {
        if let GroupKind::Varying { basis, .. } = &g.kind {
            let block = penalty_matrix(basis)?;
            omega
                .view_mut((g.columns.start, g.columns.start), (block.nrows(), block.ncols()))
                .copy_from(&block);
        }
    }
    Ok(omega)
}

/// L1 mask selecting the motility and potential surface coefficients.
pub fn surface_penalty_mask(ctx: &DesignContext) -> Vec<bool> {
    let mut mask = vec![false; ctx.n_columns()];
    for g in ctx.groups() {
        if matches!(g.kind, GroupKind::SurfaceMotility | GroupKind::SurfacePotential) {
            mask[g.columns.clone()].fill(true);
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(4);
        for deg in 0..8 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn linear_null_space_and_psd() {
        let basis = SplineBasis1D::uniform(0.0, 3.0, 9, 3).unwrap();
        let omega = penalty_matrix(&basis).unwrap();
        let g = basis.greville();
        for coefs in [vec![1.0; 9], g.clone(), g.iter().map(|t| 2.0 - 0.5 * t).collect()] {
            let v = nalgebra::DVector::from_vec(coefs);
            assert!(v.dot(&(&omega * &v)).abs() < 1e-10);
        }
        let eig = SymmetricEigen::new(omega.clone());
        assert!(eig.eigenvalues.min() > -1e-10);
        assert!((omega.clone() - omega.transpose()).amax() < 1e-14);
    }

    #[test]
    fn quadratic_curvature() {
        let basis = SplineBasis1D::uniform(0.0, 2.0, 6, 3).unwrap();
        let omega = penalty_matrix(&basis).unwrap();
        let pts: Vec<f64> = (0..6).map(|i| 2.0 * i as f64 / 5.0).collect();
        let mut a = nalgebra::DMatrix::zeros(6, 6);
        for (r, t) in pts.iter().enumerate() {
            for (c, v) in basis.evaluate(*t).unwrap().iter().enumerate() {
                a[(r, c)] = *v;
            }
        }
        let rhs = nalgebra::DVector::from_iterator(6, pts.iter().map(|t| t * t));
        let c = a.lu().solve(&rhs).unwrap();
        assert!((c.dot(&(&omega * &c)) - 8.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_low_degree() {
        assert!(penalty_matrix(&SplineBasis1D::uniform(0.0, 1.0, 4, 1).unwrap()).is_err());
    }
}
