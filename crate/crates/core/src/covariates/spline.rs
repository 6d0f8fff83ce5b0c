//! Clamped B-spline bases in one and two dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A B-spline basis given by its full knot vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis1D {
    degree: usize,
    knots: Vec<f64>,
}

impl SplineBasis1D {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::invalid(format!(
                "a degree-{degree} basis needs at least {} knots, got {}",
                2 * (degree + 1),
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::NonFinite("spline knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("spline knots must be nondecreasing"));
        }
        let basis = SplineBasis1D { degree, knots };
        let (lo, hi) = basis.domain();
        if !(hi > lo) {
            return Err(Error::invalid("spline domain is empty"));
        }
        Ok(basis)
    }

    /// Equally spaced interior knots with `degree + 1` repeated boundary
    /// knots at each end.
    pub fn uniform(t_min: f64, t_max: f64, n_basis: usize, degree: usize) -> Result<Self> {
        if !(t_max > t_min) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::invalid(format!("invalid spline range [{t_min}, {t_max}]")));
        }
        if n_basis < degree + 1 {
            return Err(Error::invalid(format!(
                "a degree-{degree} basis needs at least {} functions, got {n_basis}",
                degree + 1
            )));
        }
        let segments = n_basis - degree;
        let mut knots = Vec::with_capacity(n_basis + degree + 1);
        knots.extend(std::iter::repeat_n(t_min, degree));
        for i in 0..=segments {
            let t = if i == segments {
                t_max
            } else {
                t_min + (t_max - t_min) * i as f64 / segments as f64
            };
            knots.push(t);
        }
        knots.extend(std::iter::repeat_n(t_max, degree));
        SplineBasis1D::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.knots.len() - self.degree - 1])
    }

    pub fn clamp(&self, t: f64) -> f64 {
        let (lo, hi) = self.domain();
        t.clamp(lo, hi)
    }

    /// Distinct knot values bounding the non-empty spans of the domain.
    pub fn breakpoints(&self) -> Vec<f64> {
        let (lo, hi) = self.domain();
        let mut out: Vec<f64> = Vec::new();
        for &k in &self.knots {
            if k >= lo && k <= hi && out.last() != Some(&k) {
                out.push(k);
            }
        }
        out
    }

    /// Basis values at `t`.
    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        self.derivative(t, 0)
    }

    /// Basis values at `t` clamped into the domain.
    pub fn evaluate_clamped(&self, t: f64) -> Vec<f64> {
        self.derivative(self.clamp(t), 0)
            .expect("clamped argument lies in the domain")
    }

    /// `order`-th derivative of every basis function at `t`.
    pub fn derivative(&self, t: f64, order: usize) -> Result<Vec<f64>> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfDomain {
                value: t,
                min: lo,
                max: hi,
            });
        }
        let span = self.find_span(t);
        let ders = self.local_derivatives(span, t, order);
        let mut out = vec![0.0; self.n_basis()];
        let first = span - self.degree;
        out[first..=span].copy_from_slice(&ders[order]);
        Ok(out)
    }

    /// Greville abscissae; coefficients equal to these reproduce `f(t) = t`.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.n_basis())
            .map(|i| {
                if p == 0 {
                    0.5 * (self.knots[i] + self.knots[i + 1])
                } else {
                    self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64
                }
            })
            .collect()
    }

    fn find_span(&self, t: f64) -> usize {
        let n = self.n_basis();
        let p = self.degree;
        if t >= self.knots[n] {
            // last non-empty span
            let mut s = n - 1;
            while s > p && self.knots[s] == self.knots[s + 1] {
                s -= 1;
            }
            return s;
        }
        // largest s in [p, n-1] with knots[s] <= t
        let mut lo = p;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Nonzero basis functions on `span` and their derivatives up to `order`
    /// (rows are derivative orders, columns the `degree + 1` local functions).
    fn local_derivatives(&self, span: usize, t: f64, order: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let u = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; p + 1]; order + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        if order == 0 {
            return ders;
        }
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=order.min(p) {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=order.min(p) {
            for v in ders[k].iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        ders
    }
}

/// Tensor-product basis over a rectangle. Function `(ix, iy)` sits at index
/// `ix * ny + iy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis2D {
    pub x: SplineBasis1D,
    pub y: SplineBasis1D,
}

impl SplineBasis2D {
    pub fn new(x: SplineBasis1D, y: SplineBasis1D) -> Self {
        SplineBasis2D { x, y }
    }

    pub fn n_basis(&self) -> usize {
        self.x.n_basis() * self.y.n_basis()
    }

    /// Values at `(x, y)`, each coordinate clamped into its axis domain.
    pub fn evaluate_clamped(&self, x: f64, y: f64) -> Vec<f64> {
        let bx = self.x.evaluate_clamped(x);
        let by = self.y.evaluate_clamped(y);
        let mut out = Vec::with_capacity(bx.len() * by.len());
        for &vx in &bx {
            for &vy in &by {
                out.push(vx * vy);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_knot_layout() {
        let b = SplineBasis1D::uniform(0.0, 1.0, 6, 3).unwrap();
        assert_eq!(
            b.knots(),
            &[0.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(b.n_basis(), 6);
        assert_eq!(b.domain(), (0.0, 1.0));
        // K = interior knots + degree + 1
        assert_eq!(b.n_basis(), 2 + 3 + 1);
    }

    #[test]
    fn clamped_endpoints() {
        let b = SplineBasis1D::uniform(-2.0, 5.0, 8, 3).unwrap();
        let v = b.evaluate(-2.0).unwrap();
        assert_eq!(v[0], 1.0);
        assert!(v[1..].iter().all(|&x| x == 0.0));
        let v = b.evaluate(5.0).unwrap();
        assert_eq!(v[7], 1.0);
        assert!(v[..7].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_hat_midpoint() {
        let b = SplineBasis1D::uniform(0.0, 4.0, 5, 1).unwrap();
        let v = b.evaluate(1.5).unwrap();
        assert_eq!(v, vec![0.0, 0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn outside_domain_is_an_error() {
        let b = SplineBasis1D::uniform(0.0, 1.0, 5, 3).unwrap();
        assert!(matches!(b.evaluate(1.0 + 1e-9), Err(Error::OutOfDomain { .. })));
        assert!(b.evaluate(f64::NAN).is_err());
        assert_eq!(b.evaluate_clamped(2.0), b.evaluate(1.0).unwrap());
    }

    #[test]
    fn greville_reproduces_identity() {
        let b = SplineBasis1D::uniform(0.0, 3.0, 9, 3).unwrap();
        let g = b.greville();
        for i in 0..=30 {
            let t = i as f64 * 0.1;
            let v = b.evaluate(t).unwrap();
            let f: f64 = v.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!((f - t).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let b = SplineBasis1D::uniform(0.0, 1.0, 7, 3).unwrap();
        let h = 1e-5;
        for &t in &[0.13, 0.41, 0.77] {
            let d1 = b.derivative(t, 1).unwrap();
            let d2 = b.derivative(t, 2).unwrap();
            let lo = b.evaluate(t - h).unwrap();
            let mid = b.evaluate(t).unwrap();
            let hi = b.evaluate(t + h).unwrap();
            for k in 0..b.n_basis() {
                let fd1 = (hi[k] - lo[k]) / (2.0 * h);
                let fd2 = (hi[k] - 2.0 * mid[k] + lo[k]) / (h * h);
                assert!((d1[k] - fd1).abs() < 1e-6, "d1 {k} at {t}");
                assert!((d2[k] - fd2).abs() < 1e-3, "d2 {k} at {t}");
            }
        }
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(SplineBasis1D::new(3, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.5, 1.0, 1.0, 1.0]).is_err());
        assert!(SplineBasis1D::new(3, vec![0.0; 5]).is_err());
        assert!(SplineBasis1D::uniform(1.0, 1.0, 5, 3).is_err());
        assert!(SplineBasis1D::uniform(0.0, 1.0, 3, 3).is_err());
    }

    #[test]
    fn tensor_partition_of_unity() {
        let b = SplineBasis2D::new(
            SplineBasis1D::uniform(0.0, 11.0, 6, 3).unwrap(),
            SplineBasis1D::uniform(0.0, 7.0, 5, 3).unwrap(),
        );
        let v = b.evaluate_clamped(3.3, 6.2);
        assert_eq!(v.len(), 30);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
