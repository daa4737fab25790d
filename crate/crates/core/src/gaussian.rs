//! Exact algebra of one- and two-dimensional Gaussians.
//!
//! This is the primitive layer under all message updates: products and
//! quotients of Gaussian densities, marginalization of a pair Gaussian, and
//! guarded 2x2 inversion. Values are carried in mean/covariance form; the
//! precision-form arithmetic is localized inside the product and quotient
//! routines.
//!
//! Every operation either returns a Gaussian that passes the validity checks
//! (finite parameters, positive variance, symmetric positive-definite
//! covariance) or an error. Invalid intermediate states never propagate as
//! NaN: a quotient whose precision goes non-positive is how divergence of a
//! message-passing sweep becomes observable.

use thiserror::Error;

/// Errors raised by Gaussian algebra.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum GaussianError {
    /// A resulting variance (or covariance eigenvalue) was not strictly
    /// positive, or a parameter was not finite.
    #[error("resulting Gaussian has non-positive variance")]
    NonPositiveVariance,
    /// A 2x2 matrix was numerically singular (|det| below threshold).
    #[error("2x2 matrix is numerically singular")]
    SingularMatrix,
}

/// Symmetric 2x2 matrix, row-major.
pub type Mat2 = [[f64; 2]; 2];

/// Determinant magnitude below which a 2x2 matrix is treated as singular.
const SINGULAR_DET: f64 = 1e-300;

/// A univariate Gaussian N(mean, variance), variance strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian1 {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian1 {
    /// Builds a validated Gaussian.
    pub fn new(mean: f64, variance: f64) -> Result<Self, GaussianError> {
        let g = Gaussian1 { mean, variance };
        if g.is_valid() {
            Ok(g)
        } else {
            Err(GaussianError::NonPositiveVariance)
        }
    }

    pub fn is_valid(&self) -> bool {
        self.mean.is_finite() && self.variance.is_finite() && self.variance > 0.0
    }

    pub fn precision(&self) -> f64 {
        1.0 / self.variance
    }

    /// Standard deviation.
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    /// The same density over the negated variable: N(-mean, variance).
    /// This is the scalar analogue of the pair `flip`; it converts a flow
    /// message between the two orientations of a link (f_ji = -f_ij).
    pub fn negated(&self) -> Gaussian1 {
        Gaussian1 {
            mean: -self.mean,
            variance: self.variance,
        }
    }
}

/// A bivariate Gaussian with symmetric positive-definite covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mean: [f64; 2],
    pub cov: Mat2,
}

impl Gaussian2 {
    /// Builds a validated pair Gaussian. The covariance is symmetrized as
    /// (cov + cov^T)/2 before validation to suppress floating-point drift.
    pub fn new(mean: [f64; 2], cov: Mat2) -> Result<Self, GaussianError> {
        let g = Gaussian2 {
            mean,
            cov: symmetrize(cov),
        };
        if g.is_valid() {
            Ok(g)
        } else {
            Err(GaussianError::NonPositiveVariance)
        }
    }

    pub fn is_valid(&self) -> bool {
        let [[a, b], [c, d]] = self.cov;
        self.mean[0].is_finite()
            && self.mean[1].is_finite()
            && a.is_finite()
            && b.is_finite()
            && c.is_finite()
            && d.is_finite()
            && b == c
            && is_positive_definite(self.cov)
    }

    /// Swaps the two components: flip([a b; c d]) = [d c; b a] on the
    /// covariance and reverses the mean. Converts a pair message between the
    /// two orientations of a link.
    pub fn flipped(&self) -> Gaussian2 {
        Gaussian2 {
            mean: [self.mean[1], self.mean[0]],
            cov: [
                [self.cov[1][1], self.cov[1][0]],
                [self.cov[0][1], self.cov[0][0]],
            ],
        }
    }

    /// Precision matrix and information vector (P = cov^-1, h = P * mean).
    pub(crate) fn to_information(&self) -> Result<(Mat2, [f64; 2]), GaussianError> {
        let p = invert2x2(self.cov)?;
        Ok((p, mat_vec(p, self.mean)))
    }

    /// Recovers moment form from precision matrix and information vector.
    pub(crate) fn from_information(p: Mat2, h: [f64; 2]) -> Result<Self, GaussianError> {
        let cov = invert2x2(p)?;
        Gaussian2::new(mat_vec(cov, h), cov)
    }
}

fn symmetrize(m: Mat2) -> Mat2 {
    let off = 0.5 * (m[0][1] + m[1][0]);
    [[m[0][0], off], [off, m[1][1]]]
}

fn is_positive_definite(m: Mat2) -> bool {
    // Symmetric 2x2: PD iff the leading entry and the determinant are positive.
    m[0][0] > 0.0 && det2(m) > 0.0
}

fn det2(m: Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub(crate) fn mat_vec(m: Mat2, v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub(crate) fn mat_add(a: Mat2, b: Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

pub(crate) fn mat_sub(a: Mat2, b: Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

/// Guarded inverse of a symmetric 2x2 matrix.
///
/// The input is symmetrized first; `SingularMatrix` is returned when the
/// determinant magnitude falls below 1e-300.
pub fn invert2x2(m: Mat2) -> Result<Mat2, GaussianError> {
    let m = symmetrize(m);
    let det = det2(m);
    if !det.is_finite() || det.abs() <= SINGULAR_DET {
        return Err(GaussianError::SingularMatrix);
    }
    let inv_det = 1.0 / det;
    Ok([
        [m[1][1] * inv_det, -m[0][1] * inv_det],
        [-m[1][0] * inv_det, m[0][0] * inv_det],
    ])
}

/// Product of two scalar Gaussian densities, renormalized.
///
/// Precisions add; the mean is the precision-weighted average.
pub fn product1(a: &Gaussian1, b: &Gaussian1) -> Result<Gaussian1, GaussianError> {
    let p = a.precision() + b.precision();
    if !(p.is_finite() && p > 0.0) {
        return Err(GaussianError::NonPositiveVariance);
    }
    let variance = 1.0 / p;
    let mean = variance * (a.mean * a.precision() + b.mean * b.precision());
    Gaussian1::new(mean, variance)
}

/// Quotient of two scalar Gaussian densities, renormalized.
///
/// Requires precision(num) > precision(den); the failure case signals a
/// diverging sweep and the caller aborts.
pub fn quotient1(num: &Gaussian1, den: &Gaussian1) -> Result<Gaussian1, GaussianError> {
    let p = num.precision() - den.precision();
    if !(p.is_finite() && p > 0.0) {
        return Err(GaussianError::NonPositiveVariance);
    }
    let variance = 1.0 / p;
    let mean = variance * (num.mean * num.precision() - den.mean * den.precision());
    Gaussian1::new(mean, variance)
}

/// Product of two pair Gaussians: precision matrices add.
pub fn product2(a: &Gaussian2, b: &Gaussian2) -> Result<Gaussian2, GaussianError> {
    let (pa, ha) = a.to_information()?;
    let (pb, hb) = b.to_information()?;
    let p = mat_add(pa, pb);
    let h = [ha[0] + hb[0], ha[1] + hb[1]];
    Gaussian2::from_information(p, h)
}

/// Quotient of two pair Gaussians: precision matrices subtract.
///
/// The result must be positive definite; otherwise `NonPositiveVariance`.
pub fn quotient2(num: &Gaussian2, den: &Gaussian2) -> Result<Gaussian2, GaussianError> {
    let (pn, hn) = num.to_information()?;
    let (pd, hd) = den.to_information()?;
    let p = mat_sub(pn, pd);
    if !is_positive_definite(symmetrize(p)) {
        return Err(GaussianError::NonPositiveVariance);
    }
    let h = [hn[0] - hd[0], hn[1] - hd[1]];
    Gaussian2::from_information(p, h)
}

/// Marginal of one component of a pair Gaussian: the component mean and the
/// corresponding diagonal covariance entry.
pub fn marginalize2(g: &Gaussian2, index: usize) -> Gaussian1 {
    assert!(index < 2, "pair Gaussian has components 0 and 1");
    Gaussian1 {
        mean: g.mean[index],
        variance: g.cov[index][index],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn g1(mean: f64, var: f64) -> Gaussian1 {
        Gaussian1::new(mean, var).unwrap()
    }

    #[test]
    fn product_absorbs_near_uniform_prior() {
        let r = product1(&g1(0.0, 1e6), &g1(1.0, 1.0)).unwrap();
        assert_relative_eq!(r.mean, 0.999999, max_relative = 1e-5);
        assert_relative_eq!(r.variance, 0.999999, max_relative = 1e-5);
    }

    #[test]
    fn product_of_identical_halves_variance() {
        let r = product1(&g1(3.5, 2.0), &g1(3.5, 2.0)).unwrap();
        assert_relative_eq!(r.mean, 3.5);
        assert_relative_eq!(r.variance, 1.0);
    }

    #[test]
    fn product_with_equal_variances_averages_means() {
        let r = product1(&g1(1.0, 2.0), &g1(3.0, 2.0)).unwrap();
        assert_relative_eq!(r.mean, 2.0);
        assert_relative_eq!(r.variance, 1.0);
    }

    #[test]
    fn quotient_by_near_uniform_is_identity() {
        let r = quotient1(&g1(2.0, 1.0), &g1(0.0, 1e6)).unwrap();
        assert_relative_eq!(r.mean, 2.0, max_relative = 1e-5);
        assert_relative_eq!(r.variance, 1.0, max_relative = 1e-5);
    }

    #[test]
    fn quotient_round_trip_recovers_factor() {
        let a = g1(0.7, 0.3);
        let b = g1(-1.2, 2.5);
        let r = quotient1(&product1(&a, &b).unwrap(), &b).unwrap();
        assert_relative_eq!(r.mean, a.mean, max_relative = 1e-9);
        assert_relative_eq!(r.variance, a.variance, max_relative = 1e-9);
    }

    #[test]
    fn quotient_precondition_violation_errors() {
        assert_eq!(
            quotient1(&g1(0.0, 1.0), &g1(0.0, 0.5)),
            Err(GaussianError::NonPositiveVariance)
        );
    }

    fn g2(mean: [f64; 2], cov: Mat2) -> Gaussian2 {
        Gaussian2::new(mean, cov).unwrap()
    }

    #[test]
    fn pair_product_with_isotropic_uniform_is_identity() {
        let c = g2([0.4, -0.8], [[0.5, 0.2], [0.2, 0.9]]);
        let u = g2([0.0, 0.0], [[1e6, 0.0], [0.0, 1e6]]);
        let r = product2(&u, &c).unwrap();
        assert_relative_eq!(r.mean[0], c.mean[0], max_relative = 1e-5);
        assert_relative_eq!(r.mean[1], c.mean[1], max_relative = 1e-5);
        assert_relative_eq!(r.cov[0][1], c.cov[0][1], max_relative = 1e-5);
    }

    #[test]
    fn pair_product_with_itself_halves_covariance() {
        let c = g2([1.0, 2.0], [[2.0, 0.5], [0.5, 1.0]]);
        let r = product2(&c, &c).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(r.cov[i][j], 0.5 * c.cov[i][j], max_relative = 1e-9);
            }
        }
        assert_relative_eq!(r.mean[0], 1.0, max_relative = 1e-9);
    }

    #[test]
    fn pair_quotient_round_trip() {
        let a = g2([0.3, -0.6], [[1.2, -0.3], [-0.3, 0.8]]);
        let b = g2([-1.0, 0.2], [[2.0, 0.4], [0.4, 3.0]]);
        let r = quotient2(&product2(&a, &b).unwrap(), &b).unwrap();
        assert_relative_eq!(r.mean[0], a.mean[0], max_relative = 1e-9);
        assert_relative_eq!(r.mean[1], a.mean[1], max_relative = 1e-9);
        assert_relative_eq!(r.cov[0][0], a.cov[0][0], max_relative = 1e-9);
        assert_relative_eq!(r.cov[1][1], a.cov[1][1], max_relative = 1e-9);
    }

    #[test]
    fn marginal_is_component_mean_and_diagonal_entry() {
        let g = g2([1.0, 2.0], [[3.0, 0.0], [0.0, 4.0]]);
        let m = marginalize2(&g, 1);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.variance, 4.0);
        let g = g2([1.0, 2.0], [[3.0, 0.5], [0.5, 4.0]]);
        assert_eq!(marginalize2(&g, 0).variance, 3.0);
    }

    /// Quadrature oracle: the marginal mean/variance computed by summing the
    /// joint density over a 200x200 grid must agree with `marginalize2`.
    #[test]
    fn marginal_matches_grid_quadrature() {
        let g = g2([0.7, -0.4], [[1.3, 0.6], [0.6, 0.9]]);
        let p = invert2x2(g.cov).unwrap();
        let n = 200usize;
        let span = 6.0;
        let s0 = g.cov[0][0].sqrt();
        let s1 = g.cov[1][1].sqrt();
        let (mut w_sum, mut m_sum, mut v_sum) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let x = g.mean[0] - span * s0 + (2.0 * span * s0) * (i as f64 + 0.5) / n as f64;
            for j in 0..n {
                let y = g.mean[1] - span * s1 + (2.0 * span * s1) * (j as f64 + 0.5) / n as f64;
                let dx = x - g.mean[0];
                let dy = y - g.mean[1];
                let q = p[0][0] * dx * dx + 2.0 * p[0][1] * dx * dy + p[1][1] * dy * dy;
                let w = (-0.5 * q).exp();
                w_sum += w;
                m_sum += w * y;
                v_sum += w * y * y;
            }
        }
        let mean = m_sum / w_sum;
        let var = v_sum / w_sum - mean * mean;
        let m = marginalize2(&g, 1);
        assert_relative_eq!(mean, m.mean, epsilon = 1e-6);
        assert_relative_eq!(var, m.variance, epsilon = 1e-6, max_relative = 1e-6);
    }

    #[test]
    fn invert_identity_and_diagonal() {
        let id = [[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(invert2x2(id).unwrap(), id);
        let d = invert2x2([[2.0, 0.0], [0.0, 4.0]]).unwrap();
        assert_eq!(d, [[0.5, 0.0], [0.0, 0.25]]);
    }

    #[test]
    fn invert_near_singular_residual() {
        let m = [[1.0, 0.999], [0.999, 1.0]];
        let inv = invert2x2(m).unwrap();
        // ||M * M^-1 - I||_max < 1e-9
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += m[i][k] * inv[k][j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn singular_matrix_rejected() {
        assert_eq!(
            invert2x2([[1.0, 1.0], [1.0, 1.0]]),
            Err(GaussianError::SingularMatrix)
        );
    }
}
