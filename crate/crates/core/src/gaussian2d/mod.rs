//! Bivariate normal distributions and their geometry.
//!
//! The mean and covariance of a [`Gaussian2D`] live in tangent-plane units
//! when used by the directional analysis, but nothing here assumes that.

mod fit;
mod lm;

pub use fit::{
    robust_fit, CauchyScale, FitConfig, FitParams, FitProblem, FitResult, HistogramWindow,
    ResidualWeighting, WindowCenter,
};
pub use lm::{LmOutcome, LmSettings};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scalar::Real;

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2<T> {
    pub xx: T,
    pub xy: T,
    pub yy: T,
}

impl<T: Real> Sym2<T> {
    pub const fn new(xx: T, xy: T, yy: T) -> Self {
        Self { xx, xy, yy }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::one())
    }

    pub fn diagonal(xx: T, yy: T) -> Self {
        Self::new(xx, T::zero(), yy)
    }

    /// Builds from a full matrix, requiring symmetry within `1e-12` (relative
    /// to the largest entry).
    pub fn from_rows(rows: [[T; 2]; 2]) -> Result<Self> {
        let scale = rows.iter().flatten().fold(T::one(), |m, v| m.max(v.abs()));
        if (rows[0][1] - rows[1][0]).abs() > T::lit(1e-12).max(T::epsilon() * T::lit(8.0)) * scale {
            return Err(Error::DegenerateInput("covariance is not symmetric".into()));
        }
        Ok(Self::new(rows[0][0], rows[0][1], rows[1][1]))
    }

    pub fn trace(&self) -> T {
        self.xx + self.yy
    }

    pub fn determinant(&self) -> T {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.xx * s, self.xy * s, self.yy * s)
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    pub fn mul_vec(&self, v: Vec2<T>) -> Vec2<T> {
        Vec2::new(self.xx * v.x + self.xy * v.y, self.xy * v.x + self.yy * v.y)
    }

    /// `v^T M^{-1} v`, assuming `M` is positive definite.
    pub fn inverse_quadratic_form(&self, v: Vec2<T>) -> T {
        let det = self.determinant();
        (self.yy * v.x * v.x - (self.xy + self.xy) * v.x * v.y + self.xx * v.y * v.y) / det
    }

    /// Outer product `v v^T`.
    pub fn outer(v: Vec2<T>) -> Self {
        Self::new(v.x * v.x, v.x * v.y, v.y * v.y)
    }

    /// Lower Cholesky factor `(l11, l21, l22)` with `M = L L^T`.
    pub fn cholesky(&self) -> Option<(T, T, T)> {
        if !(self.xx > T::zero()) {
            return None;
        }
        let l11 = self.xx.sqrt();
        let l21 = self.xy / l11;
        let rem = self.yy - l21 * l21;
        if !(rem > T::zero()) {
            return None;
        }
        Some((l11, l21, rem.sqrt()))
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        (self.xx - o.xx)
            .abs()
            .max((self.xy - o.xy).abs())
            .max((self.yy - o.yy).abs())
    }

    /// Frobenius norm of the full matrix.
    pub fn frobenius_norm(&self) -> T {
        (self.xx * self.xx + T::lit(2.0) * self.xy * self.xy + self.yy * self.yy).sqrt()
    }

    pub fn cast<U: Real>(&self) -> Sym2<U> {
        Sym2::new(
            U::lit(self.xx.as_f64()),
            U::lit(self.xy.as_f64()),
            U::lit(self.yy.as_f64()),
        )
    }
}

/// A bivariate normal distribution `N(mu, sigma)` with positive definite `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D<T> {
    mu: Vec2<T>,
    sigma: Sym2<T>,
}

impl<T: Real> Gaussian2D<T> {
    pub fn new(mu: Vec2<T>, sigma: Sym2<T>) -> Result<Self> {
        let finite = [mu.x, mu.y, sigma.xx, sigma.xy, sigma.yy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::DegenerateInput(
                "non-finite Gaussian parameters".into(),
            ));
        }
        if sigma.cholesky().is_none() {
            return Err(Error::DegenerateInput(format!(
                "covariance is not positive definite (det = {:e})",
                sigma.determinant().as_f64()
            )));
        }
        Ok(Self { mu, sigma })
    }

    pub fn standard() -> Self {
        Self {
            mu: Vec2::zero(),
            sigma: Sym2::identity(),
        }
    }

    pub fn mu(&self) -> Vec2<T> {
        self.mu
    }

    pub fn sigma(&self) -> Sym2<T> {
        self.sigma
    }

    /// Probability density at `x`.
    pub fn density(&self, x: Vec2<T>) -> T {
        density(self, x)
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_squared(&self, x: Vec2<T>) -> T {
        self.sigma.inverse_quadratic_form(x - self.mu)
    }

    pub fn cast<U: Real>(&self) -> Gaussian2D<U> {
        Gaussian2D {
            mu: self.mu.cast(),
            sigma: self.sigma.cast(),
        }
    }
}

/// `p(x) = exp(-(x - mu)^T sigma^{-1} (x - mu) / 2) / (2 pi sqrt(det sigma))`.
pub fn density<T: Real>(g: &Gaussian2D<T>, x: Vec2<T>) -> T {
    let norm = T::TAU() * g.sigma.determinant().sqrt();
    (-g.mahalanobis_squared(x) / T::lit(2.0)).exp() / norm
}

/// Sample mean and maximum-likelihood (1/n) covariance.
///
/// Needs at least three points whose scatter has full rank.
pub fn moments_estimate<T: Real>(points: &[Vec2<T>]) -> Result<Gaussian2D<T>> {
    if points.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "moment estimate needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = T::lit(points.len() as f64);
    let mean = points
        .iter()
        .fold(Vec2::zero(), |acc, p| acc + *p)
        .scale(T::one() / n);
    let mut cov = Sym2::new(T::zero(), T::zero(), T::zero());
    for p in points {
        cov = cov.add(&Sym2::outer(*p - mean));
    }
    let cov = cov.scale(T::one() / n);
    let tr = cov.trace();
    if !(cov.determinant() > T::epsilon() * T::lit(1e3) * tr * tr) {
        return Err(Error::DegenerateInput(
            "point scatter is rank deficient".into(),
        ));
    }
    Gaussian2D::new(mean, cov)
}

/// Principal axes of a covariance matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisStats<T> {
    /// Larger eigenvalue.
    pub lambda1: T,
    /// Smaller eigenvalue.
    pub lambda2: T,
    /// Unit eigenvector for `lambda1`, oriented with a non-negative x component.
    pub major_axis: Vec2<T>,
    /// Unit eigenvector for `lambda2`; the major axis rotated by +90 degrees.
    pub minor_axis: Vec2<T>,
    pub sigma_major: T,
    pub sigma_minor: T,
    /// Eigenvalues coincide; the axis pair is an arbitrary orthonormal basis.
    pub isotropic: bool,
}

/// Closed-form eigendecomposition of `g`'s covariance.
pub fn eigen_axes<T: Real>(g: &Gaussian2D<T>) -> AxisStats<T> {
    let s = g.sigma;
    let two = T::lit(2.0);
    let mean = (s.xx + s.yy) / two;
    let half_diff = (s.xx - s.yy) / two;
    let h = half_diff.hypot(s.xy);
    let lambda1 = mean + h;
    // Product form avoids cancellation for strongly elongated ellipses.
    let lambda2 = s.determinant() / lambda1;
    let isotropic = h <= T::geometric_tolerance() * mean;

    let major = if isotropic {
        Vec2::new(T::one(), T::zero())
    } else if s.xx >= s.yy {
        Vec2::new(lambda1 - s.yy, s.xy)
    } else {
        Vec2::new(s.xy, lambda1 - s.xx)
    };
    let mut major = major.normalized().unwrap_or(Vec2::new(T::one(), T::zero()));
    if major.x < T::zero() || (major.x == T::zero() && major.y < T::zero()) {
        major = -major;
    }
    AxisStats {
        lambda1,
        lambda2,
        major_axis: major,
        minor_axis: major.perp(),
        sigma_major: lambda1.sqrt(),
        sigma_minor: lambda2.sqrt(),
        isotropic,
    }
}

/// Draws `n` points from `g` with a ChaCha8 generator seeded by `seed`.
///
/// Uses `mu + L z` with `L` the Cholesky factor of the covariance and `z`
/// standard normal.
pub fn sample<T: Real>(g: &Gaussian2D<T>, seed: u64, n: usize) -> Vec<Vec2<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(g, &mut rng, n)
}

pub(crate) fn sample_with<T: Real, R: rand::Rng>(
    g: &Gaussian2D<T>,
    rng: &mut R,
    n: usize,
) -> Vec<Vec2<T>> {
    let (l11, l21, l22) = g.sigma.cholesky().expect("validated covariance");
    (0..n)
        .map(|_| {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            let (z1, z2) = (T::lit(z1), T::lit(z2));
            Vec2::new(g.mu.x + l11 * z1, g.mu.y + l21 * z1 + l22 * z2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_gaussian() -> Gaussian2D<f64> {
        Gaussian2D::new(Vec2::new(1.0, 1.0), Sym2::new(0.7, 0.8, 2.5)).unwrap()
    }

    #[test]
    fn rejects_invalid_covariances() {
        assert!(Gaussian2D::new(Vec2::new(0.0, 0.0), Sym2::new(1.0, 2.0, 1.0)).is_err());
        assert!(Gaussian2D::new(Vec2::new(0.0, 0.0), Sym2::new(-1.0, 0.0, 1.0)).is_err());
        assert!(Gaussian2D::new(Vec2::new(f64::NAN, 0.0), Sym2::identity()).is_err());
        assert!(Sym2::from_rows([[1.0, 0.2], [0.3, 1.0]]).is_err());
        assert!(Sym2::from_rows([[1.0, 0.2], [0.2, 1.0]]).is_ok());
    }

    #[test]
    fn standard_density_at_mode() {
        let g = Gaussian2D::<f64>::standard();
        let p = density(&g, Vec2::new(0.0, 0.0));
        assert!((p - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!((p - 0.159155).abs() < 1e-6);
    }

    #[test]
    fn density_is_maximal_at_mean() {
        let g = reference_gaussian();
        let peak = density(&g, g.mu());
        for i in -20..=20 {
            for j in -20..=20 {
                let x = Vec2::new(i as f64 * 0.3, j as f64 * 0.3);
                assert!(density(&g, x) <= peak);
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        // Midpoint quadrature over +-6 sigma in the eigenbasis-aligned box.
        let g = reference_gaussian();
        let ax = eigen_axes(&g);
        let (s1, s2) = (ax.sigma_major, ax.sigma_minor);
        let n = 600;
        let (h1, h2) = (12.0 * s1 / n as f64, 12.0 * s2 / n as f64);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let u = -6.0 * s1 + (i as f64 + 0.5) * h1;
                let v = -6.0 * s2 + (j as f64 + 0.5) * h2;
                let x = g.mu() + ax.major_axis.scale(u) + ax.minor_axis.scale(v);
                total += density(&g, x) * h1 * h2;
            }
        }
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn moments_of_square() {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(0.0, 2.0),
            Vec2::new(2.0, 2.0),
        ];
        let g = moments_estimate(&pts).unwrap();
        assert_eq!(g.mu(), Vec2::new(1.0, 1.0));
        assert_eq!(g.sigma(), Sym2::new(1.0, 0.0, 1.0));
    }

    #[test]
    fn moments_reject_degenerate_scatter() {
        let same = vec![Vec2::new(1.0, 2.0); 10];
        assert!(matches!(
            moments_estimate(&same),
            Err(Error::DegenerateInput(_))
        ));
        let line: Vec<_> = (0..10)
            .map(|i| Vec2::new(i as f64, 2.0 * i as f64))
            .collect();
        assert!(moments_estimate(&line).is_err());
        assert!(moments_estimate(&[Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0)]).is_err());
    }

    #[test]
    fn eigen_axes_reference_matches_quadratic_formula() {
        let ax = eigen_axes(&reference_gaussian());
        // lambda^2 - 3.2 lambda + 1.11 = 0
        let disc: f64 = 3.2 * 3.2 - 4.0 * 1.11;
        let l1 = (3.2 + disc.sqrt()) / 2.0;
        let l2 = (3.2 - disc.sqrt()) / 2.0;
        assert!((ax.lambda1 - l1).abs() < 1e-12);
        assert!((ax.lambda2 - l2).abs() < 1e-12);
        assert!((ax.lambda1 - 2.8042).abs() < 1e-4);
        assert!((ax.lambda2 - 0.3958).abs() < 1e-4);
        assert!(!ax.isotropic);
        let s = reference_gaussian().sigma();
        for (v, l) in [(ax.major_axis, ax.lambda1), (ax.minor_axis, ax.lambda2)] {
            assert!((s.mul_vec(v) - v.scale(l)).norm() < 1e-12);
        }
    }

    #[test]
    fn eigen_axes_isotropic() {
        let ax = eigen_axes(&Gaussian2D::<f64>::standard());
        assert_eq!(ax.lambda1, 1.0);
        assert_eq!(ax.lambda2, 1.0);
        assert!(ax.isotropic);
        assert!(ax.major_axis.dot(ax.minor_axis).abs() < 1e-15);
    }

    #[test]
    fn eigen_axes_reconstruct_covariance() {
        let g = Gaussian2D::new(Vec2::zero(), Sym2::new(0.3, -0.25, 0.4)).unwrap();
        let ax = eigen_axes(&g);
        let rebuilt = Sym2::outer(ax.major_axis)
            .scale(ax.lambda1)
            .add(&Sym2::outer(ax.minor_axis).scale(ax.lambda2));
        assert!(rebuilt.max_abs_diff(&g.sigma()) < 1e-12);
    }

    #[test]
    fn minor_axis_marginal_is_normal_with_sqrt_lambda2() {
        // Density restricted to the minor-axis line through the mean,
        // renormalized by trapezoidal quadrature.
        let g = reference_gaussian();
        let ax = eigen_axes(&g);
        let sd = ax.sigma_minor;
        let n = 20_000;
        let h = 16.0 * sd / n as f64;
        let ts: Vec<f64> = (0..=n).map(|i| -8.0 * sd + i as f64 * h).collect();
        let vals: Vec<f64> = ts
            .iter()
            .map(|&t| density(&g, g.mu() + ax.minor_axis.scale(t)))
            .collect();
        let z: f64 = h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[n]));
        for (t, v) in ts.iter().zip(&vals).step_by(97) {
            let normal =
                (-t * t / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            assert!((v / z - normal).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = reference_gaussian();
        assert_eq!(sample(&g, 42, 100), sample(&g, 42, 100));
        assert_ne!(sample(&g, 42, 100), sample(&g, 43, 100));
    }

    #[test]
    fn vanishing_variance_samples_collapse() {
        let g = Gaussian2D::new(Vec2::new(5.0, 5.0), Sym2::identity().scale(1e-12)).unwrap();
        for p in sample(&g, 7, 1000) {
            assert!((p - Vec2::new(5.0, 5.0)).norm() < 1e-5);
        }
    }

    #[test]
    fn million_samples_recover_moments() {
        let g = reference_gaussian();
        let est = moments_estimate(&sample(&g, 2024, 1_000_000)).unwrap();
        assert!((est.mu() - g.mu()).norm() < 0.005);
        let (s, e) = (g.sigma(), est.sigma());
        assert!(((e.xx - s.xx) / s.xx).abs() < 0.01);
        assert!(((e.xy - s.xy) / s.xy).abs() < 0.01);
        assert!(((e.yy - s.yy) / s.yy).abs() < 0.01);
    }
}
