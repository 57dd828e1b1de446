//! Robust 2D Gaussian fit to a normalized histogram.
//!
//! The points are binned into a square histogram normalized to a density
//! (counts divided by the total number of points and the bin area). The model
//! `A * N(x; mu, Sigma)` is averaged over each bin with 3x3 Gauss-Legendre
//! quadrature and fitted to the bin densities under a Cauchy loss with
//! Levenberg-Marquardt. `Sigma = L L^T` with `L` lower triangular and a
//! log-parameterized diagonal, so every iterate is positive definite.

use serde::{Deserialize, Serialize};

use super::lm::{self, LmSettings, Loss, ResidualModel};
use super::{moments_estimate, Gaussian2D, Sym2};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::scalar::Real;

/// Consistency constant turning a median absolute deviation into a standard
/// deviation for normal data.
const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

/// Relative parameter change below which refreshing the Poisson variances
/// is considered settled.
const VARIANCE_REFRESH_TOLERANCE: f64 = 1e-6;

/// 99% quantile of the chi-square distribution with two degrees of freedom.
const CHI2_2DOF_99: f64 = 9.210_340_371_976_184;

/// How the Cauchy scale `c` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum CauchyScale {
    /// `c = multiplier * median |r|` over occupied bins, computed at the
    /// initial estimate and recomputed once after the first solve.
    MedianResidual { multiplier: f64 },
    /// Fixed scale in density units.
    Fixed { scale: f64 },
    /// Plain least squares.
    Disabled,
}

impl Default for CauchyScale {
    fn default() -> Self {
        CauchyScale::MedianResidual { multiplier: 1.5 }
    }
}

/// Per-bin standardization of the residuals `model - observed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResidualWeighting {
    /// Raw density residuals.
    Unweighted,
    /// Residuals divided by the Poisson standard deviation of the bin count
    /// predicted by the current model, `sqrt(max(expected count, floor_counts))`.
    /// The variances are refreshed between solver passes.
    Poisson { floor_counts: f64 },
}

impl Default for ResidualWeighting {
    fn default() -> Self {
        ResidualWeighting::Poisson { floor_counts: 1.0 }
    }
}

/// Where the histogram square is centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowCenter {
    Origin,
    /// Coordinate-wise median of the points.
    Median,
}

/// Extent of the histogram square.
///
/// The half-width starts at the largest per-axis distance of any point from
/// the center, is capped at `robust_sigmas` robust standard deviations (when
/// set) and finally at `max_half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramWindow {
    pub center: WindowCenter,
    pub robust_sigmas: Option<f64>,
    pub max_half_width: Option<f64>,
}

impl Default for HistogramWindow {
    fn default() -> Self {
        Self {
            center: WindowCenter::Median,
            robust_sigmas: Some(6.0),
            max_half_width: None,
        }
    }
}

/// Serializable fit settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Bins per histogram axis.
    pub bins: usize,
    pub min_samples: usize,
    /// Total iteration budget across all solver passes.
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub window: HistogramWindow,
    pub cauchy: CauchyScale,
    pub weighting: ResidualWeighting,
    /// Upper bound on solver passes; variances are refreshed between passes.
    pub max_passes: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            bins: 40,
            min_samples: 200,
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            window: HistogramWindow::default(),
            cauchy: CauchyScale::default(),
            weighting: ResidualWeighting::default(),
            max_passes: 6,
        }
    }
}

impl FitConfig {
    /// Settings for gaze scatter in a tangent plane: the window is clipped to
    /// `sin 15 deg`.
    pub fn tangent_plane() -> Self {
        Self {
            window: HistogramWindow {
                max_half_width: Some(15f64.to_radians().sin()),
                ..HistogramWindow::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 3 {
            return Err(Error::Config(format!(
                "bins must be >= 3, got {}",
                self.bins
            )));
        }
        if self.min_samples < 3 {
            return Err(Error::Config("min_samples must be >= 3".into()));
        }
        if self.max_passes == 0 {
            return Err(Error::Config("max_passes must be >= 1".into()));
        }
        if let ResidualWeighting::Poisson { floor_counts } = self.weighting {
            if !(floor_counts > 0.0) {
                return Err(Error::Config("floor_counts must be positive".into()));
            }
        }
        if let Some(k) = self.window.robust_sigmas {
            if !(k > 0.0) {
                return Err(Error::Config("robust_sigmas must be positive".into()));
            }
        }
        if let Some(h) = self.window.max_half_width {
            if !(h > 0.0) {
                return Err(Error::Config("max_half_width must be positive".into()));
            }
        }
        match self.cauchy {
            CauchyScale::MedianResidual { multiplier } if !(multiplier > 0.0) => {
                Err(Error::Config("Cauchy multiplier must be positive".into()))
            }
            CauchyScale::Fixed { scale } if !(scale > 0.0) => {
                Err(Error::Config("Cauchy scale must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    fn lm_settings(&self, budget: usize) -> LmSettings {
        LmSettings {
            max_iterations: budget,
            gradient_tolerance: self.gradient_tolerance,
            step_tolerance: self.step_tolerance,
            ..LmSettings::default()
        }
    }
}

/// Outcome of [`robust_fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult<T> {
    pub gaussian: Gaussian2D<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Robust cost at the returned parameters.
    pub final_cost: T,
    /// Fraction of all input points within the 99% Mahalanobis ellipse of
    /// the fitted Gaussian.
    pub inlier_fraction: T,
    /// Fitted amplitude; about one when the window holds all of the mass.
    pub amplitude: T,
    /// Cauchy scale of the final pass, when the loss was robust.
    pub cauchy_scale: Option<T>,
    pub window_half_width: T,
}

/// Model parameters `[A, mu_x, mu_y, ln l11, l21, ln l22]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams<T>(pub [T; 6]);

impl<T: Real> FitParams<T> {
    pub fn from_gaussian(g: &Gaussian2D<T>, amplitude: T) -> Self {
        let (l11, l21, l22) = g.sigma().cholesky().expect("validated covariance");
        let mu = g.mu();
        Self([amplitude, mu.x, mu.y, l11.ln(), l21, l22.ln()])
    }

    pub fn amplitude(&self) -> T {
        self.0[0]
    }

    pub fn to_gaussian(&self) -> Result<Gaussian2D<T>> {
        let p = &self.0;
        let (l11, l21, l22) = (p[3].exp(), p[4], p[5].exp());
        let sigma = Sym2::new(l11 * l11, l11 * l21, l21 * l21 + l22 * l22);
        Gaussian2D::new(Vec2::new(p[1], p[2]), sigma)
    }
}

/// Histogram residual problem behind [`robust_fit`], exposed for diagnostics
/// and derivative checks.
///
/// Residual `k` is `(model_k - observed_k) * weight_k`; the weights are one
/// until [`FitProblem::set_poisson_weights`] is called.
#[derive(Debug, Clone)]
pub struct FitProblem<T> {
    bins: usize,
    center: Vec2<T>,
    half_width: T,
    bin_width: T,
    bin_centers: Vec<Vec2<T>>,
    observed: Vec<T>,
    weights: Vec<T>,
    /// Converts a bin density into an expected count (`n * bin area`).
    counts_per_density: T,
    nodes: [(Vec2<T>, T); 9],
    inside: usize,
}

impl<T: Real> FitProblem<T> {
    /// Bins `points` according to `cfg.window` and `cfg.bins`.
    pub fn from_points(points: &[Vec2<T>], cfg: &FitConfig) -> Result<Self> {
        let (center, half_width) = window(points, &cfg.window)?;
        let bins = cfg.bins;
        let width = (half_width + half_width) / T::lit(bins as f64);
        let lo = center - Vec2::new(half_width, half_width);

        let mut counts = vec![0usize; bins * bins];
        let mut inside = 0;
        for p in points {
            let (u, v) = ((p.x - lo.x) / width, (p.y - lo.y) / width);
            let top = T::lit(bins as f64);
            if !(u >= T::zero() && u <= top && v >= T::zero() && v <= top) {
                continue;
            }
            let i = u.to_usize().unwrap_or(bins).min(bins - 1);
            let j = v.to_usize().unwrap_or(bins).min(bins - 1);
            counts[j * bins + i] += 1;
            inside += 1;
        }
        let counts_per_density = T::lit(points.len() as f64) * width * width;
        let observed = counts
            .iter()
            .map(|&c| T::lit(c as f64) / counts_per_density)
            .collect();

        let half = T::lit(0.5);
        let mut bin_centers = Vec::with_capacity(bins * bins);
        for j in 0..bins {
            for i in 0..bins {
                bin_centers.push(Vec2::new(
                    lo.x + (T::lit(i as f64) + half) * width,
                    lo.y + (T::lit(j as f64) + half) * width,
                ));
            }
        }

        let a = T::lit(0.6f64.sqrt()) * width * half;
        let gl = [
            (-a, T::lit(5.0 / 18.0)),
            (T::zero(), T::lit(8.0 / 18.0)),
            (a, T::lit(5.0 / 18.0)),
        ];
        let mut nodes = [(Vec2::zero(), T::zero()); 9];
        for (qi, &(dy, wy)) in gl.iter().enumerate() {
            for (qj, &(dx, wx)) in gl.iter().enumerate() {
                nodes[qi * 3 + qj] = (Vec2::new(dx, dy), wx * wy);
            }
        }

        Ok(Self {
            bins,
            center,
            half_width,
            bin_width: width,
            bin_centers,
            weights: vec![T::one(); bins * bins],
            observed,
            counts_per_density,
            nodes,
            inside,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn center(&self) -> Vec2<T> {
        self.center
    }

    pub fn half_width(&self) -> T {
        self.half_width
    }

    pub fn bin_width(&self) -> T {
        self.bin_width
    }

    /// Normalized histogram densities, row-major with `y` as the slow axis.
    pub fn observed(&self) -> &[T] {
        &self.observed
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// Number of points that fell inside the window.
    pub fn points_inside(&self) -> usize {
        self.inside
    }

    /// Bin-averaged model densities at `params`.
    pub fn model(&self, params: &FitParams<T>) -> Vec<T> {
        let ones = vec![T::one(); self.observed.len()];
        let mut r = vec![T::zero(); self.observed.len()];
        self.evaluate_raw(&params.0, &ones, &mut r, None);
        r.iter().zip(&self.observed).map(|(r, o)| *r + *o).collect()
    }

    /// Sets each weight to `1 / sqrt(max(expected count, floor))` (in density
    /// units) for the model at `params`.
    pub fn set_poisson_weights(&mut self, params: &FitParams<T>, floor_counts: T) {
        let model = self.model(params);
        let k = self.counts_per_density;
        self.weights = model
            .iter()
            .map(|m| k / (*m * k).max(floor_counts).sqrt())
            .collect();
    }

    /// Weighted residuals and their Jacobian at `params`.
    pub fn residuals_and_jacobian(&self, params: &FitParams<T>) -> (Vec<T>, Vec<T>) {
        let m = self.observed.len();
        let mut r = vec![T::zero(); m];
        let mut j = vec![T::zero(); m * 6];
        self.evaluate(&params.0, &mut r, Some(&mut j));
        (r, j)
    }

    pub fn residuals(&self, params: &FitParams<T>) -> Vec<T> {
        let mut r = vec![T::zero(); self.observed.len()];
        self.evaluate(&params.0, &mut r, None);
        r
    }

    fn occupied_median_abs(&self, residuals: &[T]) -> T {
        let mut abs: Vec<T> = residuals
            .iter()
            .zip(&self.observed)
            .filter(|(_, o)| **o > T::zero())
            .map(|(r, _)| r.abs())
            .collect();
        median(&mut abs).unwrap_or(T::zero())
    }

    fn evaluate_raw(
        &self,
        p: &[T],
        weights: &[T],
        residuals: &mut [T],
        mut jacobian: Option<&mut [T]>,
    ) {
        let amp = p[0];
        let mu = Vec2::new(p[1], p[2]);
        let (l11, l21, l22) = (p[3].exp(), p[4], p[5].exp());
        let peak = amp / (T::TAU() * l11 * l22);
        let half = T::lit(0.5);

        for (k, (c, obs)) in self.bin_centers.iter().zip(&self.observed).enumerate() {
            let mut value = T::zero();
            let mut grad = [T::zero(); 6];
            for &(offset, w) in &self.nodes {
                let d = *c + offset - mu;
                let z1 = d.x / l11;
                let z2 = (d.y - l21 * z1) / l22;
                let f = w * peak * (-(z1 * z1 + z2 * z2) * half).exp();
                value = value + f;
                if jacobian.is_some() {
                    // f times d ln f / d theta for each parameter.
                    grad[0] = grad[0] + f;
                    grad[1] = grad[1] + f * (z1 - z2 * l21 / l22) / l11;
                    grad[2] = grad[2] + f * z2 / l22;
                    grad[3] = grad[3] + f * (z1 * z1 - z1 * z2 * l21 / l22 - T::one());
                    grad[4] = grad[4] + f * z1 * z2 / l22;
                    grad[5] = grad[5] + f * (z2 * z2 - T::one());
                }
            }
            let wk = weights[k];
            residuals[k] = (value - *obs) * wk;
            if let Some(jac) = jacobian.as_deref_mut() {
                grad[0] = grad[0] / amp;
                for (dst, g) in jac[k * 6..(k + 1) * 6].iter_mut().zip(grad) {
                    *dst = g * wk;
                }
            }
        }
    }
}

impl<T: Real> ResidualModel<T> for FitProblem<T> {
    fn num_params(&self) -> usize {
        6
    }

    fn num_residuals(&self) -> usize {
        self.observed.len()
    }

    fn evaluate(&self, p: &[T], residuals: &mut [T], jacobian: Option<&mut [T]>) {
        self.evaluate_raw(p, &self.weights, residuals, jacobian)
    }
}

/// Relative change between parameter vectors, used to detect that the
/// variance refresh has settled.
fn relative_change<T: Real>(a: &[T], b: &[T]) -> T {
    let num: T = a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum();
    let den: T = b.iter().map(|y| *y * *y).sum();
    (num / (den + T::epsilon())).sqrt()
}

/// Fits a 2D Gaussian to `points` with the Cauchy-robust histogram method.
///
/// Returns the best parameters found; `converged` is false when the
/// iteration budget ran out first.
pub fn robust_fit<T: Real>(points: &[Vec2<T>], cfg: &FitConfig) -> Result<FitResult<T>> {
    cfg.validate()?;
    if points.len() < cfg.min_samples {
        return Err(Error::InsufficientData {
            needed: cfg.min_samples,
            got: points.len(),
        });
    }
    let mut problem = FitProblem::from_points(points, cfg)?;

    let hw = problem.half_width;
    let c = problem.center;
    let in_window: Vec<Vec2<T>> = points
        .iter()
        .copied()
        .filter(|p| (p.x - c.x).abs() <= hw && (p.y - c.y).abs() <= hw)
        .collect();
    let init = moments_estimate(&in_window).or_else(|_| moments_estimate(points))?;
    let mass = T::lit(problem.inside as f64 / points.len() as f64);
    let mut params = FitParams::from_gaussian(&init, mass.max(T::lit(1e-3)));

    let floor = match cfg.weighting {
        ResidualWeighting::Poisson { floor_counts } => Some(T::lit(floor_counts)),
        ResidualWeighting::Unweighted => None,
    };
    if let Some(f) = floor {
        problem.set_poisson_weights(&params, f);
    }

    let robust_scale = |problem: &FitProblem<T>, params: &FitParams<T>| -> Option<T> {
        match cfg.cauchy {
            CauchyScale::Disabled => None,
            CauchyScale::Fixed { scale } => Some(T::lit(scale)),
            CauchyScale::MedianResidual { multiplier } => {
                let m = problem.occupied_median_abs(&problem.residuals(params));
                let s = T::lit(multiplier) * m;
                (s > T::zero()).then_some(s)
            }
        }
    };
    let mut scale = robust_scale(&problem, &params);

    let mut iterations = 0;
    let mut converged = false;
    let mut cost = T::zero();
    for pass in 0..cfg.max_passes {
        let budget = cfg.max_iterations.saturating_sub(iterations);
        let loss = scale.map_or(Loss::Squared, |s| Loss::Cauchy { scale: s });
        let out = lm::minimize(&problem, &params.0, loss, &cfg.lm_settings(budget));
        iterations += out.iterations;
        let next = FitParams(to_array(&out.params));
        let change = relative_change(&next.0, &params.0);
        params = next;
        cost = out.cost;
        converged = out.converged;

        if let Some(f) = floor {
            problem.set_poisson_weights(&params, f);
        }
        if pass == 0 {
            // The scale from the initial estimate is refreshed exactly once.
            if let CauchyScale::MedianResidual { .. } = cfg.cauchy {
                scale = robust_scale(&problem, &params);
            }
        } else if floor.is_none() || change <= T::lit(VARIANCE_REFRESH_TOLERANCE) {
            break;
        }
        if !converged || iterations >= cfg.max_iterations {
            break;
        }
    }

    let gaussian = params.to_gaussian()?;
    let limit = T::lit(CHI2_2DOF_99);
    let inliers = points
        .iter()
        .filter(|p| gaussian.mahalanobis_squared(**p) <= limit)
        .count();

    Ok(FitResult {
        gaussian,
        converged,
        iterations,
        final_cost: cost,
        inlier_fraction: T::lit(inliers as f64 / points.len() as f64),
        amplitude: params.amplitude(),
        cauchy_scale: scale,
        window_half_width: problem.half_width,
    })
}

fn to_array<T: Real>(v: &[T]) -> [T; 6] {
    let mut out = [T::zero(); 6];
    out.copy_from_slice(v);
    out
}

fn median<T: Real>(values: &mut [T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / T::lit(2.0)
    })
}

fn window<T: Real>(points: &[Vec2<T>], cfg: &HistogramWindow) -> Result<(Vec2<T>, T)> {
    let center = match cfg.center {
        WindowCenter::Origin => Vec2::zero(),
        WindowCenter::Median => {
            let mut xs: Vec<T> = points.iter().map(|p| p.x).collect();
            let mut ys: Vec<T> = points.iter().map(|p| p.y).collect();
            match (median(&mut xs), median(&mut ys)) {
                (Some(x), Some(y)) => Vec2::new(x, y),
                _ => return Err(Error::DegenerateInput("no points to bin".into())),
            }
        }
    };
    let mut half = points.iter().fold(T::zero(), |m, p| {
        m.max((p.x - center.x).abs()).max((p.y - center.y).abs())
    });
    if let Some(k) = cfg.robust_sigmas {
        let mut dx: Vec<T> = points.iter().map(|p| (p.x - center.x).abs()).collect();
        let mut dy: Vec<T> = points.iter().map(|p| (p.y - center.y).abs()).collect();
        let mad = median(&mut dx)
            .unwrap_or(T::zero())
            .max(median(&mut dy).unwrap_or(T::zero()));
        let robust = T::lit(k * MAD_TO_SIGMA) * mad;
        if robust > T::zero() {
            half = half.min(robust);
        }
    }
    if let Some(h) = cfg.max_half_width {
        half = half.min(T::lit(h));
    }
    if !(half > T::zero()) || !half.is_finite() {
        return Err(Error::DegenerateInput(
            "points have no spread to build a histogram from".into(),
        ));
    }
    Ok((center, half))
}
