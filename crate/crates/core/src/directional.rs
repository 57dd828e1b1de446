//! Directional statistics over the scene camera's field of view.
//!
//! For each direction on an azimuth/elevation lattice, samples whose
//! ground-truth direction lies within a small neighborhood are rotated onto
//! the cell center, projected into the tangent plane and summarized by a
//! robust 2D Gaussian fit.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian2d::{eigen_axes, robust_fit, FitConfig};
use crate::geometry::{
    angle_between, make_tangent_frame, normalize, normalized_image_coords, rotation_onto,
    tangent_length_to_angle, TangentFrame,
};
use crate::metrics::GazeSample;
use crate::{AxisStats, FitResult, UnitVec3, Vec2};

/// Offset used to push a tangent direction through the pinhole projection.
pub const IMAGE_DIRECTION_EPSILON: f64 = 1e-4;

/// Largest supported neighborhood radius, in degrees.
pub const MAX_RADIUS_DEG: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Lattice covers `[-azimuth_extent_deg, azimuth_extent_deg]`.
    pub azimuth_extent_deg: f64,
    pub elevation_extent_deg: f64,
    pub step_deg: f64,
    pub neighborhood_radius_deg: f64,
    pub min_cell_samples: usize,
    pub fit: FitConfig,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            azimuth_extent_deg: 45.0,
            elevation_extent_deg: 45.0,
            step_deg: 5.0,
            neighborhood_radius_deg: 5.0,
            min_cell_samples: 200,
            fit: FitConfig::tangent_plane(),
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_deg > 0.0) {
            return Err(Error::Config("grid step must be positive".into()));
        }
        if !(self.neighborhood_radius_deg > 0.0 && self.neighborhood_radius_deg <= MAX_RADIUS_DEG) {
            return Err(Error::Config(format!(
                "neighborhood radius must be in (0, {MAX_RADIUS_DEG}] degrees"
            )));
        }
        for (name, e) in [
            ("azimuth", self.azimuth_extent_deg),
            ("elevation", self.elevation_extent_deg),
        ] {
            if !(e >= 0.0 && e + self.neighborhood_radius_deg < 90.0) {
                return Err(Error::Config(format!(
                    "{name} extent {e} plus radius must stay in front of the camera"
                )));
            }
        }
        self.fit.validate()
    }

    fn axis(extent: f64, step: f64) -> Vec<f64> {
        let n = (2.0 * extent / step + 1e-9).floor() as usize;
        (0..=n).map(|i| -extent + i as f64 * step).collect()
    }

    pub fn azimuths(&self) -> Vec<f64> {
        Self::axis(self.azimuth_extent_deg, self.step_deg)
    }

    pub fn elevations(&self) -> Vec<f64> {
        Self::axis(self.elevation_extent_deg, self.step_deg)
    }

    /// Lattice points `(azimuth, elevation)` ordered by ascending elevation,
    /// then ascending azimuth.
    pub fn lattice(&self) -> Vec<(f64, f64)> {
        let az = self.azimuths();
        self.elevations()
            .into_iter()
            .flat_map(|el| az.iter().map(move |&a| (a, el)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    TooFewSamples,
    Degenerate,
    NotConverged,
    BehindCamera,
    FitFailed,
}

impl InvalidReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            InvalidReason::TooFewSamples => "too_few_samples",
            InvalidReason::Degenerate => "degenerate",
            InvalidReason::NotConverged => "not_converged",
            InvalidReason::BehindCamera => "behind_camera",
            InvalidReason::FitFailed => "fit_failed",
        }
    }
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Directions of the fitted bias and axes in normalized image space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageAxes {
    /// `None` when the fitted mean is exactly zero.
    pub bias_direction: Option<Vec2>,
    pub major_direction: Vec2,
    pub minor_direction: Vec2,
    /// Angle between the projected axes; 90 at the principal point.
    pub axes_angle_deg: f64,
}

/// Fit-derived quantities of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellEstimate {
    pub fit: FitResult,
    pub axes: AxisStats,
    pub bias_angle_deg: f64,
    pub sigma_major_deg: f64,
    pub sigma_minor_deg: f64,
    pub image: ImageAxes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCellStats {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub d_gt: UnitVec3,
    pub n_samples: usize,
    /// Mean angle between the corrected estimates and `d_gt`.
    pub mean_sample_error_deg: Option<f64>,
    pub estimate: Option<CellEstimate>,
    pub valid: bool,
    pub reason: Option<InvalidReason>,
}

/// A sample reduced to its two directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionPair {
    pub d_gt: UnitVec3,
    pub d_dev: UnitVec3,
}

/// Converts samples to direction pairs in a canonical order, so that
/// downstream results do not depend on record order.
pub fn prepare(samples: &[GazeSample]) -> Result<Vec<DirectionPair>> {
    let mut pairs = samples
        .iter()
        .map(|s| {
            Ok(DirectionPair {
                d_gt: s.d_gt()?,
                d_dev: s.d_dev,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let key = |p: &DirectionPair| {
        [
            p.d_gt.x(),
            p.d_gt.y(),
            p.d_gt.z(),
            p.d_dev.x(),
            p.d_dev.y(),
            p.d_dev.z(),
        ]
    };
    pairs.sort_by(|a, b| {
        key(a)
            .iter()
            .zip(key(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(pairs)
}

/// Offset-corrected estimates of all pairs whose ground truth lies strictly
/// within `radius_deg` of `d_gt`.
pub fn correct_pairs(pairs: &[DirectionPair], d_gt: &UnitVec3, radius_deg: f64) -> Vec<UnitVec3> {
    let cos_r = radius_deg.to_radians().cos();
    pairs
        .iter()
        // Cheap prefilter; the exact test below uses the stable angle formula.
        .filter(|p| p.d_gt.dot(d_gt) >= cos_r - 1e-12)
        .filter(|p| angle_between(&p.d_gt, d_gt) < radius_deg)
        .filter_map(|p| rotation_onto(&p.d_gt, d_gt).ok().map(|r| r.apply(&p.d_dev)))
        .collect()
}

/// Selects samples near `d_gt` and rotates each estimate by the minimal
/// rotation that carries its own ground truth onto `d_gt`.
pub fn select_and_correct(
    samples: &[GazeSample],
    d_gt: &UnitVec3,
    radius_deg: f64,
) -> Result<Vec<UnitVec3>> {
    if !(radius_deg > 0.0 && radius_deg <= MAX_RADIUS_DEG) {
        return Err(Error::Config(format!(
            "neighborhood radius must be in (0, {MAX_RADIUS_DEG}] degrees"
        )));
    }
    Ok(correct_pairs(&prepare(samples)?, d_gt, radius_deg))
}

/// Image-space direction of the tangent vector `v` at `d_gt`: the normalized
/// difference between the projections of `d_gt + eps v` and `d_gt`.
pub fn image_direction(frame: &TangentFrame<f64>, v: Vec2, eps: f64) -> Result<Vec2> {
    let d = frame.d_gt;
    let moved = normalize(d.as_vec() + frame.tangent_to_world(v).scale(eps))?;
    let delta = normalized_image_coords(&moved)? - normalized_image_coords(&d)?;
    delta
        .normalized()
        .ok_or_else(|| Error::DegenerateInput("tangent direction projects to a point".into()))
}

/// Projects the bias direction and the major and minor axes of a fit into
/// normalized image space.
pub fn axes_to_image(
    frame: &TangentFrame<f64>,
    fit: &FitResult,
    axes: &AxisStats,
) -> Result<ImageAxes> {
    let mu = fit.gaussian.mu();
    let bias_direction = match mu.normalized() {
        Some(dir) => Some(image_direction(frame, dir, IMAGE_DIRECTION_EPSILON)?),
        None => None,
    };
    let major = image_direction(frame, axes.major_axis, IMAGE_DIRECTION_EPSILON)?;
    let minor = image_direction(frame, axes.minor_axis, IMAGE_DIRECTION_EPSILON)?;
    let cross = major.x * minor.y - major.y * minor.x;
    Ok(ImageAxes {
        bias_direction,
        major_direction: major,
        minor_direction: minor,
        axes_angle_deg: cross.abs().atan2(major.dot(minor)).to_degrees(),
    })
}

/// Statistics of one cell from its offset-corrected estimates.
pub fn cell_stats(d_gt: &UnitVec3, corrected: &[UnitVec3], cfg: &GridConfig) -> GridCellStats {
    let (azimuth_deg, elevation_deg) = d_gt.azimuth_elevation();
    let n = corrected.len();
    let mean_sample_error_deg = (n > 0).then(|| {
        corrected
            .iter()
            .map(|d| angle_between(d, d_gt))
            .sum::<f64>()
            / n as f64
    });
    let mut cell = GridCellStats {
        azimuth_deg,
        elevation_deg,
        d_gt: *d_gt,
        n_samples: n,
        mean_sample_error_deg,
        estimate: None,
        valid: false,
        reason: None,
    };
    if n < cfg.min_cell_samples {
        cell.reason = Some(InvalidReason::TooFewSamples);
        return cell;
    }
    if normalized_image_coords(d_gt).is_err() {
        cell.reason = Some(InvalidReason::BehindCamera);
        return cell;
    }
    let frame = make_tangent_frame(d_gt);
    let points: Vec<Vec2> = corrected.iter().map(|d| frame.project(d)).collect();
    let fit = match robust_fit(&points, &cfg.fit) {
        Ok(f) => f,
        Err(Error::DegenerateInput(_)) | Err(Error::InsufficientData { .. }) => {
            cell.reason = Some(InvalidReason::Degenerate);
            return cell;
        }
        Err(_) => {
            cell.reason = Some(InvalidReason::FitFailed);
            return cell;
        }
    };
    let axes = eigen_axes(&fit.gaussian);
    let image = match axes_to_image(&frame, &fit, &axes) {
        Ok(i) => i,
        Err(Error::BehindCamera { .. }) => {
            cell.reason = Some(InvalidReason::BehindCamera);
            return cell;
        }
        Err(_) => {
            cell.reason = Some(InvalidReason::Degenerate);
            return cell;
        }
    };
    let converged = fit.converged;
    cell.estimate = Some(CellEstimate {
        bias_angle_deg: tangent_length_to_angle(fit.gaussian.mu().norm()).degrees,
        sigma_major_deg: tangent_length_to_angle(axes.sigma_major).degrees,
        sigma_minor_deg: tangent_length_to_angle(axes.sigma_minor).degrees,
        fit,
        axes,
        image,
    });
    cell.valid = converged;
    if !converged {
        cell.reason = Some(InvalidReason::NotConverged);
    }
    cell
}

/// Runs [`cell_stats`] at every lattice point of `cfg`.
///
/// Cells are processed in parallel on the current rayon pool and returned in
/// lattice order; the result does not depend on the pool size or on the
/// order of `samples`.
pub fn run_grid(samples: &[GazeSample], cfg: &GridConfig) -> Result<Vec<GridCellStats>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::NoData("dataset has no samples".into()));
    }
    let pairs = prepare(samples)?;
    Ok(run_grid_pairs(&pairs, cfg))
}

/// [`run_grid`] on prepared pairs.
pub fn run_grid_pairs(pairs: &[DirectionPair], cfg: &GridConfig) -> Vec<GridCellStats> {
    cfg.lattice()
        .par_iter()
        .map(|&(az, el)| {
            let d = UnitVec3::from_azimuth_elevation(az, el);
            let corrected = correct_pairs(pairs, &d, cfg.neighborhood_radius_deg);
            let mut cell = cell_stats(&d, &corrected, cfg);
            // Report the exact lattice coordinates rather than the round trip.
            cell.azimuth_deg = az;
            cell.elevation_deg = el;
            cell
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian2d::{sample, Gaussian2D, Sym2};
    use crate::metrics::Environment;
    use crate::Vec3;

    fn pair_sample(d_gt: UnitVec3, d_dev: UnitVec3) -> GazeSample {
        GazeSample {
            subject_id: "s".into(),
            session_id: "a".into(),
            device_id: "d".into(),
            environment: Environment::Indoor,
            p_gt: d_gt.as_vec().scale(200.0),
            d_dev,
            p_dev: None,
        }
    }

    #[test]
    fn lattice_has_361_cells_in_row_major_order() {
        let cfg = GridConfig::default();
        let l = cfg.lattice();
        assert_eq!(l.len(), 361);
        assert_eq!(l[0], (-45.0, -45.0));
        assert_eq!(l[1], (-40.0, -45.0));
        assert_eq!(l[19], (-45.0, -40.0));
        assert_eq!(l[360], (45.0, 45.0));
    }

    #[test]
    fn config_validation() {
        let cfg = GridConfig {
            neighborhood_radius_deg: 20.0,
            ..GridConfig::default()
        };
        assert!(cfg.validate().is_err());
        let mut cfg = GridConfig {
            step_deg: 0.0,
            ..GridConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = GridConfig::default();
        cfg.azimuth_extent_deg = 88.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn center_sample_is_unchanged_and_perfect_estimates_collapse() {
        let center = UnitVec3::from_azimuth_elevation(10.0, -5.0);
        let s = pair_sample(center, normalize(Vec3::new(0.2, 0.1, 1.0)).unwrap());
        let out = select_and_correct(std::slice::from_ref(&s), &center, 5.0).unwrap();
        assert!((out[0].as_vec() - s.d_dev.as_vec()).norm() < 1e-12);

        let samples: Vec<_> = (0..50)
            .map(|i| {
                let d = UnitVec3::from_azimuth_elevation(
                    10.0 + 0.07 * i as f64,
                    -5.0 - 0.05 * i as f64,
                );
                pair_sample(d, d)
            })
            .collect();
        let out = select_and_correct(&samples, &center, 5.0).unwrap();
        assert_eq!(out.len(), 50);
        for d in out {
            assert!(angle_between(&d, &center) < 1e-6);
        }
    }

    #[test]
    fn constant_tangent_bias_survives_correction() {
        // Every neighbor errs by the same tangent offset in its own frame.
        let center = UnitVec3::from_azimuth_elevation(0.0, 0.0);
        let bias = Vec2::new(0.03, -0.02);
        let mut samples = Vec::new();
        for i in 0..9 {
            for j in 0..9 {
                let d =
                    UnitVec3::from_azimuth_elevation(-4.0 + i as f64 * 0.5, -4.0 + j as f64 * 0.5);
                let f = make_tangent_frame(&d);
                samples.push(pair_sample(d, f.lift(bias).unwrap()));
            }
        }
        let frame = make_tangent_frame(&center);
        let out = select_and_correct(&samples, &center, 5.0).unwrap();
        assert!(!out.is_empty());
        for d in out {
            assert!((frame.project(&d) - bias).norm() < 1e-3);
        }
    }

    #[test]
    fn image_direction_at_center_and_stability() {
        let frame = make_tangent_frame(&UnitVec3::unit_z());
        let e = image_direction(&frame, Vec2::new(1.0, 0.0), IMAGE_DIRECTION_EPSILON).unwrap();
        assert!((e - Vec2::new(1.0, 0.0)).norm() < 1e-12);

        let off = make_tangent_frame(&UnitVec3::from_azimuth_elevation(30.0, -25.0));
        let v = Vec2::new(0.6, 0.8);
        let a = image_direction(&off, v, IMAGE_DIRECTION_EPSILON).unwrap();
        let b = image_direction(&off, v, 0.5 * IMAGE_DIRECTION_EPSILON).unwrap();
        assert!((a - b).norm() < 1e-6);
    }

    #[test]
    fn recovers_anisotropic_cloud_at_center() {
        let center = UnitVec3::unit_z();
        let frame = make_tangent_frame(&center);
        let (h, v) = (4f64.to_radians().sin(), 3f64.to_radians().sin());
        let g = Gaussian2D::new(Vec2::zero(), Sym2::diagonal(h * h, v * v)).unwrap();
        let corrected: Vec<_> = sample(&g, 5, 20_000)
            .into_iter()
            .map(|t| frame.lift(t).unwrap())
            .collect();
        let cell = cell_stats(&center, &corrected, &GridConfig::default());
        assert!(cell.valid, "{:?}", cell.reason);
        let e = cell.estimate.unwrap();
        assert!(e.bias_angle_deg < 0.2);
        assert!(
            (e.sigma_major_deg - 4.0).abs() < 0.2,
            "{}",
            e.sigma_major_deg
        );
        assert!(
            (e.sigma_minor_deg - 3.0).abs() < 0.2,
            "{}",
            e.sigma_minor_deg
        );
        assert!((e.image.axes_angle_deg - 90.0).abs() < 1e-6);
        assert!(e.image.major_direction.x.abs() > 0.99);
    }

    #[test]
    fn small_and_degenerate_cells_are_invalid() {
        let center = UnitVec3::unit_z();
        let cfg = GridConfig::default();
        let few = cell_stats(&center, &vec![center; 50], &cfg);
        assert!(!few.valid);
        assert_eq!(few.reason, Some(InvalidReason::TooFewSamples));
        let exact = cell_stats(&center, &vec![center; 500], &cfg);
        assert!(!exact.valid);
        assert_eq!(exact.reason, Some(InvalidReason::Degenerate));
        assert_eq!(exact.mean_sample_error_deg, Some(0.0));
    }

    #[test]
    fn upper_hemisphere_data_leaves_lower_cells_invalid() {
        let mut samples = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                let d =
                    UnitVec3::from_azimuth_elevation(-10.0 + i as f64 * 0.5, 5.0 + j as f64 * 0.5);
                let f = make_tangent_frame(&d);
                let t = Vec2::new(
                    0.01 * ((i * 7 + j) % 5) as f64 - 0.02,
                    0.01 * ((i + 3 * j) % 5) as f64 - 0.02,
                );
                samples.push(pair_sample(d, f.lift(t).unwrap()));
            }
        }
        let cfg = GridConfig {
            azimuth_extent_deg: 10.0,
            elevation_extent_deg: 20.0,
            min_cell_samples: 20,
            ..GridConfig::default()
        };
        let cells = run_grid(&samples, &cfg).unwrap();
        for c in &cells {
            if c.elevation_deg < -4.0 {
                assert!(!c.valid);
                assert_eq!(c.n_samples, 0);
            }
        }
    }
}
