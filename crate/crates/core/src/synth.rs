//! Synthetic gaze datasets with analytically known error fields.
//!
//! Every sample's error is drawn in the canonical tangent frame of its
//! ground-truth direction from `N(bias(d), (s m)^2 Sigma(d))`, where `s` is
//! the subject's scale multiplier and `m` the depth multiplier. A fraction of
//! samples is replaced by outliers drawn uniformly from a cone around the
//! ground truth. [`expected_cell`] returns the matching population Gaussian.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{angle_between, make_tangent_frame, TangentFrame};
use crate::metrics::{Environment, GazeSample, MetaTable, SubjectMeta};
use crate::{Gaussian2D, Sym2, UnitVec3, Vec2};

/// Distribution of gaze targets over azimuth and elevation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetDensity {
    /// Targets lie within `[-extent_deg, extent_deg]` in azimuth and elevation.
    pub extent_deg: f64,
    /// Fraction of targets drawn from the central Gaussian instead of the
    /// uniform square.
    pub center_bias: f64,
    pub center_sigma_deg: f64,
}

impl Default for TargetDensity {
    fn default() -> Self {
        Self {
            extent_deg: 50.0,
            center_bias: 0.3,
            center_sigma_deg: 20.0,
        }
    }
}

/// Systematic error as a tangent vector of the canonical frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasField {
    Zero,
    /// The same offset everywhere; `direction_deg` is measured from `b1`
    /// towards `b2`.
    Constant {
        angle_deg: f64,
        direction_deg: f64,
    },
    /// Offset pointing towards the optical axis. Its size is `base_deg`,
    /// rising smoothly to `peak_deg` as elevation drops from
    /// `ramp_start_el_deg` to `ramp_end_el_deg`, and tapering linearly to zero
    /// inside `core_radius_deg` of the optical axis.
    CenterRamp {
        base_deg: f64,
        peak_deg: f64,
        ramp_start_el_deg: f64,
        ramp_end_el_deg: f64,
        core_radius_deg: f64,
    },
}

impl BiasField {
    pub fn center_ramp() -> Self {
        BiasField::CenterRamp {
            base_deg: 0.3,
            peak_deg: 2.5,
            ramp_start_el_deg: -20.0,
            ramp_end_el_deg: -40.0,
            core_radius_deg: 10.0,
        }
    }

    /// Bias size in degrees of visual angle at `d`.
    pub fn angle_deg(&self, d: &UnitVec3) -> f64 {
        match *self {
            BiasField::Zero => 0.0,
            BiasField::Constant { angle_deg, .. } => angle_deg,
            BiasField::CenterRamp {
                base_deg,
                peak_deg,
                ramp_start_el_deg,
                ramp_end_el_deg,
                core_radius_deg,
            } => {
                let (_, el) = d.azimuth_elevation();
                let t = ((ramp_start_el_deg - el) / (ramp_start_el_deg - ramp_end_el_deg))
                    .clamp(0.0, 1.0);
                let smooth = t * t * (3.0 - 2.0 * t);
                let ecc = angle_between(d, &UnitVec3::unit_z());
                (base_deg + (peak_deg - base_deg) * smooth) * (ecc / core_radius_deg).min(1.0)
            }
        }
    }

    /// Bias tangent vector in the frame at `d`; its length is the sine of
    /// [`BiasField::angle_deg`].
    pub fn at(&self, frame: &TangentFrame<f64>) -> Vec2 {
        let len = self.angle_deg(&frame.d_gt).to_radians().sin();
        match *self {
            BiasField::Zero => Vec2::zero(),
            BiasField::Constant { direction_deg, .. } => {
                let a = direction_deg.to_radians();
                Vec2::new(a.cos(), a.sin()).scale(len)
            }
            BiasField::CenterRamp { .. } => {
                let toward = frame.project(&UnitVec3::unit_z());
                toward
                    .normalized()
                    .map_or(Vec2::zero(), |dir| dir.scale(len))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BiasField::Zero => true,
            BiasField::Constant {
                angle_deg,
                direction_deg,
            } => (0.0..45.0).contains(&angle_deg) && direction_deg.is_finite(),
            BiasField::CenterRamp {
                base_deg,
                peak_deg,
                ramp_start_el_deg,
                ramp_end_el_deg,
                core_radius_deg,
            } => {
                (0.0..45.0).contains(&base_deg)
                    && (0.0..45.0).contains(&peak_deg)
                    && ramp_start_el_deg > ramp_end_el_deg
                    && core_radius_deg > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid bias field {self:?}")))
        }
    }
}

/// Tangent-plane covariance of the estimator noise. Standard deviations are
/// given as visual angles; the tangent-plane standard deviation is their sine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceField {
    Isotropic {
        sigma_deg: f64,
    },
    /// Independent spreads along `b1` (horizontal) and `b2` (vertical).
    Anisotropic {
        horizontal_deg: f64,
        vertical_deg: f64,
    },
    /// Anisotropic spreads scaled by
    /// `1 + modulation * clamp(az / extent) * clamp(el / extent)`, which
    /// differs in sign between diagonal quadrants.
    QuadrantModulated {
        horizontal_deg: f64,
        vertical_deg: f64,
        modulation: f64,
        extent_deg: f64,
    },
}

impl CovarianceField {
    pub fn anisotropic() -> Self {
        CovarianceField::Anisotropic {
            horizontal_deg: 4.0,
            vertical_deg: 3.0,
        }
    }

    pub fn at(&self, d: &UnitVec3) -> Sym2 {
        let s = |deg: f64| deg.to_radians().sin();
        match *self {
            CovarianceField::Isotropic { sigma_deg } => {
                let v = s(sigma_deg).powi(2);
                Sym2::diagonal(v, v)
            }
            CovarianceField::Anisotropic {
                horizontal_deg,
                vertical_deg,
            } => Sym2::diagonal(s(horizontal_deg).powi(2), s(vertical_deg).powi(2)),
            CovarianceField::QuadrantModulated {
                horizontal_deg,
                vertical_deg,
                modulation,
                extent_deg,
            } => {
                let (az, el) = d.azimuth_elevation();
                let f = 1.0
                    + modulation
                        * (az / extent_deg).clamp(-1.0, 1.0)
                        * (el / extent_deg).clamp(-1.0, 1.0);
                Sym2::diagonal(
                    (f * s(horizontal_deg)).powi(2),
                    (f * s(vertical_deg)).powi(2),
                )
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v < 30.0;
        let ok = match *self {
            CovarianceField::Isotropic { sigma_deg } => pos(sigma_deg),
            CovarianceField::Anisotropic {
                horizontal_deg,
                vertical_deg,
            } => pos(horizontal_deg) && pos(vertical_deg),
            CovarianceField::QuadrantModulated {
                horizontal_deg,
                vertical_deg,
                modulation,
                extent_deg,
            } => {
                pos(horizontal_deg)
                    && pos(vertical_deg)
                    && (0.0..1.0).contains(&modulation)
                    && extent_deg > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid covariance field {self:?}")))
        }
    }
}

/// Per-subject multiplier on the noise standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SubjectScale {
    Unit,
    /// Equiprobable values.
    Discrete {
        values: Vec<f64>,
    },
    /// `exp(sigma_log z)` with `z` standard normal (median one).
    LogNormal {
        sigma_log: f64,
    },
}

impl SubjectScale {
    /// `E[s^2]`.
    pub fn mean_square(&self) -> f64 {
        match self {
            SubjectScale::Unit => 1.0,
            SubjectScale::Discrete { values } => {
                values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64
            }
            SubjectScale::LogNormal { sigma_log } => (2.0 * sigma_log * sigma_log).exp(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            SubjectScale::Unit => 1.0,
            SubjectScale::Discrete { values } => values[rng.random_range(0..values.len())],
            SubjectScale::LogNormal { sigma_log } => LogNormal::new(0.0, *sigma_log)
                .expect("validated sigma")
                .sample(rng),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            SubjectScale::Unit => true,
            SubjectScale::Discrete { values } => {
                !values.is_empty() && values.iter().all(|v| *v > 0.0 && v.is_finite())
            }
            SubjectScale::LogNormal { sigma_log } => *sigma_log >= 0.0 && sigma_log.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid subject scale {self:?}")))
        }
    }
}

/// Noise multiplier as a function of target distance: `near_multiplier` up to
/// `near_cm`, falling linearly to one at `far_cm` and constant beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthCoupling {
    pub near_multiplier: f64,
    pub near_cm: f64,
    pub far_cm: f64,
}

impl Default for DepthCoupling {
    fn default() -> Self {
        Self {
            near_multiplier: 1.0,
            near_cm: 50.0,
            far_cm: 150.0,
        }
    }
}

impl DepthCoupling {
    pub fn vergence() -> Self {
        Self {
            near_multiplier: 1.4,
            ..Self::default()
        }
    }

    pub fn multiplier(&self, depth_cm: f64) -> f64 {
        let t = ((depth_cm - self.near_cm) / (self.far_cm - self.near_cm)).clamp(0.0, 1.0);
        self.near_multiplier + (1.0 - self.near_multiplier) * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_subjects: usize,
    pub samples_per_subject: usize,
    /// Target distances are uniform in this range, cm.
    pub depth_range_cm: [f64; 2],
    pub targets: TargetDensity,
    pub bias: BiasField,
    pub covariance: CovarianceField,
    pub outlier_rate: f64,
    pub outlier_cone_deg: f64,
    pub subject_scale: SubjectScale,
    pub depth_coupling: DepthCoupling,
    /// Fraction of each subject's samples recorded outdoors.
    pub outdoor_fraction: f64,
    pub n_devices: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 2023,
            n_subjects: 40,
            samples_per_subject: 2500,
            depth_range_cm: [30.0, 350.0],
            targets: TargetDensity::default(),
            bias: BiasField::center_ramp(),
            covariance: CovarianceField::anisotropic(),
            outlier_rate: 0.03,
            outlier_cone_deg: 20.0,
            subject_scale: SubjectScale::LogNormal { sigma_log: 0.3 },
            depth_coupling: DepthCoupling::vergence(),
            outdoor_fraction: 0.5,
            n_devices: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_subjects == 0 || self.samples_per_subject == 0 {
            return fail("n_subjects and samples_per_subject must be positive");
        }
        if self.n_devices == 0 {
            return fail("n_devices must be positive");
        }
        let [lo, hi] = self.depth_range_cm;
        if !(lo >= 20.0 && hi <= 1000.0 && lo < hi) {
            return fail("depth_range_cm must be increasing within [20, 1000]");
        }
        let t = &self.targets;
        if !(t.extent_deg > 0.0 && t.extent_deg <= 75.0) {
            return fail("target extent must be in (0, 75] degrees");
        }
        if !(0.0..=1.0).contains(&t.center_bias) || !(t.center_sigma_deg > 0.0) {
            return fail("center_bias must be in [0, 1] with a positive sigma");
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return fail("outlier_rate must be in [0, 1]");
        }
        if !(self.outlier_cone_deg > 0.0 && self.outlier_cone_deg <= 90.0) {
            return fail("outlier_cone_deg must be in (0, 90]");
        }
        if !(0.0..=1.0).contains(&self.outdoor_fraction) {
            return fail("outdoor_fraction must be in [0, 1]");
        }
        let c = &self.depth_coupling;
        if !(c.near_multiplier > 0.0 && c.near_cm < c.far_cm) {
            return fail("depth coupling needs a positive multiplier and near_cm < far_cm");
        }
        self.bias.validate()?;
        self.covariance.validate()?;
        self.subject_scale.validate()
    }

    pub fn total_samples(&self) -> usize {
        self.n_subjects * self.samples_per_subject
    }

    /// `E[m(depth)^2]` over the uniform depth distribution.
    pub fn depth_mean_square(&self) -> f64 {
        const N: usize = 4096;
        let [lo, hi] = self.depth_range_cm;
        (0..N)
            .map(|i| {
                let d = lo + (i as f64 + 0.5) * (hi - lo) / N as f64;
                self.depth_coupling.multiplier(d).powi(2)
            })
            .sum::<f64>()
            / N as f64
    }
}

/// Population tangent-plane Gaussian of the inlier errors at `d_gt`:
/// mean `bias(d)`, covariance `E[s^2] E[m^2] Sigma(d)`.
pub fn expected_cell(cfg: &SynthConfig, d_gt: &UnitVec3) -> Result<Gaussian2D> {
    let frame = make_tangent_frame(d_gt);
    let scale = cfg.subject_scale.mean_square() * cfg.depth_mean_square();
    Gaussian2D::new(cfg.bias.at(&frame), cfg.covariance.at(d_gt).scale(scale))
}

fn draw_target(cfg: &TargetDensity, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let e = cfg.extent_deg;
    if rng.random::<f64>() < cfg.center_bias {
        loop {
            let az = cfg.center_sigma_deg * rng.sample::<f64, _>(StandardNormal);
            let el = cfg.center_sigma_deg * rng.sample::<f64, _>(StandardNormal);
            if az.abs() <= e && el.abs() <= e {
                return (az, el);
            }
        }
    }
    (rng.random_range(-e..=e), rng.random_range(-e..=e))
}

/// Uniform direction within `half_angle_deg` of `d`.
fn draw_in_cone(frame: &TangentFrame<f64>, half_angle_deg: f64, rng: &mut ChaCha8Rng) -> UnitVec3 {
    let cos_max = half_angle_deg.to_radians().cos();
    let cos_t = rng.random_range(cos_max..=1.0);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let v = frame.d_gt.as_vec().scale(cos_t)
        + frame.tangent_to_world(Vec2::new(phi.cos(), phi.sin()).scale(sin_t));
    crate::geometry::normalize(v).expect("unit combination")
}

fn subject_meta(id: &str, rng: &mut ChaCha8Rng) -> SubjectMeta {
    let round1 = |v: f64| (v * 10.0).round() / 10.0;
    let gender = if rng.random::<f64>() < 0.5 {
        "female"
    } else {
        "male"
    };
    let ipd: f64 = 63.2 + 3.6 * rng.sample::<f64, _>(StandardNormal);
    SubjectMeta {
        subject_id: id.to_string(),
        age: round1(rng.random_range(18.0..70.0)),
        gender_appearance: gender.to_string(),
        ipd_mm: round1(ipd.clamp(50.0, 78.0)),
        contact_lenses: rng.random::<f64>() < 0.15,
        eye_makeup: rng.random::<f64>() < 0.25,
    }
}

fn generate_subject(cfg: &SynthConfig, index: usize) -> (SubjectMeta, Vec<GazeSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let id = format!("S{index:04}");
    let meta = subject_meta(&id, &mut rng);
    let scale = cfg.subject_scale.draw(&mut rng);
    let device = format!("D{:02}", index % cfg.n_devices);
    let [lo, hi] = cfg.depth_range_cm;
    let mut samples = Vec::with_capacity(cfg.samples_per_subject);
    for _ in 0..cfg.samples_per_subject {
        let (az, el) = draw_target(&cfg.targets, &mut rng);
        let d = UnitVec3::from_azimuth_elevation(az, el);
        let depth = rng.random_range(lo..=hi);
        let frame = make_tangent_frame(&d);
        let outdoor = rng.random::<f64>() < cfg.outdoor_fraction;
        let outlier = rng.random::<f64>() < cfg.outlier_rate;
        let d_dev = if outlier {
            draw_in_cone(&frame, cfg.outlier_cone_deg, &mut rng)
        } else {
            let (l11, l21, l22) = cfg
                .covariance
                .at(&d)
                .cholesky()
                .expect("validated covariance field is positive definite");
            let k = scale * cfg.depth_coupling.multiplier(depth);
            let bias = cfg.bias.at(&frame);
            loop {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let e = bias + Vec2::new(l11 * z1, l21 * z1 + l22 * z2).scale(k);
                if let Ok(v) = frame.lift(e) {
                    break v;
                }
            }
        };
        let environment = if outdoor {
            Environment::Outdoor
        } else {
            Environment::Indoor
        };
        samples.push(GazeSample {
            subject_id: id.clone(),
            session_id: format!("{id}-{environment}"),
            device_id: device.clone(),
            environment,
            p_gt: d.as_vec().scale(depth),
            d_dev,
            p_dev: None,
        });
    }
    (meta, samples)
}

/// Generates a dataset. Each subject draws from its own random stream, so the
/// output depends only on the configuration, not on scheduling.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let parts: Vec<(SubjectMeta, Vec<GazeSample>)> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| generate_subject(cfg, i))
        .collect();
    let mut meta = MetaTable::new();
    let mut samples = Vec::with_capacity(cfg.total_samples());
    for (m, s) in parts {
        meta.insert(m.subject_id.clone(), m);
        samples.extend(s);
    }
    Dataset::from_parts(samples, meta)
}
