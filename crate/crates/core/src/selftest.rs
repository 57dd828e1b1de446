//! Built-in closure checks: synthesize data with known fields, analyze it
//! and compare against the analytic answer.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataio::{grid_table, sha256_hex};
use crate::directional::{correct_pairs, prepare, run_grid, GridCellStats, GridConfig};
use crate::error::Result;
use crate::gaussian2d::{eigen_axes, moments_estimate, robust_fit, sample, FitConfig};
use crate::geometry::{
    make_tangent_frame, rotation_onto, tangent_length_to_angle, CameraIntrinsics,
};
use crate::metrics::{depth_error_curve, subject_error, DepthBinning, Environment, GazeSample};
use crate::synth::{
    expected_cell, generate, BiasField, CovarianceField, DepthCoupling, SubjectScale, SynthConfig,
    TargetDensity,
};
use crate::{Gaussian2D, Sym2, UnitVec3, Vec2, Vec3};

/// Tolerances of the closure checks, in degrees.
pub const BIAS_TOLERANCE_DEG: f64 = 0.15;
pub const SIGMA_MINOR_TOLERANCE_DEG: f64 = 0.2;
pub const SIGMA_MAJOR_TOLERANCE_DEG: f64 = 0.25;
pub const DIRECTION_TOLERANCE_DEG: f64 = 10.0;
/// Bias size above which recovered directions are compared.
pub const DIRECTION_MIN_BIAS_DEG: f64 = 0.5;
/// Runtime budget of the single-threaded unbiased closure, seconds.
pub const CLOSURE_BUDGET_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelftestConfig {
    /// Samples per closure dataset.
    pub closure_samples: usize,
    /// Samples of the depth-curve dataset.
    pub depth_samples: usize,
    pub seed: u64,
    pub grid: GridConfig,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        Self {
            closure_samples: 2_500_000,
            depth_samples: 200_000,
            seed: 7,
            grid: GridConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosureCase {
    Unbiased,
    Biased,
    Outliers,
}

/// Synthetic configuration of a closure case: anisotropic noise with
/// 4 deg horizontal and 3 deg vertical spread, unit subject scale, no depth
/// coupling. Targets are uniform and extend far enough that every
/// neighborhood of the default grid is fully covered.
pub fn closure_synth(case: ClosureCase, samples: usize, seed: u64) -> SynthConfig {
    let subjects = 50;
    SynthConfig {
        seed,
        n_subjects: subjects,
        samples_per_subject: samples.div_ceil(subjects),
        targets: TargetDensity {
            extent_deg: 53.0,
            center_bias: 0.0,
            ..TargetDensity::default()
        },
        bias: match case {
            ClosureCase::Biased => BiasField::center_ramp(),
            _ => BiasField::Zero,
        },
        covariance: CovarianceField::anisotropic(),
        outlier_rate: if case == ClosureCase::Outliers {
            0.05
        } else {
            0.0
        },
        outlier_cone_deg: 20.0,
        subject_scale: SubjectScale::Unit,
        depth_coupling: DepthCoupling::default(),
        ..SynthConfig::default()
    }
}

/// Isotropic 3 deg noise with the near-depth multiplier ramp.
pub fn depth_synth(samples: usize, seed: u64) -> SynthConfig {
    let subjects = 20;
    SynthConfig {
        seed,
        n_subjects: subjects,
        samples_per_subject: samples.div_ceil(subjects),
        bias: BiasField::Zero,
        covariance: CovarianceField::Isotropic { sigma_deg: 3.0 },
        outlier_rate: 0.0,
        subject_scale: SubjectScale::Unit,
        depth_coupling: DepthCoupling::vergence(),
        ..SynthConfig::default()
    }
}

/// Agreement between a grid run and [`expected_cell`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureStats {
    pub cells: usize,
    pub valid_cells: usize,
    /// Largest angle between fitted and expected mean, degrees.
    pub max_bias_error_deg: f64,
    pub rms_bias_error_deg: f64,
    pub max_sigma_minor_error_deg: f64,
    pub max_sigma_major_error_deg: f64,
    /// Largest angle between fitted and expected bias direction over cells
    /// whose expected bias is at least [`DIRECTION_MIN_BIAS_DEG`].
    pub max_direction_error_deg: f64,
    pub direction_cells: usize,
}

fn degrees(tangent_len: f64) -> f64 {
    tangent_length_to_angle(tangent_len).degrees
}

/// Compares every valid cell with the analytic population Gaussian.
pub fn closure_stats(synth: &SynthConfig, grid: &[GridCellStats]) -> Result<ClosureStats> {
    let mut s = ClosureStats {
        cells: grid.len(),
        valid_cells: 0,
        max_bias_error_deg: 0.0,
        rms_bias_error_deg: 0.0,
        max_sigma_minor_error_deg: 0.0,
        max_sigma_major_error_deg: 0.0,
        max_direction_error_deg: 0.0,
        direction_cells: 0,
    };
    let mut sq = 0.0;
    for c in grid.iter().filter(|c| c.valid) {
        let Some(e) = c.estimate.as_ref() else {
            continue;
        };
        let expected = expected_cell(synth, &c.d_gt)?;
        let axes = eigen_axes(&expected);
        let mu = e.fit.gaussian.mu();
        let err = degrees((mu - expected.mu()).norm());
        s.valid_cells += 1;
        sq += err * err;
        s.max_bias_error_deg = s.max_bias_error_deg.max(err);
        s.max_sigma_minor_error_deg = s
            .max_sigma_minor_error_deg
            .max((e.sigma_minor_deg - degrees(axes.sigma_minor)).abs());
        s.max_sigma_major_error_deg = s
            .max_sigma_major_error_deg
            .max((e.sigma_major_deg - degrees(axes.sigma_major)).abs());
        if degrees(expected.mu().norm()) >= DIRECTION_MIN_BIAS_DEG {
            let (a, b) = (mu, expected.mu());
            let angle = (a.x * b.y - a.y * b.x).abs().atan2(a.dot(b)).to_degrees();
            s.max_direction_error_deg = s.max_direction_error_deg.max(angle);
            s.direction_cells += 1;
        }
    }
    if s.valid_cells > 0 {
        s.rms_bias_error_deg = (sq / s.valid_cells as f64).sqrt();
    }
    Ok(s)
}

/// Fraction of valid cells where the plain moments estimate of the corrected
/// estimates misses the unbiased-case tolerances.
pub fn moments_violation_fraction(
    synth: &SynthConfig,
    samples: &[GazeSample],
    grid: &[GridCellStats],
    radius_deg: f64,
) -> Result<f64> {
    let pairs = prepare(samples)?;
    let (mut violated, mut total) = (0usize, 0usize);
    for c in grid.iter().filter(|c| c.valid) {
        let frame = make_tangent_frame(&c.d_gt);
        let pts: Vec<Vec2> = correct_pairs(&pairs, &c.d_gt, radius_deg)
            .iter()
            .map(|d| frame.project(d))
            .collect();
        let g = moments_estimate(&pts)?;
        let (axes, expected) = (eigen_axes(&g), eigen_axes(&expected_cell(synth, &c.d_gt)?));
        let ok = degrees(g.mu().norm()) <= BIAS_TOLERANCE_DEG
            && (degrees(axes.sigma_minor) - degrees(expected.sigma_minor)).abs()
                <= SIGMA_MINOR_TOLERANCE_DEG
            && (degrees(axes.sigma_major) - degrees(expected.sigma_major)).abs()
                <= SIGMA_MAJOR_TOLERANCE_DEG;
        total += 1;
        if !ok {
            violated += 1;
        }
    }
    Ok(if total == 0 {
        0.0
    } else {
        violated as f64 / total as f64
    })
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Wall time of timed checks. Not serialized, so reports stay
    /// reproducible.
    #[serde(skip)]
    pub elapsed_s: Option<f64>,
}

impl CheckResult {
    fn new(id: u32, name: &str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name: name.to_string(),
            passed,
            detail,
            elapsed_s: None,
        }
    }
}

fn closure_check(id: u32, name: &str, stats: &ClosureStats, extra: &str, ok: bool) -> CheckResult {
    let passed = ok
        && stats.valid_cells == stats.cells
        && stats.max_sigma_minor_error_deg <= SIGMA_MINOR_TOLERANCE_DEG
        && stats.max_sigma_major_error_deg <= SIGMA_MAJOR_TOLERANCE_DEG;
    CheckResult::new(
        id,
        name,
        passed,
        format!(
            "valid {}/{}, max bias error {:.3} deg, rms {:.3} deg, sigma minor/major max error {:.3}/{:.3} deg{extra}",
            stats.valid_cells,
            stats.cells,
            stats.max_bias_error_deg,
            stats.rms_bias_error_deg,
            stats.max_sigma_minor_error_deg,
            stats.max_sigma_major_error_deg
        ),
    )
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(1).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn check_unbiased(cfg: &SelftestConfig) -> Result<CheckResult> {
    let synth = closure_synth(ClosureCase::Unbiased, cfg.closure_samples, cfg.seed);
    let start = Instant::now();
    let grid = single_threaded(|| -> Result<_> {
        let data = generate(&synth)?;
        run_grid(&data.samples, &cfg.grid)
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    let stats = closure_stats(&synth, &grid)?;
    let ok = stats.max_bias_error_deg <= BIAS_TOLERANCE_DEG && elapsed <= CLOSURE_BUDGET_S;
    let mut result = closure_check(
        1,
        "oracle closure, unbiased",
        &stats,
        &format!(", runtime budget {CLOSURE_BUDGET_S} s single-threaded"),
        ok,
    );
    result.elapsed_s = Some(elapsed);
    Ok(result)
}

fn check_biased(cfg: &SelftestConfig) -> Result<CheckResult> {
    let synth = closure_synth(ClosureCase::Biased, cfg.closure_samples, cfg.seed + 1);
    let data = generate(&synth)?;
    let grid = run_grid(&data.samples, &cfg.grid)?;
    let s = closure_stats(&synth, &grid)?;
    let passed = s.valid_cells == s.cells
        && s.rms_bias_error_deg <= BIAS_TOLERANCE_DEG
        && s.direction_cells > 0
        && s.max_direction_error_deg <= DIRECTION_TOLERANCE_DEG;
    Ok(CheckResult::new(
        2,
        "oracle closure, biased",
        passed,
        format!(
            "valid {}/{}, bias rms error {:.3} deg, max direction error {:.2} deg over {} cells",
            s.valid_cells,
            s.cells,
            s.rms_bias_error_deg,
            s.max_direction_error_deg,
            s.direction_cells
        ),
    ))
}

fn check_outliers(cfg: &SelftestConfig) -> Result<CheckResult> {
    let synth = closure_synth(ClosureCase::Outliers, cfg.closure_samples, cfg.seed + 2);
    let data = generate(&synth)?;
    let grid = run_grid(&data.samples, &cfg.grid)?;
    let stats = closure_stats(&synth, &grid)?;
    let frac = moments_violation_fraction(
        &synth,
        &data.samples,
        &grid,
        cfg.grid.neighborhood_radius_deg,
    )?;
    let ok = stats.max_bias_error_deg <= BIAS_TOLERANCE_DEG && frac >= 0.5;
    Ok(closure_check(
        3,
        "robustness to cone outliers",
        &stats,
        &format!(", moments estimate fails on {:.1}% of cells", 100.0 * frac),
        ok,
    ))
}

fn check_gaussian_fit(cfg: &SelftestConfig) -> Result<CheckResult> {
    let truth = Gaussian2D::new(Vec2::new(1.0, 1.0), Sym2::new(0.7, 0.8, 2.5))?;
    let fit = robust_fit(&sample(&truth, cfg.seed, 10_000), &FitConfig::default())?;
    let (mu, s, t) = (fit.gaussian.mu(), fit.gaussian.sigma(), truth.sigma());
    let mu_err = (mu.x - 1.0).abs().max((mu.y - 1.0).abs());
    let rel = [(s.xx, t.xx), (s.xy, t.xy), (s.yy, t.yy)]
        .iter()
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max);
    let axes = eigen_axes(&truth);
    let (tr, det) = (t.trace(), t.determinant());
    let disc = (tr * tr / 4.0 - det).sqrt();
    let eig_err = (axes.lambda1 - (tr / 2.0 + disc))
        .abs()
        .max((axes.lambda2 - (tr / 2.0 - disc)).abs());
    Ok(CheckResult::new(
        4,
        "gaussian fit oracle",
        mu_err <= 0.05 && rel <= 0.05 && eig_err <= 1e-9,
        format!(
            "mean error {mu_err:.4}, covariance relative error {:.2}%, eigenvalues {:.4}/{:.4} (error {eig_err:.1e})",
            100.0 * rel,
            axes.lambda1,
            axes.lambda2
        ),
    ))
}

fn erring_sample(depth_cm: f64, error_deg: f64) -> Result<GazeSample> {
    let e = error_deg.to_radians();
    Ok(GazeSample {
        subject_id: "selftest".into(),
        session_id: "selftest".into(),
        device_id: "selftest".into(),
        environment: Environment::Indoor,
        p_gt: Vec3::new(0.0, 0.0, depth_cm),
        d_dev: UnitVec3::from_xyz(e.sin(), 0.0, e.cos())?,
        p_dev: None,
    })
}

fn check_subject_error() -> Result<CheckResult> {
    let binning = DepthBinning::default();
    let mut two_tier = Vec::new();
    for (i, depth) in [40.0, 70.0, 100.0, 140.0, 170.0].iter().enumerate() {
        for _ in 0..=i {
            two_tier.push(erring_sample(*depth, 2.0)?);
        }
    }
    for depth in [200.0, 240.0, 270.0, 300.0, 330.0] {
        two_tier.push(erring_sample(depth, 4.0)?);
    }
    let a = subject_error(&two_tier, None, &binning)?.value_deg;
    let constant: Vec<_> = [31.0, 33.0, 90.0, 349.0]
        .iter()
        .map(|&d| erring_sample(d, 2.0))
        .collect::<Result<_>>()?;
    let b = subject_error(&constant, None, &binning)?.value_deg;
    let passed = (a - 3.0).abs() <= 1e-12 && (b - 2.0).abs() <= 1e-12;
    Ok(CheckResult::new(
        5,
        "subject error arithmetic",
        passed,
        format!("two-tier {a:.15}, constant {b:.15}"),
    ))
}

fn check_geometry(cfg: &SelftestConfig) -> Result<CheckResult> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let random_unit = |rng: &mut rand_chacha::ChaCha8Rng| loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n < 1.0 {
            return crate::geometry::normalize(v);
        }
    };
    let mut rot_err: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 10_000 {
        let (a, b) = (random_unit(&mut rng)?, random_unit(&mut rng)?);
        if let Ok(r) = rotation_onto(&a, &b) {
            rot_err = rot_err.max((r.apply(&a).as_vec() - b.as_vec()).norm());
            pairs += 1;
        }
    }
    let distortion = 1.0 - 5f64.to_radians().sin() / 5f64.to_radians();
    let cam = CameraIntrinsics::IDEAL;
    let mut px_err: f64 = 0.0;
    for _ in 0..10_000 {
        let px = Vec2::new(
            rng.random_range(0.0..cam.width as f64),
            rng.random_range(0.0..cam.height as f64),
        );
        let back = cam.project_point(&cam.unproject(px))?;
        px_err = px_err.max((back - px).norm());
    }
    let passed = rot_err < 1e-9 && distortion <= 0.0013 && px_err < 1e-6;
    Ok(CheckResult::new(
        6,
        "geometry",
        passed,
        format!(
            "rotation error {rot_err:.1e} over {pairs} pairs, distortion at 5 deg {:.4}%, pixel round trip {px_err:.1e}",
            100.0 * distortion
        ),
    ))
}

fn check_determinism(cfg: &SelftestConfig) -> Result<CheckResult> {
    let synth = closure_synth(ClosureCase::Biased, 100_000, cfg.seed + 3);
    let mut grid_cfg = cfg.grid.clone();
    grid_cfg.min_cell_samples = 100;
    let run = |threads: usize| -> Result<(String, String)> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| crate::Error::Config(e.to_string()))?;
        pool.install(|| {
            let data = generate(&synth)?;
            let mut reversed = data.samples.clone();
            if threads > 1 {
                reversed.reverse();
            }
            let grid = run_grid(&reversed, &grid_cfg)?;
            Ok((
                data.provenance.samples_digest,
                sha256_hex(&grid_table(&grid).to_csv()?),
            ))
        })
    };
    let (a, b) = (run(1)?, run(3)?);
    Ok(CheckResult::new(
        7,
        "determinism",
        a == b,
        format!(
            "dataset {}, grid {} (1 vs 3 threads, reversed record order)",
            &a.0[..12],
            &a.1[..12]
        ),
    ))
}

fn check_depth_curve(cfg: &SelftestConfig) -> Result<CheckResult> {
    let synth = depth_synth(cfg.depth_samples, cfg.seed + 4);
    let data = generate(&synth)?;
    let curve = depth_error_curve(&data.samples, &DepthBinning::default())?;
    let far: Vec<f64> = curve
        .iter()
        .filter(|b| b.lo_cm >= synth.depth_coupling.far_cm)
        .filter_map(|b| b.mean_error_deg)
        .collect();
    let plateau = far.iter().sum::<f64>() / far.len().max(1) as f64;
    let flat = far
        .iter()
        .map(|v| (v / plateau - 1.0).abs())
        .fold(0.0, f64::max);
    let near = curve
        .iter()
        .find(|b| b.lo_cm <= 50.0 && 50.0 < b.hi_cm)
        .and_then(|b| b.mean_error_deg)
        .map_or(f64::NAN, |v| v / plateau - 1.0);
    let passed = !far.is_empty() && flat <= 0.03 && (near - 0.40).abs() <= 0.05;
    Ok(CheckResult::new(
        8,
        "depth curve shape",
        passed,
        format!(
            "plateau {plateau:.3} deg, max deviation beyond {} cm {:.2}%, elevation at 50 cm {:.1}%",
            synth.depth_coupling.far_cm,
            100.0 * flat,
            100.0 * near
        ),
    ))
}

/// Runs all checks in order.
pub fn run(cfg: &SelftestConfig) -> Result<Vec<CheckResult>> {
    cfg.grid.validate()?;
    Ok(vec![
        check_unbiased(cfg)?,
        check_biased(cfg)?,
        check_outliers(cfg)?,
        check_gaussian_fit(cfg)?,
        check_subject_error()?,
        check_geometry(cfg)?,
        check_determinism(cfg)?,
        check_depth_curve(cfg)?,
    ])
}
