//! Sample-level and subject-level error metrics and population splits.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angle_between, normalize};
use crate::{UnitVec3, Vec2, Vec3};

/// Sanity bounds on the ground-truth gaze distance, in cm.
pub const DEPTH_SANITY_CM: (f64, f64) = (20.0, 1000.0);

/// Plausible interpupillary distances, in mm.
pub const IPD_RANGE_MM: (f64, f64) = (45.0, 85.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Indoor,
    Outdoor,
}

impl Environment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Environment::Indoor => "indoor",
            Environment::Outdoor => "outdoor",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Environment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "indoor" => Ok(Environment::Indoor),
            "outdoor" => Ok(Environment::Outdoor),
            other => Err(format!("unknown environment `{other}`")),
        }
    }
}

/// One recorded gaze sample: where the subject looked and what the estimator
/// predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeSample {
    pub subject_id: String,
    pub session_id: String,
    pub device_id: String,
    pub environment: Environment,
    /// Ground-truth gaze point in scene-camera coordinates, cm.
    pub p_gt: Vec3,
    /// Predicted gaze direction.
    pub d_dev: UnitVec3,
    /// Predicted gaze point in pixels, when the recording carries it.
    pub p_dev: Option<Vec2>,
}

impl GazeSample {
    /// Distance to the gaze target, `|p_gt|` in cm.
    pub fn depth_cm(&self) -> f64 {
        self.p_gt.norm()
    }

    /// Ground-truth gaze direction.
    pub fn d_gt(&self) -> Result<UnitVec3> {
        normalize(self.p_gt)
    }

    /// Checks the per-record invariants.
    pub fn validate(&self) -> Result<()> {
        let depth = self.depth_cm();
        if !(DEPTH_SANITY_CM.0..=DEPTH_SANITY_CM.1).contains(&depth) {
            return Err(Error::schema(
                format!("subject {}", self.subject_id),
                "p_gt",
                format!(
                    "gaze distance {depth:.3} cm outside [{}, {}] cm",
                    DEPTH_SANITY_CM.0, DEPTH_SANITY_CM.1
                ),
            ));
        }
        Ok(())
    }
}

/// Per-subject metadata used for population splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub subject_id: String,
    pub age: f64,
    pub gender_appearance: String,
    pub ipd_mm: f64,
    pub contact_lenses: bool,
    pub eye_makeup: bool,
}

impl SubjectMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.age >= 0.0) {
            return Err(Error::schema(
                format!("subject {}", self.subject_id),
                "age",
                format!("age must be non-negative, got {}", self.age),
            ));
        }
        if !(IPD_RANGE_MM.0..=IPD_RANGE_MM.1).contains(&self.ipd_mm) {
            return Err(Error::schema(
                format!("subject {}", self.subject_id),
                "ipd_mm",
                format!(
                    "IPD {} mm outside [{}, {}] mm",
                    self.ipd_mm, IPD_RANGE_MM.0, IPD_RANGE_MM.1
                ),
            ));
        }
        Ok(())
    }
}

/// Subject metadata keyed by subject id.
pub type MetaTable = BTreeMap<String, SubjectMeta>;

/// Angle in degrees between the ground-truth and predicted gaze directions.
pub fn sample_error(s: &GazeSample) -> Result<f64> {
    Ok(angle_between(&s.d_gt()?, &s.d_dev))
}

/// Uniform depth bins over a closed range; the upper edge belongs to the last bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthBinning {
    pub min_cm: f64,
    pub max_cm: f64,
    pub bins: usize,
}

impl Default for DepthBinning {
    /// Ten 32 cm bins between 30 and 350 cm.
    fn default() -> Self {
        Self {
            min_cm: 30.0,
            max_cm: 350.0,
            bins: 10,
        }
    }
}

impl DepthBinning {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || !(self.max_cm > self.min_cm) {
            return Err(Error::Config(format!(
                "invalid depth binning {}..{} cm in {} bins",
                self.min_cm, self.max_cm, self.bins
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.max_cm - self.min_cm) / self.bins as f64
    }

    pub fn bin_of(&self, depth_cm: f64) -> Option<usize> {
        if !(depth_cm >= self.min_cm && depth_cm <= self.max_cm) {
            return None;
        }
        let i = ((depth_cm - self.min_cm) / self.width()) as usize;
        Some(i.min(self.bins - 1))
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = self.width();
        (
            self.min_cm + bin as f64 * w,
            self.min_cm + (bin + 1) as f64 * w,
        )
    }
}

/// Aggregate error of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectError {
    pub subject_id: String,
    /// Environment the samples were restricted to, if any.
    pub environment: Option<Environment>,
    pub value_deg: f64,
    pub bins_used: usize,
    pub samples_used: usize,
}

/// Subject error: the unweighted mean over non-empty depth bins of the mean
/// sample error in each bin.
///
/// All samples must belong to one subject. Samples outside the binning range
/// are ignored, as are samples from other environments when `environment`
/// is set.
pub fn subject_error(
    samples: &[GazeSample],
    environment: Option<Environment>,
    binning: &DepthBinning,
) -> Result<SubjectError> {
    binning.validate()?;
    let Some(first) = samples.first() else {
        return Err(Error::NoData("no samples".into()));
    };
    let subject = &first.subject_id;
    let mut sums = vec![(0.0f64, 0usize); binning.bins];
    for s in samples {
        if &s.subject_id != subject {
            return Err(Error::schema(
                format!("subject {subject}"),
                "subject_id",
                format!("mixed subjects: found `{}`", s.subject_id),
            ));
        }
        if environment.is_some_and(|e| e != s.environment) {
            continue;
        }
        if let Some(b) = binning.bin_of(s.depth_cm()) {
            sums[b].0 += sample_error(s)?;
            sums[b].1 += 1;
        }
    }
    let used: Vec<f64> = sums
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(sum, n)| sum / *n as f64)
        .collect();
    if used.is_empty() {
        return Err(Error::NoData(format!(
            "subject {subject} has no samples between {} and {} cm",
            binning.min_cm, binning.max_cm
        )));
    }
    Ok(SubjectError {
        subject_id: subject.clone(),
        environment,
        value_deg: used.iter().sum::<f64>() / used.len() as f64,
        bins_used: used.len(),
        samples_used: sums.iter().map(|(_, n)| n).sum(),
    })
}

/// Subject errors for every subject in `samples`, ordered by subject id.
/// Subjects without usable samples are skipped.
pub fn subject_errors(
    samples: &[GazeSample],
    environment: Option<Environment>,
    binning: &DepthBinning,
) -> Result<Vec<SubjectError>> {
    let mut by_subject: BTreeMap<&str, Vec<GazeSample>> = BTreeMap::new();
    for s in samples {
        by_subject
            .entry(s.subject_id.as_str())
            .or_default()
            .push(s.clone());
    }
    let groups: Vec<Vec<GazeSample>> = by_subject.into_values().collect();
    let results: Vec<Result<SubjectError>> = groups
        .par_iter()
        .map(|g| subject_error(g, environment, binning))
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(e) => out.push(e),
            Err(Error::NoData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// One bin of the depth-resolved error curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthBin {
    pub lo_cm: f64,
    pub hi_cm: f64,
    pub center_cm: f64,
    /// `None` when the bin is empty.
    pub mean_error_deg: Option<f64>,
    pub count: usize,
}

/// Pooled mean sample error per depth bin over all samples.
pub fn depth_error_curve(samples: &[GazeSample], binning: &DepthBinning) -> Result<Vec<DepthBin>> {
    binning.validate()?;
    let mut sums = vec![(0.0f64, 0usize); binning.bins];
    for s in samples {
        if let Some(b) = binning.bin_of(s.depth_cm()) {
            sums[b].0 += sample_error(s)?;
            sums[b].1 += 1;
        }
    }
    Ok(sums
        .iter()
        .enumerate()
        .map(|(i, &(sum, n))| {
            let (lo, hi) = binning.edges(i);
            DepthBin {
                lo_cm: lo,
                hi_cm: hi,
                center_cm: 0.5 * (lo + hi),
                mean_error_deg: (n > 0).then(|| sum / n as f64),
                count: n,
            }
        })
        .collect())
}

/// Categorical dimension for population splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitDimension {
    GenderAppearance,
    ContactLenses,
    EyeMakeup,
    /// Groups by the environment filter the subject errors were computed with.
    Environment,
}

impl SplitDimension {
    pub const ALL: [SplitDimension; 4] = [
        SplitDimension::GenderAppearance,
        SplitDimension::ContactLenses,
        SplitDimension::EyeMakeup,
        SplitDimension::Environment,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitDimension::GenderAppearance => "gender_appearance",
            SplitDimension::ContactLenses => "contact_lenses",
            SplitDimension::EyeMakeup => "eye_makeup",
            SplitDimension::Environment => "environment",
        }
    }
}

/// Descriptive statistics of subject errors within one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub mean_deg: f64,
    /// Population (1/n) standard deviation.
    pub std_deg: f64,
    pub n: usize,
}

fn lookup<'a>(meta: &'a MetaTable, id: &str) -> Result<&'a SubjectMeta> {
    meta.get(id).ok_or_else(|| {
        Error::schema(
            format!("subject {id}"),
            "subject_id",
            format!("subject `{id}` missing from metadata"),
        )
    })
}

fn summarize(group: String, values: &[f64]) -> GroupSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    GroupSummary {
        group,
        mean_deg: mean,
        std_deg: var.sqrt(),
        n: values.len(),
    }
}

fn yes_no(flag: bool) -> String {
    if flag { "yes" } else { "no" }.to_string()
}

/// Mean, population std and count of subject errors per group, ordered by
/// group label.
pub fn split_summary(
    errors: &[SubjectError],
    meta: &MetaTable,
    split: SplitDimension,
) -> Result<Vec<GroupSummary>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in errors {
        let m = lookup(meta, &e.subject_id)?;
        let label = match split {
            SplitDimension::GenderAppearance => m.gender_appearance.clone(),
            SplitDimension::ContactLenses => yes_no(m.contact_lenses),
            SplitDimension::EyeMakeup => yes_no(m.eye_makeup),
            SplitDimension::Environment => e
                .environment
                .map_or_else(|| "all".to_string(), |env| env.to_string()),
        };
        groups.entry(label).or_default().push(e.value_deg);
    }
    Ok(groups
        .into_iter()
        .map(|(label, values)| summarize(label, &values))
        .collect())
}

/// Continuous subject attribute for binned curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinnedDimension {
    Age,
    Ipd,
}

impl BinnedDimension {
    /// Default bin width: 5 years for age, 2 mm for IPD.
    pub fn default_width(&self) -> f64 {
        match self {
            BinnedDimension::Age => 5.0,
            BinnedDimension::Ipd => 2.0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BinnedDimension::Age => "age",
            BinnedDimension::Ipd => "ipd",
        }
    }

    fn value(&self, m: &SubjectMeta) -> f64 {
        match self {
            BinnedDimension::Age => m.age,
            BinnedDimension::Ipd => m.ipd_mm,
        }
    }
}

/// Summary of subject errors whose attribute falls in `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedSummary {
    pub lo: f64,
    pub hi: f64,
    pub mean_deg: Option<f64>,
    pub std_deg: Option<f64>,
    pub n: usize,
}

/// Edges of width `width` aligned to multiples of it, covering all subjects.
pub fn default_edges(
    errors: &[SubjectError],
    meta: &MetaTable,
    dim: BinnedDimension,
    width: f64,
) -> Result<Vec<f64>> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for e in errors {
        let v = dim.value(lookup(meta, &e.subject_id)?);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return Ok(Vec::new());
    }
    let first = (lo / width).floor() as i64;
    let last = (hi / width).floor() as i64 + 1;
    Ok((first..=last).map(|k| k as f64 * width).collect())
}

/// Subject-error summaries binned by age or IPD over the given ascending
/// edges. The last bin is closed on the right.
pub fn binned_summary(
    errors: &[SubjectError],
    meta: &MetaTable,
    dim: BinnedDimension,
    edges: &[f64],
) -> Result<Vec<BinnedSummary>> {
    if edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config(
            "bin edges must be strictly increasing".into(),
        ));
    }
    let nbins = edges.len().saturating_sub(1);
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); nbins];
    for e in errors {
        let v = dim.value(lookup(meta, &e.subject_id)?);
        let idx = edges
            .windows(2)
            .enumerate()
            .position(|(i, w)| v >= w[0] && (v < w[1] || (i + 1 == nbins && v <= w[1])));
        if let Some(i) = idx {
            values[i].push(e.value_deg);
        }
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, vals)| {
            let s = (!vals.is_empty()).then(|| summarize(String::new(), vals));
            BinnedSummary {
                lo: edges[i],
                hi: edges[i + 1],
                mean_deg: s.as_ref().map(|s| s.mean_deg),
                std_deg: s.as_ref().map(|s| s.std_deg),
                n: vals.len(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Sample at `depth_cm` straight ahead whose prediction is off by
    /// `error_deg` to the right.
    fn sample_at(subject: &str, depth_cm: f64, error_deg: f64) -> GazeSample {
        let e = error_deg.to_radians();
        GazeSample {
            subject_id: subject.into(),
            session_id: "s0".into(),
            device_id: "d0".into(),
            environment: Environment::Indoor,
            p_gt: Vec3::new(0.0, 0.0, depth_cm),
            d_dev: UnitVec3::from_xyz(e.sin(), 0.0, e.cos()).unwrap(),
            p_dev: None,
        }
    }

    fn meta(id: &str, gender: &str, age: f64, ipd: f64) -> SubjectMeta {
        SubjectMeta {
            subject_id: id.into(),
            age,
            gender_appearance: gender.into(),
            ipd_mm: ipd,
            contact_lenses: false,
            eye_makeup: false,
        }
    }

    #[test]
    fn sample_error_examples() {
        assert_eq!(sample_error(&sample_at("a", 300.0, 0.0)).unwrap(), 0.0);
        let mut s = sample_at("a", 300.0, 0.0);
        s.d_dev = UnitVec3::from_xyz(1.0, 0.0, 0.0).unwrap();
        assert!((sample_error(&s).unwrap() - 90.0).abs() < 1e-12);
    }

    #[test]
    fn sample_error_ignores_target_distance() {
        let mut s = sample_at("a", 100.0, 0.0);
        s.p_gt = Vec3::new(10.0, -20.0, 100.0);
        s.d_dev = normalize(Vec3::new(0.1, -0.1, 1.0)).unwrap();
        let a = sample_error(&s).unwrap();
        s.p_gt = s.p_gt.scale(3.7);
        assert!((sample_error(&s).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn constant_error_gives_constant_subject_error() {
        let samples: Vec<_> = [35.0, 40.0, 100.0, 101.0, 102.0, 340.0, 350.0]
            .iter()
            .map(|&d| sample_at("a", d, 2.0))
            .collect();
        let e = subject_error(&samples, None, &DepthBinning::default()).unwrap();
        assert!((e.value_deg - 2.0).abs() < 1e-12);
        assert_eq!(e.samples_used, 7);
        assert_eq!(e.bins_used, 3);
    }

    #[test]
    fn bin_equalized_mean_differs_from_pooled_mean() {
        // Bins 1-5 cover 30..190 cm, bins 6-10 cover 190..350 cm.
        let mut samples = Vec::new();
        for (i, d) in [40.0, 70.0, 100.0, 130.0, 170.0].iter().enumerate() {
            for _ in 0..(i + 1) * 3 {
                samples.push(sample_at("a", *d, 2.0));
            }
        }
        for d in [200.0, 230.0, 260.0, 300.0, 340.0] {
            samples.push(sample_at("a", d, 4.0));
        }
        let e = subject_error(&samples, None, &DepthBinning::default()).unwrap();
        assert!((e.value_deg - 3.0).abs() < 1e-12);
        assert_eq!(e.bins_used, 10);
        let pooled: f64 = samples
            .iter()
            .map(|s| sample_error(s).unwrap())
            .sum::<f64>()
            / samples.len() as f64;
        assert!((pooled - 3.0).abs() > 0.5);
    }

    #[test]
    fn out_of_range_depth_is_no_data() {
        let samples = vec![sample_at("a", 400.0, 1.0); 4];
        assert!(matches!(
            subject_error(&samples, None, &DepthBinning::default()),
            Err(Error::NoData(_))
        ));
    }

    #[test]
    fn environment_filter() {
        let mut samples = vec![sample_at("a", 100.0, 1.0), sample_at("a", 100.0, 3.0)];
        samples[1].environment = Environment::Outdoor;
        let b = DepthBinning::default();
        let indoor = subject_error(&samples, Some(Environment::Indoor), &b).unwrap();
        let outdoor = subject_error(&samples, Some(Environment::Outdoor), &b).unwrap();
        assert!((indoor.value_deg - 1.0).abs() < 1e-12);
        assert!((outdoor.value_deg - 3.0).abs() < 1e-12);
    }

    #[test]
    fn mixed_subjects_rejected() {
        let samples = vec![sample_at("a", 100.0, 1.0), sample_at("b", 100.0, 1.0)];
        assert!(matches!(
            subject_error(&samples, None, &DepthBinning::default()),
            Err(Error::Schema { .. })
        ));
    }

    #[test]
    fn depth_curve_reports_empty_bins() {
        let samples = vec![sample_at("a", 40.0, 1.0), sample_at("a", 45.0, 3.0)];
        let curve = depth_error_curve(&samples, &DepthBinning::default()).unwrap();
        assert_eq!(curve.len(), 10);
        assert_eq!(curve[0].count, 2);
        assert!((curve[0].mean_error_deg.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(curve[0].center_cm, 46.0);
        assert!(curve[1..]
            .iter()
            .all(|b| b.count == 0 && b.mean_error_deg.is_none()));
    }

    #[test]
    fn split_summary_groups_and_missing_ids() {
        let errors = vec![
            SubjectError {
                subject_id: "a".into(),
                environment: None,
                value_deg: 4.0,
                bins_used: 10,
                samples_used: 100,
            },
            SubjectError {
                subject_id: "b".into(),
                environment: None,
                value_deg: 6.0,
                bins_used: 10,
                samples_used: 100,
            },
            SubjectError {
                subject_id: "c".into(),
                environment: None,
                value_deg: 5.0,
                bins_used: 10,
                samples_used: 100,
            },
        ];
        let mut table = MetaTable::new();
        for m in [
            meta("a", "female", 25.0, 60.0),
            meta("b", "female", 33.0, 64.0),
            meta("c", "male", 41.0, 66.5),
        ] {
            table.insert(m.subject_id.clone(), m);
        }
        let g = split_summary(&errors, &table, SplitDimension::GenderAppearance).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].group, "female");
        assert!((g[0].mean_deg - 5.0).abs() < 1e-12);
        assert!((g[0].std_deg - 1.0).abs() < 1e-12);
        assert_eq!(g.iter().map(|g| g.n).sum::<usize>(), 3);

        let single = split_summary(&errors, &table, SplitDimension::EyeMakeup).unwrap();
        assert_eq!(single.len(), 1);
        assert!((single[0].mean_deg - 5.0).abs() < 1e-12);

        let edges = default_edges(&errors, &table, BinnedDimension::Age, 5.0).unwrap();
        assert_eq!(edges.first(), Some(&25.0));
        assert_eq!(edges.last(), Some(&45.0));
        let ages = binned_summary(&errors, &table, BinnedDimension::Age, &edges).unwrap();
        assert_eq!(ages.iter().map(|b| b.n).sum::<usize>(), 3);
        assert_eq!(ages[0].n, 1);

        table.remove("c");
        let err = split_summary(&errors, &table, SplitDimension::GenderAppearance).unwrap_err();
        assert!(err.to_string().contains("`c`"));
    }

    #[test]
    fn meta_validation() {
        assert!(meta("a", "x", 30.0, 63.2).validate().is_ok());
        assert!(meta("a", "x", -1.0, 63.2).validate().is_err());
        // 6.32 cm written in the wrong unit.
        assert!(meta("a", "x", 30.0, 6.32).validate().is_err());
    }

    #[test]
    fn sample_depth_sanity() {
        assert!(sample_at("a", 10.0, 0.0).validate().is_err());
        assert!(sample_at("a", 30.0, 0.0).validate().is_ok());
    }
}
