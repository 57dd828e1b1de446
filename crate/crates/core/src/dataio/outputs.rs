//! CSV tables and the output directory writer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::svg::{render_heatmap, render_quiver, HeatmapQuantity};
use super::{sha256_hex, write_file};
use crate::directional::GridCellStats;
use crate::error::{Error, Result};
use crate::metrics::{BinnedSummary, DepthBin, GroupSummary, SubjectError};

/// Which artifacts [`write_outputs`] emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Svg,
    #[default]
    Both,
}

impl OutputFormat {
    fn csv(&self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    fn svg(&self) -> bool {
        matches!(self, OutputFormat::Svg | OutputFormat::Both)
    }
}

/// A named CSV table; written as `<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Config(e.to_string());
        w.write_record(&self.header).map_err(err)?;
        for row in &self.rows {
            w.write_record(row).map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::Config(e.to_string()))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// One row per grid cell.
///
/// Columns: `az_deg, el_deg, n, valid, bias_deg, bias_dir_u, bias_dir_v,
/// sigma_major_deg, sigma_minor_deg, major_u, major_v, minor_u, minor_v,
/// mean_err_deg, reason`. Undefined values are empty.
pub fn grid_table(cells: &[GridCellStats]) -> Table {
    let mut t = Table::new(
        "grid",
        &[
            "az_deg",
            "el_deg",
            "n",
            "valid",
            "bias_deg",
            "bias_dir_u",
            "bias_dir_v",
            "sigma_major_deg",
            "sigma_minor_deg",
            "major_u",
            "major_v",
            "minor_u",
            "minor_v",
            "mean_err_deg",
            "reason",
        ],
    );
    for c in cells {
        let e = c.estimate.as_ref();
        let bias_dir = e.and_then(|e| e.image.bias_direction);
        t.rows.push(vec![
            c.azimuth_deg.to_string(),
            c.elevation_deg.to_string(),
            c.n_samples.to_string(),
            c.valid.to_string(),
            opt(e.map(|e| e.bias_angle_deg)),
            opt(bias_dir.map(|d| d.x)),
            opt(bias_dir.map(|d| d.y)),
            opt(e.map(|e| e.sigma_major_deg)),
            opt(e.map(|e| e.sigma_minor_deg)),
            opt(e.map(|e| e.image.major_direction.x)),
            opt(e.map(|e| e.image.major_direction.y)),
            opt(e.map(|e| e.image.minor_direction.x)),
            opt(e.map(|e| e.image.minor_direction.y)),
            opt(c.mean_sample_error_deg),
            c.reason.map_or_else(String::new, |r| r.to_string()),
        ]);
    }
    t
}

/// Columns: `subject_id, environment, subject_error_deg, bins_used, samples_used`.
pub fn subject_error_table(name: &str, errors: &[SubjectError]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "subject_id",
            "environment",
            "subject_error_deg",
            "bins_used",
            "samples_used",
        ],
    );
    for e in errors {
        t.rows.push(vec![
            e.subject_id.clone(),
            e.environment
                .map_or_else(|| "all".into(), |v| v.to_string()),
            e.value_deg.to_string(),
            e.bins_used.to_string(),
            e.samples_used.to_string(),
        ]);
    }
    t
}

/// Columns: `group, mean_deg, std_deg, n`.
pub fn split_table(name: &str, groups: &[GroupSummary]) -> Table {
    let mut t = Table::new(name, &["group", "mean_deg", "std_deg", "n"]);
    for g in groups {
        t.rows.push(vec![
            g.group.clone(),
            g.mean_deg.to_string(),
            g.std_deg.to_string(),
            g.n.to_string(),
        ]);
    }
    t
}

/// Columns: `group, lo, hi, mean_deg, std_deg, n`; the group label is `lo-hi`.
pub fn binned_table(name: &str, bins: &[BinnedSummary]) -> Table {
    let mut t = Table::new(name, &["group", "lo", "hi", "mean_deg", "std_deg", "n"]);
    for b in bins {
        t.rows.push(vec![
            format!("{}-{}", b.lo, b.hi),
            b.lo.to_string(),
            b.hi.to_string(),
            opt(b.mean_deg),
            opt(b.std_deg),
            b.n.to_string(),
        ]);
    }
    t
}

/// Columns: `depth_lo_cm, depth_hi_cm, depth_center_cm, mean_err_deg, n`.
pub fn depth_curve_table(name: &str, curve: &[DepthBin]) -> Table {
    let mut t = Table::new(
        name,
        &[
            "depth_lo_cm",
            "depth_hi_cm",
            "depth_center_cm",
            "mean_err_deg",
            "n",
        ],
    );
    for b in curve {
        t.rows.push(vec![
            b.lo_cm.to_string(),
            b.hi_cm.to_string(),
            b.center_cm.to_string(),
            opt(b.mean_error_deg),
            b.count.to_string(),
        ]);
    }
    t
}

/// Files written by [`write_outputs`] with their SHA-256 digests, keyed by
/// path relative to the output directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputManifest {
    pub files: BTreeMap<String, String>,
}

impl OutputManifest {
    fn add(&mut self, out_dir: &Path, name: String, bytes: &[u8]) -> Result<()> {
        write_file(&out_dir.join(&name), bytes)?;
        self.files.insert(name, sha256_hex(bytes));
        Ok(())
    }
}

/// Writes the grid CSV and figures (when `grid` is given) plus every table.
pub fn write_outputs(
    grid: Option<&[GridCellStats]>,
    tables: &[Table],
    out_dir: &Path,
    format: OutputFormat,
) -> Result<OutputManifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = OutputManifest::default();
    if let Some(cells) = grid {
        if format.csv() {
            manifest.add(out_dir, "grid.csv".into(), &grid_table(cells).to_csv()?)?;
        }
        if format.svg() {
            for q in HeatmapQuantity::ALL {
                let svg = render_heatmap(cells, q);
                manifest.add(out_dir, format!("{}.svg", q.file_stem()), svg.as_bytes())?;
            }
            manifest.add(
                out_dir,
                "bias_quiver.svg".into(),
                render_quiver(cells).as_bytes(),
            )?;
        }
    }
    if format.csv() {
        for t in tables {
            manifest.add(out_dir, format!("{}.csv", t.name), &t.to_csv()?)?;
        }
    }
    Ok(manifest)
}
