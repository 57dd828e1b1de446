//! Dataset ingestion, validation and artifact emission.
//!
//! Samples are stored one record per line as JSONL, or as a CSV file with a
//! header row. Both use the same field names:
//!
//! `subject_id, session_id, device_id, environment, pgt_x_cm, pgt_y_cm,
//! pgt_z_cm, ddev_x, ddev_y, ddev_z` and the optional `pdev_u, pdev_v`.
//!
//! Subject metadata uses `subject_id, age, gender_appearance, ipd_mm,
//! contact_lenses, eye_makeup`.

mod outputs;
mod svg;

pub use outputs::{
    binned_table, depth_curve_table, grid_table, split_table, subject_error_table, write_outputs,
    OutputFormat, OutputManifest, Table,
};
pub use svg::{render_heatmap, render_quiver, HeatmapQuantity};

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{normalize, UnitVec3};
use crate::metrics::{Environment, GazeSample, MetaTable, SubjectMeta};
use crate::{Vec2, Vec3};

/// Largest deviation from unit norm that is silently renormalized.
pub const RENORMALIZE_BAND: f64 = 1e-3;

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex-encoded SHA-256 of a file's contents.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// On-disk layout of one gaze sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub subject_id: String,
    pub session_id: String,
    pub device_id: String,
    pub environment: Environment,
    pub pgt_x_cm: f64,
    pub pgt_y_cm: f64,
    pub pgt_z_cm: f64,
    pub ddev_x: f64,
    pub ddev_y: f64,
    pub ddev_z: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdev_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdev_v: Option<f64>,
}

impl From<&GazeSample> for SampleRecord {
    fn from(s: &GazeSample) -> Self {
        Self {
            subject_id: s.subject_id.clone(),
            session_id: s.session_id.clone(),
            device_id: s.device_id.clone(),
            environment: s.environment,
            pgt_x_cm: s.p_gt.x,
            pgt_y_cm: s.p_gt.y,
            pgt_z_cm: s.p_gt.z,
            ddev_x: s.d_dev.x(),
            ddev_y: s.d_dev.y(),
            ddev_z: s.d_dev.z(),
            pdev_u: s.p_dev.map(|p| p.x),
            pdev_v: s.p_dev.map(|p| p.y),
        }
    }
}

impl SampleRecord {
    /// Converts to a validated sample. Returns the offending field and a
    /// message on failure.
    fn into_sample(self) -> std::result::Result<GazeSample, (String, String)> {
        let d = Vec3::new(self.ddev_x, self.ddev_y, self.ddev_z);
        let n = d.norm();
        let d_dev = if let Ok(u) = UnitVec3::new(d) {
            u
        } else if (n - 1.0).abs() <= RENORMALIZE_BAND {
            normalize(d).map_err(|e| ("ddev".to_string(), e.to_string()))?
        } else {
            return Err((
                "ddev".into(),
                format!("norm {n} is outside the renormalization band 1 +/- {RENORMALIZE_BAND}"),
            ));
        };
        let p_dev = match (self.pdev_u, self.pdev_v) {
            (Some(u), Some(v)) => Some(Vec2::new(u, v)),
            (None, None) => None,
            _ => {
                return Err((
                    "pdev".into(),
                    "pdev_u and pdev_v must appear together".into(),
                ))
            }
        };
        let p_gt = Vec3::new(self.pgt_x_cm, self.pgt_y_cm, self.pgt_z_cm);
        if ![p_gt.x, p_gt.y, p_gt.z].iter().all(|v| v.is_finite()) {
            return Err(("pgt".into(), "non-finite coordinate".into()));
        }
        let sample = GazeSample {
            subject_id: self.subject_id,
            session_id: self.session_id,
            device_id: self.device_id,
            environment: self.environment,
            p_gt,
            d_dev,
            p_dev,
        };
        sample.validate().map_err(|e| match e {
            Error::Schema { field, message, .. } => (field, message),
            other => ("record".into(), other.to_string()),
        })?;
        Ok(sample)
    }
}

/// How the loader reacts to invalid records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// Abort on the first violation.
    #[default]
    Strict,
    /// Skip invalid records and report every violation.
    Report,
}

/// One rejected record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub file: String,
    pub line: u64,
    pub field: String,
    pub message: String,
}

impl Violation {
    fn into_error(self) -> Error {
        Error::schema(
            format!("{}:{}", self.file, self.line),
            self.field,
            self.message,
        )
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub samples_path: Option<PathBuf>,
    pub samples_digest: String,
    pub meta_path: Option<PathBuf>,
    pub meta_digest: Option<String>,
}

/// Samples plus subject metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<GazeSample>,
    pub meta: MetaTable,
    pub provenance: Provenance,
}

impl Dataset {
    /// Builds an in-memory dataset; the digests cover the canonical JSONL
    /// encoding.
    pub fn from_parts(samples: Vec<GazeSample>, meta: MetaTable) -> Result<Self> {
        let mut hasher = Sha256::new();
        let mut buf = Vec::with_capacity(256);
        for s in &samples {
            buf.clear();
            serde_json::to_writer(&mut buf, &SampleRecord::from(s))
                .map_err(|e| Error::Config(e.to_string()))?;
            buf.push(b'\n');
            hasher.update(&buf);
        }
        let samples_digest = hex::encode(hasher.finalize());
        let meta_digest = Some(sha256_hex(&meta_jsonl(&meta)?));
        Ok(Self {
            samples,
            meta,
            provenance: Provenance {
                samples_path: None,
                samples_digest,
                meta_path: None,
                meta_digest,
            },
        })
    }

    /// Distinct subject ids in the samples.
    pub fn subject_ids(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.subject_id.as_str()).collect()
    }
}

/// Result of [`load_dataset`].
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: Dataset,
    /// Records found in the sample file.
    pub total_records: usize,
    /// Rejected records, in file order. Empty in strict mode.
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Jsonl,
    Csv,
}

fn format_of(path: &Path) -> Result<Format> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") | Some("ndjson") => Ok(Format::Jsonl),
        Some("csv") => Ok(Format::Csv),
        _ => Err(Error::Config(format!(
            "cannot infer format of {}: expected .jsonl or .csv",
            path.display()
        ))),
    }
}

/// Parses records from `bytes`; each item is `(line, parsed record or error message)`.
fn parse_records<R: serde::de::DeserializeOwned>(
    bytes: &[u8],
    format: Format,
) -> Vec<(u64, std::result::Result<R, String>)> {
    match format {
        Format::Jsonl => bytes
            .split(|&b| b == b'\n')
            .enumerate()
            .filter(|(_, line)| !line.iter().all(u8::is_ascii_whitespace))
            .map(|(i, line)| {
                (
                    i as u64 + 1,
                    serde_json::from_slice::<R>(line).map_err(|e| e.to_string()),
                )
            })
            .collect(),
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new().from_reader(bytes);
            let headers = match reader.byte_headers() {
                Ok(h) => h.clone(),
                Err(e) => return vec![(1, Err(e.to_string()))],
            };
            let mut out = Vec::new();
            let mut record = csv::ByteRecord::new();
            loop {
                match reader.read_byte_record(&mut record) {
                    Ok(false) => break,
                    Ok(true) => {
                        let line = record.position().map_or(0, |p| p.line());
                        let parsed = record
                            .deserialize::<R>(Some(&headers))
                            .map_err(|e| e.to_string());
                        out.push((line, parsed));
                    }
                    Err(e) => {
                        let line = e.position().map_or(0, |p| p.line());
                        out.push((line, Err(e.to_string())));
                        break;
                    }
                }
            }
            out
        }
    }
}

/// Loads subject metadata (JSONL or CSV). Metadata violations are always fatal.
pub fn load_meta(path: &Path) -> Result<(MetaTable, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let mut table = MetaTable::new();
    for (line, parsed) in parse_records::<SubjectMeta>(&bytes, format_of(path)?) {
        let location = format!("{file}:{line}");
        let meta = parsed.map_err(|m| Error::schema(&location, "record", m))?;
        meta.validate().map_err(|e| match e {
            Error::Schema { field, message, .. } => Error::schema(&location, field, message),
            other => other,
        })?;
        if table.contains_key(&meta.subject_id) {
            return Err(Error::schema(
                location,
                "subject_id",
                format!("duplicate subject `{}`", meta.subject_id),
            ));
        }
        table.insert(meta.subject_id.clone(), meta);
    }
    Ok((table, sha256_hex(&bytes)))
}

/// Loads and validates a dataset.
///
/// Unit-norm deviations up to [`RENORMALIZE_BAND`] are renormalized; larger
/// ones, out-of-range depths, malformed records and (when `meta_path` is
/// given) subject ids missing from the metadata are violations. Every record
/// is either loaded or reported.
pub fn load_dataset(
    samples_path: &Path,
    meta_path: Option<&Path>,
    strictness: Strictness,
) -> Result<LoadReport> {
    let (meta, meta_digest) = match meta_path {
        Some(p) => {
            let (m, d) = load_meta(p)?;
            (m, Some(d))
        }
        None => (MetaTable::new(), None),
    };
    let bytes = fs::read(samples_path).map_err(|e| Error::io(samples_path, e))?;
    let file = samples_path.display().to_string();
    let records = parse_records::<SampleRecord>(&bytes, format_of(samples_path)?);
    let total_records = records.len();
    let mut samples = Vec::with_capacity(total_records);
    let mut violations = Vec::new();
    for (line, parsed) in records {
        let result = parsed
            .map_err(|m| ("record".to_string(), m))
            .and_then(|r| r.into_sample())
            .and_then(|s| {
                if meta_path.is_some() && !meta.contains_key(&s.subject_id) {
                    Err((
                        "subject_id".to_string(),
                        format!("subject `{}` missing from metadata", s.subject_id),
                    ))
                } else {
                    Ok(s)
                }
            });
        match result {
            Ok(s) => samples.push(s),
            Err((field, message)) => {
                let v = Violation {
                    file: file.clone(),
                    line,
                    field,
                    message,
                };
                if strictness == Strictness::Strict {
                    return Err(v.into_error());
                }
                violations.push(v);
            }
        }
    }
    Ok(LoadReport {
        dataset: Dataset {
            samples,
            meta,
            provenance: Provenance {
                samples_path: Some(samples_path.to_path_buf()),
                samples_digest: sha256_hex(&bytes),
                meta_path: meta_path.map(Path::to_path_buf),
                meta_digest,
            },
        },
        total_records,
        violations,
    })
}

fn samples_jsonl(samples: &[GazeSample]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(samples.len() * 200);
    for s in samples {
        serde_json::to_writer(&mut out, &SampleRecord::from(s))
            .map_err(|e| Error::Config(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn meta_jsonl(meta: &MetaTable) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for m in meta.values() {
        serde_json::to_writer(&mut out, m).map_err(|e| Error::Config(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes samples and metadata in the format implied by each extension.
/// Floats are written in shortest round-trip form, so loading the files back
/// reproduces the dataset exactly.
pub fn write_dataset(dataset: &Dataset, samples_path: &Path, meta_path: &Path) -> Result<()> {
    let samples = match format_of(samples_path)? {
        Format::Jsonl => samples_jsonl(&dataset.samples)?,
        Format::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            let has_pdev = dataset.samples.iter().any(|s| s.p_dev.is_some());
            let mut header = vec![
                "subject_id",
                "session_id",
                "device_id",
                "environment",
                "pgt_x_cm",
                "pgt_y_cm",
                "pgt_z_cm",
                "ddev_x",
                "ddev_y",
                "ddev_z",
            ];
            if has_pdev {
                header.extend(["pdev_u", "pdev_v"]);
            }
            let csv_err = |e: csv::Error| Error::Config(e.to_string());
            w.write_record(&header).map_err(csv_err)?;
            for s in &dataset.samples {
                let r = SampleRecord::from(s);
                let mut row = vec![
                    r.subject_id,
                    r.session_id,
                    r.device_id,
                    r.environment.to_string(),
                    r.pgt_x_cm.to_string(),
                    r.pgt_y_cm.to_string(),
                    r.pgt_z_cm.to_string(),
                    r.ddev_x.to_string(),
                    r.ddev_y.to_string(),
                    r.ddev_z.to_string(),
                ];
                if has_pdev {
                    row.push(r.pdev_u.map_or_else(String::new, |v| v.to_string()));
                    row.push(r.pdev_v.map_or_else(String::new, |v| v.to_string()));
                }
                w.write_record(&row).map_err(csv_err)?;
            }
            w.into_inner().map_err(|e| Error::Config(e.to_string()))?
        }
    };
    write_bytes(samples_path, &samples)?;
    let meta = match format_of(meta_path)? {
        Format::Jsonl => meta_jsonl(&dataset.meta)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for m in dataset.meta.values() {
                w.serialize(m).map_err(|e| Error::Config(e.to_string()))?;
            }
            w.into_inner().map_err(|e| Error::Config(e.to_string()))?
        }
    };
    write_bytes(meta_path, &meta)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_bytes(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    const META: &str = r#"{"subject_id":"s1","age":31.0,"gender_appearance":"female","ipd_mm":62.5,"contact_lenses":false,"eye_makeup":true}
"#;

    fn line(subject: &str, ddev: (f64, f64, f64)) -> String {
        format!(
            r#"{{"subject_id":"{subject}","session_id":"a","device_id":"d","environment":"indoor","pgt_x_cm":0.0,"pgt_y_cm":0.0,"pgt_z_cm":100.0,"ddev_x":{},"ddev_y":{},"ddev_z":{}}}"#,
            ddev.0, ddev.1, ddev.2
        )
    }

    fn fixture(lines: &[String]) -> (tempfile::TempDir, PathBuf, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("samples.jsonl");
        let m = dir.path().join("meta.jsonl");
        fs::write(&s, lines.join("\n") + "\n").unwrap();
        fs::write(&m, META).unwrap();
        (dir, s, m)
    }

    #[test]
    fn loads_well_formed_fixture() {
        let lines = vec![
            line("s1", (0.0, 0.0, 1.0)),
            line("s1", (0.6, 0.0, 0.8)),
            line("s1", (0.0, 0.6, 0.8)),
        ];
        let (_d, s, m) = fixture(&lines);
        let r = load_dataset(&s, Some(&m), Strictness::Strict).unwrap();
        assert_eq!(r.dataset.samples.len(), 3);
        assert_eq!(r.total_records, 3);
        assert!(r.violations.is_empty());
        assert_eq!(r.dataset.meta.len(), 1);
    }

    #[test]
    fn bad_norm_is_a_schema_error_naming_the_line() {
        let lines = vec![line("s1", (0.0, 0.0, 1.0)), line("s1", (0.0, 0.0, 0.9))];
        let (_d, s, m) = fixture(&lines);
        let err = load_dataset(&s, Some(&m), Strictness::Strict).unwrap_err();
        match err {
            Error::Schema {
                location, field, ..
            } => {
                assert!(location.ends_with(":2"), "{location}");
                assert_eq!(field, "ddev");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn near_unit_norm_is_renormalized() {
        let lines = vec![line("s1", (0.0, 0.0, 1.0005))];
        let (_d, s, m) = fixture(&lines);
        let r = load_dataset(&s, Some(&m), Strictness::Strict).unwrap();
        assert!((r.dataset.samples[0].d_dev.as_vec().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn report_mode_accounts_for_every_record() {
        let lines = vec![
            line("s1", (0.0, 0.0, 1.0)),
            line("s1", (0.0, 0.0, 0.5)),
            line("ghost", (0.0, 0.0, 1.0)),
            "{not json".to_string(),
            line("s1", (1.0, 0.0, 0.0)),
        ];
        let (_d, s, m) = fixture(&lines);
        let r = load_dataset(&s, Some(&m), Strictness::Report).unwrap();
        assert_eq!(r.total_records, 5);
        assert_eq!(r.dataset.samples.len() + r.violations.len(), 5);
        let lines: Vec<u64> = r.violations.iter().map(|v| v.line).collect();
        assert_eq!(lines, vec![2, 3, 4]);
        assert_eq!(r.violations[1].field, "subject_id");
    }

    #[test]
    fn depth_outside_sanity_bounds_is_rejected() {
        let l = line("s1", (0.0, 0.0, 1.0)).replace("100.0", "5000.0");
        let (_d, s, m) = fixture(&[l]);
        let err = load_dataset(&s, Some(&m), Strictness::Strict).unwrap_err();
        assert!(
            matches!(err, Error::Schema { ref field, .. } if field == "p_gt"),
            "{err}"
        );
    }

    #[test]
    fn csv_samples_load_like_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("samples.csv");
        fs::write(
            &s,
            "subject_id,session_id,device_id,environment,pgt_x_cm,pgt_y_cm,pgt_z_cm,ddev_x,ddev_y,ddev_z\n\
             s1,a,d,outdoor,1,2,100,0,0,1\n\
             s1,a,d,indoor,1,2,100,0,0,2\n",
        )
        .unwrap();
        let r = load_dataset(&s, None, Strictness::Report).unwrap();
        assert_eq!(r.total_records, 2);
        assert_eq!(r.dataset.samples[0].environment, Environment::Outdoor);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].line, 3);
    }

    #[test]
    fn duplicate_meta_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("meta.jsonl");
        fs::write(&m, format!("{META}{META}")).unwrap();
        assert!(load_meta(&m).is_err());
    }
}
