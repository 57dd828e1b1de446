use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use gazeacc::dataio::{
    binned_table, depth_curve_table, file_digest, load_dataset, sha256_hex, split_table,
    subject_error_table, write_dataset, write_outputs, Dataset, OutputFormat, Strictness, Table,
};
use gazeacc::directional::{run_grid, GridConfig};
use gazeacc::metrics::{
    binned_summary, default_edges, depth_error_curve, split_summary, subject_errors,
    BinnedDimension, DepthBinning, Environment, SplitDimension,
};
use gazeacc::selftest::{self, SelftestConfig};
use gazeacc::synth::{generate, SynthConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::ManifestBuilder;
use crate::{
    DepthCurveArgs, DirectionalArgs, Failure, GridFlags, SelftestArgs, SubjectErrorArgs, SynthArgs,
    ValidateArgs,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SubjectErrorConfig {
    binning: DepthBinning,
    /// Age bin width, years.
    age_bin_width: f64,
    /// IPD bin width, mm.
    ipd_bin_width: f64,
}

impl Default for SubjectErrorConfig {
    fn default() -> Self {
        Self {
            binning: DepthBinning::default(),
            age_bin_width: BinnedDimension::Age.default_width(),
            ipd_bin_width: BinnedDimension::Ipd.default_width(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DepthCurveConfig {
    binning: DepthBinning,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DirectionalConfig {
    grid: GridConfig,
    format: OutputFormat,
}

#[derive(Debug, Serialize)]
struct ValidateConfig {
    strictness: Strictness,
    referential_check: bool,
}

/// Reads a JSON config, falling back to defaults when no file is given.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let bytes = fs::read(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
}

fn config_input(manifest: &mut ManifestBuilder, path: Option<&Path>) -> Result<(), Failure> {
    if let Some(p) = path {
        manifest.input(p, &file_digest(p)?);
    }
    Ok(())
}

fn apply_grid_flags(grid: &mut GridConfig, flags: &GridFlags) {
    if let Some(v) = flags.grid_step {
        grid.step_deg = v;
    }
    if let Some(v) = flags.radius {
        grid.neighborhood_radius_deg = v;
    }
    if let Some(v) = flags.min_cell_samples {
        grid.min_cell_samples = v;
    }
}

fn load_strict(
    samples: &Path,
    meta: Option<&Path>,
    manifest: &mut ManifestBuilder,
) -> Result<Dataset, Failure> {
    let dataset = load_dataset(samples, meta, Strictness::Strict)?.dataset;
    manifest.input(samples, &dataset.provenance.samples_digest);
    if let (Some(p), Some(d)) = (meta, &dataset.provenance.meta_digest) {
        manifest.input(p, d);
    }
    Ok(dataset)
}

fn finish_dir(
    manifest: ManifestBuilder,
    out: &Path,
    outputs: BTreeMap<String, String>,
) -> Result<(), Failure> {
    let m = manifest.finish(outputs);
    m.write(&out.join("manifest.json"))?;
    println!(
        "wrote {} files and manifest.json to {}",
        m.outputs.len(),
        out.display()
    );
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<String, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
    bytes.push(b'\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, &bytes)
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn validate(a: ValidateArgs) -> Result<ExitCode, Failure> {
    let cfg = ValidateConfig {
        strictness: Strictness::Report,
        referential_check: a.meta.is_some(),
    };
    let mut manifest = ManifestBuilder::new("validate", &cfg)?;
    let report = load_dataset(&a.samples, a.meta.as_deref(), cfg.strictness)?;
    let prov = &report.dataset.provenance;
    manifest.input(&a.samples, &prov.samples_digest);
    if let (Some(p), Some(d)) = (&a.meta, &prov.meta_digest) {
        manifest.input(p, d);
    }
    for v in &report.violations {
        eprintln!("{}:{}: field `{}`: {}", v.file, v.line, v.field, v.message);
    }
    println!(
        "{} records, {} valid, {} violations",
        report.total_records,
        report.dataset.samples.len(),
        report.violations.len()
    );
    if let Some(out) = &a.out {
        let digest = write_json(&out.join("violations.json"), &report.violations)?;
        finish_dir(
            manifest,
            out,
            BTreeMap::from([("violations.json".to_string(), digest)]),
        )?;
    }
    Ok(if report.violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

pub fn subject_error(a: SubjectErrorArgs) -> Result<ExitCode, Failure> {
    let cfg: SubjectErrorConfig = load_config(a.config.as_deref())?;
    cfg.binning.validate()?;
    if !(cfg.age_bin_width > 0.0 && cfg.ipd_bin_width > 0.0) {
        return Err(Failure::Usage("bin widths must be positive".into()));
    }
    let mut manifest = ManifestBuilder::new("subject-error", &cfg)?;
    config_input(&mut manifest, a.config.as_deref())?;
    let data = load_strict(&a.samples, Some(&a.meta), &mut manifest)?;

    let overall = subject_errors(&data.samples, None, &cfg.binning)?;
    let mut per_env = Vec::new();
    for env in [Environment::Indoor, Environment::Outdoor] {
        per_env.extend(subject_errors(&data.samples, Some(env), &cfg.binning)?);
    }
    let all: Vec<_> = overall.iter().chain(&per_env).cloned().collect();
    let mut tables = vec![subject_error_table("subject_errors", &all)];
    for dim in SplitDimension::ALL {
        let source = if dim == SplitDimension::Environment {
            &per_env
        } else {
            &overall
        };
        let groups = split_summary(source, &data.meta, dim)?;
        tables.push(split_table(&format!("split_{}", dim.as_str()), &groups));
    }
    for (dim, width) in [
        (BinnedDimension::Age, cfg.age_bin_width),
        (BinnedDimension::Ipd, cfg.ipd_bin_width),
    ] {
        let edges = default_edges(&overall, &data.meta, dim, width)?;
        let bins = binned_summary(&overall, &data.meta, dim, &edges)?;
        tables.push(binned_table(&format!("binned_{}", dim.as_str()), &bins));
    }
    let written = write_outputs(None, &tables, &a.out, OutputFormat::Csv)?;
    finish_dir(manifest, &a.out, written.files)?;
    Ok(ExitCode::SUCCESS)
}

pub fn depth_curve(a: DepthCurveArgs) -> Result<ExitCode, Failure> {
    let cfg: DepthCurveConfig = load_config(a.config.as_deref())?;
    cfg.binning.validate()?;
    let mut manifest = ManifestBuilder::new("depth-curve", &cfg)?;
    config_input(&mut manifest, a.config.as_deref())?;
    let data = load_strict(&a.samples, a.meta.as_deref(), &mut manifest)?;
    let curve = depth_error_curve(&data.samples, &cfg.binning)?;
    let tables = [depth_curve_table("depth_curve", &curve)];
    let written = write_outputs(None, &tables, &a.out, OutputFormat::Csv)?;
    finish_dir(manifest, &a.out, written.files)?;
    Ok(ExitCode::SUCCESS)
}

pub fn directional(a: DirectionalArgs) -> Result<ExitCode, Failure> {
    let mut cfg: DirectionalConfig = load_config(a.config.as_deref())?;
    apply_grid_flags(&mut cfg.grid, &a.grid);
    if let Some(f) = a.format {
        cfg.format = f.into();
    }
    cfg.grid.validate()?;
    let mut manifest = ManifestBuilder::new("directional", &cfg)?;
    config_input(&mut manifest, a.config.as_deref())?;
    let data = load_strict(&a.samples, a.meta.as_deref(), &mut manifest)?;
    let grid = run_grid(&data.samples, &cfg.grid)?;
    let valid = grid.iter().filter(|c| c.valid).count();
    println!("{valid}/{} cells valid", grid.len());
    let written = write_outputs(Some(&grid), &[] as &[Table], &a.out, cfg.format)?;
    finish_dir(manifest, &a.out, written.files)?;
    Ok(ExitCode::SUCCESS)
}

fn default_meta_path(out: &Path) -> PathBuf {
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("jsonl");
    out.with_extension(format!("meta.{ext}"))
}

fn file_key(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into(),
    )
}

pub fn synth(a: SynthArgs) -> Result<ExitCode, Failure> {
    let mut cfg: SynthConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let mut manifest = ManifestBuilder::new("synth", &cfg)?;
    config_input(&mut manifest, a.config.as_deref())?;
    let meta_path = a.meta.clone().unwrap_or_else(|| default_meta_path(&a.out));
    let data = generate(&cfg)?;
    write_dataset(&data, &a.out, &meta_path)?;
    let outputs = BTreeMap::from([
        (file_key(&a.out), file_digest(&a.out)?),
        (file_key(&meta_path), file_digest(&meta_path)?),
    ]);
    let manifest_path = PathBuf::from(format!("{}.manifest.json", a.out.display()));
    manifest.finish(outputs).write(&manifest_path)?;
    println!(
        "wrote {} samples of {} subjects to {} and {}",
        data.samples.len(),
        data.meta.len(),
        a.out.display(),
        meta_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn selftest(a: SelftestArgs) -> Result<ExitCode, Failure> {
    let mut cfg: SelftestConfig = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    apply_grid_flags(&mut cfg.grid, &a.grid);
    let mut manifest = ManifestBuilder::new("selftest", &cfg)?;
    config_input(&mut manifest, a.config.as_deref())?;
    let results = selftest::run(&cfg)?;
    for r in &results {
        let timing = r
            .elapsed_s
            .map_or_else(String::new, |t| format!(" ({t:.1} s)"));
        println!(
            "{} {} {}: {}{timing}",
            if r.passed { "PASS" } else { "FAIL" },
            r.id,
            r.name,
            r.detail
        );
    }
    if let Some(out) = &a.out {
        let digest = write_json(&out.join("selftest.json"), &results)?;
        finish_dir(
            manifest,
            out,
            BTreeMap::from([("selftest.json".to_string(), digest)]),
        )?;
    }
    Ok(if results.iter().all(|r| r.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
