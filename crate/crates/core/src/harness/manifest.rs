use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetKind, DatasetManifest};
use crate::error::{Error, Result};
use crate::noise::NoisePipeline;
use crate::plugin::{DenoiserDescriptor, DenoiserKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Psnr,
    Ssim,
}

/// How wall time is attributed to images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMode {
    /// One pass over the dataset, `total / N` per image. External plugins
    /// follow their own `batch` flag.
    Batch,
    /// Each image timed on its own; external plugins are invoked per image.
    PerImage,
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Psnr, Metric::Ssim]
}

fn default_timing() -> TimingMode {
    TimingMode::Batch
}

fn default_repeats() -> usize {
    1
}

/// Directory under `output_dir` holding the materialized noisy inputs.
pub const INPUTS_DIR: &str = "inputs";

/// A complete, self-contained benchmark description.
///
/// Stored as TOML. Relative paths are resolved against the manifest file's
/// directory when loaded with [`RunManifest::load`]. A dataset noise spec may
/// be written as a pipeline string (`noise = "gaussian:sigma=50"`) or as a
/// table; a missing `master_seed` is filled from the run's `master_seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_timing")]
    pub timing: TimingMode,
    /// Repeats per image in per-image timing of builtins (median is kept).
    #[serde(default = "default_repeats")]
    pub timing_repeats: usize,
    pub datasets: Vec<DatasetManifest>,
    pub methods: Vec<DenoiserDescriptor>,
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c))
}

impl RunManifest {
    /// Parses manifest text. Paths are kept as written.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        fill_noise_specs(&mut value)?;
        let manifest: RunManifest = value.try_into().map_err(|e: toml::de::Error| Error::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// Reads a manifest file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.resolve_paths(base);
        Ok(manifest)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for d in &mut self.datasets {
            fix(&mut d.clean_dir);
            if let Some(n) = d.noisy_dir.as_mut() {
                fix(n);
            }
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Manifest(m));
        if self.datasets.is_empty() {
            return bad("at least one dataset is required".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.metrics.is_empty() {
            return bad("at least one metric is required".into());
        }
        if self.timing_repeats == 0 {
            return bad("timing_repeats must be >= 1".into());
        }
        let mut seen = BTreeSet::new();
        for d in &self.datasets {
            if !is_identifier(&d.name) {
                return bad(format!("dataset name '{}' is not a plain identifier", d.name));
            }
            if !seen.insert(d.name.as_str()) {
                return bad(format!("duplicate dataset '{}'", d.name));
            }
            d.validate()?;
        }
        let mut seen = BTreeSet::new();
        for m in &self.methods {
            if !is_identifier(&m.name) || m.name == INPUTS_DIR {
                return bad(format!("method name '{}' is reserved or not a plain identifier", m.name));
            }
            if !seen.insert(m.name.as_str()) {
                return bad(format!("duplicate method '{}'", m.name));
            }
            m.validate()?;
            if m.kind == DenoiserKind::Builtin {
                // catches bad params early; the sigma fallback is checked per dataset
                m.resolve_builtin(Some(1.0))?;
            }
        }
        Ok(())
    }

    /// Human-readable plan of what a run would do, without running it.
    pub fn describe_plan(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "output_dir: {}", self.output_dir.display());
        let _ = writeln!(out, "master_seed: {}", self.master_seed);
        let metrics: Vec<String> = self.metrics.iter().map(|m| format!("{m:?}").to_lowercase()).collect();
        let _ = writeln!(out, "metrics: {}", metrics.join(", "));
        let _ = writeln!(out, "timing: {:?} (repeats {})", self.timing, self.timing_repeats);
        let _ = writeln!(out, "datasets:");
        for d in &self.datasets {
            let n = d.entries()?.len();
            let source = match d.kind {
                DatasetKind::Synthetic => {
                    let spec = d.noise.expect("validated");
                    format!("{} seed {}", spec.pipeline(), spec.master_seed)
                }
                DatasetKind::Paired => format!("paired with {}", d.noisy_dir.as_ref().expect("validated").display()),
            };
            let _ = writeln!(out, "  {}: {n} images from {} ({source})", d.name, d.clean_dir.display());
        }
        let _ = writeln!(out, "methods:");
        for m in &self.methods {
            match m.kind {
                DenoiserKind::Builtin => {
                    let per: Vec<String> = self
                        .datasets
                        .iter()
                        .map(|d| match m.resolve_builtin(dataset_sigma(d)) {
                            Ok(b) => format!("{}={b:?}", d.name),
                            Err(e) => format!("{}=<{e}>", d.name),
                        })
                        .collect();
                    let _ = writeln!(out, "  {}: builtin {}", m.name, per.join(" "));
                }
                DenoiserKind::External => {
                    let _ = writeln!(
                        out,
                        "  {}: external `{}` timeout {}s batch {}",
                        m.name,
                        m.command.join(" "),
                        m.timeout_s,
                        m.batch && self.timing == TimingMode::Batch
                    );
                }
            }
        }
        let cells = self.datasets.iter().map(|d| d.entries().map(|e| e.len())).sum::<Result<usize>>()?;
        let _ = writeln!(out, "expected records: {}", cells * self.methods.len());
        Ok(out)
    }
}

/// Noise level a BM3D method inherits from a dataset when it sets no sigma.
pub fn dataset_sigma(d: &DatasetManifest) -> Option<f64> {
    d.noise.map(|n| n.sigma).filter(|s| *s > 0.0)
}

/// Rewrites `noise` entries of each dataset into full tables carrying a seed.
fn fill_noise_specs(root: &mut toml::Value) -> Result<()> {
    let Some(table) = root.as_table_mut() else {
        return Err(Error::Manifest("manifest must be a table".into()));
    };
    let seed = table.get("master_seed").cloned();
    let Some(datasets) = table.get_mut("datasets").and_then(|d| d.as_array_mut()) else {
        return Ok(());
    };
    for d in datasets.iter_mut().filter_map(|d| d.as_table_mut()) {
        let Some(noise) = d.get_mut("noise") else { continue };
        if let Some(text) = noise.as_str() {
            let pipeline: NoisePipeline = text.parse()?;
            let spec = pipeline.into_spec(0);
            let mut t = toml::Value::try_from(spec)
                .map_err(|e| Error::Manifest(e.to_string()))?
                .as_table()
                .cloned()
                .expect("struct serializes to a table");
            t.remove("master_seed");
            *noise = toml::Value::Table(t);
        }
        if let Some(t) = noise.as_table_mut() {
            if !t.contains_key("master_seed") {
                let seed = seed
                    .clone()
                    .ok_or_else(|| Error::Manifest("noise spec without master_seed and no run master_seed".into()))?;
                t.insert("master_seed".into(), seed);
            }
        }
    }
    Ok(())
}
