//! Corruption, denoising, scoring, timing and reporting for a whole run.
//!
//! Layout of a run's `output_dir`:
//!
//! ```text
//! manifest.toml              resolved copy of the run manifest
//! inputs/<dataset>/<id>.png  noisy inputs, written once and shared by all methods
//! <method>/<dataset>/<id>.png
//! results.csv
//! summary.txt
//! run.log
//! ```

mod manifest;
mod report;
mod timing;

pub use manifest::{dataset_sigma, Metric, RunManifest, TimingMode, INPUTS_DIR};
pub use report::{
    csv_string, emit_csv, emit_summary, format_sig6, parse_csv, read_csv, sorted_records, CellSummary, Summary,
    CSV_HEADER,
};
pub use timing::{time_builtin, time_denoiser, timing_samples, TIMING_SIDE};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::DatasetManifest;
use crate::denoisers::BuiltinDenoiser;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::noise::{corrupt_dataset, Sample};
use crate::plugin::{run_external, DenoiserDescriptor, DenoiserKind};
use crate::raster::{load_image, save_image, Image};
use crate::record::EvaluationRecord;

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const RUN_LOG: &str = "run.log";
pub const MANIFEST_COPY: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses one per core.
    pub jobs: Option<usize>,
}

/// A `(method, dataset)` pair that produced no records.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodFailure {
    pub method: String,
    pub dataset: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<EvaluationRecord>,
    pub failures: Vec<MethodFailure>,
    /// Lines written to `run.log`.
    pub log: Vec<String>,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Default)]
struct RunLog(Vec<String>);

impl RunLog {
    fn info(&mut self, line: String) {
        log::info!("{line}");
        self.0.push(line);
    }

    fn warn(&mut self, line: String) {
        log::warn!("{line}");
        self.0.push(format!("ERROR {line}"));
    }
}

/// SHA-256 over the sorted file names and contents of `dir`.
pub fn hash_dir(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(p.file_name().expect("entry has a name").to_string_lossy().as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn materialize(samples: &[Sample], dir: &Path) -> Result<String> {
    reset_dir(dir)?;
    samples
        .par_iter()
        .try_for_each(|s| save_image(&s.noisy, dir.join(format!("{}.png", s.image_id))))?;
    hash_dir(dir)
}

/// Quality scores of `output` against `clean` for the requested metrics.
fn score(clean: &Image, output: &Image, metrics: &[Metric]) -> Result<(Option<f64>, Option<f64>)> {
    let p = metrics.contains(&Metric::Psnr).then(|| psnr(clean, output)).transpose()?;
    let s = metrics.contains(&Metric::Ssim).then(|| ssim(clean, output)).transpose()?;
    Ok((p, s))
}

struct Cell<'a> {
    manifest: &'a RunManifest,
    dataset: &'a DatasetManifest,
    samples: &'a [Sample],
    input_dir: &'a Path,
    output_dir: PathBuf,
}

impl Cell<'_> {
    fn record(&self, method: &str, s: &Sample, scores: (Option<f64>, Option<f64>), wall: f64) -> EvaluationRecord {
        EvaluationRecord {
            method: method.to_owned(),
            dataset: self.dataset.name.clone(),
            image_id: s.image_id.clone(),
            psnr_db: scores.0,
            ssim: scores.1,
            wall_time_s: wall,
            output_path: PathBuf::from(method)
                .join(&self.dataset.name)
                .join(format!("{}.png", s.image_id)),
        }
    }

    fn input_path(&self, s: &Sample) -> PathBuf {
        self.input_dir.join(format!("{}.png", s.image_id))
    }

    fn run_builtin(&self, desc: &DenoiserDescriptor) -> Result<Vec<EvaluationRecord>> {
        let method = desc.resolve_builtin(dataset_sigma(self.dataset))?;
        let noisy: Vec<Image> = self.samples.par_iter().map(|s| load_image(self.input_path(s))).collect::<Result<_>>()?;

        // quality pass, parallel over images
        let scores: Vec<(Option<f64>, Option<f64>)> = self
            .samples
            .par_iter()
            .zip(&noisy)
            .map(|(s, n)| {
                let out = method.denoise(n)?;
                save_image(&out, self.output_dir.join(format!("{}.png", s.image_id)))?;
                score(&s.clean, &out, &self.manifest.metrics)
            })
            .collect::<Result<_>>()?;

        let times = self.time_builtin_pass(&method, &noisy)?;
        Ok(self
            .samples
            .iter()
            .zip(scores)
            .zip(times)
            .map(|((s, sc), t)| self.record(&desc.name, s, sc, t))
            .collect())
    }

    /// Serialized timing pass on a single worker.
    fn time_builtin_pass(&self, method: &BuiltinDenoiser, noisy: &[Image]) -> Result<Vec<f64>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        pool.install(|| match self.manifest.timing {
            TimingMode::Batch => {
                let start = Instant::now();
                for n in noisy {
                    method.denoise(n)?;
                }
                let per = start.elapsed().as_secs_f64() / noisy.len() as f64;
                Ok(vec![per; noisy.len()])
            }
            TimingMode::PerImage => noisy
                .iter()
                .map(|n| {
                    let mut samples = Vec::with_capacity(self.manifest.timing_repeats);
                    for _ in 0..self.manifest.timing_repeats {
                        let start = Instant::now();
                        method.denoise(n)?;
                        samples.push(start.elapsed().as_secs_f64());
                    }
                    samples.sort_by(f64::total_cmp);
                    Ok(crate::metrics::percentile_sorted(&samples, 0.5))
                })
                .collect(),
        })
    }

    fn run_plugin(&self, desc: &DenoiserDescriptor, log: &mut RunLog) -> Result<Vec<EvaluationRecord>> {
        let batch = desc.batch && self.manifest.timing == TimingMode::Batch;
        let desc = desc.clone().with_batch(batch);
        let run = run_external(&desc, self.input_dir, &self.output_dir)?;
        for line in run.stderr.lines().filter(|l| !l.trim().is_empty()) {
            log.info(format!("[{} {}] stderr: {line}", desc.name, self.dataset.name));
        }
        let scores: Vec<(Option<f64>, Option<f64>)> = self
            .samples
            .par_iter()
            .map(|s| {
                let out = load_image(self.output_dir.join(format!("{}.png", s.image_id)))?;
                score(&s.clean, &out, &self.manifest.metrics)
            })
            .collect::<Result<_>>()?;
        Ok(self
            .samples
            .iter()
            .zip(scores)
            .map(|(s, sc)| {
                let t = run.wall_times.get(&s.image_id).copied().unwrap_or(0.0);
                self.record(&desc.name, s, sc, t)
            })
            .collect())
    }
}

/// Runs every method on every dataset.
///
/// Noisy inputs are written once per dataset and hashed; the hash is checked
/// before and after each method so every method provably sees the same
/// bytes. A failing `(method, dataset)` pair is logged, its partial outputs
/// removed, and the run moves on.
pub fn run_benchmark(manifest: &RunManifest, opts: &RunOptions) -> Result<RunOutcome> {
    manifest.validate()?;
    with_pool(opts, || run_inner(manifest))?
}

/// Runs `f` on a worker pool sized by `opts.jobs`.
pub fn with_pool<T: Send>(opts: &RunOptions, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.jobs.filter(|n| *n > 0) {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn run_inner(manifest: &RunManifest) -> Result<RunOutcome> {
    let root = &manifest.output_dir;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut log = RunLog::default();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut fail = |log: &mut RunLog, method: &str, dataset: &str, message: String| {
        log.warn(format!("[{method} {dataset}] failed: {message}"));
        failures.push(MethodFailure {
            method: method.to_owned(),
            dataset: dataset.to_owned(),
            message,
        });
    };

    for dataset in &manifest.datasets {
        let input_dir = root.join(INPUTS_DIR).join(&dataset.name);
        let prepared = corrupt_dataset(dataset).and_then(|s| {
            let digest = materialize(&s, &input_dir)?;
            Ok((s, digest))
        });
        let (samples, digest) = match prepared {
            Ok(p) => p,
            Err(e) => {
                for m in &manifest.methods {
                    fail(&mut log, &m.name, &dataset.name, format!("dataset unavailable: {e}"));
                }
                continue;
            }
        };
        log.info(format!(
            "[{}] {} noisy inputs in {} (sha256 {digest})",
            dataset.name,
            samples.len(),
            input_dir.display()
        ));

        for desc in &manifest.methods {
            if hash_dir(&input_dir)? != digest {
                fail(
                    &mut log,
                    &desc.name,
                    &dataset.name,
                    Error::Fairness {
                        dataset: dataset.name.clone(),
                        method: desc.name.clone(),
                    }
                    .to_string(),
                );
                materialize(&samples, &input_dir)?;
                continue;
            }
            let cell = Cell {
                manifest,
                dataset,
                samples: &samples,
                input_dir: &input_dir,
                output_dir: root.join(&desc.name).join(&dataset.name),
            };
            reset_dir(&cell.output_dir)?;
            let start = Instant::now();
            let result = match desc.kind {
                DenoiserKind::Builtin => cell.run_builtin(desc),
                DenoiserKind::External => cell.run_plugin(desc, &mut log),
            };
            let result = result.and_then(|recs| {
                if hash_dir(&input_dir)? == digest {
                    Ok(recs)
                } else {
                    Err(Error::Fairness {
                        dataset: dataset.name.clone(),
                        method: desc.name.clone(),
                    })
                }
            });
            match result {
                Ok(recs) => {
                    log.info(format!(
                        "[{} {}] {} images in {:.3}s",
                        desc.name,
                        dataset.name,
                        recs.len(),
                        start.elapsed().as_secs_f64()
                    ));
                    records.extend(recs);
                }
                Err(e) => {
                    fail(&mut log, &desc.name, &dataset.name, e.to_string());
                    reset_dir(&cell.output_dir)?;
                    if hash_dir(&input_dir)? != digest {
                        materialize(&samples, &input_dir)?;
                    }
                }
            }
        }
    }
    Ok(RunOutcome {
        records: sorted_records(&records),
        failures,
        log: log.0,
    })
}

/// [`run_benchmark`] plus everything written next to the outputs: the
/// manifest copy, `results.csv`, `summary.txt` and `run.log`. The summary is
/// computed from the CSV as written, so `report` on that CSV reproduces it.
pub fn execute_run(manifest: &RunManifest, opts: &RunOptions) -> Result<RunOutcome> {
    manifest.validate()?;
    let root = &manifest.output_dir;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let copy = root.join(MANIFEST_COPY);
    fs::write(&copy, manifest.to_toml_string()?).map_err(|e| Error::io(&copy, e))?;

    let outcome = run_benchmark(manifest, opts)?;
    let csv_path = root.join(RESULTS_CSV);
    emit_csv(&outcome.records, &csv_path)?;
    let summary = emit_summary(&read_csv(&csv_path)?)?;
    let summary_path = root.join(SUMMARY_TXT);
    fs::write(&summary_path, summary.to_string()).map_err(|e| Error::io(&summary_path, e))?;
    let log_path = root.join(RUN_LOG);
    let mut text = outcome.log.join("\n");
    text.push('\n');
    fs::write(&log_path, text).map_err(|e| Error::io(&log_path, e))?;
    Ok(outcome)
}
