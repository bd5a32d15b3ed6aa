//! Method descriptors and the external-denoiser directory protocol (v1).
//!
//! An external denoiser is any executable invoked as
//! `<cmd> [args...] --input DIR --output DIR` with `DENOISE_BENCH_PROTOCOL=1`
//! in its environment. It must write, for every 8-bit grayscale PNG in the
//! input directory, a PNG with the same file name and dimensions to the output
//! directory and exit with status 0. Standard error is captured into the run
//! log. Outputs are never trusted: each one is re-checked for existence,
//! decodability and dimensions before it is scored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::denoisers::BuiltinDenoiser;
use crate::error::{Error, Result};
use crate::raster::{load_image, save_image, Image};

pub const PROTOCOL_ENV: &str = "DENOISE_BENCH_PROTOCOL";
pub const PROTOCOL_VERSION: &str = "1";

fn default_timeout() -> f64 {
    600.0
}

fn default_batch() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Builtin,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinId {
    Identity,
    Median,
    Bm3d,
}

/// A runnable method as written in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserDescriptor {
    pub name: String,
    pub kind: DenoiserKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<BuiltinId>,
    /// Builtin parameters: `radius` (median), `sigma` (bm3d).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    /// Executable and leading arguments; `--input DIR --output DIR` is appended.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    #[serde(rename = "timeout", default = "default_timeout")]
    pub timeout_s: f64,
    /// One invocation for the whole directory (`true`) or one per image.
    #[serde(default = "default_batch")]
    pub batch: bool,
}

impl DenoiserDescriptor {
    pub fn builtin(name: impl Into<String>, method: BuiltinDenoiser) -> Self {
        let (id, params) = match method {
            BuiltinDenoiser::Identity => (BuiltinId::Identity, BTreeMap::new()),
            BuiltinDenoiser::Median { radius } => {
                (BuiltinId::Median, BTreeMap::from([("radius".to_owned(), radius as f64)]))
            }
            BuiltinDenoiser::Bm3d { sigma } => {
                (BuiltinId::Bm3d, BTreeMap::from([("sigma".to_owned(), sigma)]))
            }
        };
        Self {
            name: name.into(),
            kind: DenoiserKind::Builtin,
            builtin: Some(id),
            params,
            command: Vec::new(),
            timeout_s: default_timeout(),
            batch: default_batch(),
        }
    }

    pub fn external<S: Into<String>>(name: impl Into<String>, command: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            kind: DenoiserKind::External,
            builtin: None,
            params: BTreeMap::new(),
            command: command.into_iter().map(Into::into).collect(),
            timeout_s: default_timeout(),
            batch: default_batch(),
        }
    }

    pub fn with_timeout(mut self, seconds: f64) -> Self {
        self.timeout_s = seconds;
        self
    }

    pub fn with_batch(mut self, batch: bool) -> Self {
        self.batch = batch;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("method '{}': {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad("name must be a non-empty plain identifier".into());
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return bad(format!("timeout must be > 0, got {}", self.timeout_s));
        }
        match self.kind {
            DenoiserKind::External => {
                if self.command.is_empty() {
                    return bad("external method needs a command".into());
                }
                if self.builtin.is_some() || !self.params.is_empty() {
                    return bad("external method takes no builtin or params".into());
                }
            }
            DenoiserKind::Builtin => {
                if self.builtin.is_none() {
                    return bad("builtin method needs 'builtin'".into());
                }
                if !self.command.is_empty() {
                    return bad("builtin method takes no command".into());
                }
            }
        }
        Ok(())
    }

    /// Resolves a builtin descriptor. `default_sigma` feeds BM3D when the
    /// descriptor does not fix `sigma` itself.
    pub fn resolve_builtin(&self, default_sigma: Option<f64>) -> Result<BuiltinDenoiser> {
        let bad = |m: String| Error::InvalidParameter(format!("method '{}': {m}", self.name));
        let id = self.builtin.ok_or_else(|| bad("not a builtin".into()))?;
        let allowed: &[&str] = match id {
            BuiltinId::Identity => &[],
            BuiltinId::Median => &["radius"],
            BuiltinId::Bm3d => &["sigma"],
        };
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(bad(format!("unknown parameter '{k}'")));
        }
        Ok(match id {
            BuiltinId::Identity => BuiltinDenoiser::Identity,
            BuiltinId::Median => {
                let r = self.params.get("radius").copied().unwrap_or(1.0);
                if r < 1.0 || r.fract() != 0.0 {
                    return Err(bad(format!("radius must be a positive integer, got {r}")));
                }
                BuiltinDenoiser::Median { radius: r as usize }
            }
            BuiltinId::Bm3d => {
                let sigma = self
                    .params
                    .get("sigma")
                    .copied()
                    .or(default_sigma)
                    .ok_or_else(|| bad("bm3d needs 'sigma' (no synthetic noise level to inherit)".into()))?;
                if !(sigma.is_finite() && sigma > 0.0) {
                    return Err(bad(format!("sigma must be > 0, got {sigma}")));
                }
                BuiltinDenoiser::Bm3d { sigma }
            }
        })
    }
}

#[derive(Debug, Error)]
pub enum PluginError {
    #[error("plugin {plugin}: invalid descriptor: {reason}")]
    InvalidDescriptor { plugin: String, reason: String },

    #[error("plugin {plugin}: failed to launch '{program}': {source}")]
    Spawn {
        plugin: String,
        program: String,
        #[source]
        source: std::io::Error,
    },

    #[error("plugin {plugin}: exited with {status}{}", stderr_suffix(.stderr))]
    NonZeroExit {
        plugin: String,
        status: String,
        stderr: String,
    },

    #[error("plugin {plugin}: timed out after {timeout_s}s")]
    Timeout { plugin: String, timeout_s: f64 },

    #[error("plugin {plugin}: missing output for {}", .ids.join(", "))]
    MissingOutputs { plugin: String, ids: Vec<String> },

    #[error("plugin {plugin}: name contract violated: unexpected {} (missing {})", .unexpected.join(", "), .missing.join(", "))]
    NameContract {
        plugin: String,
        unexpected: Vec<String>,
        missing: Vec<String>,
    },

    #[error("plugin {plugin}: undecodable output for {}", .ids.join(", "))]
    Undecodable { plugin: String, ids: Vec<String> },

    #[error("plugin {plugin}: dimension mismatch for {}", .ids.join(", "))]
    DimensionMismatch { plugin: String, ids: Vec<String> },

    #[error("plugin {plugin}: output directory {} is not empty", .path.display())]
    OutputNotEmpty { plugin: String, path: PathBuf },

    #[error("plugin {plugin}: I/O error on {}: {source}", .path.display())]
    Io {
        plugin: String,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn stderr_suffix(stderr: &str) -> String {
    let s = stderr.trim();
    if s.is_empty() {
        String::new()
    } else {
        format!("; stderr: {s}")
    }
}

impl PluginError {
    /// Name of the validation check this error fails.
    pub fn check_name(&self) -> &'static str {
        match self {
            PluginError::InvalidDescriptor { .. } => CHECK_DESCRIPTOR,
            PluginError::Spawn { .. } | PluginError::NonZeroExit { .. } => CHECK_EXIT,
            PluginError::Timeout { .. } => CHECK_TIMEOUT,
            PluginError::MissingOutputs { .. } => CHECK_MISSING,
            PluginError::NameContract { .. } => CHECK_NAMES,
            PluginError::Undecodable { .. } => CHECK_DECODE,
            PluginError::DimensionMismatch { .. } => CHECK_DIMENSIONS,
            PluginError::OutputNotEmpty { .. } | PluginError::Io { .. } => CHECK_IO,
        }
    }
}

pub const CHECK_DESCRIPTOR: &str = "descriptor";
pub const CHECK_IO: &str = "io";
pub const CHECK_EXIT: &str = "exit status";
pub const CHECK_TIMEOUT: &str = "timeout";
pub const CHECK_MISSING: &str = "missing output";
pub const CHECK_NAMES: &str = "name contract";
pub const CHECK_DECODE: &str = "decodability";
pub const CHECK_DIMENSIONS: &str = "dimension mismatch";

/// Outcome of a successful external run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalRun {
    /// Per-image wall time in seconds, keyed by image id.
    pub wall_times: BTreeMap<String, f64>,
    /// Everything the plugin wrote to standard error.
    pub stderr: String,
}

/// An input file: name, id and dimensions.
#[derive(Debug, Clone)]
struct InputFile {
    file_name: String,
    image_id: String,
    width: usize,
    height: usize,
}

fn plugin_io(plugin: &str, path: &Path, source: std::io::Error) -> PluginError {
    PluginError::Io {
        plugin: plugin.to_owned(),
        path: path.to_path_buf(),
        source,
    }
}

fn png_names(plugin: &str, dir: &Path) -> Result<Vec<String>, PluginError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| plugin_io(plugin, dir, e))? {
        let entry = entry.map_err(|e| plugin_io(plugin, dir, e))?;
        if entry.path().is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn scan_inputs(plugin: &str, dir: &Path) -> Result<Vec<InputFile>, PluginError> {
    let mut inputs = Vec::new();
    for name in png_names(plugin, dir)? {
        if !name.to_ascii_lowercase().ends_with(".png") {
            continue;
        }
        let path = dir.join(&name);
        let img = load_image(&path).map_err(|e| PluginError::Io {
            plugin: plugin.to_owned(),
            path: path.clone(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()),
        })?;
        let image_id = Path::new(&name)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| name.clone());
        inputs.push(InputFile {
            file_name: name,
            image_id,
            width: img.width(),
            height: img.height(),
        });
    }
    Ok(inputs)
}

/// Everything wrong with an output directory.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct OutputIssues {
    pub missing: Vec<String>,
    pub unexpected: Vec<String>,
    pub undecodable: Vec<String>,
    pub wrong_dimensions: Vec<String>,
}

impl OutputIssues {
    pub fn is_clean(&self) -> bool {
        *self == OutputIssues::default()
    }

    /// Outputs missing for reasons other than having been renamed.
    fn unexplained_missing(&self) -> bool {
        self.missing.len() > self.unexpected.len()
    }

    fn into_error(self, plugin: &str) -> Option<PluginError> {
        let plugin = plugin.to_owned();
        if !self.unexpected.is_empty() {
            Some(PluginError::NameContract {
                plugin,
                unexpected: self.unexpected,
                missing: self.missing,
            })
        } else if !self.missing.is_empty() {
            Some(PluginError::MissingOutputs {
                plugin,
                ids: self.missing,
            })
        } else if !self.undecodable.is_empty() {
            Some(PluginError::Undecodable {
                plugin,
                ids: self.undecodable,
            })
        } else if !self.wrong_dimensions.is_empty() {
            Some(PluginError::DimensionMismatch {
                plugin,
                ids: self.wrong_dimensions,
            })
        } else {
            None
        }
    }
}

fn inspect_outputs(plugin: &str, inputs: &[InputFile], output_dir: &Path) -> Result<OutputIssues, PluginError> {
    let present: BTreeSet<String> = png_names(plugin, output_dir)?.into_iter().collect();
    let expected: BTreeSet<&str> = inputs.iter().map(|i| i.file_name.as_str()).collect();
    let mut issues = OutputIssues {
        unexpected: present
            .iter()
            .filter(|n| !expected.contains(n.as_str()))
            .cloned()
            .collect(),
        ..Default::default()
    };
    for input in inputs {
        if !present.contains(&input.file_name) {
            issues.missing.push(input.image_id.clone());
            continue;
        }
        match load_image(output_dir.join(&input.file_name)) {
            Err(_) => issues.undecodable.push(input.image_id.clone()),
            Ok(img) if img.width() != input.width || img.height() != input.height => {
                issues.wrong_dimensions.push(input.image_id.clone())
            }
            Ok(_) => {}
        }
    }
    Ok(issues)
}

fn clear_dir(plugin: &str, dir: &Path) -> Result<(), PluginError> {
    for entry in fs::read_dir(dir).map_err(|e| plugin_io(plugin, dir, e))? {
        let path = entry.map_err(|e| plugin_io(plugin, dir, e))?.path();
        let res = if path.is_dir() {
            fs::remove_dir_all(&path)
        } else {
            fs::remove_file(&path)
        };
        res.map_err(|e| plugin_io(plugin, &path, e))?;
    }
    Ok(())
}

fn spawn_reader<R: Read + Send + 'static>(stream: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut s) = stream {
            let _ = s.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

#[cfg(unix)]
fn isolate_process_group(cmd: &mut Command) {
    use std::os::unix::process::CommandExt;
    cmd.process_group(0);
}

#[cfg(not(unix))]
fn isolate_process_group(_cmd: &mut Command) {}

#[cfg(unix)]
fn kill_tree(child: &mut std::process::Child) {
    // the child leads its own process group, so this also reaches grandchildren
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
}

#[cfg(not(unix))]
fn kill_tree(child: &mut std::process::Child) {
    let _ = child.kill();
}

/// Runs one protocol invocation and returns its wall time and stderr.
fn invoke(desc: &DenoiserDescriptor, input_dir: &Path, output_dir: &Path) -> Result<(f64, String), PluginError> {
    let plugin = desc.name.as_str();
    let mut cmd = Command::new(&desc.command[0]);
    cmd.args(&desc.command[1..])
        .arg("--input")
        .arg(input_dir)
        .arg("--output")
        .arg(output_dir)
        .env(PROTOCOL_ENV, PROTOCOL_VERSION)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    isolate_process_group(&mut cmd);

    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|source| PluginError::Spawn {
        plugin: plugin.to_owned(),
        program: desc.command[0].clone(),
        source,
    })?;
    let out_reader = spawn_reader(child.stdout.take());
    let err_reader = spawn_reader(child.stderr.take());

    let waited = child.wait_timeout(Duration::from_secs_f64(desc.timeout_s));
    let status = match waited {
        Ok(Some(status)) => status,
        Ok(None) => {
            kill_tree(&mut child);
            let _ = child.wait();
            let _ = out_reader.join();
            let stderr = err_reader.join().unwrap_or_default();
            log_stream(plugin, "stderr", &stderr);
            return Err(PluginError::Timeout {
                plugin: plugin.to_owned(),
                timeout_s: desc.timeout_s,
            });
        }
        Err(e) => {
            kill_tree(&mut child);
            let _ = child.wait();
            return Err(plugin_io(plugin, Path::new(&desc.command[0]), e));
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    log_stream(plugin, "stdout", &stdout);
    log_stream(plugin, "stderr", &stderr);
    if !status.success() {
        return Err(PluginError::NonZeroExit {
            plugin: plugin.to_owned(),
            status: status.to_string(),
            stderr,
        });
    }
    Ok((elapsed, stderr))
}

fn log_stream(plugin: &str, stream: &str, text: &str) {
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        log::info!(target: "denoise_bench::plugin", "[{plugin} {stream}] {line}");
    }
}

/// Runs an external denoiser over `input_dir`, writing to `output_dir`.
///
/// In batch mode a single invocation covers every image and each image is
/// charged `total / N`; otherwise the plugin is invoked once per image. On any
/// failure the partial contents of `output_dir` are removed.
pub fn run_external(
    desc: &DenoiserDescriptor,
    input_dir: &Path,
    output_dir: &Path,
) -> Result<ExternalRun, PluginError> {
    let plugin = desc.name.as_str();
    desc.validate().map_err(|e| PluginError::InvalidDescriptor {
        plugin: plugin.to_owned(),
        reason: e.to_string(),
    })?;
    if desc.kind != DenoiserKind::External {
        return Err(PluginError::InvalidDescriptor {
            plugin: plugin.to_owned(),
            reason: "not an external method".into(),
        });
    }
    fs::create_dir_all(output_dir).map_err(|e| plugin_io(plugin, output_dir, e))?;
    if fs::read_dir(output_dir)
        .map_err(|e| plugin_io(plugin, output_dir, e))?
        .next()
        .is_some()
    {
        return Err(PluginError::OutputNotEmpty {
            plugin: plugin.to_owned(),
            path: output_dir.to_path_buf(),
        });
    }
    let inputs = scan_inputs(plugin, input_dir)?;

    let result = if desc.batch {
        run_batch(desc, &inputs, input_dir, output_dir)
    } else {
        run_per_image(desc, &inputs, input_dir, output_dir)
    };
    if result.is_err() {
        clear_dir(plugin, output_dir)?;
    }
    result
}

fn run_batch(
    desc: &DenoiserDescriptor,
    inputs: &[InputFile],
    input_dir: &Path,
    output_dir: &Path,
) -> Result<ExternalRun, PluginError> {
    let (elapsed, stderr) = invoke(desc, input_dir, output_dir)?;
    if let Some(err) = inspect_outputs(&desc.name, inputs, output_dir)?.into_error(&desc.name) {
        return Err(err);
    }
    let per_image = if inputs.is_empty() {
        0.0
    } else {
        elapsed / inputs.len() as f64
    };
    Ok(ExternalRun {
        wall_times: inputs.iter().map(|i| (i.image_id.clone(), per_image)).collect(),
        stderr,
    })
}

fn run_per_image(
    desc: &DenoiserDescriptor,
    inputs: &[InputFile],
    input_dir: &Path,
    output_dir: &Path,
) -> Result<ExternalRun, PluginError> {
    let plugin = desc.name.as_str();
    let mut wall_times = BTreeMap::new();
    let mut stderr_all = String::new();
    for input in inputs {
        let scratch = tempfile::tempdir().map_err(|e| plugin_io(plugin, Path::new("<tempdir>"), e))?;
        let (one_in, one_out) = (scratch.path().join("in"), scratch.path().join("out"));
        for d in [&one_in, &one_out] {
            fs::create_dir(d).map_err(|e| plugin_io(plugin, d, e))?;
        }
        let src = input_dir.join(&input.file_name);
        fs::copy(&src, one_in.join(&input.file_name)).map_err(|e| plugin_io(plugin, &src, e))?;

        let (elapsed, stderr) = invoke(desc, &one_in, &one_out)?;
        stderr_all.push_str(&stderr);
        if let Some(err) = inspect_outputs(plugin, std::slice::from_ref(input), &one_out)?.into_error(plugin) {
            return Err(err);
        }
        let produced = one_out.join(&input.file_name);
        let dest = output_dir.join(&input.file_name);
        fs::copy(&produced, &dest).map_err(|e| plugin_io(plugin, &dest, e))?;
        wall_times.insert(input.image_id.clone(), elapsed);
    }
    Ok(ExternalRun {
        wall_times,
        stderr: stderr_all,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckStatus {
    Pass,
    Fail(String),
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PluginCheck {
    pub name: &'static str,
    pub status: CheckStatus,
}

/// Per-check diagnostics from [`validate_plugin`].
#[derive(Debug)]
pub struct ValidationReport {
    pub plugin: String,
    pub checks: Vec<PluginCheck>,
    /// The error a real run would have raised, if any.
    pub error: Option<PluginError>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.status != CheckStatus::Skipped && !matches!(c.status, CheckStatus::Fail(_)))
    }

    pub fn failed_checks(&self) -> Vec<&'static str> {
        self.checks
            .iter()
            .filter(|c| matches!(c.status, CheckStatus::Fail(_)))
            .map(|c| c.name)
            .collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "plugin {}", self.plugin)?;
        for c in &self.checks {
            match &c.status {
                CheckStatus::Pass => writeln!(f, "  PASS {}", c.name)?,
                CheckStatus::Skipped => writeln!(f, "  SKIP {}", c.name)?,
                CheckStatus::Fail(why) => writeln!(f, "  FAIL {}: {why}", c.name)?,
            }
        }
        write!(f, "{}", if self.passed() { "all checks passed" } else { "validation failed" })
    }
}

/// Side of the smoke-set images. Non-square so transposed outputs are caught.
const SMOKE_W: usize = 48;
const SMOKE_H: usize = 32;

/// The three smoke images: constant, gradient and uniform random.
pub fn smoke_set() -> Vec<(&'static str, Image)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    vec![
        ("constant", Image::constant(SMOKE_W, SMOKE_H, 128.0)),
        (
            "gradient",
            Image::from_fn(SMOKE_W, SMOKE_H, |r, c| {
                ((r * 255 / (SMOKE_H - 1) + c * 255 / (SMOKE_W - 1)) / 2) as f64
            }),
        ),
        (
            "random",
            Image::from_fn(SMOKE_W, SMOKE_H, |_, _| f64::from(rng.gen::<u8>())),
        ),
    ]
}

const SMOKE_CHECKS: [&str; 6] = [
    CHECK_EXIT,
    CHECK_TIMEOUT,
    CHECK_MISSING,
    CHECK_NAMES,
    CHECK_DECODE,
    CHECK_DIMENSIONS,
];

/// Runs the plugin on [`smoke_set`] and checks the output contract.
pub fn validate_plugin(desc: &DenoiserDescriptor) -> Result<ValidationReport> {
    let scratch = tempfile::tempdir().map_err(|e| Error::io("<tempdir>", e))?;
    let (input, output) = (scratch.path().join("input"), scratch.path().join("output"));
    fs::create_dir(&input).map_err(|e| Error::io(&input, e))?;
    for (name, img) in smoke_set() {
        save_image(&img, input.join(format!("{name}.png")))?;
    }
    let mut report = ValidationReport {
        plugin: desc.name.clone(),
        checks: Vec::new(),
        error: None,
    };
    let check = |name, status| PluginCheck { name, status };

    if let Err(e) = desc.validate() {
        report.checks.push(check(CHECK_DESCRIPTOR, CheckStatus::Fail(e.to_string())));
        report.error = Some(PluginError::InvalidDescriptor {
            plugin: desc.name.clone(),
            reason: e.to_string(),
        });
        return Ok(report);
    }
    if desc.kind != DenoiserKind::External {
        report.checks.push(check(CHECK_DESCRIPTOR, CheckStatus::Fail("not an external method".into())));
        report.error = Some(PluginError::InvalidDescriptor {
            plugin: desc.name.clone(),
            reason: "not an external method".into(),
        });
        return Ok(report);
    }

    let plugin = desc.name.as_str();
    fs::create_dir(&output).map_err(|e| Error::io(&output, e))?;
    let inputs = scan_inputs(plugin, &input)?;
    // Invoke directly (not through run_external) so the outputs survive for inspection.
    let outcome = if desc.batch {
        invoke(desc, &input, &output).map(|_| ())
    } else {
        run_per_image(desc, &inputs, &input, &output).map(|_| ())
    };
    match outcome {
        Err(e) if matches!(e, PluginError::Spawn { .. } | PluginError::NonZeroExit { .. } | PluginError::Timeout { .. }) => {
            for name in SMOKE_CHECKS {
                let status = if name == e.check_name() {
                    CheckStatus::Fail(e.to_string())
                } else if name == CHECK_EXIT || name == CHECK_TIMEOUT {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Skipped
                };
                report.checks.push(check(name, status));
            }
            report.error = Some(e);
        }
        Err(e) if !desc.batch && matches!(e.check_name(), CHECK_MISSING | CHECK_NAMES | CHECK_DECODE | CHECK_DIMENSIONS) => {
            for name in SMOKE_CHECKS {
                let status = if name == e.check_name() {
                    CheckStatus::Fail(e.to_string())
                } else if name == CHECK_EXIT || name == CHECK_TIMEOUT {
                    CheckStatus::Pass
                } else {
                    CheckStatus::Skipped
                };
                report.checks.push(check(name, status));
            }
            report.error = Some(e);
        }
        Err(e) => return Err(e.into()),
        Ok(()) => {
            let issues = inspect_outputs(plugin, &inputs, &output)?;
            let fail_if = |bad: bool, what: &[String]| {
                if bad {
                    CheckStatus::Fail(what.join(", "))
                } else {
                    CheckStatus::Pass
                }
            };
            report.checks.push(check(CHECK_EXIT, CheckStatus::Pass));
            report.checks.push(check(CHECK_TIMEOUT, CheckStatus::Pass));
            report.checks.push(check(CHECK_MISSING, fail_if(issues.unexplained_missing(), &issues.missing)));
            report.checks.push(check(CHECK_NAMES, fail_if(!issues.unexpected.is_empty(), &issues.unexpected)));
            report.checks.push(check(CHECK_DECODE, fail_if(!issues.undecodable.is_empty(), &issues.undecodable)));
            report.checks.push(check(
                CHECK_DIMENSIONS,
                fail_if(!issues.wrong_dimensions.is_empty(), &issues.wrong_dimensions),
            ));
            report.error = issues.into_error(plugin);
        }
    }
    Ok(report)
}
