use std::time::Instant;

use crate::denoisers::BuiltinDenoiser;
use crate::error::{Error, Result};
use crate::metrics::percentile_sorted;
use crate::plugin::{run_external, DenoiserDescriptor, DenoiserKind};
use crate::raster::{save_image, Image};

/// Side of the input used for inference-time comparisons.
pub const TIMING_SIDE: usize = 256;

fn check_repeats(repeats: usize) -> Result<()> {
    if repeats < 3 {
        return Err(Error::InvalidParameter(format!("repeats must be >= 3, got {repeats}")));
    }
    Ok(())
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Wall-clock samples of `repeats` runs after one discarded warm-up.
pub fn timing_samples(mut run: impl FnMut() -> Result<()>, repeats: usize) -> Result<Vec<f64>> {
    run()?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        run()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    Ok(samples)
}

fn median(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    percentile_sorted(&samples, 0.5)
}

/// Median wall time of a builtin on one core.
pub fn time_builtin(method: &BuiltinDenoiser, img: &Image, repeats: usize) -> Result<f64> {
    check_repeats(repeats)?;
    let samples = single_thread(|| timing_samples(|| method.denoise(img).map(drop), repeats))??;
    Ok(median(samples))
}

/// Median wall time (seconds) of one denoiser on `img`, after a discarded
/// warm-up run. External plugins are timed end to end, process start included.
pub fn time_denoiser(desc: &DenoiserDescriptor, img: &Image, repeats: usize) -> Result<f64> {
    check_repeats(repeats)?;
    match desc.kind {
        DenoiserKind::Builtin => time_builtin(&desc.resolve_builtin(None)?, img, repeats),
        DenoiserKind::External => {
            let scratch = tempfile::tempdir().map_err(|e| Error::io("<tempdir>", e))?;
            let input = scratch.path().join("input");
            std::fs::create_dir(&input).map_err(|e| Error::io(&input, e))?;
            save_image(&img.quantized(), input.join("timing.png"))?;
            let desc = desc.clone().with_batch(true);
            let mut round = 0;
            let samples = timing_samples(
                || {
                    round += 1;
                    let out = scratch.path().join(format!("output{round}"));
                    run_external(&desc, &input, &out)?;
                    Ok(())
                },
                repeats,
            )?;
            Ok(median(samples))
        }
    }
}
