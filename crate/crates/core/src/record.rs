use std::path::PathBuf;

/// Result of one `(method, dataset, image)` evaluation.
///
/// `psnr_db` is `f64::INFINITY` for a perfect reconstruction. Metrics that
/// were not requested by the run are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub method: String,
    pub dataset: String,
    pub image_id: String,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub wall_time_s: f64,
    /// Path of the denoised image relative to the run's output directory.
    pub output_path: PathBuf,
}

impl EvaluationRecord {
    pub(crate) fn sort_key(&self) -> (&str, &str, &str) {
        (&self.dataset, &self.method, &self.image_id)
    }
}
