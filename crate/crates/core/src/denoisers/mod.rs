//! Built-in expert denoisers.

pub mod bm3d;
mod median;

pub use median::median_denoise;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::raster::Image;

/// "No denoising" baseline.
pub fn identity_denoise(img: &Image) -> Image {
    img.clone()
}

/// A built-in method with its parameters resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case")]
pub enum BuiltinDenoiser {
    Identity,
    Median { radius: usize },
    Bm3d { sigma: f64 },
}

impl BuiltinDenoiser {
    pub fn denoise(&self, img: &Image) -> Result<Image> {
        match *self {
            BuiltinDenoiser::Identity => Ok(identity_denoise(img)),
            BuiltinDenoiser::Median { radius } => median_denoise(img, radius),
            BuiltinDenoiser::Bm3d { sigma } => bm3d::bm3d(img, sigma),
        }
    }
}
