//! Single-channel raster model and lossless 8-bit I/O.
//!
//! Intensities are stored as `f64` on the 8-bit scale `[0, 255]`. Noise and
//! denoising operate on real values; [`quantize`] is the only place where
//! values are snapped back to the integer grid, always clipping first and then
//! rounding half away from zero.

use std::fs;
use std::path::Path;

use ::image::{DynamicImage, GrayImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights for R, G, B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if pixels.len() != width * height {
            return Err(Error::BufferLength {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image by evaluating `f(row, col)` for every pixel.
    ///
    /// Panics if either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "zero-dimension image");
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn same_dimensions(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_same_dimensions(&self, other: &Image) -> Result<()> {
        if self.same_dimensions(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    /// True when every intensity is an integer in `0..=255`.
    pub fn is_quantized(&self) -> bool {
        self.first_unquantized().is_none()
    }

    fn first_unquantized(&self) -> Option<(usize, f64)> {
        self.pixels
            .iter()
            .copied()
            .enumerate()
            .find(|&(_, v)| !(0.0..=255.0).contains(&v) || v.fract() != 0.0)
    }

    pub fn quantized(&self) -> Image {
        quantize(self)
    }

    /// Same image with a different pixel buffer of identical length.
    pub(crate) fn with_pixels(&self, pixels: Vec<f64>) -> Image {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Image {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Converts a quantized image to an 8-bit buffer.
    pub fn to_gray8(&self) -> Result<GrayImage> {
        if let Some((index, value)) = self.first_unquantized() {
            return Err(Error::Unquantized { index, value });
        }
        let bytes = self.pixels.iter().map(|&v| v as u8).collect();
        Ok(GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length checked at construction"))
    }

    pub fn from_gray8(img: &GrayImage) -> Result<Image> {
        let (w, h) = img.dimensions();
        Image::new(
            w as usize,
            h as usize,
            img.as_raw().iter().map(|&b| f64::from(b)).collect(),
        )
    }
}

/// Clips to `[0, 255]` and rounds half away from zero.
#[inline]
pub fn quantize_value(v: f64) -> f64 {
    // NaN maps to 0 so downstream encoding never sees it.
    if v.is_nan() {
        return 0.0;
    }
    v.clamp(0.0, 255.0).round()
}

pub fn quantize(img: &Image) -> Image {
    img.with_pixels(img.pixels.iter().map(|&v| quantize_value(v)).collect())
}

/// Loads a lossless raster as grayscale.
///
/// Multi-channel inputs are reduced to luma with [`LUMA_WEIGHTS`]; alpha is
/// ignored. 16-bit and floating-point rasters are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(decode_err(format!("unsupported format {other:?}"))),
        None => return Err(decode_err("unrecognized format".into())),
    }
    let dynamic = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::ZeroDimension {
            width: w,
            height: h,
        });
    }
    let pixels: Vec<f64> = match dynamic {
        DynamicImage::ImageLuma8(buf) => buf.as_raw().iter().map(|&b| f64::from(b)).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| f64::from(p.0[0])).collect(),
        DynamicImage::ImageRgb8(buf) => buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba8(buf) => {
            buf.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect()
        }
        other => {
            return Err(decode_err(format!(
                "unsupported pixel layout {:?} (8-bit only)",
                other.color()
            )))
        }
    };
    Image::new(w, h, pixels)
}

fn luma(r: u8, g: u8, b: u8) -> f64 {
    let v = LUMA_WEIGHTS[0] * f64::from(r)
        + LUMA_WEIGHTS[1] * f64::from(g)
        + LUMA_WEIGHTS[2] * f64::from(b);
    quantize_value(v)
}

/// Writes a quantized image losslessly. The format follows the extension:
/// `.pgm` writes binary PGM, anything else PNG.
///
/// Unquantized images are rejected rather than silently rounded.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let gray = img.to_gray8()?;
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("pgm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    let mut bytes = std::io::Cursor::new(Vec::new());
    gray.write_to(&mut bytes, format).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    fs::write(path, bytes.into_inner()).map_err(|e| Error::io(path, e))
}

/// File extensions accepted as corpus images.
pub fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "png" || e == "pgm"
    )
}
