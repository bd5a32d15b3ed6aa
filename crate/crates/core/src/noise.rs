//! Seeded corruption operators: AWGN, salt-and-pepper and their mixture.
//!
//! All operators are pure functions of `(image, parameters, stream_seed)`.
//! AWGN draws pixel `i`'s deviate from ChaCha8 words `4i..4i+4` of the stream
//! keyed by `stream_seed`, which makes the output independent of traversal
//! order and of how the image is split across workers.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetKind, DatasetManifest};
use crate::error::{Error, Result};
use crate::raster::{load_image, quantize_value, Image};
use crate::seed::derive_seed;

/// Pixels handled per parallel work item.
const AWGN_CHUNK: usize = 4096;
/// ChaCha 32-bit words consumed per pixel (two `u64` for Box-Muller).
const WORDS_PER_PIXEL: u128 = 4;

/// Sub-seed labels used by [`mixture`].
pub const AWGN_LABEL: &str = "awgn";
pub const SALT_PEPPER_LABEL: &str = "sp";

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )))
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if (0.0..=1.0).contains(&fraction) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "fraction must lie in [0, 1], got {fraction}"
        )))
    }
}

#[inline]
fn standard_normal(a: u64, b: u64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    // u1 in (0, 1] keeps ln finite
    let u1 = ((a >> 11) as f64 + 1.0) * SCALE;
    let u2 = (b >> 11) as f64 * SCALE;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard-normal deviates for pixel indices `start..start + out.len()`.
pub(crate) fn fill_normals(stream_seed: u64, start: usize, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    rng.set_word_pos(start as u128 * WORDS_PER_PIXEL);
    for z in out {
        let a = rng.next_u64();
        let b = rng.next_u64();
        *z = standard_normal(a, b);
    }
}

/// Adds N(0, sigma^2) to every pixel, then clips and rounds.
pub fn awgn(img: &Image, sigma: f64, stream_seed: u64) -> Result<Image> {
    check_sigma(sigma)?;
    let mut out = img.pixels().to_vec();
    if sigma == 0.0 {
        out.iter_mut().for_each(|v| *v = quantize_value(*v));
        return Ok(img.with_pixels(out));
    }
    out.par_chunks_mut(AWGN_CHUNK)
        .enumerate()
        .for_each(|(chunk, values)| {
            let mut normals = vec![0.0; values.len()];
            fill_normals(stream_seed, chunk * AWGN_CHUNK, &mut normals);
            for (v, z) in values.iter_mut().zip(normals) {
                *v = quantize_value(*v + sigma * z);
            }
        });
    Ok(img.with_pixels(out))
}

/// Number of pixels salt-and-pepper corrupts: `round(fraction * n)`.
pub fn corruption_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).min(n)
}

/// Positions set to 0 and to 255 by [`salt_pepper`] on an image of `n`
/// pixels. The count is exact; an odd count gives the extra pixel to pepper.
pub fn salt_pepper_positions(
    n: usize,
    fraction: f64,
    stream_seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    check_fraction(fraction)?;
    let k = corruption_count(n, fraction);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let (chosen, _) = indices.partial_shuffle(&mut rng, k);
    let n_pepper = k - k / 2;
    let pepper = chosen[..n_pepper].to_vec();
    let salt = chosen[n_pepper..].to_vec();
    Ok((pepper, salt))
}

/// Sets exactly `round(fraction * N)` pixels to 0 or 255; the rest are left
/// untouched.
pub fn salt_pepper(img: &Image, fraction: f64, stream_seed: u64) -> Result<Image> {
    let (pepper, salt) = salt_pepper_positions(img.len(), fraction, stream_seed)?;
    let mut out = img.pixels().to_vec();
    for i in pepper {
        out[i] = 0.0;
    }
    for i in salt {
        out[i] = 255.0;
    }
    Ok(img.with_pixels(out))
}

/// AWGN followed by salt-and-pepper, each with its own labeled sub-seed.
pub fn mixture(img: &Image, sigma: f64, fraction: f64, stream_seed: u64) -> Result<Image> {
    check_sigma(sigma)?;
    check_fraction(fraction)?;
    let noisy = awgn(img, sigma, derive_seed(stream_seed, AWGN_LABEL))?;
    salt_pepper(&noisy, fraction, derive_seed(stream_seed, SALT_PEPPER_LABEL))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseVariant {
    Gaussian,
    SaltPepper,
    Mixture,
}

/// Declarative corruption pipeline.
///
/// `sigma` is used by `gaussian` and `mixture`, `fraction` by `salt_pepper`
/// and `mixture`; unused fields stay at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variant: NoiseVariant,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub fraction: f64,
    pub master_seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, master_seed: u64) -> Self {
        Self {
            variant: NoiseVariant::Gaussian,
            sigma,
            fraction: 0.0,
            master_seed,
        }
    }

    pub fn salt_pepper(fraction: f64, master_seed: u64) -> Self {
        Self {
            variant: NoiseVariant::SaltPepper,
            sigma: 0.0,
            fraction,
            master_seed,
        }
    }

    pub fn mixture(sigma: f64, fraction: f64, master_seed: u64) -> Self {
        Self {
            variant: NoiseVariant::Mixture,
            sigma,
            fraction,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma)?;
        check_fraction(self.fraction)?;
        match self.variant {
            NoiseVariant::Gaussian if self.fraction != 0.0 => Err(Error::InvalidParameter(
                "gaussian noise takes no fraction".into(),
            )),
            NoiseVariant::SaltPepper if self.sigma != 0.0 => Err(Error::InvalidParameter(
                "salt-and-pepper noise takes no sigma".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Parses the pipeline grammar (see [`NoisePipeline`]) and attaches a seed.
    pub fn parse(pipeline: &str, master_seed: u64) -> Result<Self> {
        let p: NoisePipeline = pipeline.parse()?;
        Ok(p.into_spec(master_seed))
    }

    /// Seed of the stream used for `image_id`.
    pub fn stream_seed(&self, image_id: &str) -> u64 {
        derive_seed(self.master_seed, image_id)
    }

    pub fn apply(&self, img: &Image, stream_seed: u64) -> Result<Image> {
        match self.variant {
            NoiseVariant::Gaussian => awgn(img, self.sigma, stream_seed),
            NoiseVariant::SaltPepper => salt_pepper(img, self.fraction, stream_seed),
            NoiseVariant::Mixture => mixture(img, self.sigma, self.fraction, stream_seed),
        }
    }

    pub fn pipeline(&self) -> NoisePipeline {
        NoisePipeline {
            variant: self.variant,
            sigma: self.sigma,
            fraction: self.fraction,
        }
    }
}

/// Seedless noise description in the textual pipeline grammar:
///
/// ```text
/// pipeline := stage ( "|" stage )*
/// stage    := name [ ":" param ( "," param )* ]
/// param    := key "=" number
/// name     := "gaussian" | "awgn" | "sp" | "salt_pepper" | "mixture"
/// ```
///
/// `gaussian` needs `sigma`, `sp` needs `fraction`, `mixture` needs both.
/// The only accepted composition is `gaussian:... | sp:...`, which is the
/// same pipeline as `mixture:...` (AWGN first).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisePipeline {
    pub variant: NoiseVariant,
    pub sigma: f64,
    pub fraction: f64,
}

impl NoisePipeline {
    pub fn into_spec(self, master_seed: u64) -> NoiseSpec {
        NoiseSpec {
            variant: self.variant,
            sigma: self.sigma,
            fraction: self.fraction,
            master_seed,
        }
    }
}

fn parse_stage(stage: &str) -> Result<NoisePipeline> {
    let bad = |msg: String| Error::InvalidParameter(format!("noise stage '{stage}': {msg}"));
    let (name, params) = match stage.split_once(':') {
        Some((n, p)) => (n.trim(), p.trim()),
        None => (stage.trim(), ""),
    };
    let variant = match name {
        "gaussian" | "awgn" => NoiseVariant::Gaussian,
        "sp" | "salt_pepper" => NoiseVariant::SaltPepper,
        "mixture" => NoiseVariant::Mixture,
        other => return Err(bad(format!("unknown noise '{other}'"))),
    };
    let mut sigma = None;
    let mut fraction = None;
    if !params.is_empty() {
        for kv in params.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got '{kv}'")))?;
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| bad(format!("'{}' is not a number", v.trim())))?;
            let slot = match (k.trim(), variant) {
                ("sigma", NoiseVariant::Gaussian | NoiseVariant::Mixture) => &mut sigma,
                ("fraction", NoiseVariant::SaltPepper | NoiseVariant::Mixture) => &mut fraction,
                (key, _) => return Err(bad(format!("unexpected key '{key}'"))),
            };
            if slot.replace(value).is_some() {
                return Err(bad(format!("duplicate key '{}'", k.trim())));
            }
        }
    }
    let need = |v: Option<f64>, key: &str| v.ok_or_else(|| bad(format!("missing '{key}'")));
    let p = match variant {
        NoiseVariant::Gaussian => NoisePipeline {
            variant,
            sigma: need(sigma, "sigma")?,
            fraction: 0.0,
        },
        NoiseVariant::SaltPepper => NoisePipeline {
            variant,
            sigma: 0.0,
            fraction: need(fraction, "fraction")?,
        },
        NoiseVariant::Mixture => NoisePipeline {
            variant,
            sigma: need(sigma, "sigma")?,
            fraction: need(fraction, "fraction")?,
        },
    };
    check_sigma(p.sigma)?;
    check_fraction(p.fraction)?;
    Ok(p)
}

impl FromStr for NoisePipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let stages: Vec<NoisePipeline> = s.split('|').map(parse_stage).collect::<Result<_>>()?;
        match stages.as_slice() {
            [single] => Ok(*single),
            [
                NoisePipeline {
                    variant: NoiseVariant::Gaussian,
                    sigma,
                    ..
                },
                NoisePipeline {
                    variant: NoiseVariant::SaltPepper,
                    fraction,
                    ..
                },
            ] => Ok(NoisePipeline {
                variant: NoiseVariant::Mixture,
                sigma: *sigma,
                fraction: *fraction,
            }),
            _ => Err(Error::InvalidParameter(format!(
                "unsupported noise composition '{s}' (only gaussian|sp)"
            ))),
        }
    }
}

impl fmt::Display for NoisePipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.variant {
            NoiseVariant::Gaussian => write!(f, "gaussian:sigma={}", self.sigma),
            NoiseVariant::SaltPepper => write!(f, "sp:fraction={}", self.fraction),
            NoiseVariant::Mixture => {
                write!(f, "mixture:sigma={},fraction={}", self.sigma, self.fraction)
            }
        }
    }
}

/// One evaluation sample of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub clean: Image,
    pub noisy: Image,
}

/// Produces `(image_id, clean, noisy)` for every evaluation image, in
/// lexicographic image-id order whatever the worker count.
pub fn corrupt_dataset(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    manifest.validate()?;
    let entries = manifest.entries()?;
    let err = |reason: String| Error::Dataset {
        dataset: manifest.name.clone(),
        reason,
    };
    match manifest.kind {
        DatasetKind::Synthetic => {
            let spec = manifest.noise.expect("validated");
            entries
                .par_iter()
                .map(|e| {
                    let clean = load_image(&e.path)?;
                    let noisy = spec.apply(&clean, spec.stream_seed(&e.image_id))?;
                    Ok(Sample {
                        image_id: e.image_id.clone(),
                        clean,
                        noisy,
                    })
                })
                .collect()
        }
        DatasetKind::Paired => {
            let noisy_dir = manifest.noisy_dir.as_ref().expect("validated");
            entries
                .par_iter()
                .map(|e| {
                    let file_name = e.path.file_name().expect("listed files have names");
                    let noisy_path = noisy_dir.join(file_name);
                    if !noisy_path.is_file() {
                        return Err(err(format!(
                            "missing pair file {} for image {}",
                            noisy_path.display(),
                            e.image_id
                        )));
                    }
                    let clean = load_image(&e.path)?;
                    let noisy = load_image(&noisy_path)?;
                    if !clean.same_dimensions(&noisy) {
                        return Err(err(format!(
                            "dimension mismatch in pair {}: {}x{} vs {}x{}",
                            e.image_id,
                            clean.width(),
                            clean.height(),
                            noisy.width(),
                            noisy.height()
                        )));
                    }
                    Ok(Sample {
                        image_id: e.image_id.clone(),
                        clean,
                        noisy,
                    })
                })
                .collect()
        }
    }
}
