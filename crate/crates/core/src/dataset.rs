//! Corpus descriptions and on-disk listing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSpec;
use crate::raster::is_image_file;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Clean images plus a [`NoiseSpec`]; noisy images are generated.
    Synthetic,
    /// Clean and noisy directories with identically named files.
    Paired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub kind: DatasetKind,
    pub clean_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    /// Number of evaluation images, taken in image-id order. `None` uses all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_count: Option<usize>,
}

/// One corpus entry: its id (file stem) and source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub image_id: String,
    pub path: PathBuf,
}

impl DatasetManifest {
    pub fn synthetic(name: impl Into<String>, clean_dir: impl Into<PathBuf>, noise: NoiseSpec) -> Self {
        Self {
            name: name.into(),
            kind: DatasetKind::Synthetic,
            clean_dir: clean_dir.into(),
            noisy_dir: None,
            noise: Some(noise),
            test_count: None,
        }
    }

    pub fn paired(
        name: impl Into<String>,
        clean_dir: impl Into<PathBuf>,
        noisy_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: DatasetKind::Paired,
            clean_dir: clean_dir.into(),
            noisy_dir: Some(noisy_dir.into()),
            noise: None,
            test_count: None,
        }
    }

    pub fn with_test_count(mut self, n: usize) -> Self {
        self.test_count = Some(n);
        self
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Dataset {
            dataset: self.name.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(self.err("empty dataset name"));
        }
        match self.kind {
            DatasetKind::Synthetic => {
                let noise = self
                    .noise
                    .as_ref()
                    .ok_or_else(|| self.err("synthetic dataset needs a noise spec"))?;
                noise.validate()?;
                if self.noisy_dir.is_some() {
                    return Err(self.err("synthetic dataset must not set noisy_dir"));
                }
            }
            DatasetKind::Paired => {
                if self.noisy_dir.is_none() {
                    return Err(self.err("paired dataset needs noisy_dir"));
                }
                if self.noise.is_some() {
                    return Err(self.err("paired dataset must not set noise"));
                }
            }
        }
        Ok(())
    }

    /// Lists the evaluation entries of the clean side, sorted by image id and
    /// truncated to `test_count`.
    pub fn entries(&self) -> Result<Vec<CorpusEntry>> {
        let all = list_images(&self.clean_dir)?;
        if all.is_empty() {
            return Err(self.err(format!("no images in {}", self.clean_dir.display())));
        }
        match self.test_count {
            Some(n) if n > all.len() => Err(self.err(format!(
                "test_count {n} exceeds corpus size {}",
                all.len()
            ))),
            Some(0) => Err(self.err("test_count must be at least 1")),
            Some(n) => Ok(all.into_iter().take(n).collect()),
            None => Ok(all),
        }
    }
}

/// Image files in `dir`, sorted by stem. Duplicate stems are an error since
/// the stem is the pairing key.
pub fn list_images(dir: &Path) -> Result<Vec<CorpusEntry>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for item in rd {
        let item = item.map_err(|e| Error::io(dir, e))?;
        let path = item.path();
        if !path.is_file() || !is_image_file(&path) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        entries.push(CorpusEntry {
            image_id: stem.to_owned(),
            path,
        });
    }
    entries.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    if let Some(w) = entries.windows(2).find(|w| w[0].image_id == w[1].image_id) {
        return Err(Error::InvalidParameter(format!(
            "duplicate image id {} in {}",
            w[0].image_id,
            dir.display()
        )));
    }
    Ok(entries)
}
