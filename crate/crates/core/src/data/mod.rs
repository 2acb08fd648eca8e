//! Dataset ingestion, synthetic generation, preprocessing, splitting, and
//! augmentation.

pub mod nzt;
pub mod preprocess;
pub mod synth;

pub use preprocess::{augment, preprocess, split_dataset, AugmentConfig};
pub use synth::{generate_synthetic, SynthSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Label value excluded from losses and metrics (padding sentinel).
pub const IGNORE_LABEL: u16 = 65535;

/// Integer class-id map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u16>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::DataValidation(format!(
                "label map {h}x{w} needs {} entries, got {}",
                h * w,
                data.len()
            )));
        }
        Ok(LabelMap { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        LabelMap {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.w + x]
    }
}

/// One image (C, H, W) with its per-pixel class labels.
#[derive(Debug, Clone)]
pub struct SegmentationSample {
    pub image: Tensor<f32>,
    pub label: LabelMap,
}

impl SegmentationSample {
    pub fn validate(&self, num_classes: usize, who: &str) -> Result<()> {
        let s = self.image.shape();
        if s.len() != 3 || s[1] != self.label.h || s[2] != self.label.w {
            return Err(Error::DataValidation(format!(
                "{who}: image shape {s:?} does not match label {}x{}",
                self.label.h, self.label.w
            )));
        }
        if !self.image.all_finite() {
            return Err(Error::DataValidation(format!("{who}: non-finite image")));
        }
        if let Some(&bad) = self
            .label
            .data
            .iter()
            .find(|&&l| l != IGNORE_LABEL && l as usize >= num_classes)
        {
            return Err(Error::DataValidation(format!(
                "{who}: label id {bad} out of range (num_classes = {num_classes})"
            )));
        }
        Ok(())
    }
}

/// In-memory dataset with its declared class count.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub samples: Vec<SegmentationSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub label: String,
}

/// On-disk dataset description: canonical JSON next to NZT1 tensor files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_classes: usize,
    pub modality: String,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Load one sample pair from NZT1 files.
pub fn load_sample(image_path: &Path, label_path: &Path) -> Result<SegmentationSample> {
    let image = nzt::read_f32(image_path)?;
    if image.rank() != 3 {
        return Err(Error::DataValidation(format!(
            "{}: image must be rank-3 (C, H, W), got {:?}",
            image_path.display(),
            image.shape()
        )));
    }
    let (h, w, data) = nzt::read_labels(label_path)?;
    let label = LabelMap::new(h, w, data)?;
    Ok(SegmentationSample { image, label })
}

/// Load a dataset through its manifest, validating every sample.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base: PathBuf = manifest_path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_default();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let sample = load_sample(&base.join(&entry.image), &base.join(&entry.label))?;
        sample.validate(manifest.num_classes, &entry.image)?;
        samples.push(sample);
    }
    Ok(Dataset {
        name: manifest.name,
        num_classes: manifest.num_classes,
        samples,
    })
}

/// Write a dataset as NZT1 files plus manifest into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path, modality: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let image = format!("img_{i:05}.nzt");
        let label = format!("lab_{i:05}.nzt");
        nzt::write_f32(&dir.join(&image), &s.image)?;
        nzt::write_labels(&dir.join(&label), s.label.h, s.label.w, &s.label.data)?;
        entries.push(ManifestEntry { image, label });
    }
    let manifest = DatasetManifest {
        name: dataset.name.clone(),
        num_classes: dataset.num_classes,
        modality: modality.to_string(),
        samples: entries,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
