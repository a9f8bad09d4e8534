//! Dataset ingestion, preprocessing, augmentation, multi-domain mixing,
//! stratified cross-validation splits, and a synthetic multi-domain
//! generator for desk-scale verification.

mod augment;
mod load;
mod preprocess;
mod split;
mod synth;

pub use augment::{augment, AugmentConfig, AugmentParams};
pub use load::{load_dataset, load_multi_domain};
pub use preprocess::{bilinear_resize, preprocess};
pub use split::{kfold_split, parse_split, SplitIndices, SplitSpec};
pub use synth::{synth_generate, write_datasets, SynthSpec};

pub(crate) use split::mix_seed;

use crate::error::Error;
use crate::Result;

/// Raw pixels in row-major HWC layout, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageData {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageData {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Data(format!(
                "images must have 1 or 3 channels, got {channels}"
            )));
        }
        if height < 8 || width < 8 {
            return Err(Error::Data(format!(
                "image extents below 8 ({height}x{width})"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Data(format!(
                "pixel buffer holds {} values, want {}",
                data.len(),
                height * width * channels
            )));
        }
        Ok(ImageData {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn pixel(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// One labeled sample: pixels, local class id, domain id, provenance.
#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub image: ImageData,
    pub class_id: usize,
    pub domain_id: usize,
    pub source: String,
}

/// A single imaging domain: its images and local class names.
#[derive(Clone, Debug)]
pub struct DomainDataset {
    pub name: String,
    pub images: Vec<LabeledImage>,
    pub class_names: Vec<String>,
}

impl DomainDataset {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Several domains merged into one global label space: global class =
/// offset of the preceding domains' class counts + local class.
#[derive(Clone, Debug)]
pub struct MixDataset {
    pub domain_names: Vec<String>,
    /// Global class names, `domain/class`.
    pub class_names: Vec<String>,
    /// Global label offset per domain.
    pub offsets: Vec<usize>,
    /// All images, `class_id` rewritten to the global space.
    pub images: Vec<LabeledImage>,
}

impl MixDataset {
    pub fn total_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|img| img.class_id).collect()
    }

    pub fn global_label(&self, domain_idx: usize, local: usize) -> usize {
        self.offsets[domain_idx] + local
    }

    /// Inverse of [`MixDataset::global_label`].
    pub fn to_local(&self, global: usize) -> (usize, usize) {
        for (d, &off) in self.offsets.iter().enumerate().rev() {
            if global >= off {
                return (d, global - off);
            }
        }
        unreachable!("offset table starts at 0")
    }
}

/// Merge domains into one dataset over the union label space. Domain names
/// must be distinct; a single domain is the identity mix (the single-domain
/// training mode).
pub fn mix_domains(domains: Vec<DomainDataset>) -> Result<MixDataset> {
    if domains.is_empty() {
        return Err(Error::contract("cannot mix zero datasets"));
    }
    for (i, a) in domains.iter().enumerate() {
        for b in &domains[i + 1..] {
            if a.name == b.name {
                return Err(Error::contract(format!(
                    "duplicate dataset name `{}`",
                    a.name
                )));
            }
        }
    }
    let mut offsets = Vec::with_capacity(domains.len());
    let mut class_names = Vec::new();
    let mut images = Vec::new();
    let mut domain_names = Vec::new();
    let mut offset = 0;
    for (d, domain) in domains.into_iter().enumerate() {
        offsets.push(offset);
        for name in &domain.class_names {
            class_names.push(format!("{}/{}", domain.name, name));
        }
        for mut img in domain.images {
            if img.class_id >= domain.class_names.len() {
                return Err(Error::contract(format!(
                    "image `{}` has class {} but domain `{}` declares {} classes",
                    img.source,
                    img.class_id,
                    domain.name,
                    domain.class_names.len()
                )));
            }
            img.class_id += offset;
            img.domain_id = d;
            images.push(img);
        }
        offset += domain.class_names.len();
        domain_names.push(domain.name);
    }
    Ok(MixDataset {
        domain_names,
        class_names,
        offsets,
        images,
    })
}
