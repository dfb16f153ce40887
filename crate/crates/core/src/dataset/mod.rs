//! Identity galleries: synthetic generation, PNG ingestion, preprocessing
//! and identity-disjoint train/test splitting.

mod image;
mod ingest;
mod split;
mod synth;

pub use self::image::ImageTensor;
pub use ingest::{
    load_directory, load_png, preprocess, preprocess_to, save_directory, save_png16, Channels, LoadReport,
    FACE_SIZE,
};
pub use split::split_disjoint;
pub use synth::{generate_synthetic, SynthParams, FAMILY_PARAMS};

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("pixel {index} = {value} lies outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error("identity '{0}' has no images")]
    EmptyIdentity(String),
    #[error("inconsistent image shapes: {first:?} vs {other:?} (identity '{label}')")]
    InconsistentShape {
        label: String,
        first: (usize, usize, usize),
        other: (usize, usize, usize),
    },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid split: {0}")]
    Split(String),
    #[error("image {width}x{height} is smaller than the 8x8 minimum")]
    TooSmall { width: usize, height: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Train,
    Test,
    All,
}

impl fmt::Display for DatasetRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetRole::Train => "train",
            DatasetRole::Test => "test",
            DatasetRole::All => "all",
        })
    }
}

/// Images grouped by identity label.
///
/// Labels are unique and kept in sorted order; the position of a label in
/// that order is its class index. Every identity has at least one image and
/// all images share one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityDataset {
    role: DatasetRole,
    entries: BTreeMap<String, Vec<ImageTensor>>,
}

impl IdentityDataset {
    pub fn new(role: DatasetRole, entries: BTreeMap<String, Vec<ImageTensor>>) -> Result<Self, DatasetError> {
        let mut first: Option<(usize, usize, usize)> = None;
        for (label, images) in &entries {
            if images.is_empty() {
                return Err(DatasetError::EmptyIdentity(label.clone()));
            }
            for img in images {
                match first {
                    None => first = Some(img.dims()),
                    Some(dims) if dims != img.dims() => {
                        return Err(DatasetError::InconsistentShape {
                            label: label.clone(),
                            first: dims,
                            other: img.dims(),
                        })
                    }
                    _ => {}
                }
            }
        }
        if entries.is_empty() {
            return Err(DatasetError::Empty);
        }
        Ok(Self { role, entries })
    }

    pub fn role(&self) -> DatasetRole {
        self.role
    }

    pub fn with_role(mut self, role: DatasetRole) -> Self {
        self.role = role;
        self
    }

    pub fn identity_count(&self) -> usize {
        self.entries.len()
    }

    pub fn image_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn identities(&self) -> impl Iterator<Item = (&str, &[ImageTensor])> {
        self.entries.iter().map(|(l, v)| (l.as_str(), v.as_slice()))
    }

    pub fn images_of(&self, label: &str) -> Option<&[ImageTensor]> {
        self.entries.get(label).map(Vec::as_slice)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entries.contains_key(label)
    }

    /// Every image with its class index, in label order.
    pub fn images(&self) -> impl Iterator<Item = (usize, &ImageTensor)> {
        self.entries
            .values()
            .enumerate()
            .flat_map(|(class, images)| images.iter().map(move |img| (class, img)))
    }

    /// `(height, width, channels)` shared by all images.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.images().next().map(|(_, img)| img.dims()).unwrap_or_default()
    }

    /// Copy restricted to identities for which `keep` returns true.
    pub fn filter_identities(&self, mut keep: impl FnMut(&str) -> bool) -> Result<Self, DatasetError> {
        let entries = self
            .entries
            .iter()
            .filter(|(l, _)| keep(l))
            .map(|(l, v)| (l.clone(), v.clone()))
            .collect();
        Self::new(self.role, entries)
    }

    /// SHA-256 over labels, shapes and pixel bit patterns.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (label, images) in &self.entries {
            hasher.update((label.len() as u64).to_le_bytes());
            hasher.update(label.as_bytes());
            hasher.update((images.len() as u64).to_le_bytes());
            for img in images {
                let (h, w, c) = img.dims();
                for d in [h, w, c] {
                    hasher.update((d as u64).to_le_bytes());
                }
                for p in img.pixels() {
                    hasher.update(p.to_le_bytes());
                }
            }
        }
        hasher.finalize().into()
    }

    pub(crate) fn into_entries(self) -> BTreeMap<String, Vec<ImageTensor>> {
        self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f64) -> ImageTensor {
        ImageTensor::filled(2, 2, 1, v).unwrap()
    }

    #[test]
    fn rejects_empty_identity_and_mixed_shapes() {
        let mut entries = BTreeMap::new();
        entries.insert("a".to_string(), vec![]);
        assert!(matches!(
            IdentityDataset::new(DatasetRole::All, entries),
            Err(DatasetError::EmptyIdentity(_))
        ));
        let mut entries = BTreeMap::new();
        entries.insert("a".to_string(), vec![img(0.1), ImageTensor::filled(3, 2, 1, 0.0).unwrap()]);
        assert!(matches!(
            IdentityDataset::new(DatasetRole::All, entries),
            Err(DatasetError::InconsistentShape { .. })
        ));
    }

    #[test]
    fn class_indices_follow_label_order() {
        let mut entries = BTreeMap::new();
        entries.insert("b".to_string(), vec![img(0.2)]);
        entries.insert("a".to_string(), vec![img(0.1), img(0.3)]);
        let data = IdentityDataset::new(DatasetRole::Train, entries).unwrap();
        let classes: Vec<usize> = data.images().map(|(c, _)| c).collect();
        assert_eq!(classes, vec![0, 0, 1]);
        assert_eq!(data.labels().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(data.image_count(), 3);
    }

    #[test]
    fn fingerprint_tracks_pixels() {
        let mut entries = BTreeMap::new();
        entries.insert("a".to_string(), vec![img(0.1)]);
        let a = IdentityDataset::new(DatasetRole::All, entries.clone()).unwrap();
        entries.insert("a".to_string(), vec![img(0.2)]);
        let b = IdentityDataset::new(DatasetRole::All, entries).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }
}
