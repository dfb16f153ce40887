//! Embedding networks φ: small classifiers whose penultimate layer is the
//! face feature.

mod format;
mod network;
mod train;

pub use format::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use network::{init_model, ExtractorModel, Forward, TrainMeta, Weights};
pub use train::{accuracy, train_classifier, LrSchedule, TrainConfig, TrainReport};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, ImageTensor};
use crate::numerics::{Graph, NumericsError, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid extractor spec: {0}")]
    InvalidSpec(String),
    #[error("unknown architecture '{0}' (valid: tiny_cnn, mlp)")]
    UnknownArch(String),
    #[error("image shape {got:?} does not match extractor input {expected:?}")]
    InputShape {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("model has {model} classes but the dataset has {dataset} identities")]
    ClassCountMismatch { model: usize, dataset: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: NumericsError,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a UAXM model file (bad magic bytes {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported UAXM format version {0}")]
    UnsupportedVersion(u32),
    #[error("model file truncated")]
    Truncated,
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    TinyCnn,
    Mlp,
}

impl Arch {
    pub const ALL: [Arch; 2] = [Arch::TinyCnn, Arch::Mlp];

    pub fn id(self) -> &'static str {
        match self {
            Arch::TinyCnn => "tiny_cnn",
            Arch::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Arch {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| ModelError::UnknownArch(s.to_owned()))
    }
}

/// Image geometry an extractor accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub fn square(side: usize, channels: usize) -> Self {
        Self {
            height: side,
            width: side,
            channels,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn numel(&self) -> usize {
        self.height * self.width * self.channels
    }
}

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// Architecture description. `hidden` holds the conv channel widths for
/// `tiny_cnn` and the hidden layer widths for `mlp`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub arch: Arch,
    pub input: InputShape,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub class_count: usize,
}

impl ExtractorSpec {
    /// Three stride-2 3×3 conv blocks (8, 16, 32 channels), global average
    /// pool, embedding layer, classification head.
    pub fn tiny_cnn(input: InputShape, embedding_dim: usize, class_count: usize) -> Self {
        Self {
            arch: Arch::TinyCnn,
            input,
            embedding_dim,
            hidden: vec![8, 16, 32],
            class_count,
        }
    }

    /// Flatten, one 256-wide hidden layer, embedding layer, classification head.
    pub fn mlp(input: InputShape, embedding_dim: usize, class_count: usize) -> Self {
        Self {
            arch: Arch::Mlp,
            input,
            embedding_dim,
            hidden: vec![256],
            class_count,
        }
    }

    pub fn for_arch(arch: Arch, input: InputShape, embedding_dim: usize, class_count: usize) -> Self {
        match arch {
            Arch::TinyCnn => Self::tiny_cnn(input, embedding_dim, class_count),
            Arch::Mlp => Self::mlp(input, embedding_dim, class_count),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::InvalidSpec(m));
        if self.embedding_dim < 2 {
            return fail(format!("embedding_dim must be >= 2, got {}", self.embedding_dim));
        }
        if self.class_count < 2 {
            return fail(format!("class_count must be >= 2, got {}", self.class_count));
        }
        if self.input.channels != 1 && self.input.channels != 3 {
            return fail(format!("input channels must be 1 or 3, got {}", self.input.channels));
        }
        if self.input.height < 8 || self.input.width < 8 {
            return fail(format!(
                "input {}x{} is below the 8x8 minimum",
                self.input.height, self.input.width
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return fail(format!("hidden sizes must be non-empty and positive, got {:?}", self.hidden));
        }
        Ok(())
    }
}

/// Anything that maps images to embeddings through a differentiable graph.
pub trait Embedder {
    /// `(height, width, channels)` of accepted images.
    fn input_dims(&self) -> (usize, usize, usize);

    fn embedding_dim(&self) -> usize;

    /// Maps `images: (N, C, H, W)` to `(N, embedding_dim)` on `graph`.
    fn embed_graph(&self, graph: &mut Graph, images: Var) -> Result<Var, NumericsError>;

    fn embed(&self, image: &ImageTensor) -> Result<Vec<f64>, ModelError> {
        let mut out = self.embed_batch(&[image])?;
        Ok(out.pop().expect("one embedding per image"))
    }

    /// Embeds images in fixed-size chunks, preserving order.
    fn embed_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f64>>, ModelError> {
        const CHUNK: usize = 32;
        let dim = self.embedding_dim();
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let batch = images_to_tensor(chunk, self.input_dims())?;
            let mut g = Graph::new();
            let x = g.constant(batch)?;
            let e = self.embed_graph(&mut g, x)?;
            out.extend(g.value(e)?.data().chunks_exact(dim).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

/// Stacks images into a planar `(N, C, H, W)` tensor after checking their shape.
pub fn images_to_tensor(images: &[&ImageTensor], expected: (usize, usize, usize)) -> Result<Tensor, ModelError> {
    let (h, w, c) = expected;
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dims() != expected {
            return Err(ModelError::InputShape {
                expected,
                got: img.dims(),
            });
        }
        data.extend(img.to_chw());
    }
    Ok(Tensor::new(vec![images.len(), c, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_parsing_lists_valid_ids() {
        assert_eq!("mlp".parse::<Arch>().unwrap(), Arch::Mlp);
        assert_eq!("tiny_cnn".parse::<Arch>().unwrap(), Arch::TinyCnn);
        let err = "resnet".parse::<Arch>().unwrap_err().to_string();
        assert!(err.contains("tiny_cnn") && err.contains("mlp"), "{err}");
    }

    #[test]
    fn spec_validation() {
        let input = InputShape::square(16, 1);
        assert!(ExtractorSpec::tiny_cnn(input, 64, 10).validate().is_ok());
        assert!(ExtractorSpec::tiny_cnn(input, 1, 10).validate().is_err());
        assert!(ExtractorSpec::mlp(input, 8, 1).validate().is_err());
        assert!(ExtractorSpec::mlp(InputShape::square(16, 2), 8, 3).validate().is_err());
    }
}
