//! Universal adversarial spoofing examples: a seed face `x_A` plus a bounded
//! perturbation `ν` whose embedding sits close to many identities at once.

mod artifact;
mod budget;
mod craft;
mod loss;
mod reparam;

pub use artifact::{load_artifact, save_artifact, UaxArtifact, NU_FORMAT};
pub use budget::{project, Norm, PerturbationBudget};
pub use craft::{craft_uax, CraftConfig, ProjectionSchedule, Sampling};
pub use loss::{batch_loss, batch_loss_gradient, embedding_loss_graph, pairwise_loss};
pub use reparam::{reparam, reparam_graph, reparam_inverse, reparam_inverse_strict, BOUNDARY_NUDGE};

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::{DatasetError, ImageTensor};
use crate::extractor::ModelError;
use crate::metrics::MetricsError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid perturbation budget: {0}")]
    InvalidBudget(String),
    #[error("unsupported norm order '{0}' (valid: 2, inf)")]
    UnsupportedNorm(String),
    #[error("invalid craft config: {0}")]
    InvalidConfig(String),
    #[error("perturbation has {got} elements but the image has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("loss became non-finite at iteration {iteration}: {source}")]
    NonFinite {
        iteration: usize,
        #[source]
        source: NumericsError,
    },
    #[error("reparameterization inverse undefined at {value}; nudge boundary pixels into (0, 1)")]
    ReparamBoundary { value: f64 },
    #[error("perturbation norm {norm} exceeds budget {xi}")]
    BudgetViolation { norm: f64, xi: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact {}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

/// `x′ = clamp(x_A + ν, 0, 1)` with `ν` in the image's HWC layout.
pub fn apply_perturbation(x_a: &ImageTensor, nu: &[f64]) -> Result<ImageTensor, AttackError> {
    if nu.len() != x_a.pixels().len() {
        return Err(AttackError::ShapeMismatch {
            expected: x_a.pixels().len(),
            got: nu.len(),
        });
    }
    let pixels = x_a.pixels().iter().zip(nu).map(|(x, v)| x + v).collect();
    let (h, w, c) = x_a.dims();
    Ok(ImageTensor::from_clamped(h, w, c, pixels)?)
}
