use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{match_probe, EerPoint, GalleryEmbeddings, MetricsError};
use crate::attack::UaxArtifact;
use crate::dataset::{DatasetRole, IdentityDataset};
use crate::extractor::Embedder;

/// `values[i][j]`: mean UAX image-level FMR of artifacts crafted on model `i`
/// when presented to model `j` at model `j`'s own threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub model_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub artifact_counts: Vec<usize>,
    pub gallery_role: DatasetRole,
    pub iterations: Option<usize>,
    pub xi: Option<f64>,
}

impl TransferMatrix {
    pub fn get(&self, source: usize, target: usize) -> f64 {
        self.values[source][target]
    }

    /// Rows are sources, columns are targets; the corner cell is `source\target`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source\\target");
        for id in &self.model_ids {
            write!(out, ",{id}").expect("write to String");
        }
        out.push('\n');
        for (id, row) in self.model_ids.iter().zip(&self.values) {
            out.push_str(id);
            for v in row {
                write!(out, ",{v}").expect("write to String");
            }
            out.push('\n');
        }
        out
    }
}

/// Cross-model transfer of UAXs. Every model must have at least one artifact
/// whose `source_model` equals its id; `thresholds[j]` belongs to
/// `models[j]`. The seed identity is excluded from the gallery as in
/// [`super::evaluate_uax`].
pub fn transfer_matrix(
    models: &[(&str, &dyn Embedder)],
    artifacts: &[UaxArtifact],
    gallery: &IdentityDataset,
    thresholds: &[EerPoint],
) -> Result<TransferMatrix, MetricsError> {
    if models.is_empty() {
        return Err(MetricsError::Invalid("transfer matrix needs at least one model".into()));
    }
    if thresholds.len() != models.len() {
        return Err(MetricsError::Invalid(format!(
            "{} thresholds for {} models",
            thresholds.len(),
            models.len()
        )));
    }
    let by_source: Vec<Vec<&UaxArtifact>> = models
        .iter()
        .map(|(id, _)| artifacts.iter().filter(|a| a.source_model() == Some(*id)).collect())
        .collect();
    if let Some(i) = by_source.iter().position(Vec::is_empty) {
        return Err(MetricsError::MissingSource(models[i].0.to_owned()));
    }

    let mut values = vec![vec![0.0; models.len()]; models.len()];
    for (j, ((_, model), point)) in models.iter().zip(thresholds).enumerate() {
        let embedded = GalleryEmbeddings::build(*model, gallery)?;
        for (i, sources) in by_source.iter().enumerate() {
            let mut sum = 0.0;
            for artifact in sources {
                let probe = model.embed(artifact.adversarial_image())?;
                let fmr = match artifact.seed_label().filter(|l| embedded.contains(l)) {
                    Some(label) => match_probe(&embedded.without(label)?, &probe, point.threshold, point.metric)?,
                    None => match_probe(&embedded, &probe, point.threshold, point.metric)?,
                };
                sum += fmr.image_match_rate;
            }
            values[i][j] = sum / sources.len() as f64;
        }
    }

    let iterations = artifacts
        .first()
        .map(|a| a.config().iterations)
        .filter(|&n| artifacts.iter().all(|a| a.config().iterations == n));
    let xi = artifacts
        .first()
        .map(|a| a.config().budget.xi())
        .filter(|&x| artifacts.iter().all(|a| a.config().budget.xi() == x));
    Ok(TransferMatrix {
        model_ids: models.iter().map(|(id, _)| (*id).to_owned()).collect(),
        values,
        artifact_counts: by_source.iter().map(Vec::len).collect(),
        gallery_role: gallery.role(),
        iterations,
        xi,
    })
}
