use serde::{Deserialize, Serialize};

use super::{distance, EerPoint, Metric, MetricsError};
use crate::attack::UaxArtifact;
use crate::dataset::{DatasetRole, IdentityDataset, ImageTensor};
use crate::extractor::Embedder;

/// Precomputed embeddings of a gallery, grouped by identity.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEmbeddings {
    role: DatasetRole,
    identities: Vec<(String, Vec<Vec<f64>>)>,
}

impl GalleryEmbeddings {
    pub fn build<E: Embedder + ?Sized>(model: &E, gallery: &IdentityDataset) -> Result<Self, MetricsError> {
        let mut identities = Vec::with_capacity(gallery.identity_count());
        for (label, images) in gallery.identities() {
            let refs: Vec<&ImageTensor> = images.iter().collect();
            identities.push((label.to_owned(), model.embed_batch(&refs)?));
        }
        Self::from_parts(gallery.role(), identities)
    }

    pub fn from_parts(role: DatasetRole, identities: Vec<(String, Vec<Vec<f64>>)>) -> Result<Self, MetricsError> {
        if identities.iter().all(|(_, e)| e.is_empty()) {
            return Err(MetricsError::EmptyGallery);
        }
        Ok(Self { role, identities })
    }

    pub fn role(&self) -> DatasetRole {
        self.role
    }

    pub fn image_count(&self) -> usize {
        self.identities.iter().map(|(_, e)| e.len()).sum()
    }

    pub fn identity_count(&self) -> usize {
        self.identities.len()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.identities.iter().any(|(l, _)| l == label)
    }

    /// Copy with identity `label` removed.
    pub fn without(&self, label: &str) -> Result<Self, MetricsError> {
        Self::from_parts(
            self.role,
            self.identities.iter().filter(|(l, _)| l != label).cloned().collect(),
        )
    }

    /// All probe-to-gallery distances in gallery order.
    pub fn distances(&self, probe: &[f64], metric: Metric) -> Result<Vec<f64>, MetricsError> {
        let mut out = Vec::with_capacity(self.image_count());
        for (_, embs) in &self.identities {
            for e in embs {
                out.push(distance(probe, e, metric)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityMatch {
    pub label: String,
    pub matched: usize,
    pub images: usize,
}

/// Matches of one probe against a gallery at a fixed threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMatch {
    /// Fraction of gallery images within the threshold.
    pub image_match_rate: f64,
    /// Fraction of identities with at least one image within the threshold.
    pub per_identity_match_rate: f64,
    pub matched_images: usize,
    pub matched_identities: usize,
    pub per_identity: Vec<IdentityMatch>,
}

pub fn match_probe(
    gallery: &GalleryEmbeddings,
    probe: &[f64],
    tau: f64,
    metric: Metric,
) -> Result<ProbeMatch, MetricsError> {
    let mut per_identity = Vec::with_capacity(gallery.identities.len());
    for (label, embs) in &gallery.identities {
        let mut matched = 0;
        for e in embs {
            if distance(probe, e, metric)? <= tau {
                matched += 1;
            }
        }
        per_identity.push(IdentityMatch {
            label: label.clone(),
            matched,
            images: embs.len(),
        });
    }
    let matched_images: usize = per_identity.iter().map(|m| m.matched).sum();
    let matched_identities = per_identity.iter().filter(|m| m.matched > 0).count();
    Ok(ProbeMatch {
        image_match_rate: matched_images as f64 / gallery.image_count() as f64,
        per_identity_match_rate: matched_identities as f64 / per_identity.len() as f64,
        matched_images,
        matched_identities,
        per_identity,
    })
}

/// Embeds `probe` and matches it against every image of `gallery`.
pub fn fmr_against_probe<E: Embedder + ?Sized>(
    model: &E,
    probe: &ImageTensor,
    gallery: &IdentityDataset,
    tau: f64,
    metric: Metric,
) -> Result<ProbeMatch, MetricsError> {
    if gallery.image_count() == 0 {
        return Err(MetricsError::EmptyGallery);
    }
    let embeddings = GalleryEmbeddings::build(model, gallery)?;
    match_probe(&embeddings, &model.embed(probe)?, tau, metric)
}

/// Seed-image and UAX match rates on one gallery at a fixed threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub gallery_role: DatasetRole,
    pub metric: Metric,
    pub threshold: f64,
    pub eer: f64,
    /// Image-level match rate of the unperturbed seed `x_A`.
    pub baseline_fmr: f64,
    /// Image-level match rate of `x′`.
    pub uax_fmr: f64,
    pub baseline_identity_match_rate: f64,
    /// Identity-level match rate of `x′`.
    pub per_identity_match_rate: f64,
    pub image_count: usize,
    pub identity_count: usize,
    /// Seed identity left out of the gallery, if it was enrolled there.
    pub excluded_identity: Option<String>,
    pub source_model: Option<String>,
    pub per_identity: Vec<IdentityMatch>,
}

fn report(
    gallery: &GalleryEmbeddings,
    seed: &[f64],
    adversarial: &[f64],
    artifact: &UaxArtifact,
    point: &EerPoint,
) -> Result<EvalReport, MetricsError> {
    let excluded = artifact.seed_label().filter(|l| gallery.contains(l)).map(str::to_owned);
    let filtered;
    let gallery = match &excluded {
        Some(label) => {
            filtered = gallery.without(label)?;
            &filtered
        }
        None => gallery,
    };
    let base = match_probe(gallery, seed, point.threshold, point.metric)?;
    let uax = match_probe(gallery, adversarial, point.threshold, point.metric)?;
    Ok(EvalReport {
        gallery_role: gallery.role(),
        metric: point.metric,
        threshold: point.threshold,
        eer: point.eer,
        baseline_fmr: base.image_match_rate,
        uax_fmr: uax.image_match_rate,
        baseline_identity_match_rate: base.per_identity_match_rate,
        per_identity_match_rate: uax.per_identity_match_rate,
        image_count: gallery.image_count(),
        identity_count: gallery.identity_count(),
        excluded_identity: excluded,
        source_model: artifact.source_model().map(str::to_owned),
        per_identity: uax.per_identity,
    })
}

/// [`evaluate_uax`] against galleries embedded once up front.
pub fn evaluate_with_galleries<E: Embedder + ?Sized>(
    model: &E,
    artifact: &UaxArtifact,
    train: &GalleryEmbeddings,
    test: &GalleryEmbeddings,
    threshold: Option<&EerPoint>,
) -> Result<(EvalReport, EvalReport), MetricsError> {
    let point = threshold.ok_or(MetricsError::ThresholdUnset)?;
    let probes = model.embed_batch(&[artifact.seed_image(), artifact.adversarial_image()])?;
    Ok((
        report(train, &probes[0], &probes[1], artifact, point)?,
        report(test, &probes[0], &probes[1], artifact, point)?,
    ))
}

/// Match rates of the seed `x_A` (baseline) and of `x′` against the train
/// and test galleries, both at the threshold calibrated on the train
/// gallery. The seed's own identity is excluded from whichever gallery
/// enrolls it, so every comparison is an imposter comparison.
pub fn evaluate_uax<E: Embedder + ?Sized>(
    model: &E,
    artifact: &UaxArtifact,
    train_gallery: &IdentityDataset,
    test_gallery: &IdentityDataset,
    threshold: Option<&EerPoint>,
) -> Result<(EvalReport, EvalReport), MetricsError> {
    let threshold = threshold.ok_or(MetricsError::ThresholdUnset)?;
    let train = GalleryEmbeddings::build(model, train_gallery)?;
    let test = GalleryEmbeddings::build(model, test_gallery)?;
    evaluate_with_galleries(model, artifact, &train, &test, Some(threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gallery(points: &[(&str, &[f64])]) -> GalleryEmbeddings {
        GalleryEmbeddings::from_parts(
            DatasetRole::Test,
            points
                .iter()
                .map(|(l, xs)| (l.to_string(), xs.iter().map(|&x| vec![x, 0.0]).collect()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn hand_counted_matches() {
        // distances from the probe at 0: 0.5, 1.5, 3.0
        let g = gallery(&[("a", &[0.5, 1.5]), ("b", &[3.0])]);
        let m = match_probe(&g, &[0.0, 0.0], 1.5, Metric::Euclidean).unwrap();
        assert_eq!(m.matched_images, 2);
        assert!((m.image_match_rate - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.matched_identities, 1);
        assert_eq!(m.per_identity_match_rate, 0.5);
        for id in &m.per_identity {
            assert!(id.matched <= id.images);
        }
    }

    #[test]
    fn zero_threshold_with_distinct_probe() {
        let g = gallery(&[("a", &[0.5, 1.5]), ("b", &[3.0])]);
        let m = match_probe(&g, &[0.2, 0.0], 0.0, Metric::Euclidean).unwrap();
        assert_eq!(m.image_match_rate, 0.0);
    }

    #[test]
    fn probe_equal_to_a_gallery_image_matches_it() {
        let g = gallery(&[("a", &[0.5, 1.5]), ("b", &[3.0])]);
        let m = match_probe(&g, &[3.0, 0.0], 1e-9, Metric::Euclidean).unwrap();
        assert!(m.image_match_rate >= 1.0 / 3.0);
    }

    #[test]
    fn exclusion_and_empty_gallery() {
        let g = gallery(&[("a", &[0.5]), ("b", &[3.0])]);
        assert_eq!(g.without("a").unwrap().image_count(), 1);
        assert!(matches!(g.without("a").unwrap().without("b"), Err(MetricsError::EmptyGallery)));
    }
}
