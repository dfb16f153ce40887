//! Verification metrics: distances, EER thresholds, false-match rates of
//! probes against galleries, transfer matrices and score histograms.

mod eval;
mod report;
mod scores;
mod transfer;

pub use eval::{evaluate_uax, evaluate_with_galleries, fmr_against_probe, match_probe, EvalReport, GalleryEmbeddings, IdentityMatch, ProbeMatch};
pub use report::{histogram, mean_std, summarize, Histogram, HistogramRow, MeanStd, SeedSummary};
pub use scores::{
    build_scores, compute_eer, scores_from_embeddings, EerPoint, ScoreSet, DEFAULT_PAIR_BUDGET,
};
pub use transfer::{transfer_matrix, TransferMatrix};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extractor::ModelError;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("embeddings have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,
    #[error("not enough {side} pairs: {detail}")]
    InsufficientPairs { side: &'static str, detail: String },
    #[error("score set has no {0} scores")]
    EmptyScores(&'static str),
    #[error("score {value} is not a valid {metric} distance")]
    InvalidScore { value: f64, metric: Metric },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("decision threshold is not set; compute it on the train gallery first")]
    ThresholdUnset,
    #[error("no artifacts for source model '{0}'")]
    MissingSource(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Distance between embeddings. Smaller means more similar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn id(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Metric {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(MetricsError::Invalid(format!(
                "unknown metric '{other}' (valid: euclidean, cosine)"
            ))),
        }
    }
}

/// `‖a − b‖₂`, or `1 − a·b / (‖a‖ ‖b‖)` for cosine.
pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    match metric {
        Metric::Euclidean => Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()),
        Metric::Cosine => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(MetricsError::ZeroVector);
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            Ok(1.0 - dot / (na * nb))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_distances() {
        let e = Metric::Euclidean;
        let c = Metric::Cosine;
        assert_eq!(distance(&[0.3, 0.4], &[0.3, 0.4], e).unwrap(), 0.0);
        assert!(distance(&[0.3, 0.4], &[0.3, 0.4], c).unwrap().abs() < 1e-15);
        assert!((distance(&[1.0, 0.0], &[0.0, 1.0], e).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(distance(&[1.0, 0.0], &[0.0, 1.0], c).unwrap(), 1.0);
        assert_eq!(distance(&[1.0, 0.0], &[-1.0, 0.0], c).unwrap(), 2.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(distance(&[0.0, 0.0], &[1.0, 0.0], Metric::Cosine), Err(MetricsError::ZeroVector)));
        assert!(matches!(
            distance(&[1.0], &[1.0, 0.0], Metric::Euclidean),
            Err(MetricsError::LengthMismatch { left: 1, right: 2 })
        ));
        assert!("manhattan".parse::<Metric>().is_err());
        assert_eq!("cosine".parse::<Metric>().unwrap(), Metric::Cosine);
    }
}
