use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{distance, Metric, MetricsError};
use crate::dataset::{IdentityDataset, ImageTensor};
use crate::extractor::Embedder;

pub const DEFAULT_PAIR_BUDGET: usize = 5000;

/// Genuine (same identity) and imposter (different identity) distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub genuine: Vec<f64>,
    pub imposter: Vec<f64>,
    pub metric: Metric,
}

impl ScoreSet {
    pub fn new(genuine: Vec<f64>, imposter: Vec<f64>, metric: Metric) -> Result<Self, MetricsError> {
        for &value in genuine.iter().chain(&imposter) {
            if !value.is_finite() || (metric == Metric::Euclidean && value < 0.0) {
                return Err(MetricsError::InvalidScore { value, metric });
            }
        }
        Ok(Self {
            genuine,
            imposter,
            metric,
        })
    }

    /// Fraction of imposter scores with distance `≤ tau`.
    pub fn fmr(&self, tau: f64) -> f64 {
        self.imposter.iter().filter(|&&s| s <= tau).count() as f64 / self.imposter.len() as f64
    }

    /// Fraction of genuine scores with distance `> tau`.
    pub fn fnmr(&self, tau: f64) -> f64 {
        self.genuine.iter().filter(|&&s| s > tau).count() as f64 / self.genuine.len() as f64
    }
}

/// Operating point where false-match and false-non-match rates cross.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: f64,
    pub fmr: f64,
    pub fnmr: f64,
    pub metric: Metric,
}

/// Sweeps every distinct score as a threshold (match iff `distance ≤ τ`) and
/// picks the one minimizing `|FMR − FNMR|`, preferring the smaller `τ` on
/// ties. The EER is `(FMR + FNMR) / 2` there.
pub fn compute_eer(scores: &ScoreSet) -> Result<EerPoint, MetricsError> {
    if scores.genuine.is_empty() {
        return Err(MetricsError::EmptyScores("genuine"));
    }
    if scores.imposter.is_empty() {
        return Err(MetricsError::EmptyScores("imposter"));
    }
    let mut genuine = scores.genuine.clone();
    let mut imposter = scores.imposter.clone();
    genuine.sort_by(f64::total_cmp);
    imposter.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = genuine.iter().chain(&imposter).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let (ng, ni) = (genuine.len() as u128, imposter.len() as u128);
    let (mut gi, mut ii) = (0usize, 0usize);
    // (gap numerator over ng·ni, τ, imposters ≤ τ, genuines > τ)
    let mut best: Option<(u128, f64, usize, usize)> = None;
    for &tau in &candidates {
        while gi < genuine.len() && genuine[gi] <= tau {
            gi += 1;
        }
        while ii < imposter.len() && imposter[ii] <= tau {
            ii += 1;
        }
        let false_match = ii as u128;
        let false_non_match = (genuine.len() - gi) as u128;
        let gap = (false_match * ng).abs_diff(false_non_match * ni);
        if best.is_none_or(|b| gap < b.0) {
            best = Some((gap, tau, ii, genuine.len() - gi));
        }
    }
    let (_, threshold, fm, fnm) = best.expect("at least one candidate");
    let fmr = fm as f64 / imposter.len() as f64;
    let fnmr = fnm as f64 / genuine.len() as f64;
    Ok(EerPoint {
        eer: (fmr + fnmr) / 2.0,
        threshold,
        fmr,
        fnmr,
        metric: scores.metric,
    })
}

/// Boundaries of contiguous class runs in a label-ordered image list.
fn class_ends(classes: &[usize]) -> Vec<usize> {
    let mut ends = vec![0; classes.len()];
    let mut start = 0;
    while start < classes.len() {
        let mut end = start;
        while end < classes.len() && classes[end] == classes[start] {
            end += 1;
        }
        ends[start..end].fill(end);
        start = end;
    }
    ends
}

/// Draws `min(budget, total)` distinct pairs `(i, j)`, `i < j`, where image
/// `i` has `counts[i]` eligible partners starting at `first[i]`.
fn sample_pairs(counts: &[usize], first: &[usize], budget: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut prefix = Vec::with_capacity(counts.len() + 1);
    prefix.push(0usize);
    for &c in counts {
        prefix.push(prefix.last().unwrap() + c);
    }
    let total = *prefix.last().unwrap();
    let mut picks = index::sample(rng, total, budget.min(total)).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|k| {
            let i = prefix.partition_point(|&p| p <= k) - 1;
            (i, first[i] + (k - prefix[i]))
        })
        .collect()
}

/// Samples up to `pair_budget` genuine and `pair_budget` imposter pairs
/// uniformly without replacement from precomputed embeddings. `classes`
/// must be grouped (equal classes contiguous), as produced by
/// [`IdentityDataset::images`].
pub fn scores_from_embeddings(
    embeddings: &[Vec<f64>],
    classes: &[usize],
    pair_budget: usize,
    seed: u64,
    metric: Metric,
) -> Result<ScoreSet, MetricsError> {
    if embeddings.len() != classes.len() {
        return Err(MetricsError::Invalid(format!(
            "{} embeddings for {} class labels",
            embeddings.len(),
            classes.len()
        )));
    }
    if pair_budget == 0 {
        return Err(MetricsError::Invalid("pair budget must be positive".into()));
    }
    let n = classes.len();
    let ends = class_ends(classes);
    let genuine_counts: Vec<usize> = (0..n).map(|i| ends[i] - i - 1).collect();
    let genuine_first: Vec<usize> = (0..n).map(|i| i + 1).collect();
    let imposter_counts: Vec<usize> = (0..n).map(|i| n - ends[i]).collect();
    if genuine_counts.iter().sum::<usize>() == 0 {
        return Err(MetricsError::InsufficientPairs {
            side: "genuine",
            detail: "no identity has two or more images".into(),
        });
    }
    if imposter_counts.iter().sum::<usize>() == 0 {
        return Err(MetricsError::InsufficientPairs {
            side: "imposter",
            detail: "need at least two identities".into(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let genuine_pairs = sample_pairs(&genuine_counts, &genuine_first, pair_budget, &mut rng);
    let imposter_pairs = sample_pairs(&imposter_counts, &ends, pair_budget, &mut rng);
    let score = |pairs: Vec<(usize, usize)>| -> Result<Vec<f64>, MetricsError> {
        pairs
            .into_iter()
            .map(|(i, j)| distance(&embeddings[i], &embeddings[j], metric))
            .collect()
    };
    ScoreSet::new(score(genuine_pairs)?, score(imposter_pairs)?, metric)
}

/// Embeds every image of `dataset` and samples genuine/imposter scores.
pub fn build_scores<E: Embedder + ?Sized>(
    model: &E,
    dataset: &IdentityDataset,
    pair_budget: usize,
    seed: u64,
    metric: Metric,
) -> Result<ScoreSet, MetricsError> {
    let (classes, images): (Vec<usize>, Vec<&ImageTensor>) = dataset.images().unzip();
    let embeddings = model.embed_batch(&images)?;
    scores_from_embeddings(&embeddings, &classes, pair_budget, seed, metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(genuine: &[f64], imposter: &[f64]) -> ScoreSet {
        ScoreSet::new(genuine.to_vec(), imposter.to_vec(), Metric::Euclidean).unwrap()
    }

    #[test]
    fn separated_scores_have_zero_eer() {
        let p = compute_eer(&set(&[0.1, 0.2], &[0.8, 0.9])).unwrap();
        assert_eq!(p.eer, 0.0);
        assert!(p.threshold >= 0.2 && p.threshold < 0.8);
    }

    #[test]
    fn indistinguishable_scores_have_half_eer() {
        for values in [vec![0.4], vec![0.1, 0.2], vec![0.3, 0.3, 0.7, 1.1]] {
            assert_eq!(compute_eer(&set(&values, &values)).unwrap().eer, 0.5, "{values:?}");
        }
    }

    #[test]
    fn small_set_matches_hand_sweep() {
        // τ=0.1: FMR 0, FNMR 2/3; τ=0.3: 1/3, 2/3; τ=0.4: 1/3, 1/3
        let p = compute_eer(&set(&[0.1, 0.4, 0.5], &[0.3, 0.6, 0.7])).unwrap();
        assert_eq!(p.threshold, 0.4);
        assert!((p.eer - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rates_use_inclusive_match_rule() {
        let s = set(&[0.5], &[0.5]);
        assert_eq!(s.fmr(0.5), 1.0);
        assert_eq!(s.fnmr(0.5), 0.0);
    }

    #[test]
    fn empty_sides_are_errors() {
        assert!(matches!(compute_eer(&set(&[], &[1.0])), Err(MetricsError::EmptyScores("genuine"))));
        assert!(matches!(compute_eer(&set(&[1.0], &[])), Err(MetricsError::EmptyScores("imposter"))));
        assert!(ScoreSet::new(vec![-1.0], vec![1.0], Metric::Euclidean).is_err());
    }

    #[test]
    fn pair_counts_for_two_by_two() {
        let emb: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![10.0], vec![12.0]];
        let s = scores_from_embeddings(&emb, &[0, 0, 1, 1], 100, 0, Metric::Euclidean).unwrap();
        assert_eq!(s.genuine, vec![1.0, 2.0]);
        let mut imp = s.imposter.clone();
        imp.sort_by(f64::total_cmp);
        assert_eq!(imp, vec![9.0, 10.0, 11.0, 12.0]);
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let emb: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let classes: Vec<usize> = (0..40).map(|i| i / 4).collect();
        let a = scores_from_embeddings(&emb, &classes, 25, 9, Metric::Euclidean).unwrap();
        let b = scores_from_embeddings(&emb, &classes, 25, 9, Metric::Euclidean).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.genuine.len(), a.imposter.len()), (25, 25));
    }

    #[test]
    fn insufficient_pairs_name_the_side() {
        let emb = vec![vec![0.0], vec![1.0]];
        let err = scores_from_embeddings(&emb, &[0, 1], 10, 0, Metric::Euclidean).unwrap_err();
        assert!(matches!(err, MetricsError::InsufficientPairs { side: "genuine", .. }));
        let err = scores_from_embeddings(&emb, &[0, 0], 10, 0, Metric::Euclidean).unwrap_err();
        assert!(matches!(err, MetricsError::InsufficientPairs { side: "imposter", .. }));
    }
}
