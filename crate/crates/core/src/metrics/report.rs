use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalReport, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub genuine_count: usize,
    pub imposter_count: usize,
    pub uax_count: usize,
}

/// Distance distributions over fixed, equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub rows: Vec<HistogramRow>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,genuine_count,imposter_count,uax_count\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.bin_lo, r.bin_hi, r.genuine_count, r.imposter_count, r.uax_count
            )
            .expect("write to String");
        }
        out
    }
}

/// Bins the three score lists over `range`, or `[0, max score]` when `None`.
/// Values outside the range land in the nearest edge bin.
pub fn histogram(
    genuine: &[f64],
    imposter: &[f64],
    uax: &[f64],
    bins: usize,
    range: Option<(f64, f64)>,
) -> Result<Histogram, MetricsError> {
    if bins == 0 {
        return Err(MetricsError::Invalid("histogram needs at least one bin".into()));
    }
    let (lo, hi) = match range {
        Some(r) => r,
        None => {
            let max = genuine.iter().chain(imposter).chain(uax).fold(0.0f64, |m, &v| m.max(v));
            (0.0, if max > 0.0 { max } else { 1.0 })
        }
    };
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(MetricsError::Invalid(format!("bad histogram range [{lo}, {hi}]")));
    }
    let width = hi - lo;
    let edge = |k: usize| if k == bins { hi } else { lo + width * k as f64 / bins as f64 };
    let mut rows: Vec<HistogramRow> = (0..bins)
        .map(|k| HistogramRow {
            bin_lo: edge(k),
            bin_hi: edge(k + 1),
            genuine_count: 0,
            imposter_count: 0,
            uax_count: 0,
        })
        .collect();
    let bin_of = |v: f64| (((v - lo) / width * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    for &v in genuine {
        rows[bin_of(v)].genuine_count += 1;
    }
    for &v in imposter {
        rows[bin_of(v)].imposter_count += 1;
    }
    for &v in uax {
        rows[bin_of(v)].uax_count += 1;
    }
    Ok(Histogram { rows })
}

/// Sample mean and sample standard deviation (`n − 1` denominator; zero for
/// a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd {
            mean: f64::NAN,
            std: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std, n }
}

/// Aggregate of per-seed reports on one gallery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub baseline_fmr: MeanStd,
    pub uax_fmr: MeanStd,
    pub baseline_identity_match_rate: MeanStd,
    pub per_identity_match_rate: MeanStd,
}

pub fn summarize(reports: &[EvalReport]) -> SeedSummary {
    let collect = |f: fn(&EvalReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    SeedSummary {
        baseline_fmr: collect(|r| r.baseline_fmr),
        uax_fmr: collect(|r| r.uax_fmr),
        baseline_identity_match_rate: collect(|r| r.baseline_identity_match_rate),
        per_identity_match_rate: collect(|r| r.per_identity_match_rate),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_cover_range_with_fixed_edges() {
        let h = histogram(&[0.0, 0.1], &[0.9, 1.0], &[0.5], 4, Some((0.0, 1.0))).unwrap();
        assert_eq!(h.rows.len(), 4);
        assert_eq!(h.rows[0].genuine_count, 2);
        assert_eq!(h.rows[3].imposter_count, 2);
        assert_eq!(h.rows[2].uax_count, 1);
        assert_eq!(h.rows[3].bin_hi, 1.0);
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("bin_lo,bin_hi,genuine_count,imposter_count,uax_count\n0,0.25,2,0,0\n"));
    }

    #[test]
    fn automatic_range_and_errors() {
        let h = histogram(&[], &[], &[], 50, None).unwrap();
        assert_eq!(h.rows.len(), 50);
        assert!(histogram(&[1.0], &[], &[], 0, None).is_err());
        assert!(histogram(&[1.0], &[], &[], 3, Some((1.0, 1.0))).is_err());
    }

    #[test]
    fn sample_statistics() {
        let s = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]).std, 0.0);
    }
}
