//! Accuracy metrics for latency predictions.
//!
//! Ratio metrics use the prediction factor `R = max(actual/predicted,
//! predicted/actual)`, which treats over- and under-prediction by the same
//! multiple identically; `R = 1` is a perfect prediction. Predictions are
//! clamped below at [`PREDICTION_CLAMP_S`] for ratio metrics only, so a
//! degenerate non-positive prediction yields a huge factor instead of
//! poisoning the arithmetic.

pub mod baseline;

pub use baseline::{fit_baseline, CalibratedCostModel};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{predict_latency, QppModel};
use crate::plan::PlanTree;

/// Floor applied to predictions inside ratio metrics (seconds).
pub const PREDICTION_CLAMP_S: f64 = 1e-6;

/// Mean relative error `|actual - predicted| / actual`. Actuals must be
/// positive.
pub fn relative_error(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Usage("relative_error over no pairs".into()));
    }
    let mut total = 0.0;
    for (actual, predicted) in pairs {
        if !(actual.is_finite() && *actual > 0.0) {
            return Err(Error::Metric(format!(
                "relative error needs positive actual latencies, got {actual}"
            )));
        }
        total += (actual - predicted).abs() / actual;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean absolute error in seconds.
pub fn mean_absolute_error(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Usage("mean_absolute_error over no pairs".into()));
    }
    let total: f64 = pairs.iter().map(|(a, p)| (a - p).abs()).sum();
    Ok(total / pairs.len() as f64)
}

/// Prediction factor `max(actual/predicted, predicted/actual)` with the
/// prediction clamped below at [`PREDICTION_CLAMP_S`].
pub fn r_factor(actual: f64, predicted: f64) -> Result<f64> {
    if !(actual.is_finite() && actual > 0.0) {
        return Err(Error::Metric(format!(
            "prediction factor needs a positive actual latency, got {actual}"
        )));
    }
    let p = predicted.max(PREDICTION_CLAMP_S);
    Ok((actual / p).max(p / actual))
}

/// Factor-bucket shares `[R <= 1.5, 1.5 < R < 2.0, R >= 2.0]`; sums to 1.
pub fn factor_buckets(rs: &[f64]) -> Result<[f64; 3]> {
    if rs.is_empty() {
        return Err(Error::Usage("factor_buckets over no factors".into()));
    }
    let mut counts = [0usize; 3];
    for r in rs {
        if *r <= 1.5 {
            counts[0] += 1;
        } else if *r < 2.0 {
            counts[1] += 1;
        } else {
            counts[2] += 1;
        }
    }
    let n = rs.len() as f64;
    Ok([counts[0] as f64 / n, counts[1] as f64 / n, counts[2] as f64 / n])
}

/// Empirical CDF of the factors: points `(k/n, r_k)` over the sorted
/// factors, one per observation.
pub fn cdf_points(rs: &[f64]) -> Result<Vec<(f64, f64)>> {
    if rs.is_empty() {
        return Err(Error::Usage("cdf_points over no factors".into()));
    }
    let mut sorted = rs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("factors are finite"));
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, r)| ((i + 1) as f64 / n, r))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorBuckets {
    /// Share of predictions with `R <= 1.5`.
    pub within_1_5: f64,
    /// Share with `1.5 < R < 2.0`.
    pub between_1_5_and_2: f64,
    /// Share with `R >= 2.0`.
    pub beyond_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub fraction: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateStats {
    pub count: usize,
    pub relative_error: f64,
    pub mean_absolute_error: f64,
}

/// Full evaluation of root-latency predictions over a set of plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Plans actually scored.
    pub count: usize,
    /// Plans dropped for missing or non-positive actual latency.
    pub rejected: usize,
    pub relative_error: f64,
    pub mean_absolute_error: f64,
    pub buckets: FactorBuckets,
    pub cdf: Vec<CdfPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_template: Option<BTreeMap<String, TemplateStats>>,
}

/// Scores (actual, predicted) pairs, optionally tagged with template names
/// for a per-template breakdown. Pairs with missing or non-positive actuals
/// must already be filtered out; `rejected` records how many were.
pub fn evaluate_pairs(
    pairs: &[(f64, f64)],
    templates: Option<&[&str]>,
    rejected: usize,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Metric(
            "no plans with positive actual latencies to evaluate".into(),
        ));
    }
    let rs: Result<Vec<f64>> = pairs.iter().map(|(a, p)| r_factor(*a, *p)).collect();
    let rs = rs?;
    let buckets = factor_buckets(&rs)?;
    let per_template = match templates {
        None => None,
        Some(tags) => {
            if tags.len() != pairs.len() {
                return Err(Error::Usage(format!(
                    "{} template tags for {} pairs",
                    tags.len(),
                    pairs.len()
                )));
            }
            let mut by: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            for (tag, pair) in tags.iter().zip(pairs) {
                by.entry(tag.to_string()).or_default().push(*pair);
            }
            let mut out = BTreeMap::new();
            for (tag, group) in by {
                out.insert(
                    tag,
                    TemplateStats {
                        count: group.len(),
                        relative_error: relative_error(&group)?,
                        mean_absolute_error: mean_absolute_error(&group)?,
                    },
                );
            }
            Some(out)
        }
    };
    Ok(EvalReport {
        count: pairs.len(),
        rejected,
        relative_error: relative_error(pairs)?,
        mean_absolute_error: mean_absolute_error(pairs)?,
        buckets: FactorBuckets {
            within_1_5: buckets[0],
            between_1_5_and_2: buckets[1],
            beyond_2: buckets[2],
        },
        cdf: cdf_points(&rs)?
            .into_iter()
            .map(|(fraction, r)| CdfPoint { fraction, r })
            .collect(),
        per_template,
    })
}

/// Predicts every plan root with the model and scores it. Plans without a
/// positive observed root latency are dropped and counted as rejected.
pub fn evaluate_model(model: &QppModel, trees: &[&PlanTree]) -> Result<EvalReport> {
    let mut pairs = Vec::with_capacity(trees.len());
    let mut tags: Vec<&str> = Vec::with_capacity(trees.len());
    let mut rejected = 0usize;
    let mut any_template = false;
    for t in trees {
        match t.root_latency() {
            Some(actual) if actual > 0.0 => {
                pairs.push((actual, predict_latency(model, &t.root)?));
                let tag = t.template.as_deref().unwrap_or("");
                any_template |= !tag.is_empty();
                tags.push(tag);
            }
            _ => rejected += 1,
        }
    }
    let templates = any_template.then_some(tags.as_slice());
    evaluate_pairs(&pairs, templates, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_factor_worked_examples() {
        // over- and under-prediction by 2x look identical
        assert_eq!(r_factor(2.0, 1.0).unwrap(), 2.0);
        assert_eq!(r_factor(1.0, 2.0).unwrap(), 2.0);
        assert_eq!(r_factor(1.0, 3.0).unwrap(), 3.0);
        assert_eq!(r_factor(1.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn r_factor_clamps_non_positive_predictions() {
        let r = r_factor(1.0, 0.0).unwrap();
        assert_eq!(r, 1.0 / PREDICTION_CLAMP_S);
        let r = r_factor(1.0, -5.0).unwrap();
        assert_eq!(r, 1.0 / PREDICTION_CLAMP_S);
    }

    #[test]
    fn r_factor_rejects_non_positive_actuals() {
        assert!(r_factor(0.0, 1.0).is_err());
        assert!(r_factor(-1.0, 1.0).is_err());
    }

    #[test]
    fn buckets_split_on_the_documented_boundaries() {
        let buckets = factor_buckets(&[1.2, 1.6, 2.5, 1.0]).unwrap();
        assert_eq!(buckets, [0.5, 0.25, 0.25]);
        // boundary values: 1.5 goes low, 2.0 goes high
        let buckets = factor_buckets(&[1.5, 2.0]).unwrap();
        assert_eq!(buckets, [0.5, 0.0, 0.5]);
        let sum: f64 = buckets.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_is_sorted_with_k_over_n_fractions() {
        let pts = cdf_points(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(
            pts,
            vec![(1.0 / 3.0, 1.0), (2.0 / 3.0, 2.0), (1.0, 3.0)]
        );
    }

    #[test]
    fn relative_error_and_mae_worked_examples() {
        // actual 2, predicted 1.5 -> 0.25; actual 4, predicted 5 -> 0.25
        let pairs = [(2.0, 1.5), (4.0, 5.0)];
        assert!((relative_error(&pairs).unwrap() - 0.25).abs() < 1e-12);
        assert!((mean_absolute_error(&pairs).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn relative_error_rejects_non_positive_actuals() {
        assert!(relative_error(&[(0.0, 1.0)]).is_err());
        assert!(relative_error(&[]).is_err());
    }

    #[test]
    fn evaluate_pairs_builds_a_consistent_report() {
        let pairs = [(1.0, 1.0), (2.0, 1.0), (3.0, 9.0)];
        let tags = ["a", "a", "b"];
        let report = evaluate_pairs(&pairs, Some(&tags), 2).unwrap();
        assert_eq!(report.count, 3);
        assert_eq!(report.rejected, 2);
        assert_eq!(report.cdf.len(), 3);
        assert_eq!(report.cdf[0].r, 1.0);
        assert_eq!(report.cdf[2].r, 3.0);
        let per = report.per_template.as_ref().unwrap();
        assert_eq!(per["a"].count, 2);
        assert_eq!(per["b"].count, 1);
        let share_sum = report.buckets.within_1_5
            + report.buckets.between_1_5_and_2
            + report.buckets.beyond_2;
        assert!((share_sum - 1.0).abs() < 1e-12);
    }
}
