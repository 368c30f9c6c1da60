//! Differential-diagnosis evaluation metrics.
//!
//! Covers Top-k accuracy, multi-class precision (per class and
//! support-weighted), per-condition misprediction summaries, posterior
//! statistics for the four correctness cases (Top-1/Top-5 hit or miss),
//! and confidence-threshold sweeps over those statistics. Percentiles use
//! the nearest-rank rule throughout.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{argmax, predict_top_k, Posteriors};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("posterior rows ({posteriors}) and labels ({labels}) disagree in length")]
    LengthMismatch { posteriors: usize, labels: usize },
    #[error("condition class {0} does not appear in the labels")]
    ConditionAbsent(u32),
    #[error("k must be at least 1")]
    BadK,
    #[error("threshold {0} is outside [0, 1]")]
    BadThreshold(f64),
    #[error("empty evaluation set")]
    Empty,
}

fn check_alignment(posteriors: &Posteriors, labels: &[u32]) -> Result<(), EvalError> {
    if posteriors.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            posteriors: posteriors.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

/// Fraction of rows whose true label is among the `k` most probable classes.
pub fn top_k_accuracy(posteriors: &Posteriors, labels: &[u32], k: usize) -> Result<f64, EvalError> {
    check_alignment(posteriors, labels)?;
    if k == 0 {
        return Err(EvalError::BadK);
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let hits = posteriors
        .iter()
        .zip(labels)
        .filter(|(row, &label)| {
            predict_top_k(row, k)
                .iter()
                .any(|(class, _)| *class == label as usize)
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-class and support-weighted precision from argmax predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionResult {
    /// tp / (tp + fp) per class; 0 for classes never predicted.
    pub per_class: Vec<f64>,
    /// Average of per-class precision weighted by true-class support.
    pub weighted: f64,
    /// Classes that were never predicted (their precision is reported as 0).
    pub never_predicted: Vec<usize>,
}

pub fn precision_multiclass(
    posteriors: &Posteriors,
    labels: &[u32],
) -> Result<PrecisionResult, EvalError> {
    check_alignment(posteriors, labels)?;
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let n_classes = posteriors[0].len();
    let mut tp = vec![0u64; n_classes];
    let mut predicted = vec![0u64; n_classes];
    let mut support = vec![0u64; n_classes];
    for (row, &label) in posteriors.iter().zip(labels) {
        let prediction = argmax(row);
        predicted[prediction] += 1;
        support[label as usize] += 1;
        if prediction == label as usize {
            tp[prediction] += 1;
        }
    }
    let per_class: Vec<f64> = (0..n_classes)
        .map(|c| {
            if predicted[c] == 0 {
                0.0
            } else {
                tp[c] as f64 / predicted[c] as f64
            }
        })
        .collect();
    let never_predicted: Vec<usize> = (0..n_classes).filter(|&c| predicted[c] == 0).collect();
    let total: u64 = support.iter().sum();
    let weighted = (0..n_classes)
        .map(|c| per_class[c] * support[c] as f64)
        .sum::<f64>()
        / total as f64;
    Ok(PrecisionResult {
        per_class,
        weighted,
        never_predicted,
    })
}

/// The five most frequent wrong argmax predictions for rows whose true label
/// is `condition`, as `(predicted class, count)` sorted by descending count
/// with ties to the lower class index.
pub fn confusion_top5(
    posteriors: &Posteriors,
    labels: &[u32],
    condition: u32,
) -> Result<Vec<(usize, u64)>, EvalError> {
    check_alignment(posteriors, labels)?;
    if !labels.contains(&condition) {
        return Err(EvalError::ConditionAbsent(condition));
    }
    let mut counts: BTreeMap<usize, u64> = BTreeMap::new();
    for (row, &label) in posteriors.iter().zip(labels) {
        if label != condition {
            continue;
        }
        let prediction = argmax(row);
        if prediction != condition as usize {
            *counts.entry(prediction).or_default() += 1;
        }
    }
    let mut ranked: Vec<(usize, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(5);
    Ok(ranked)
}

/// Correctness partition for posterior statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectnessCase {
    Top1Accurate,
    Top5Accurate,
    NonTop1Accurate,
    NonTop5Accurate,
}

impl CorrectnessCase {
    pub const ALL: [CorrectnessCase; 4] = [
        CorrectnessCase::Top1Accurate,
        CorrectnessCase::Top5Accurate,
        CorrectnessCase::NonTop1Accurate,
        CorrectnessCase::NonTop5Accurate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CorrectnessCase::Top1Accurate => "top1_accurate",
            CorrectnessCase::Top5Accurate => "top5_accurate",
            CorrectnessCase::NonTop1Accurate => "non_top1_accurate",
            CorrectnessCase::NonTop5Accurate => "non_top5_accurate",
        }
    }
}

impl fmt::Display for CorrectnessCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Nearest-rank percentiles and mean of one case's max-posterior values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub mean: f64,
}

/// Statistics of the max posterior over the rows falling in one case.
/// `summary` is absent when the case is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorCaseStats {
    pub case: CorrectnessCase,
    pub count: usize,
    pub summary: Option<CaseSummary>,
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * n)` (1-indexed)
/// of the ascending sort.
pub fn nearest_rank_percentile(sorted_ascending: &[f64], p: f64) -> f64 {
    let n = sorted_ascending.len();
    debug_assert!(n > 0);
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted_ascending[rank.clamp(1, n) - 1]
}

fn summarize(mut values: Vec<f64>) -> Option<CaseSummary> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("posterior values are finite"));
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Some(CaseSummary {
        p25: nearest_rank_percentile(&values, 25.0),
        p50: nearest_rank_percentile(&values, 50.0),
        p75: nearest_rank_percentile(&values, 75.0),
        mean,
    })
}

fn max_posterior(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Partition rows by Top-1 and Top-5 correctness and summarize the max
/// posterior within each of the four cases.
pub fn posterior_case_stats(
    posteriors: &Posteriors,
    labels: &[u32],
) -> Result<Vec<PosteriorCaseStats>, EvalError> {
    check_alignment(posteriors, labels)?;
    let mut buckets: BTreeMap<CorrectnessCase, Vec<f64>> = CorrectnessCase::ALL
        .into_iter()
        .map(|case| (case, Vec::new()))
        .collect();
    for (row, &label) in posteriors.iter().zip(labels) {
        let top5 = predict_top_k(row, 5);
        let top1_hit = top5[0].0 == label as usize;
        let top5_hit = top5.iter().any(|(class, _)| *class == label as usize);
        let confidence = max_posterior(row);
        let case1 = if top1_hit {
            CorrectnessCase::Top1Accurate
        } else {
            CorrectnessCase::NonTop1Accurate
        };
        let case5 = if top5_hit {
            CorrectnessCase::Top5Accurate
        } else {
            CorrectnessCase::NonTop5Accurate
        };
        buckets
            .get_mut(&case1)
            .expect("bucket exists")
            .push(confidence);
        buckets
            .get_mut(&case5)
            .expect("bucket exists")
            .push(confidence);
    }
    Ok(CorrectnessCase::ALL
        .into_iter()
        .map(|case| {
            let values = buckets.remove(&case).expect("bucket exists");
            PosteriorCaseStats {
                case,
                count: values.len(),
                summary: summarize(values),
            }
        })
        .collect())
}

/// Which per-row statistic admits a prediction as confident.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionStat {
    /// The highest posterior entry.
    #[default]
    MaxPosterior,
    /// The fifth-highest entry (the last one when fewer than five classes).
    FifthBest,
}

impl AdmissionStat {
    fn value(self, row: &[f64]) -> f64 {
        match self {
            AdmissionStat::MaxPosterior => max_posterior(row),
            AdmissionStat::FifthBest => {
                let top = predict_top_k(row, 5);
                top.last().expect("rows are non-empty").1
            }
        }
    }
}

impl std::str::FromStr for AdmissionStat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" | "max_posterior" => Ok(AdmissionStat::MaxPosterior),
            "fifth" | "fifth_best" => Ok(AdmissionStat::FifthBest),
            other => Err(format!("unknown admission statistic {other:?}")),
        }
    }
}

/// Metrics over the rows admitted at one threshold. Accuracy fields are
/// absent when nothing is admitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPoint {
    pub threshold: f64,
    /// Share of rows whose admission statistic reaches the threshold.
    pub diagnosed_fraction: f64,
    pub confident_count: usize,
    pub top1_among_confident: Option<f64>,
    pub top5_among_confident: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub admission: AdmissionStat,
    pub points: Vec<ThresholdPoint>,
}

/// Evaluate each threshold over exactly the rows it admits.
pub fn threshold_sweep(
    posteriors: &Posteriors,
    labels: &[u32],
    thresholds: &[f64],
    admission: AdmissionStat,
) -> Result<ThresholdSweep, EvalError> {
    check_alignment(posteriors, labels)?;
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    for &t in thresholds {
        if !t.is_finite() || !(0.0..=1.0).contains(&t) {
            return Err(EvalError::BadThreshold(t));
        }
    }
    let stats: Vec<f64> = posteriors.iter().map(|row| admission.value(row)).collect();
    let mut points = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let admitted: Vec<usize> = (0..labels.len())
            .filter(|&i| stats[i] >= threshold)
            .collect();
        let diagnosed_fraction = admitted.len() as f64 / labels.len() as f64;
        let (top1, top5) = if admitted.is_empty() {
            (None, None)
        } else {
            let sub_posteriors: Posteriors =
                admitted.iter().map(|&i| posteriors[i].clone()).collect();
            let sub_labels: Vec<u32> = admitted.iter().map(|&i| labels[i]).collect();
            (
                Some(top_k_accuracy(&sub_posteriors, &sub_labels, 1)?),
                Some(top_k_accuracy(&sub_posteriors, &sub_labels, 5)?),
            )
        };
        points.push(ThresholdPoint {
            threshold,
            diagnosed_fraction,
            confident_count: admitted.len(),
            top1_among_confident: top1,
            top5_among_confident: top5,
        });
    }
    Ok(ThresholdSweep { admission, points })
}

/// Headline metric report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_test: usize,
    pub top1: f64,
    pub top5: f64,
    pub precision_weighted: f64,
    pub per_class_precision: Vec<f64>,
    pub classes_never_predicted: Vec<String>,
    /// Per condition, the five most frequent wrong predictions with counts.
    pub confusion_top5: BTreeMap<String, Vec<(String, u64)>>,
}

/// Compute the headline report. `class_labels` maps class index to
/// condition id.
pub fn evaluate(
    posteriors: &Posteriors,
    labels: &[u32],
    class_labels: &[String],
) -> Result<EvaluationReport, EvalError> {
    check_alignment(posteriors, labels)?;
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    let precision = precision_multiclass(posteriors, labels)?;
    let mut confusion = BTreeMap::new();
    let mut present: Vec<u32> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    for condition in present {
        let ranked = confusion_top5(posteriors, labels, condition)?;
        confusion.insert(
            class_labels[condition as usize].clone(),
            ranked
                .into_iter()
                .map(|(class, count)| (class_labels[class].clone(), count))
                .collect(),
        );
    }
    Ok(EvaluationReport {
        n_test: labels.len(),
        top1: top_k_accuracy(posteriors, labels, 1)?,
        top5: top_k_accuracy(posteriors, labels, 5)?,
        precision_weighted: precision.weighted,
        per_class_precision: precision.per_class,
        classes_never_predicted: precision
            .never_predicted
            .into_iter()
            .map(|c| class_labels[c].clone())
            .collect(),
        confusion_top5: confusion,
    })
}

/// One sweep threshold labeled with the case statistic it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledThreshold {
    pub case: CorrectnessCase,
    pub statistic: String,
    #[serde(flatten)]
    pub point: ThresholdPoint,
}

/// Full evaluation artifact: headline report, the four posterior cases, and
/// a threshold sweep at each case's percentiles and mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullEvaluation {
    pub report: EvaluationReport,
    pub posterior_cases: Vec<PosteriorCaseStats>,
    pub admission: AdmissionStat,
    pub thresholds: Vec<LabeledThreshold>,
}

/// Run the whole analysis: report, case statistics, and a sweep whose
/// thresholds are the p25/p50/p75/mean of each non-empty case.
pub fn full_evaluation(
    posteriors: &Posteriors,
    labels: &[u32],
    class_labels: &[String],
    admission: AdmissionStat,
) -> Result<FullEvaluation, EvalError> {
    let report = evaluate(posteriors, labels, class_labels)?;
    let cases = posterior_case_stats(posteriors, labels)?;
    let mut sources: Vec<(CorrectnessCase, String, f64)> = Vec::new();
    for case in &cases {
        if let Some(summary) = &case.summary {
            sources.push((case.case, "p25".into(), summary.p25));
            sources.push((case.case, "p50".into(), summary.p50));
            sources.push((case.case, "p75".into(), summary.p75));
            sources.push((case.case, "mean".into(), summary.mean));
        }
    }
    let thresholds: Vec<f64> = sources.iter().map(|(_, _, t)| *t).collect();
    let sweep = threshold_sweep(posteriors, labels, &thresholds, admission)?;
    let labeled = sources
        .into_iter()
        .zip(sweep.points)
        .map(|((case, statistic, _), point)| LabeledThreshold {
            case,
            statistic,
            point,
        })
        .collect();
    Ok(FullEvaluation {
        report,
        posterior_cases: cases,
        admission,
        thresholds: labeled,
    })
}

impl FullEvaluation {
    /// Figure-ready CSV of the threshold sweep, one row per case/statistic.
    pub fn thresholds_csv(&self) -> String {
        let mut out = String::from(
            "case,statistic,threshold,diagnosed_fraction,top1_among_confident,top5_among_confident\n",
        );
        for row in &self.thresholds {
            let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.case,
                row.statistic,
                row.point.threshold,
                row.point.diagnosed_fraction,
                fmt_opt(row.point.top1_among_confident),
                fmt_opt(row.point.top5_among_confident),
            ));
        }
        out
    }

    /// Figure-ready CSV of the posterior case statistics.
    pub fn cases_csv(&self) -> String {
        let mut out = String::from("case,count,p25,p50,p75,mean\n");
        for case in &self.posterior_cases {
            match &case.summary {
                Some(s) => out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    case.case, case.count, s.p25, s.p50, s.p75, s.mean
                )),
                None => out.push_str(&format!("{},{},,,,\n", case.case, case.count)),
            }
        }
        out
    }
}
