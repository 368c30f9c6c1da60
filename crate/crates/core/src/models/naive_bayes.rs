//! Naive Bayes with per-feature likelihood families.
//!
//! Each feature gets the distribution its schema kind calls for: numeric
//! features a per-class Gaussian, binary features a per-class Bernoulli,
//! categorical features a per-class categorical table. Bernoulli and
//! categorical parameters are Laplace-smoothed; Gaussian variances are
//! floored. All posterior math runs in log space with log-sum-exp
//! normalization so wide class sets cannot underflow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_fingerprint, ModelError, Posteriors};
use crate::encoding::{EncodedDataset, FeatureKind};

/// Keeps smoothed Bernoulli and categorical parameters inside (0, 1).
const THETA_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbParams {
    /// Additive smoothing for Bernoulli and categorical counts.
    pub alpha: f64,
    /// Lower bound on Gaussian variances.
    pub var_floor: f64,
}

impl Default for NbParams {
    fn default() -> Self {
        NbParams {
            alpha: 1.0,
            var_floor: 1e-9,
        }
    }
}

/// Fitted likelihood parameters for one feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FeatureLikelihood {
    Gaussian {
        /// Per-class mean.
        means: Vec<f64>,
        /// Per-class variance, floored.
        variances: Vec<f64>,
    },
    Bernoulli {
        /// Per-class probability of the feature being 1.
        theta: Vec<f64>,
    },
    Categorical {
        /// Per-class category probabilities; rows sum to 1.
        probs: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridNaiveBayes {
    pub log_priors: Vec<f64>,
    pub features: Vec<FeatureLikelihood>,
    pub alpha: f64,
    pub var_floor: f64,
    pub fingerprint: String,
}

impl HybridNaiveBayes {
    pub fn n_classes(&self) -> usize {
        self.log_priors.len()
    }

    /// Fit priors and per-feature likelihoods from class-wise counts.
    /// Every class in the schema must appear in the training labels.
    pub fn fit(dataset: &EncodedDataset, params: NbParams) -> Result<Self, ModelError> {
        if !(params.alpha >= 0.0) {
            return Err(ModelError::BadParams(format!(
                "alpha must be non-negative, got {}",
                params.alpha
            )));
        }
        if !(params.var_floor > 0.0) {
            return Err(ModelError::BadParams(format!(
                "variance floor must be positive, got {}",
                params.var_floor
            )));
        }
        let n_classes = dataset.schema.n_classes();
        if n_classes < 2 {
            return Err(ModelError::TooFewClasses(n_classes));
        }
        let n = dataset.n_rows();
        let mut class_counts = vec![0usize; n_classes];
        for &label in &dataset.labels {
            class_counts[label as usize] += 1;
        }
        if let Some(empty) = class_counts.iter().position(|&c| c == 0) {
            return Err(ModelError::EmptyClass {
                class: dataset.schema.class_labels[empty].clone(),
            });
        }

        let log_priors: Vec<f64> = class_counts
            .iter()
            .map(|&c| (c as f64 / n as f64).ln())
            .collect();

        let d = dataset.schema.n_features();
        let mut features = Vec::with_capacity(d);
        for (j, descriptor) in dataset.schema.features.iter().enumerate() {
            let likelihood = match descriptor.kind {
                FeatureKind::Numeric => {
                    let mut sums = vec![0.0; n_classes];
                    let mut sq_sums = vec![0.0; n_classes];
                    for i in 0..n {
                        let c = dataset.labels[i] as usize;
                        let x = dataset.row(i)[j];
                        sums[c] += x;
                        sq_sums[c] += x * x;
                    }
                    let means: Vec<f64> = sums
                        .iter()
                        .zip(&class_counts)
                        .map(|(s, &c)| s / c as f64)
                        .collect();
                    let variances: Vec<f64> = sq_sums
                        .iter()
                        .zip(&class_counts)
                        .zip(&means)
                        .map(|((sq, &c), m)| (sq / c as f64 - m * m).max(params.var_floor))
                        .collect();
                    FeatureLikelihood::Gaussian { means, variances }
                }
                FeatureKind::Binary => {
                    let mut ones = vec![0usize; n_classes];
                    for i in 0..n {
                        if dataset.row(i)[j] == 1.0 {
                            ones[dataset.labels[i] as usize] += 1;
                        }
                    }
                    let theta: Vec<f64> = ones
                        .iter()
                        .zip(&class_counts)
                        .map(|(&k, &c)| {
                            let t = (k as f64 + params.alpha) / (c as f64 + 2.0 * params.alpha);
                            t.clamp(THETA_CLAMP, 1.0 - THETA_CLAMP)
                        })
                        .collect();
                    FeatureLikelihood::Bernoulli { theta }
                }
                FeatureKind::Categorical { count } => {
                    let mut tallies = vec![vec![0usize; count]; n_classes];
                    for i in 0..n {
                        let v = dataset.row(i)[j] as usize;
                        tallies[dataset.labels[i] as usize][v] += 1;
                    }
                    let probs: Vec<Vec<f64>> = tallies
                        .iter()
                        .zip(&class_counts)
                        .map(|(t, &c)| {
                            let denominator = c as f64 + params.alpha * count as f64;
                            let mut row: Vec<f64> = t
                                .iter()
                                .map(|&k| {
                                    ((k as f64 + params.alpha) / denominator).max(THETA_CLAMP)
                                })
                                .collect();
                            let total: f64 = row.iter().sum();
                            for p in &mut row {
                                *p /= total;
                            }
                            row
                        })
                        .collect();
                    FeatureLikelihood::Categorical { probs }
                }
            };
            features.push(likelihood);
        }

        Ok(HybridNaiveBayes {
            log_priors,
            features,
            alpha: params.alpha,
            var_floor: params.var_floor,
            fingerprint: dataset.schema.fingerprint.clone(),
        })
    }

    /// Log prior plus summed per-feature log likelihoods, one value per class.
    pub fn log_joint(&self, row: &[f64]) -> Vec<f64> {
        let mut scores = self.log_priors.clone();
        for (j, likelihood) in self.features.iter().enumerate() {
            let x = row[j];
            match likelihood {
                FeatureLikelihood::Gaussian { means, variances } => {
                    for (c, score) in scores.iter_mut().enumerate() {
                        let var = variances[c];
                        let diff = x - means[c];
                        *score +=
                            -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + diff * diff / var);
                    }
                }
                FeatureLikelihood::Bernoulli { theta } => {
                    for (c, score) in scores.iter_mut().enumerate() {
                        *score += if x == 1.0 {
                            theta[c].ln()
                        } else {
                            (1.0 - theta[c]).ln()
                        };
                    }
                }
                FeatureLikelihood::Categorical { probs } => {
                    let v = x as usize;
                    for (c, score) in scores.iter_mut().enumerate() {
                        *score += probs[c][v].ln();
                    }
                }
            }
        }
        scores
    }

    fn posterior_row(&self, row: &[f64]) -> Vec<f64> {
        let scores = self.log_joint(row);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut posterior: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = posterior.iter().sum();
        for p in &mut posterior {
            *p /= total;
        }
        posterior
    }

    /// Normalized posterior rows for every record in the dataset.
    pub fn predict_proba(&self, dataset: &EncodedDataset) -> Result<Posteriors, ModelError> {
        check_fingerprint(&self.fingerprint, dataset)?;
        Ok((0..dataset.n_rows())
            .into_par_iter()
            .map(|i| self.posterior_row(dataset.row(i)))
            .collect())
    }
}
