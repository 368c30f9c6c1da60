//! From-scratch posterior-producing classifiers.
//!
//! Both models consume an [`EncodedDataset`](crate::encoding::EncodedDataset)
//! and return one normalized probability row per input record. A fitted
//! model remembers the schema fingerprint it was trained against and refuses
//! datasets with a different one.

pub mod forest;
pub mod naive_bayes;

pub use forest::{DecisionTree, RandomForest, RfParams, SplitRule, TreeNode};
pub use naive_bayes::{HybridNaiveBayes, NbParams};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::EncodedDataset;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model was trained on fingerprint {trained} but the dataset has {found}")]
    FingerprintMismatch { trained: String, found: String },
    #[error("class {class} has no training rows")]
    EmptyClass { class: String },
    #[error("training data must contain at least 2 classes, found {0}")]
    TooFewClasses(usize),
    #[error("invalid hyperparameter: {0}")]
    BadParams(String),
    #[error("model file error: {0}")]
    Format(String),
    #[error("model I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Posterior matrix: one probability row per input record.
pub type Posteriors = Vec<Vec<f64>>;

/// The `k` most probable classes of one posterior row, highest first, ties
/// broken by ascending class index.
pub fn predict_top_k(row: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .expect("posterior values are finite")
            .then_with(|| a.cmp(&b))
    });
    order
        .into_iter()
        .take(k)
        .map(|class| (class, row[class]))
        .collect()
}

/// Most probable class of one posterior row (ties to the lowest index).
pub fn argmax(row: &[f64]) -> usize {
    predict_top_k(row, 1)[0].0
}

fn check_fingerprint(trained: &str, dataset: &EncodedDataset) -> Result<(), ModelError> {
    if trained != dataset.schema.fingerprint {
        return Err(ModelError::FingerprintMismatch {
            trained: trained.to_string(),
            found: dataset.schema.fingerprint.clone(),
        });
    }
    Ok(())
}

/// A fitted model of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    NaiveBayes(HybridNaiveBayes),
    RandomForest(RandomForest),
}

impl TrainedModel {
    pub fn fingerprint(&self) -> &str {
        match self {
            TrainedModel::NaiveBayes(m) => &m.fingerprint,
            TrainedModel::RandomForest(m) => &m.fingerprint,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            TrainedModel::NaiveBayes(m) => m.n_classes(),
            TrainedModel::RandomForest(m) => m.n_classes,
        }
    }

    pub fn kind_label(&self) -> &'static str {
        match self {
            TrainedModel::NaiveBayes(_) => "naive_bayes",
            TrainedModel::RandomForest(_) => "random_forest",
        }
    }

    pub fn predict_proba(&self, dataset: &EncodedDataset) -> Result<Posteriors, ModelError> {
        match self {
            TrainedModel::NaiveBayes(m) => m.predict_proba(dataset),
            TrainedModel::RandomForest(m) => m.predict_proba(dataset),
        }
    }
}

const MODEL_FORMAT_VERSION: u32 = 1;

/// Versioned on-disk model wrapper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    /// Class index to condition id, copied from the training schema.
    pub class_labels: Vec<String>,
    pub model: TrainedModel,
}

impl ModelFile {
    pub fn new(model: TrainedModel, class_labels: Vec<String>) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            class_labels,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelFile, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        if file.class_labels.len() != file.model.n_classes() {
            return Err(ModelError::Format(
                "class label count disagrees with the model".into(),
            ));
        }
        Ok(file)
    }
}
