//! Random forest of Gini-grown decision trees.
//!
//! Trees train on bootstrap resamples (when enabled) and consider a random
//! feature subset at every split. Numeric and binary columns split on
//! thresholds; categorical columns split one category against the rest,
//! picking the category greedily by Gini. Leaves keep raw class counts and
//! the forest posterior is the average of the per-tree leaf distributions.
//!
//! Tree `t` draws from a stream derived from `(seed, t)`, so fitting is
//! deterministic and parallelizable across trees.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_fingerprint, ModelError, Posteriors};
use crate::encoding::{EncodedDataset, FeatureKind};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features considered per split; defaults to ceil(sqrt(D)).
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// How an internal node routes a row: left on a match, right otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SplitRule {
    /// Left when `value <= threshold`.
    Threshold { feature: usize, threshold: f64 },
    /// Left when the integer value is in `categories` (sorted).
    Categories {
        feature: usize,
        categories: Vec<u32>,
    },
}

impl SplitRule {
    fn goes_left(&self, row: &[f64]) -> bool {
        match self {
            SplitRule::Threshold { feature, threshold } => row[*feature] <= *threshold,
            SplitRule::Categories {
                feature,
                categories,
            } => categories.binary_search(&(row[*feature] as u32)).is_ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        #[serde(flatten)]
        rule: SplitRule,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Training rows per class routed to this leaf.
        counts: Vec<u32>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    /// Grow a single tree on all rows with every feature in play at each
    /// split. No randomness is involved.
    pub fn fit(
        dataset: &EncodedDataset,
        max_depth: Option<usize>,
        min_samples_leaf: usize,
    ) -> Result<DecisionTree, ModelError> {
        let n_classes = dataset.schema.n_classes();
        if n_classes < 2 {
            return Err(ModelError::TooFewClasses(n_classes));
        }
        let rows: Vec<usize> = (0..dataset.n_rows()).collect();
        let all_features: Vec<usize> = (0..dataset.schema.n_features()).collect();
        Ok(grow_tree(
            dataset,
            rows,
            max_depth,
            min_samples_leaf,
            n_classes,
            || all_features.clone(),
        ))
    }

    /// Class counts at the leaf this row lands in.
    pub fn leaf_counts(&self, row: &[f64]) -> &[u32] {
        let mut index = 0;
        loop {
            match &self.nodes[index] {
                TreeNode::Leaf { counts } => return counts,
                TreeNode::Internal { rule, left, right } => {
                    index = if rule.goes_left(row) { *left } else { *right };
                }
            }
        }
    }

    /// Normalized leaf distribution for a row.
    pub fn leaf_distribution(&self, row: &[f64], n_classes: usize) -> Vec<f64> {
        let counts = self.leaf_counts(row);
        let total: f64 = counts.iter().map(|&c| f64::from(c)).sum();
        let mut dist = vec![0.0; n_classes];
        for (c, &count) in counts.iter().enumerate() {
            dist[c] = f64::from(count) / total;
        }
        dist
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub params: RfParams,
    pub n_classes: usize,
    pub fingerprint: String,
}

impl RandomForest {
    pub fn fit(dataset: &EncodedDataset, params: RfParams) -> Result<RandomForest, ModelError> {
        let n_classes = dataset.schema.n_classes();
        if n_classes < 2 {
            return Err(ModelError::TooFewClasses(n_classes));
        }
        if params.n_trees == 0 {
            return Err(ModelError::BadParams("n_trees must be positive".into()));
        }
        if params.min_samples_leaf == 0 {
            return Err(ModelError::BadParams(
                "min_samples_leaf must be positive".into(),
            ));
        }
        let d = dataset.schema.n_features();
        let m = params
            .features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d);
        let n = dataset.n_rows();
        if n == 0 {
            return Err(ModelError::BadParams("training set is empty".into()));
        }

        let trees: Vec<DecisionTree> = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut tree_rng = rng::stream(params.seed, t as u64);
                let rows: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| tree_rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                grow_tree(
                    dataset,
                    rows,
                    params.max_depth,
                    params.min_samples_leaf,
                    n_classes,
                    move || sample_features(d, m, &mut tree_rng),
                )
            })
            .collect();

        Ok(RandomForest {
            trees,
            params,
            n_classes,
            fingerprint: dataset.schema.fingerprint.clone(),
        })
    }

    /// Average of the per-tree leaf distributions, one row per record.
    pub fn predict_proba(&self, dataset: &EncodedDataset) -> Result<Posteriors, ModelError> {
        check_fingerprint(&self.fingerprint, dataset)?;
        let n_trees = self.trees.len() as f64;
        Ok((0..dataset.n_rows())
            .into_par_iter()
            .map(|i| {
                let row = dataset.row(i);
                let mut acc = vec![0.0; self.n_classes];
                for tree in &self.trees {
                    let counts = tree.leaf_counts(row);
                    let total: f64 = counts.iter().map(|&c| f64::from(c)).sum();
                    for (c, &count) in counts.iter().enumerate() {
                        acc[c] += f64::from(count) / total;
                    }
                }
                for value in &mut acc {
                    *value /= n_trees;
                }
                acc
            })
            .collect())
    }
}

/// Draw `m` distinct feature indices, returned in ascending order.
fn sample_features(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..d).collect();
    for i in 0..m {
        let j = rng.gen_range(i..d);
        pool.swap(i, j);
    }
    let mut picked = pool[..m].to_vec();
    picked.sort_unstable();
    picked
}

fn class_counts(dataset: &EncodedDataset, rows: &[usize], n_classes: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n_classes];
    for &i in rows {
        counts[dataset.labels[i] as usize] += 1;
    }
    counts
}

fn gini(counts: &[u32], total: f64) -> f64 {
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = f64::from(c) / total;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

struct CandidateSplit {
    rule: SplitRule,
    weighted_impurity: f64,
}

/// Best candidate for one feature under the node's rows, or None when no
/// admissible split exists. Candidates are scanned in ascending value order
/// and the first strictly best one wins.
fn best_split_for_feature(
    dataset: &EncodedDataset,
    rows: &[usize],
    counts: &[u32],
    feature: usize,
    min_samples_leaf: usize,
    n_classes: usize,
) -> Option<CandidateSplit> {
    let n = rows.len();
    let kind = dataset.schema.features[feature].kind;
    match kind {
        FeatureKind::Numeric | FeatureKind::Binary => {
            let mut pairs: Vec<(f64, u32)> = rows
                .iter()
                .map(|&i| (dataset.row(i)[feature], dataset.labels[i]))
                .collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("feature values are finite"));
            let mut left = vec![0u32; n_classes];
            let mut best: Option<CandidateSplit> = None;
            let mut n_left = 0usize;
            for w in 0..n - 1 {
                let (value, class) = pairs[w];
                left[class as usize] += 1;
                n_left += 1;
                let next_value = pairs[w + 1].0;
                if next_value == value {
                    continue;
                }
                let n_right = n - n_left;
                if n_left < min_samples_leaf || n_right < min_samples_leaf {
                    continue;
                }
                let right: Vec<u32> = counts.iter().zip(&left).map(|(&t, &l)| t - l).collect();
                let weighted = (n_left as f64 * gini(&left, n_left as f64)
                    + n_right as f64 * gini(&right, n_right as f64))
                    / n as f64;
                if best.as_ref().is_none_or(|b| weighted < b.weighted_impurity) {
                    best = Some(CandidateSplit {
                        rule: SplitRule::Threshold {
                            feature,
                            threshold: (value + next_value) / 2.0,
                        },
                        weighted_impurity: weighted,
                    });
                }
            }
            best
        }
        FeatureKind::Categorical { count } => {
            let mut per_category = vec![vec![0u32; n_classes]; count];
            let mut category_totals = vec![0usize; count];
            for &i in rows {
                let v = dataset.row(i)[feature] as usize;
                per_category[v][dataset.labels[i] as usize] += 1;
                category_totals[v] += 1;
            }
            let mut best: Option<CandidateSplit> = None;
            for v in 0..count {
                let n_left = category_totals[v];
                let n_right = n - n_left;
                if n_left < min_samples_leaf || n_right < min_samples_leaf {
                    continue;
                }
                let right: Vec<u32> = counts
                    .iter()
                    .zip(&per_category[v])
                    .map(|(&t, &l)| t - l)
                    .collect();
                let weighted = (n_left as f64 * gini(&per_category[v], n_left as f64)
                    + n_right as f64 * gini(&right, n_right as f64))
                    / n as f64;
                if best.as_ref().is_none_or(|b| weighted < b.weighted_impurity) {
                    best = Some(CandidateSplit {
                        rule: SplitRule::Categories {
                            feature,
                            categories: vec![v as u32],
                        },
                        weighted_impurity: weighted,
                    });
                }
            }
            best
        }
    }
}

const MIN_IMPROVEMENT: f64 = 1e-12;

/// Grow one tree over `rows` with an explicit work stack. `pick_features`
/// chooses the candidate features for each split; the forest passes a
/// closure owning that tree's random stream, a plain tree returns every
/// feature.
fn grow_tree<F>(
    dataset: &EncodedDataset,
    rows: Vec<usize>,
    max_depth: Option<usize>,
    min_samples_leaf: usize,
    n_classes: usize,
    mut pick_features: F,
) -> DecisionTree
where
    F: FnMut() -> Vec<usize>,
{
    let mut nodes: Vec<TreeNode> = vec![TreeNode::Leaf { counts: vec![] }];
    let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, rows, 0)];

    while let Some((slot, rows, depth)) = stack.pop() {
        let counts = class_counts(dataset, &rows, n_classes);
        let n = rows.len();
        let parent_gini = gini(&counts, n as f64);
        let depth_ok = max_depth.is_none_or(|d| depth < d);
        let splittable = depth_ok && parent_gini > 0.0 && n >= 2 * min_samples_leaf;

        let best = if splittable {
            let mut best: Option<CandidateSplit> = None;
            for feature in pick_features() {
                if let Some(candidate) = best_split_for_feature(
                    dataset,
                    &rows,
                    &counts,
                    feature,
                    min_samples_leaf,
                    n_classes,
                ) {
                    if best
                        .as_ref()
                        .is_none_or(|b| candidate.weighted_impurity < b.weighted_impurity)
                    {
                        best = Some(candidate);
                    }
                }
            }
            best.filter(|b| b.weighted_impurity < parent_gini - MIN_IMPROVEMENT)
        } else {
            None
        };

        match best {
            None => nodes[slot] = TreeNode::Leaf { counts },
            Some(split) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .into_iter()
                    .partition(|&i| split.rule.goes_left(dataset.row(i)));
                let left = nodes.len();
                nodes.push(TreeNode::Leaf { counts: vec![] });
                let right = nodes.len();
                nodes.push(TreeNode::Leaf { counts: vec![] });
                nodes[slot] = TreeNode::Internal {
                    rule: split.rule,
                    left,
                    right,
                };
                stack.push((right, right_rows, depth + 1));
                stack.push((left, left_rows, depth + 1));
            }
        }
    }

    DecisionTree { nodes }
}

impl RandomForest {
    /// Tree count actually fitted.
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}
