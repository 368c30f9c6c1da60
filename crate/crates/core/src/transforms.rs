//! Knowledge-base transforms for realistic evaluation scenarios.
//!
//! Two transforms produce derived knowledge bases: [`perturb`] multiplies
//! every expression probability by `1 + delta` or `1 - delta` with a seeded
//! random sign per condition-symptom pair, and [`inject`] appends to each
//! condition the foreign symptoms most similar to its existing ones, where
//! similarity is the co-occurrence edge count summed over the condition's
//! symptom set. Both are pure functions of their inputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{ConditionDef, KnowledgeBase, SymptomExpression};
use crate::rng;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("perturbation delta {0} is outside [0, 1)")]
    BadDelta(f64),
    #[error("candidate symptom {symptom} already belongs to condition {condition}")]
    CandidateInSet { condition: String, symptom: String },
}

/// Expression-probability perturbation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub delta: f64,
    pub seed: u64,
}

/// Replace every expression probability `p` with `p * (1 + delta)` or
/// `p * (1 - delta)`, clamped to `[0, 1]`. The sign is drawn independently
/// per `(condition, symptom)` pair from a stream derived from the spec seed,
/// so the outcome does not depend on iteration order. Demographic odds and
/// attribute profiles are untouched.
pub fn perturb(
    kb: &KnowledgeBase,
    spec: &PerturbationSpec,
) -> Result<KnowledgeBase, TransformError> {
    if !spec.delta.is_finite() || !(0.0..1.0).contains(&spec.delta) {
        return Err(TransformError::BadDelta(spec.delta));
    }
    let mut out = kb.clone();
    for cond in &mut out.conditions {
        for expr in &mut cond.symptoms {
            let pair_tag = format!("{}\u{1f}{}", cond.condition_id, expr.symptom_id);
            let positive = rng::derive_seed(spec.seed, &pair_tag) & 1 == 0;
            let factor = if positive {
                1.0 + spec.delta
            } else {
                1.0 - spec.delta
            };
            expr.expression_prob = (expr.expression_prob * factor).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Symptom co-occurrence counts: nodes are symptoms, and the edge count of a
/// pair is the number of conditions listing both.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CooccurrenceGraph {
    counts: BTreeMap<(String, String), u32>,
}

impl CooccurrenceGraph {
    /// Count of conditions containing both symptoms. Symmetric; zero for
    /// unconnected pairs. A self pair has no defined count and reports zero.
    pub fn edge_count(&self, a: &str, b: &str) -> u32 {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.counts
            .get(&(key.0.to_string(), key.1.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn edge_pairs(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.counts
            .iter()
            .map(|((a, b), c)| (a.as_str(), b.as_str(), *c))
    }
}

/// Build the co-occurrence graph over the knowledge base's symptoms.
pub fn build_cooccurrence_graph(kb: &KnowledgeBase) -> CooccurrenceGraph {
    let mut counts: BTreeMap<(String, String), u32> = BTreeMap::new();
    for cond in &kb.conditions {
        let ids: BTreeSet<&str> = cond.symptom_ids().collect();
        let ids: Vec<&str> = ids.into_iter().collect();
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                *counts
                    .entry((ids[i].to_string(), ids[j].to_string()))
                    .or_default() += 1;
            }
        }
    }
    CooccurrenceGraph { counts }
}

/// Similarity of a foreign candidate symptom to a condition: the sum of its
/// edge counts with every symptom the condition already lists.
pub fn similarity(
    graph: &CooccurrenceGraph,
    cond: &ConditionDef,
    candidate: &str,
) -> Result<u32, TransformError> {
    if cond.symptom_ids().any(|sid| sid == candidate) {
        return Err(TransformError::CandidateInSet {
            condition: cond.condition_id.clone(),
            symptom: candidate.to_string(),
        });
    }
    Ok(cond
        .symptom_ids()
        .map(|sid| graph.edge_count(sid, candidate))
        .sum())
}

/// Expression probability assigned to injected symptoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjectionMode {
    Min,
    Mean,
    Max,
}

impl std::str::FromStr for InjectionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(InjectionMode::Min),
            "mean" => Ok(InjectionMode::Mean),
            "max" => Ok(InjectionMode::Max),
            other => Err(format!("unknown injection mode {other:?}")),
        }
    }
}

/// Symptom injection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub mode: InjectionMode,
    #[serde(default = "default_max_injected")]
    pub max_injected: usize,
}

fn default_max_injected() -> usize {
    5
}

impl InjectionSpec {
    pub fn new(mode: InjectionMode) -> Self {
        InjectionSpec {
            mode,
            max_injected: default_max_injected(),
        }
    }
}

/// Append to each condition the most similar foreign symptoms: candidates
/// with positive similarity, ranked by descending similarity with ties
/// broken by ascending symptom id, capped at `spec.max_injected`. Injected
/// expressions get the min, mean or max of the condition's pre-injection
/// expression probabilities and carry no attribute profile. Existing
/// symptoms keep their order. Deterministic.
pub fn inject(kb: &KnowledgeBase, spec: &InjectionSpec) -> KnowledgeBase {
    let graph = build_cooccurrence_graph(kb);
    let mut out = kb.clone();
    for cond in &mut out.conditions {
        let existing: BTreeSet<&str> = cond.symptom_ids().collect();
        let mut scored: Vec<(&str, u32)> = Vec::new();
        for symptom in &kb.symptoms {
            let sid = symptom.symptom_id.as_str();
            if existing.contains(sid) {
                continue;
            }
            let k: u32 = cond.symptom_ids().map(|s| graph.edge_count(s, sid)).sum();
            if k > 0 {
                scored.push((sid, k));
            }
        }
        scored.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        scored.truncate(spec.max_injected);

        if scored.is_empty() {
            continue;
        }
        let probs: Vec<f64> = cond.symptoms.iter().map(|e| e.expression_prob).collect();
        let injected_prob = match spec.mode {
            InjectionMode::Min => probs.iter().copied().fold(f64::INFINITY, f64::min),
            InjectionMode::Max => probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            InjectionMode::Mean => probs.iter().sum::<f64>() / probs.len() as f64,
        };
        for (sid, _) in scored {
            cond.symptoms.push(SymptomExpression {
                symptom_id: sid.to_string(),
                expression_prob: injected_prob,
                nlice: None,
            });
        }
    }
    out
}
