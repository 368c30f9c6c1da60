//! Probabilistic condition-symptom knowledge bases.
//!
//! A [`KnowledgeBase`] holds conditions with demographic contraction odds
//! and per-symptom expression probabilities, in one of two forms:
//! plain binary symptoms (`symcat`) or symptoms augmented with categorical
//! attribute distributions (`nlice`). Instances are immutable after
//! construction and safe to share across threads.

mod parse;
mod symcat;
mod validate;

pub use parse::{parse_knowledge_base, parse_knowledge_base_str, write_knowledge_base};
pub use symcat::import_symcat_csv;
pub use validate::{validate, Finding, Severity, ValidationReport};

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from loading or importing a knowledge base.
#[derive(Debug, Error)]
pub enum KbError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed knowledge base JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("knowledge base schema error: {0}")]
    Schema(String),
    #[error("knowledge base has no conditions")]
    NoConditions,
    #[error("CSV import error in {file} at line {line}: {message}")]
    Csv {
        file: String,
        line: u64,
        message: String,
    },
    #[error("CSV file {file} is missing required column {column}")]
    MissingColumn { file: String, column: String },
}

/// One of the eight age brackets used for demographic odds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgeGroup(u8);

const AGE_GROUP_LABELS: [&str; 8] = [
    "<1", "1-4", "5-14", "15-29", "30-44", "45-59", "60-74", ">75",
];

// Inclusive year ranges per group. The open-ended last group is capped at 100.
const AGE_GROUP_RANGES: [(u32, u32); 8] = [
    (0, 0),
    (1, 4),
    (5, 14),
    (15, 29),
    (30, 44),
    (45, 59),
    (60, 74),
    (75, 100),
];

impl AgeGroup {
    pub const COUNT: usize = 8;

    pub fn from_index(index: usize) -> Option<Self> {
        (index < Self::COUNT).then_some(AgeGroup(index as u8))
    }

    pub fn from_label(label: &str) -> Option<Self> {
        AGE_GROUP_LABELS
            .iter()
            .position(|l| *l == label)
            .map(|i| AgeGroup(i as u8))
    }

    /// Group whose year range contains `age_years`. Ages past the cap fall
    /// into the last group.
    pub fn from_age(age_years: u32) -> Self {
        for (i, (lo, hi)) in AGE_GROUP_RANGES.iter().enumerate() {
            if age_years >= *lo && age_years <= *hi {
                return AgeGroup(i as u8);
            }
        }
        AgeGroup((Self::COUNT - 1) as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn label(self) -> &'static str {
        AGE_GROUP_LABELS[self.index()]
    }

    /// Inclusive `(low, high)` year range.
    pub fn year_range(self) -> (u32, u32) {
        AGE_GROUP_RANGES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = AgeGroup> {
        (0..Self::COUNT).map(|i| AgeGroup(i as u8))
    }
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for AgeGroup {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for AgeGroup {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        AgeGroup::from_label(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown age group label {s:?}")))
    }
}

/// Race category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Race {
    White,
    Black,
    Hispanic,
    Other,
}

impl Race {
    pub const COUNT: usize = 4;
    pub const ALL: [Race; 4] = [Race::White, Race::Black, Race::Hispanic, Race::Other];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Race::White => "white",
            Race::Black => "black",
            Race::Hispanic => "hispanic",
            Race::Other => "other",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.label() == label)
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Gender category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const COUNT: usize = 2;
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.label() == label)
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The seven categorical symptom attributes. `frequency`, `duration` and
/// `onset` together describe the symptom's timing; the full presented tuple
/// is the symptom itself plus these seven attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliceAttribute {
    Nature,
    Location,
    Intensity,
    Frequency,
    Duration,
    Onset,
    Excitation,
}

impl NliceAttribute {
    pub const COUNT: usize = 7;
    pub const ALL: [NliceAttribute; 7] = [
        NliceAttribute::Nature,
        NliceAttribute::Location,
        NliceAttribute::Intensity,
        NliceAttribute::Frequency,
        NliceAttribute::Duration,
        NliceAttribute::Onset,
        NliceAttribute::Excitation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            NliceAttribute::Nature => "nature",
            NliceAttribute::Location => "location",
            NliceAttribute::Intensity => "intensity",
            NliceAttribute::Frequency => "frequency",
            NliceAttribute::Duration => "duration",
            NliceAttribute::Onset => "onset",
            NliceAttribute::Excitation => "excitation",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.label() == label)
    }
}

impl fmt::Display for NliceAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Sentinel category label for an unknown or uncollected attribute value.
pub const NA_LABEL: &str = "NA";

/// Knowledge base flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KbMode {
    Symcat,
    Nlice,
}

impl KbMode {
    pub fn label(self) -> &'static str {
        match self {
            KbMode::Symcat => "symcat",
            KbMode::Nlice => "nlice",
        }
    }
}

impl fmt::Display for KbMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for KbMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symcat" => Ok(KbMode::Symcat),
            "nlice" => Ok(KbMode::Nlice),
            other => Err(format!("unknown mode {other:?}, expected symcat or nlice")),
        }
    }
}

/// A symptom known to the knowledge base. The demographic odds are carried
/// through from the source data but are not consulted during generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomDef {
    pub symptom_id: String,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_odds: Option<BTreeMap<AgeGroup, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race_odds: Option<BTreeMap<Race, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender_odds: Option<BTreeMap<Gender, f64>>,
}

/// Per-attribute categorical distributions for one symptom expression.
/// Attributes without a distribution come out as [`NA_LABEL`] when sampled.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NliceProfile {
    pub distributions: BTreeMap<NliceAttribute, BTreeMap<String, f64>>,
}

impl NliceProfile {
    pub fn distribution(&self, attr: NliceAttribute) -> Option<&BTreeMap<String, f64>> {
        self.distributions.get(&attr)
    }

    pub fn is_empty(&self) -> bool {
        self.distributions.is_empty()
    }
}

/// A symptom attached to a condition with its presentation probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymptomExpression {
    pub symptom_id: String,
    pub expression_prob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nlice: Option<NliceProfile>,
}

/// A condition with demographic odds and its symptom expression list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDef {
    pub condition_id: String,
    pub display_name: String,
    pub age_odds: BTreeMap<AgeGroup, f64>,
    pub gender_odds: BTreeMap<Gender, f64>,
    pub race_odds: BTreeMap<Race, f64>,
    pub symptoms: Vec<SymptomExpression>,
}

impl ConditionDef {
    pub fn expression(&self, symptom_id: &str) -> Option<&SymptomExpression> {
        self.symptoms.iter().find(|e| e.symptom_id == symptom_id)
    }

    pub fn symptom_ids(&self) -> impl Iterator<Item = &str> {
        self.symptoms.iter().map(|e| e.symptom_id.as_str())
    }
}

/// A full condition-symptom knowledge base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub mode: KbMode,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attribute_vocabularies: BTreeMap<NliceAttribute, Vec<String>>,
    pub symptoms: Vec<SymptomDef>,
    pub conditions: Vec<ConditionDef>,
}

/// Summary counts for a knowledge base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbStats {
    pub condition_count: usize,
    pub symptom_count: usize,
    pub min_symptoms_per_condition: usize,
    pub mean_symptoms_per_condition: f64,
    pub max_symptoms_per_condition: usize,
    /// Fraction of symptom expressions carrying a distribution, per attribute.
    pub nlice_coverage: BTreeMap<NliceAttribute, f64>,
}

impl KnowledgeBase {
    pub fn condition(&self, condition_id: &str) -> Option<&ConditionDef> {
        self.conditions
            .iter()
            .find(|c| c.condition_id == condition_id)
    }

    pub fn symptom(&self, symptom_id: &str) -> Option<&SymptomDef> {
        self.symptoms.iter().find(|s| s.symptom_id == symptom_id)
    }

    /// Ids of symptoms referenced by at least one condition.
    pub fn referenced_symptom_ids(&self) -> BTreeSet<&str> {
        self.conditions
            .iter()
            .flat_map(|c| c.symptom_ids())
            .collect()
    }

    /// Vocabulary for one attribute, if declared.
    pub fn vocabulary(&self, attr: NliceAttribute) -> Option<&[String]> {
        self.attribute_vocabularies.get(&attr).map(|v| v.as_slice())
    }

    /// Drop symptoms no condition references. Conditions are untouched.
    /// Applying it twice gives the same result as applying it once.
    pub fn prune_orphan_symptoms(&self) -> KnowledgeBase {
        let referenced = self.referenced_symptom_ids();
        let mut pruned = self.clone();
        pruned
            .symptoms
            .retain(|s| referenced.contains(s.symptom_id.as_str()));
        pruned
    }

    /// Exact summary counts. NLICE coverage is computed over all symptom
    /// expressions, so a symcat knowledge base reports zero everywhere.
    pub fn stats(&self) -> KbStats {
        let per_condition: Vec<usize> = self.conditions.iter().map(|c| c.symptoms.len()).collect();
        let total_expressions: usize = per_condition.iter().sum();
        let mut coverage = BTreeMap::new();
        for attr in NliceAttribute::ALL {
            let covered = self
                .conditions
                .iter()
                .flat_map(|c| &c.symptoms)
                .filter(|e| {
                    e.nlice
                        .as_ref()
                        .is_some_and(|p| p.distribution(attr).is_some())
                })
                .count();
            let fraction = if total_expressions == 0 {
                0.0
            } else {
                covered as f64 / total_expressions as f64
            };
            coverage.insert(attr, fraction);
        }
        KbStats {
            condition_count: self.conditions.len(),
            symptom_count: self.symptoms.len(),
            min_symptoms_per_condition: per_condition.iter().copied().min().unwrap_or(0),
            mean_symptoms_per_condition: if per_condition.is_empty() {
                0.0
            } else {
                total_expressions as f64 / per_condition.len() as f64
            },
            max_symptoms_per_condition: per_condition.iter().copied().max().unwrap_or(0),
            nlice_coverage: coverage,
        }
    }
}


#[cfg(any(test, feature = "test-support"))]
pub mod test_support {
    //! Small hand-built knowledge bases shared across unit tests.

    use super::*;

    pub fn full_age_odds(value: f64) -> BTreeMap<AgeGroup, f64> {
        AgeGroup::all().map(|g| (g, value)).collect()
    }

    pub fn full_gender_odds(value: f64) -> BTreeMap<Gender, f64> {
        Gender::ALL.into_iter().map(|g| (g, value)).collect()
    }

    pub fn full_race_odds(value: f64) -> BTreeMap<Race, f64> {
        Race::ALL.into_iter().map(|r| (r, value)).collect()
    }

    pub fn simple_symptom(id: &str) -> SymptomDef {
        SymptomDef {
            symptom_id: id.to_string(),
            display_name: id.to_string(),
            age_odds: None,
            race_odds: None,
            gender_odds: None,
        }
    }

    pub fn simple_condition(id: &str, symptoms: &[(&str, f64)]) -> ConditionDef {
        ConditionDef {
            condition_id: id.to_string(),
            display_name: id.to_string(),
            age_odds: full_age_odds(0.5),
            gender_odds: full_gender_odds(0.5),
            race_odds: full_race_odds(0.5),
            symptoms: symptoms
                .iter()
                .map(|(sid, p)| SymptomExpression {
                    symptom_id: sid.to_string(),
                    expression_prob: *p,
                    nlice: None,
                })
                .collect(),
        }
    }

    /// Two conditions over three symptoms, two symptoms each, all referenced.
    pub fn tiny_kb() -> KnowledgeBase {
        KnowledgeBase {
            mode: KbMode::Symcat,
            attribute_vocabularies: BTreeMap::new(),
            symptoms: vec![
                simple_symptom("cough"),
                simple_symptom("fever"),
                simple_symptom("rash"),
            ],
            conditions: vec![
                simple_condition("c_a", &[("cough", 0.8), ("fever", 0.4)]),
                simple_condition("c_b", &[("fever", 0.6), ("rash", 0.9)]),
            ],
        }
    }
}
