//! Semantic validation of a parsed knowledge base.
//!
//! Validation never mutates or rejects; it returns a report of findings.
//! Findings serialize as JSON lines, one object per finding with fields
//! `severity`, `location` and `message`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{KbMode, KnowledgeBase, NA_LABEL};

const DISTRIBUTION_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for finding in &self.findings {
            out.push_str(&serde_json::to_string(finding).expect("finding serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let findings = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ValidationReport { findings })
    }

    fn error(&mut self, location: String, message: String) {
        self.findings.push(Finding {
            severity: Severity::Error,
            location,
            message,
        });
    }

    fn warning(&mut self, location: String, message: String) {
        self.findings.push(Finding {
            severity: Severity::Warning,
            location,
            message,
        });
    }
}

fn check_prob(report: &mut ValidationReport, location: String, value: f64) {
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        report.error(location, format!("probability {value} is outside [0, 1]"));
    }
}

/// Inspect `kb` and report every problem found. The knowledge base is
/// left unchanged.
pub fn validate(kb: &KnowledgeBase) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut symptom_ids = BTreeSet::new();
    for symptom in &kb.symptoms {
        if !symptom_ids.insert(symptom.symptom_id.as_str()) {
            report.error(
                format!("symptom[{}]", symptom.symptom_id),
                "duplicate symptom_id".into(),
            );
        }
        if let Some(odds) = &symptom.age_odds {
            for (group, p) in odds {
                check_prob(
                    &mut report,
                    format!("symptom[{}].age_odds[{group}]", symptom.symptom_id),
                    *p,
                );
            }
        }
        if let Some(odds) = &symptom.race_odds {
            for (race, p) in odds {
                check_prob(
                    &mut report,
                    format!("symptom[{}].race_odds[{race}]", symptom.symptom_id),
                    *p,
                );
            }
        }
        if let Some(odds) = &symptom.gender_odds {
            for (gender, p) in odds {
                check_prob(
                    &mut report,
                    format!("symptom[{}].gender_odds[{gender}]", symptom.symptom_id),
                    *p,
                );
            }
        }
    }

    let mut condition_ids = BTreeSet::new();
    for cond in &kb.conditions {
        let cid = cond.condition_id.as_str();
        if !condition_ids.insert(cid) {
            report.error(format!("condition[{cid}]"), "duplicate condition_id".into());
        }
        for (group, p) in &cond.age_odds {
            check_prob(
                &mut report,
                format!("condition[{cid}].age_odds[{group}]"),
                *p,
            );
        }
        for (gender, p) in &cond.gender_odds {
            check_prob(
                &mut report,
                format!("condition[{cid}].gender_odds[{gender}]"),
                *p,
            );
        }
        for (race, p) in &cond.race_odds {
            check_prob(
                &mut report,
                format!("condition[{cid}].race_odds[{race}]"),
                *p,
            );
        }
        if cond.symptoms.is_empty() {
            report.error(format!("condition[{cid}]"), "empty symptom list".into());
        }
        let mut listed = BTreeSet::new();
        for expr in &cond.symptoms {
            let sid = expr.symptom_id.as_str();
            let location = format!("condition[{cid}].symptoms[{sid}]");
            if !listed.insert(sid) {
                report.error(location.clone(), "symptom listed twice".into());
            }
            if !symptom_ids.contains(sid) {
                report.error(location.clone(), "dangling symptom reference".into());
            }
            check_prob(
                &mut report,
                format!("{location}.expression_prob"),
                expr.expression_prob,
            );
            if expr.expression_prob == 0.0 {
                report.warning(
                    format!("{location}.expression_prob"),
                    "expression probability is zero; the symptom can never present".into(),
                );
            }
            if let Some(profile) = &expr.nlice {
                if kb.mode == KbMode::Symcat {
                    report.error(
                        location.clone(),
                        "attribute profile present in a symcat knowledge base".into(),
                    );
                }
                for (attr, dist) in &profile.distributions {
                    let attr_location = format!("{location}.nlice[{attr}]");
                    if dist.is_empty() {
                        report.error(attr_location.clone(), "empty distribution".into());
                        continue;
                    }
                    let mut sum = 0.0;
                    for (label, p) in dist {
                        check_prob(&mut report, format!("{attr_location}[{label}]"), *p);
                        if label == NA_LABEL {
                            report.error(
                                format!("{attr_location}[{label}]"),
                                format!("reserved label {NA_LABEL:?} used as a category"),
                            );
                        }
                        let in_vocab = kb
                            .vocabulary(*attr)
                            .is_some_and(|v| v.iter().any(|l| l == label));
                        if !in_vocab {
                            report.error(
                                format!("{attr_location}[{label}]"),
                                format!("label {label:?} missing from the {attr} vocabulary"),
                            );
                        }
                        sum += p;
                    }
                    if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOLERANCE {
                        report.error(
                            attr_location,
                            format!("distribution sums to {sum}, expected 1"),
                        );
                    }
                }
            }
        }
    }

    report
}
