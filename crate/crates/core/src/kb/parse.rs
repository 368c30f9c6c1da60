//! Canonical knowledge-base JSON parsing and serialization.
//!
//! The on-disk format is UTF-8 JSON with top-level fields `mode`,
//! `attribute_vocabularies`, `symptoms` and `conditions`; probabilities are
//! plain decimal numbers. Parsing performs type-level checks only (plus the
//! vocabulary membership the nlice schema requires); semantic checks live in
//! [`validate`](super::validate).

use std::path::Path;

use super::{KbError, KbMode, KnowledgeBase, NA_LABEL};

/// Characters that would collide with the record CSV delimiters.
const FORBIDDEN_ID_CHARS: [char; 4] = [':', ';', ',', '\n'];

/// Load a knowledge base from `path`, requiring it to match `mode`.
pub fn parse_knowledge_base(path: &Path, mode: KbMode) -> Result<KnowledgeBase, KbError> {
    let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_knowledge_base_str(&text, mode)
}

/// Parse a knowledge base from JSON text, requiring it to match `mode`.
pub fn parse_knowledge_base_str(text: &str, mode: KbMode) -> Result<KnowledgeBase, KbError> {
    let kb: KnowledgeBase = serde_json::from_str(text).map_err(|e| KbError::Json {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    check_schema(&kb, mode)?;
    Ok(kb)
}

/// Serialize a knowledge base to pretty-printed JSON at `path`.
pub fn write_knowledge_base(kb: &KnowledgeBase, path: &Path) -> Result<(), KbError> {
    let mut text = serde_json::to_string_pretty(kb).expect("knowledge base serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn check_schema(kb: &KnowledgeBase, mode: KbMode) -> Result<(), KbError> {
    if kb.conditions.is_empty() {
        return Err(KbError::NoConditions);
    }
    if kb.mode != mode {
        return Err(KbError::Schema(format!(
            "file declares mode {} but {} was requested",
            kb.mode, mode
        )));
    }
    for id in kb
        .symptoms
        .iter()
        .map(|s| &s.symptom_id)
        .chain(kb.conditions.iter().map(|c| &c.condition_id))
    {
        if id.is_empty() || id.contains(FORBIDDEN_ID_CHARS) {
            return Err(KbError::Schema(format!(
                "identifier {id:?} is empty or contains a reserved delimiter"
            )));
        }
    }
    match mode {
        KbMode::Symcat => check_symcat_schema(kb),
        KbMode::Nlice => check_nlice_schema(kb),
    }
}

fn check_symcat_schema(kb: &KnowledgeBase) -> Result<(), KbError> {
    if !kb.attribute_vocabularies.is_empty() {
        return Err(KbError::Schema(
            "symcat knowledge base must not declare attribute vocabularies".into(),
        ));
    }
    for cond in &kb.conditions {
        for expr in &cond.symptoms {
            if expr.nlice.is_some() {
                return Err(KbError::Schema(format!(
                    "symcat knowledge base carries an attribute profile on {}/{}",
                    cond.condition_id, expr.symptom_id
                )));
            }
        }
    }
    Ok(())
}

fn check_nlice_schema(kb: &KnowledgeBase) -> Result<(), KbError> {
    for (attr, vocab) in &kb.attribute_vocabularies {
        let mut seen = std::collections::BTreeSet::new();
        for label in vocab {
            if label == NA_LABEL {
                return Err(KbError::Schema(format!(
                    "vocabulary for {attr} contains the reserved label {NA_LABEL:?}"
                )));
            }
            if label.is_empty() || label.contains(FORBIDDEN_ID_CHARS) {
                return Err(KbError::Schema(format!(
                    "vocabulary label {label:?} for {attr} is empty or contains a reserved delimiter"
                )));
            }
            if !seen.insert(label) {
                return Err(KbError::Schema(format!(
                    "vocabulary for {attr} lists {label:?} twice"
                )));
            }
        }
    }
    for cond in &kb.conditions {
        for expr in &cond.symptoms {
            let Some(profile) = &expr.nlice else { continue };
            for (attr, dist) in &profile.distributions {
                let vocab = kb.attribute_vocabularies.get(attr);
                for label in dist.keys() {
                    let known = vocab.is_some_and(|v| v.contains(label));
                    if !known {
                        return Err(KbError::Schema(format!(
                            "{}/{} uses label {label:?} not in the {attr} vocabulary",
                            cond.condition_id, expr.symptom_id
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}
