//! Deterministic sampling of labeled synthetic patient records.
//!
//! Each record draws demographics from configurable independent marginals,
//! picks a condition by normalizing the product of its demographic odds over
//! all conditions (equal condition priors cancel out), then presents each of
//! the condition's symptoms independently at its expression probability. A
//! minimum symptom count is enforced by rejection sampling with a
//! deterministic forced-top fallback once the retry budget is exhausted.
//!
//! Record `i` consumes its own random stream derived from `(seed, i)`, so a
//! dataset is a pure function of the knowledge base and the configuration,
//! independent of worker-thread count.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{
    AgeGroup, ConditionDef, Gender, KbMode, KnowledgeBase, NliceAttribute, Race, SymptomExpression,
    NA_LABEL,
};
use crate::rng;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("condition {condition} has no {dimension} odds entry for {label}")]
    MissingOdds {
        condition: String,
        dimension: &'static str,
        label: String,
    },
    #[error("no condition has a positive score for demographics cell (age {age_group}, {gender}, {race})")]
    NoPositiveScore {
        age_group: String,
        gender: String,
        race: String,
    },
    #[error("condition {condition} has only {available} symptoms with positive expression probability, fewer than the minimum of {needed}")]
    TooFewSymptoms {
        condition: String,
        available: usize,
        needed: usize,
    },
    #[error("invalid demographic marginals: {0}")]
    InvalidMarginals(String),
    #[error("record CSV error at line {line}: {message}")]
    RecordCsv { line: u64, message: String },
    #[error("record I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Sampled patient demographics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age_years: u32,
    pub age_group: AgeGroup,
    pub gender: Gender,
    pub race: Race,
}

impl Demographics {
    pub fn new(age_years: u32, gender: Gender, race: Race) -> Self {
        Demographics {
            age_years,
            age_group: AgeGroup::from_age(age_years),
            gender,
            race,
        }
    }
}

/// One presented symptom with its attribute values. Every attribute key is
/// always present; unknown values hold [`NA_LABEL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresentedSymptom {
    pub symptom_id: String,
    pub nlice_values: BTreeMap<NliceAttribute, String>,
}

impl PresentedSymptom {
    pub fn plain(symptom_id: &str) -> Self {
        PresentedSymptom {
            symptom_id: symptom_id.to_string(),
            nlice_values: all_na(),
        }
    }
}

fn all_na() -> BTreeMap<NliceAttribute, String> {
    NliceAttribute::ALL
        .into_iter()
        .map(|a| (a, NA_LABEL.to_string()))
        .collect()
}

/// A labeled synthetic patient record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub record_id: u64,
    pub demographics: Demographics,
    pub condition_id: String,
    pub symptoms: Vec<PresentedSymptom>,
}

/// Independent weights over age group, gender and race. Weights need not be
/// normalized; missing keys mean weight zero. Defaults to uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicMarginals {
    #[serde(default = "uniform_age")]
    pub age_groups: BTreeMap<AgeGroup, f64>,
    #[serde(default = "uniform_gender")]
    pub gender: BTreeMap<Gender, f64>,
    #[serde(default = "uniform_race")]
    pub race: BTreeMap<Race, f64>,
}

fn uniform_age() -> BTreeMap<AgeGroup, f64> {
    AgeGroup::all().map(|g| (g, 1.0)).collect()
}

fn uniform_gender() -> BTreeMap<Gender, f64> {
    Gender::ALL.into_iter().map(|g| (g, 1.0)).collect()
}

fn uniform_race() -> BTreeMap<Race, f64> {
    Race::ALL.into_iter().map(|r| (r, 1.0)).collect()
}

impl Default for DemographicMarginals {
    fn default() -> Self {
        DemographicMarginals {
            age_groups: uniform_age(),
            gender: uniform_gender(),
            race: uniform_race(),
        }
    }
}

impl DemographicMarginals {
    fn check_weights<'a, K: std::fmt::Display>(
        name: &str,
        weights: impl Iterator<Item = (&'a K, &'a f64)>,
    ) -> Result<(), GenerationError>
    where
        K: 'a,
    {
        let mut sum = 0.0;
        for (key, w) in weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(GenerationError::InvalidMarginals(format!(
                    "{name} weight for {key} is {w}"
                )));
            }
            sum += w;
        }
        if sum <= 0.0 {
            return Err(GenerationError::InvalidMarginals(format!(
                "{name} weights sum to {sum}"
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        Self::check_weights("age group", self.age_groups.iter())?;
        Self::check_weights("gender", self.gender.iter())?;
        Self::check_weights("race", self.race.iter())?;
        Ok(())
    }

    fn weight_age(&self, g: AgeGroup) -> f64 {
        self.age_groups.get(&g).copied().unwrap_or(0.0)
    }

    fn weight_gender(&self, g: Gender) -> f64 {
        self.gender.get(&g).copied().unwrap_or(0.0)
    }

    fn weight_race(&self, r: Race) -> f64 {
        self.race.get(&r).copied().unwrap_or(0.0)
    }
}

/// Settings for one generation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub num_records: u64,
    #[serde(default = "default_min_symptoms")]
    pub min_symptoms: usize,
    pub seed: u64,
    #[serde(default)]
    pub demographic_marginals: DemographicMarginals,
    #[serde(default = "default_max_retries")]
    pub max_rejection_retries: u32,
}

fn default_min_symptoms() -> usize {
    1
}

fn default_max_retries() -> u32 {
    100
}

impl GenerationConfig {
    pub fn new(num_records: u64, seed: u64) -> Self {
        GenerationConfig {
            num_records,
            min_symptoms: default_min_symptoms(),
            seed,
            demographic_marginals: DemographicMarginals::default(),
            max_rejection_retries: default_max_retries(),
        }
    }
}

fn odds_for(cond: &ConditionDef, demo: &Demographics) -> Result<(f64, f64, f64), GenerationError> {
    let age = cond.age_odds.get(&demo.age_group).copied().ok_or_else(|| {
        GenerationError::MissingOdds {
            condition: cond.condition_id.clone(),
            dimension: "age",
            label: demo.age_group.label().to_string(),
        }
    })?;
    let gender = cond.gender_odds.get(&demo.gender).copied().ok_or_else(|| {
        GenerationError::MissingOdds {
            condition: cond.condition_id.clone(),
            dimension: "gender",
            label: demo.gender.label().to_string(),
        }
    })?;
    let race =
        cond.race_odds
            .get(&demo.race)
            .copied()
            .ok_or_else(|| GenerationError::MissingOdds {
                condition: cond.condition_id.clone(),
                dimension: "race",
                label: demo.race.label().to_string(),
            })?;
    Ok((age, gender, race))
}

/// Unnormalized contraction score for a condition given demographics: the
/// product of its age, gender and race odds.
pub fn condition_score(cond: &ConditionDef, demo: &Demographics) -> Result<f64, GenerationError> {
    let (age, gender, race) = odds_for(cond, demo)?;
    Ok(age * gender * race)
}

/// Draw a condition with probability proportional to its score.
pub fn sample_condition<'kb>(
    kb: &'kb KnowledgeBase,
    demo: &Demographics,
    rng: &mut ChaCha8Rng,
) -> Result<&'kb ConditionDef, GenerationError> {
    let mut scores = Vec::with_capacity(kb.conditions.len());
    let mut total = 0.0;
    for cond in &kb.conditions {
        let score = condition_score(cond, demo)?;
        total += score;
        scores.push(score);
    }
    if total <= 0.0 {
        return Err(GenerationError::NoPositiveScore {
            age_group: demo.age_group.label().to_string(),
            gender: demo.gender.label().to_string(),
            race: demo.race.label().to_string(),
        });
    }
    let mut u = rng.gen::<f64>() * total;
    for (cond, score) in kb.conditions.iter().zip(&scores) {
        u -= score;
        if u < 0.0 {
            return Ok(cond);
        }
    }
    // Floating-point slack lands on the last positive-score condition.
    let last = scores.iter().rposition(|s| *s > 0.0).expect("total > 0");
    Ok(&kb.conditions[last])
}

/// Draw the presented symptom set for a condition. Each symptom enters
/// independently at its expression probability; draws with fewer than
/// `min_symptoms` presented are rejected and redrawn. After `max_retries`
/// rejections the top `min_symptoms` symptoms by expression probability are
/// forced present and the rest get one more independent draw. The result is
/// sorted by symptom id.
pub fn sample_symptoms(
    cond: &ConditionDef,
    min_symptoms: usize,
    rng: &mut ChaCha8Rng,
    max_retries: u32,
) -> Result<Vec<String>, GenerationError> {
    let available = cond
        .symptoms
        .iter()
        .filter(|e| e.expression_prob > 0.0)
        .count();
    if available < min_symptoms {
        return Err(GenerationError::TooFewSymptoms {
            condition: cond.condition_id.clone(),
            available,
            needed: min_symptoms,
        });
    }

    for _ in 0..=max_retries {
        let mut presented: Vec<&str> = Vec::new();
        for expr in &cond.symptoms {
            if rng.gen::<f64>() < expr.expression_prob {
                presented.push(&expr.symptom_id);
            }
        }
        if presented.len() >= min_symptoms {
            return Ok(finish_symptom_list(presented));
        }
    }

    // Fallback: force the strongest symptoms, draw the rest once.
    let mut ranked: Vec<&SymptomExpression> = cond.symptoms.iter().collect();
    ranked.sort_by(|a, b| {
        b.expression_prob
            .partial_cmp(&a.expression_prob)
            .expect("expression probabilities are finite")
            .then_with(|| a.symptom_id.cmp(&b.symptom_id))
    });
    let forced: Vec<&str> = ranked[..min_symptoms]
        .iter()
        .map(|e| e.symptom_id.as_str())
        .collect();
    let mut presented = forced.clone();
    for expr in &cond.symptoms {
        if forced.contains(&expr.symptom_id.as_str()) {
            continue;
        }
        if rng.gen::<f64>() < expr.expression_prob {
            presented.push(&expr.symptom_id);
        }
    }
    Ok(finish_symptom_list(presented))
}

fn finish_symptom_list(mut presented: Vec<&str>) -> Vec<String> {
    presented.sort_unstable();
    presented.dedup();
    presented.into_iter().map(str::to_string).collect()
}

/// Draw one attribute label per distribution in the expression's profile.
/// Attributes with no distribution yield [`NA_LABEL`].
pub fn sample_nlice(
    expr: &SymptomExpression,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<NliceAttribute, String> {
    let mut values = all_na();
    let Some(profile) = &expr.nlice else {
        return values;
    };
    for attr in NliceAttribute::ALL {
        let Some(dist) = profile.distribution(attr) else {
            continue;
        };
        if dist.is_empty() {
            continue;
        }
        let total: f64 = dist.values().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut chosen = None;
        for (label, p) in dist {
            u -= p;
            if u < 0.0 {
                chosen = Some(label.clone());
                break;
            }
        }
        let label = chosen.unwrap_or_else(|| {
            dist.iter()
                .rev()
                .find(|(_, p)| **p > 0.0)
                .map(|(l, _)| l.clone())
                .expect("distribution has positive mass")
        });
        values.insert(attr, label);
    }
    values
}

fn sample_from_weights<K: Copy, I: Iterator<Item = (K, f64)>>(
    entries: I,
    rng: &mut ChaCha8Rng,
) -> K {
    let entries: Vec<(K, f64)> = entries.collect();
    let total: f64 = entries.iter().map(|(_, w)| w).sum();
    let mut u = rng.gen::<f64>() * total;
    for (key, w) in &entries {
        u -= w;
        if u < 0.0 {
            return *key;
        }
    }
    entries
        .iter()
        .rev()
        .find(|(_, w)| *w > 0.0)
        .map(|(k, _)| *k)
        .expect("weights validated to have positive total")
}

/// Draw demographics from the marginals: age group, gender and race
/// independently, then a uniform age within the drawn group's year range.
pub fn sample_demographics(marginals: &DemographicMarginals, rng: &mut ChaCha8Rng) -> Demographics {
    let age_group = sample_from_weights(AgeGroup::all().map(|g| (g, marginals.weight_age(g))), rng);
    let gender = sample_from_weights(
        Gender::ALL
            .into_iter()
            .map(|g| (g, marginals.weight_gender(g))),
        rng,
    );
    let race = sample_from_weights(
        Race::ALL.into_iter().map(|r| (r, marginals.weight_race(r))),
        rng,
    );
    let (lo, hi) = age_group.year_range();
    let age_years = rng.gen_range(lo..=hi);
    Demographics {
        age_years,
        age_group,
        gender,
        race,
    }
}

fn generate_record(
    kb: &KnowledgeBase,
    config: &GenerationConfig,
    index: u64,
) -> Result<PatientRecord, GenerationError> {
    let mut rng = rng::stream(config.seed, index);
    let demographics = sample_demographics(&config.demographic_marginals, &mut rng);
    let condition = sample_condition(kb, &demographics, &mut rng)?;
    let symptom_ids = sample_symptoms(
        condition,
        config.min_symptoms,
        &mut rng,
        config.max_rejection_retries,
    )?;
    let symptoms = symptom_ids
        .iter()
        .map(|sid| {
            let expr = condition
                .expression(sid)
                .expect("sampled symptom belongs to the condition");
            let nlice_values = match kb.mode {
                KbMode::Symcat => all_na(),
                KbMode::Nlice => sample_nlice(expr, &mut rng),
            };
            PresentedSymptom {
                symptom_id: sid.clone(),
                nlice_values,
            }
        })
        .collect();
    Ok(PatientRecord {
        record_id: index,
        demographics,
        condition_id: condition.condition_id.clone(),
        symptoms,
    })
}

/// A condition is reachable when some demographics cell with positive
/// marginal weight gives it a positive score.
fn is_reachable(cond: &ConditionDef, marginals: &DemographicMarginals) -> bool {
    AgeGroup::all().any(|a| {
        marginals.weight_age(a) > 0.0
            && cond.age_odds.get(&a).copied().unwrap_or(0.0) > 0.0
            && Gender::ALL.iter().any(|g| {
                marginals.weight_gender(*g) > 0.0
                    && cond.gender_odds.get(g).copied().unwrap_or(0.0) > 0.0
            })
            && Race::ALL.iter().any(|r| {
                marginals.weight_race(*r) > 0.0
                    && cond.race_odds.get(r).copied().unwrap_or(0.0) > 0.0
            })
    })
}

/// Generate `config.num_records` labeled records. The output is a pure
/// function of `(kb, config)`; worker parallelism never changes it.
pub fn generate_dataset(
    kb: &KnowledgeBase,
    config: &GenerationConfig,
) -> Result<Vec<PatientRecord>, GenerationError> {
    config.demographic_marginals.validate()?;
    for cond in &kb.conditions {
        if !is_reachable(cond, &config.demographic_marginals) {
            continue;
        }
        let available = cond
            .symptoms
            .iter()
            .filter(|e| e.expression_prob > 0.0)
            .count();
        if available < config.min_symptoms {
            return Err(GenerationError::TooFewSymptoms {
                condition: cond.condition_id.clone(),
                available,
                needed: config.min_symptoms,
            });
        }
    }

    let results: Vec<Result<PatientRecord, GenerationError>> = (0..config.num_records)
        .into_par_iter()
        .map(|i| generate_record(kb, config, i))
        .collect();
    // Surface the first error in record order so failures are reproducible.
    let mut records = Vec::with_capacity(results.len());
    for result in results {
        records.push(result?);
    }
    Ok(records)
}

/// CSV column order for record files.
pub const RECORD_CSV_HEADER: &str = "record_id,age,age_group,gender,race,condition,symptoms";

fn symptom_token(symptom: &PresentedSymptom, mode: KbMode) -> String {
    match mode {
        KbMode::Symcat => symptom.symptom_id.clone(),
        KbMode::Nlice => {
            let mut token = symptom.symptom_id.clone();
            for attr in NliceAttribute::ALL {
                token.push(':');
                token.push_str(
                    symptom
                        .nlice_values
                        .get(&attr)
                        .map(String::as_str)
                        .unwrap_or(NA_LABEL),
                );
            }
            token
        }
    }
}

fn parse_symptom_token(
    token: &str,
    mode: KbMode,
    line: u64,
) -> Result<PresentedSymptom, GenerationError> {
    match mode {
        KbMode::Symcat => {
            if token.contains(':') {
                return Err(GenerationError::RecordCsv {
                    line,
                    message: format!("unexpected attribute fields in symcat token {token:?}"),
                });
            }
            Ok(PresentedSymptom::plain(token))
        }
        KbMode::Nlice => {
            let parts: Vec<&str> = token.split(':').collect();
            if parts.len() != 1 + NliceAttribute::COUNT {
                return Err(GenerationError::RecordCsv {
                    line,
                    message: format!(
                        "token {token:?} has {} fields, expected {}",
                        parts.len(),
                        1 + NliceAttribute::COUNT
                    ),
                });
            }
            let mut nlice_values = BTreeMap::new();
            for (attr, value) in NliceAttribute::ALL.into_iter().zip(&parts[1..]) {
                nlice_values.insert(attr, value.to_string());
            }
            Ok(PresentedSymptom {
                symptom_id: parts[0].to_string(),
                nlice_values,
            })
        }
    }
}

/// Write records as CSV. Symptom tokens are semicolon-joined; in nlice mode
/// each token carries the symptom id plus its seven attribute values in
/// fixed order, `NA` for unknown slots.
pub fn write_records_csv<W: Write>(
    records: &[PatientRecord],
    mode: KbMode,
    writer: &mut W,
) -> Result<(), GenerationError> {
    writeln!(writer, "{RECORD_CSV_HEADER}")?;
    for record in records {
        let tokens: Vec<String> = record
            .symptoms
            .iter()
            .map(|s| symptom_token(s, mode))
            .collect();
        writeln!(
            writer,
            "{},{},{},{},{},{},{}",
            record.record_id,
            record.demographics.age_years,
            record.demographics.age_group.label(),
            record.demographics.gender.label(),
            record.demographics.race.label(),
            record.condition_id,
            tokens.join(";")
        )?;
    }
    Ok(())
}

/// Read records written by [`write_records_csv`].
pub fn read_records_csv<R: BufRead>(
    reader: R,
    mode: KbMode,
) -> Result<Vec<PatientRecord>, GenerationError> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| GenerationError::RecordCsv {
            line: 1,
            message: "empty file".into(),
        })?;
    if header.trim_end() != RECORD_CSV_HEADER {
        return Err(GenerationError::RecordCsv {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i as u64 + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(7, ',').collect();
        if fields.len() != 7 {
            return Err(GenerationError::RecordCsv {
                line: line_no,
                message: format!("expected 7 columns, found {}", fields.len()),
            });
        }
        let bad = |message: String| GenerationError::RecordCsv {
            line: line_no,
            message,
        };
        let record_id: u64 = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad record_id {:?}", fields[0])))?;
        let age_years: u32 = fields[1]
            .parse()
            .map_err(|_| bad(format!("bad age {:?}", fields[1])))?;
        let age_group = AgeGroup::from_label(fields[2])
            .ok_or_else(|| bad(format!("unknown age group {:?}", fields[2])))?;
        if age_group != AgeGroup::from_age(age_years) {
            return Err(bad(format!(
                "age {age_years} does not fall in group {}",
                fields[2]
            )));
        }
        let gender = Gender::from_label(fields[3])
            .ok_or_else(|| bad(format!("unknown gender {:?}", fields[3])))?;
        let race = Race::from_label(fields[4])
            .ok_or_else(|| bad(format!("unknown race {:?}", fields[4])))?;
        let symptoms = fields[6]
            .split(';')
            .filter(|t| !t.is_empty())
            .map(|t| parse_symptom_token(t, mode, line_no))
            .collect::<Result<Vec<_>, _>>()?;
        records.push(PatientRecord {
            record_id,
            demographics: Demographics {
                age_years,
                age_group,
                gender,
                race,
            },
            condition_id: fields[5].to_string(),
            symptoms,
        });
    }
    Ok(records)
}
