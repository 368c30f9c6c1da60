//! CSV import adapter for scraped condition/symptom tables.
//!
//! Expects two files with header rows.
//!
//! `symptoms.csv` columns:
//! `symptom_id,display_name,age_<1,age_1-4,age_5-14,age_15-29,age_30-44,
//! age_45-59,age_60-74,age_>75,gender_male,gender_female,race_white,
//! race_black,race_hispanic,race_other`
//!
//! `conditions.csv` columns: `condition_id,display_name`, the same
//! demographic columns, plus `symptoms` holding semicolon-joined
//! `symptom_id:probability` pairs.
//!
//! Files missing any required column are rejected. The result is a plain
//! binary-symptom knowledge base; run it through
//! [`validate`](super::validate) before use.

use std::collections::BTreeMap;
use std::path::Path;

use super::{
    AgeGroup, ConditionDef, Gender, KbError, KbMode, KnowledgeBase, Race, SymptomDef,
    SymptomExpression,
};

struct Columns {
    by_name: BTreeMap<String, usize>,
    file: String,
}

impl Columns {
    fn from_headers(file: &str, headers: &csv::StringRecord) -> Self {
        Columns {
            by_name: headers
                .iter()
                .enumerate()
                .map(|(i, name)| (name.trim().to_string(), i))
                .collect(),
            file: file.to_string(),
        }
    }

    fn index(&self, name: &str) -> Result<usize, KbError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| KbError::MissingColumn {
                file: self.file.clone(),
                column: name.to_string(),
            })
    }

    fn get<'r>(
        &self,
        record: &'r csv::StringRecord,
        name: &str,
        line: u64,
    ) -> Result<&'r str, KbError> {
        let idx = self.index(name)?;
        record.get(idx).ok_or_else(|| KbError::Csv {
            file: self.file.clone(),
            line,
            message: format!("row is missing a value for column {name}"),
        })
    }

    fn get_prob(&self, record: &csv::StringRecord, name: &str, line: u64) -> Result<f64, KbError> {
        let raw = self.get(record, name, line)?;
        raw.trim().parse::<f64>().map_err(|_| KbError::Csv {
            file: self.file.clone(),
            line,
            message: format!("column {name} holds {raw:?}, expected a number"),
        })
    }
}

fn age_column(group: AgeGroup) -> String {
    format!("age_{}", group.label())
}

fn demographic_odds(
    cols: &Columns,
    record: &csv::StringRecord,
    line: u64,
) -> Result<
    (
        BTreeMap<AgeGroup, f64>,
        BTreeMap<Gender, f64>,
        BTreeMap<Race, f64>,
    ),
    KbError,
> {
    let mut age = BTreeMap::new();
    for group in AgeGroup::all() {
        age.insert(group, cols.get_prob(record, &age_column(group), line)?);
    }
    let mut gender = BTreeMap::new();
    for g in Gender::ALL {
        gender.insert(
            g,
            cols.get_prob(record, &format!("gender_{}", g.label()), line)?,
        );
    }
    let mut race = BTreeMap::new();
    for r in Race::ALL {
        race.insert(
            r,
            cols.get_prob(record, &format!("race_{}", r.label()), line)?,
        );
    }
    Ok((age, gender, race))
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, KbError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| KbError::Csv {
            file: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })
}

fn check_required(cols: &Columns, required: &[&str]) -> Result<(), KbError> {
    for name in required {
        cols.index(name)?;
    }
    Ok(())
}

/// Import `conditions.csv` and `symptoms.csv` into a canonical knowledge base.
pub fn import_symcat_csv(
    conditions_path: &Path,
    symptoms_path: &Path,
) -> Result<KnowledgeBase, KbError> {
    let demographic_columns: Vec<String> = AgeGroup::all()
        .map(age_column)
        .chain(Gender::ALL.iter().map(|g| format!("gender_{}", g.label())))
        .chain(Race::ALL.iter().map(|r| format!("race_{}", r.label())))
        .collect();
    let demographic_refs: Vec<&str> = demographic_columns.iter().map(|s| s.as_str()).collect();

    let mut symptoms = Vec::new();
    {
        let mut reader = open_reader(symptoms_path)?;
        let file = symptoms_path.display().to_string();
        let headers = reader.headers().map_err(|e| KbError::Csv {
            file: file.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        let cols = Columns::from_headers(&file, headers);
        let mut required = vec!["symptom_id", "display_name"];
        required.extend(&demographic_refs);
        check_required(&cols, &required)?;
        for (row_index, record) in reader.records().enumerate() {
            let line = row_index as u64 + 2;
            let record = record.map_err(|e| KbError::Csv {
                file: file.clone(),
                line,
                message: e.to_string(),
            })?;
            let (age, gender, race) = demographic_odds(&cols, &record, line)?;
            symptoms.push(SymptomDef {
                symptom_id: cols.get(&record, "symptom_id", line)?.trim().to_string(),
                display_name: cols.get(&record, "display_name", line)?.trim().to_string(),
                age_odds: Some(age),
                race_odds: Some(race),
                gender_odds: Some(gender),
            });
        }
    }

    let mut conditions = Vec::new();
    {
        let mut reader = open_reader(conditions_path)?;
        let file = conditions_path.display().to_string();
        let headers = reader.headers().map_err(|e| KbError::Csv {
            file: file.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        let cols = Columns::from_headers(&file, headers);
        let mut required = vec!["condition_id", "display_name", "symptoms"];
        required.extend(&demographic_refs);
        check_required(&cols, &required)?;
        for (row_index, record) in reader.records().enumerate() {
            let line = row_index as u64 + 2;
            let record = record.map_err(|e| KbError::Csv {
                file: file.clone(),
                line,
                message: e.to_string(),
            })?;
            let (age, gender, race) = demographic_odds(&cols, &record, line)?;
            let raw_symptoms = cols.get(&record, "symptoms", line)?;
            let mut expressions = Vec::new();
            for token in raw_symptoms.split(';').filter(|t| !t.trim().is_empty()) {
                let (sid, prob) = token.trim().split_once(':').ok_or_else(|| KbError::Csv {
                    file: file.clone(),
                    line,
                    message: format!("symptom token {token:?} is not symptom_id:probability"),
                })?;
                let prob = prob.parse::<f64>().map_err(|_| KbError::Csv {
                    file: file.clone(),
                    line,
                    message: format!("symptom token {token:?} has a non-numeric probability"),
                })?;
                expressions.push(SymptomExpression {
                    symptom_id: sid.to_string(),
                    expression_prob: prob,
                    nlice: None,
                });
            }
            conditions.push(ConditionDef {
                condition_id: cols.get(&record, "condition_id", line)?.trim().to_string(),
                display_name: cols.get(&record, "display_name", line)?.trim().to_string(),
                age_odds: age,
                gender_odds: gender,
                race_odds: race,
                symptoms: expressions,
            });
        }
    }

    if conditions.is_empty() {
        return Err(KbError::NoConditions);
    }
    Ok(KnowledgeBase {
        mode: KbMode::Symcat,
        attribute_vocabularies: BTreeMap::new(),
        symptoms,
        conditions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const SYMPTOM_HEADER: &str = "symptom_id,display_name,age_<1,age_1-4,age_5-14,age_15-29,age_30-44,age_45-59,age_60-74,age_>75,gender_male,gender_female,race_white,race_black,race_hispanic,race_other";

    fn write_file(dir: &std::path::Path, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn imports_a_small_pair_of_tables() {
        let dir = tempfile::tempdir().unwrap();
        let symptoms = write_file(
            dir.path(),
            "symptoms.csv",
            &format!(
                "{SYMPTOM_HEADER}\n\
                 cough,Cough,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.5,0.5,0.4,0.3,0.2,0.1\n\
                 fever,Fever,0.2,0.2,0.2,0.2,0.2,0.2,0.2,0.2,0.5,0.5,0.25,0.25,0.25,0.25\n"
            ),
        );
        let conditions = write_file(
            dir.path(),
            "conditions.csv",
            &format!(
                "condition_id,display_name,{},symptoms\n\
                 flu,Flu,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.5,0.5,0.4,0.3,0.2,0.1,cough:0.7;fever:0.9\n",
                &SYMPTOM_HEADER["symptom_id,display_name,".len()..]
            ),
        );
        let kb = import_symcat_csv(&conditions, &symptoms).unwrap();
        assert_eq!(kb.symptoms.len(), 2);
        assert_eq!(kb.conditions.len(), 1);
        let flu = kb.condition("flu").unwrap();
        assert_eq!(flu.symptoms.len(), 2);
        assert_eq!(flu.expression("fever").unwrap().expression_prob, 0.9);
        assert_eq!(
            flu.age_odds[&crate::kb::AgeGroup::from_label(">75").unwrap()],
            0.8
        );
        assert!(crate::kb::validate(&kb).is_empty());
    }

    #[test]
    fn rejects_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let symptoms = write_file(
            dir.path(),
            "symptoms.csv",
            "symptom_id,display_name\ncough,Cough\n",
        );
        let conditions = write_file(dir.path(), "conditions.csv", "condition_id\nx\n");
        let err = import_symcat_csv(&conditions, &symptoms).unwrap_err();
        match err {
            KbError::MissingColumn { column, .. } => assert_eq!(column, "age_<1"),
            other => panic!("expected missing column, got {other}"),
        }
    }

    #[test]
    fn rejects_bad_probability_cell() {
        let dir = tempfile::tempdir().unwrap();
        let symptoms = write_file(
            dir.path(),
            "symptoms.csv",
            &format!("{SYMPTOM_HEADER}\ncough,Cough,oops,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.5,0.5,0.4,0.3,0.2,0.1\n"),
        );
        let conditions = write_file(
            dir.path(),
            "conditions.csv",
            &format!(
                "condition_id,display_name,{},symptoms\n",
                &SYMPTOM_HEADER["symptom_id,display_name,".len()..]
            ),
        );
        let err = import_symcat_csv(&conditions, &symptoms).unwrap_err();
        match err {
            KbError::Csv { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("oops"));
            }
            other => panic!("expected csv error, got {other}"),
        }
    }
}
