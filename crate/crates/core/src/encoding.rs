//! Model-ready numeric encoding of patient records.
//!
//! A [`FeatureSchema`] fixes column order and meaning: age (numeric), gender
//! (binary), race (categorical), then one block per symptom in ascending
//! symptom-id order. In symcat form a symptom block is a single presence bit;
//! in nlice form it is eight categorical slots: the presence slot followed by
//! the seven attribute slots, each attribute slot reserving index 0 for
//! "absent" and index 1 for the unknown sentinel, with vocabulary labels
//! starting at index 2.
//!
//! The schema fingerprint pins all of this down; datasets and models refuse
//! to mix across differing fingerprints.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generator::{PatientRecord, PresentedSymptom};
use crate::kb::{Gender, KbMode, KnowledgeBase, NliceAttribute, Race, NA_LABEL};
use crate::rng;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("nlice encoding requires an nlice knowledge base")]
    NliceEncodingUnavailable,
    #[error("record {record}: unknown symptom {symptom}")]
    UnknownSymptom { record: u64, symptom: String },
    #[error("record {record}: symptom {symptom} has unknown {attribute} label {label:?}")]
    UnknownLabel {
        record: u64,
        symptom: String,
        attribute: NliceAttribute,
        label: String,
    },
    #[error("record {record}: unknown condition {condition}")]
    UnknownCondition { record: u64, condition: String },
    #[error("record {record}: no presented symptoms")]
    EmptyRecord { record: u64 },
    #[error("schema fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("test fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("cannot split: classes with fewer than 2 records: {0}")]
    ClassTooSmall(String),
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error("dataset I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Column type, as consumed by the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Binary,
    Categorical { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

/// Fixed feature layout plus the condition-id to class-index map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub mode: KbMode,
    pub features: Vec<FeatureDescriptor>,
    /// Class index to condition id; ascending condition-id order.
    pub class_labels: Vec<String>,
    pub fingerprint: String,
}

/// Index reserved in attribute slots for a symptom that is not presented.
pub const SLOT_ABSENT: usize = 0;
/// Index reserved in attribute slots for a presented symptom with an
/// unknown attribute value.
pub const SLOT_NA: usize = 1;
/// First index used by vocabulary labels in attribute slots.
pub const SLOT_LABEL_BASE: usize = 2;

impl FeatureSchema {
    /// Build the schema for `kb`, encoding symptoms per `mode`. A symcat
    /// encoding of an nlice knowledge base simply drops the attributes; the
    /// reverse is not possible.
    pub fn build(kb: &KnowledgeBase, mode: KbMode) -> Result<FeatureSchema, EncodingError> {
        if mode == KbMode::Nlice && kb.mode != KbMode::Nlice {
            return Err(EncodingError::NliceEncodingUnavailable);
        }
        let mut features = vec![
            FeatureDescriptor {
                name: "age".into(),
                kind: FeatureKind::Numeric,
            },
            FeatureDescriptor {
                name: "gender".into(),
                kind: FeatureKind::Binary,
            },
            FeatureDescriptor {
                name: "race".into(),
                kind: FeatureKind::Categorical { count: Race::COUNT },
            },
        ];
        let mut symptom_ids: Vec<&str> =
            kb.symptoms.iter().map(|s| s.symptom_id.as_str()).collect();
        symptom_ids.sort_unstable();
        for sid in symptom_ids {
            match mode {
                KbMode::Symcat => features.push(FeatureDescriptor {
                    name: format!("sym:{sid}"),
                    kind: FeatureKind::Binary,
                }),
                KbMode::Nlice => {
                    features.push(FeatureDescriptor {
                        name: format!("sym:{sid}"),
                        kind: FeatureKind::Categorical { count: 2 },
                    });
                    for attr in NliceAttribute::ALL {
                        let vocab_len = kb.vocabulary(attr).map_or(0, <[String]>::len);
                        features.push(FeatureDescriptor {
                            name: format!("sym:{sid}:{attr}"),
                            kind: FeatureKind::Categorical {
                                count: vocab_len + SLOT_LABEL_BASE,
                            },
                        });
                    }
                }
            }
        }
        let mut class_labels: Vec<String> = kb
            .conditions
            .iter()
            .map(|c| c.condition_id.clone())
            .collect();
        class_labels.sort_unstable();
        class_labels.dedup();
        Ok(Self::from_parts(mode, features, class_labels))
    }

    /// Assemble a schema directly from its parts, computing the fingerprint.
    pub fn from_parts(
        mode: KbMode,
        features: Vec<FeatureDescriptor>,
        class_labels: Vec<String>,
    ) -> FeatureSchema {
        let mut schema = FeatureSchema {
            mode,
            features,
            class_labels,
            fingerprint: String::new(),
        };
        schema.fingerprint = schema.compute_fingerprint();
        schema
    }

    fn compute_fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            mode: KbMode,
            features: &'a [FeatureDescriptor],
            class_labels: &'a [String],
        }
        let bytes = serde_json::to_vec(&Canonical {
            mode: self.mode,
            features: &self.features,
            class_labels: &self.class_labels,
        })
        .expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_index(&self, condition_id: &str) -> Option<usize> {
        self.class_labels
            .binary_search_by(|label| label.as_str().cmp(condition_id))
            .ok()
    }

    /// Verify internal consistency of a schema read from disk.
    pub fn check_fingerprint(&self) -> Result<(), EncodingError> {
        let expected = self.compute_fingerprint();
        if expected != self.fingerprint {
            return Err(EncodingError::FingerprintMismatch {
                expected,
                found: self.fingerprint.clone(),
            });
        }
        Ok(())
    }
}

/// A feature matrix with labels and the schema that defines it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub schema: FeatureSchema,
    /// Row-major, `n_rows x schema.n_features()`.
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl EncodedDataset {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.schema.n_features();
        &self.features[i * d..(i + 1) * d]
    }

    /// Materialize a subset of rows in the given index order.
    pub fn subset(&self, indices: &[usize]) -> EncodedDataset {
        let d = self.schema.n_features();
        let mut features = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        EncodedDataset {
            schema: self.schema.clone(),
            features,
            labels,
        }
    }
}

fn attribute_slot_value(
    schema_mode_vocab: &BTreeMap<NliceAttribute, Vec<String>>,
    record: &PatientRecord,
    symptom: &PresentedSymptom,
    attr: NliceAttribute,
) -> Result<f64, EncodingError> {
    let label = symptom
        .nlice_values
        .get(&attr)
        .map(String::as_str)
        .unwrap_or(NA_LABEL);
    if label == NA_LABEL {
        return Ok(SLOT_NA as f64);
    }
    let index = schema_mode_vocab
        .get(&attr)
        .and_then(|v| v.iter().position(|l| l == label))
        .ok_or_else(|| EncodingError::UnknownLabel {
            record: record.record_id,
            symptom: symptom.symptom_id.clone(),
            attribute: attr,
            label: label.to_string(),
        })?;
    Ok((SLOT_LABEL_BASE + index) as f64)
}

/// Encode records against a schema built from the same knowledge base.
pub fn encode(
    records: &[PatientRecord],
    schema: &FeatureSchema,
    kb: &KnowledgeBase,
) -> Result<EncodedDataset, EncodingError> {
    // Column index of each symptom's first slot.
    let mut symptom_ids: Vec<&str> = kb.symptoms.iter().map(|s| s.symptom_id.as_str()).collect();
    symptom_ids.sort_unstable();
    let slots_per_symptom = match schema.mode {
        KbMode::Symcat => 1,
        KbMode::Nlice => 1 + NliceAttribute::COUNT,
    };
    let base_columns = 3;
    let column_of: BTreeMap<&str, usize> = symptom_ids
        .iter()
        .enumerate()
        .map(|(i, sid)| (*sid, base_columns + i * slots_per_symptom))
        .collect();

    let d = schema.n_features();
    let mut features = vec![0.0; records.len() * d];
    let mut labels = Vec::with_capacity(records.len());
    for (row, record) in records.iter().enumerate() {
        if record.symptoms.is_empty() {
            return Err(EncodingError::EmptyRecord {
                record: record.record_id,
            });
        }
        let class = schema.class_index(&record.condition_id).ok_or_else(|| {
            EncodingError::UnknownCondition {
                record: record.record_id,
                condition: record.condition_id.clone(),
            }
        })?;
        labels.push(class as u32);

        let out = &mut features[row * d..(row + 1) * d];
        out[0] = f64::from(record.demographics.age_years);
        out[1] = record.demographics.gender.index() as f64;
        out[2] = record.demographics.race.index() as f64;
        for symptom in &record.symptoms {
            let column = *column_of.get(symptom.symptom_id.as_str()).ok_or_else(|| {
                EncodingError::UnknownSymptom {
                    record: record.record_id,
                    symptom: symptom.symptom_id.clone(),
                }
            })?;
            out[column] = 1.0;
            if schema.mode == KbMode::Nlice {
                for (offset, attr) in NliceAttribute::ALL.into_iter().enumerate() {
                    out[column + 1 + offset] =
                        attribute_slot_value(&kb.attribute_vocabularies, record, symptom, attr)?;
                }
            }
        }
    }
    Ok(EncodedDataset {
        schema: schema.clone(),
        features,
        labels,
    })
}

/// A decoded row: demographics plus the presented symptom set.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedRecord {
    pub age_years: u32,
    pub gender: Gender,
    pub race: Race,
    pub condition_id: String,
    pub symptoms: Vec<PresentedSymptom>,
}

/// Reverse [`encode`] for one row. Exact for in-schema data.
pub fn decode(
    dataset: &EncodedDataset,
    row: usize,
    kb: &KnowledgeBase,
) -> Result<DecodedRecord, EncodingError> {
    let schema = &dataset.schema;
    let values = dataset.row(row);
    let mut symptom_ids: Vec<&str> = kb.symptoms.iter().map(|s| s.symptom_id.as_str()).collect();
    symptom_ids.sort_unstable();
    let slots_per_symptom = match schema.mode {
        KbMode::Symcat => 1,
        KbMode::Nlice => 1 + NliceAttribute::COUNT,
    };
    let mut symptoms = Vec::new();
    for (i, sid) in symptom_ids.iter().enumerate() {
        let column = 3 + i * slots_per_symptom;
        if values[column] != 1.0 {
            continue;
        }
        let mut presented = PresentedSymptom::plain(sid);
        if schema.mode == KbMode::Nlice {
            for (offset, attr) in NliceAttribute::ALL.into_iter().enumerate() {
                let code = values[column + 1 + offset] as usize;
                let label = match code {
                    SLOT_ABSENT | SLOT_NA => NA_LABEL.to_string(),
                    _ => kb
                        .vocabulary(attr)
                        .and_then(|v| v.get(code - SLOT_LABEL_BASE))
                        .cloned()
                        .ok_or_else(|| {
                            EncodingError::Format(format!(
                                "row {row}: attribute code {code} out of range for {attr}"
                            ))
                        })?,
                };
                presented.nlice_values.insert(attr, label);
            }
        }
        symptoms.push(presented);
    }
    let class = dataset.labels[row] as usize;
    Ok(DecodedRecord {
        age_years: values[0] as u32,
        gender: if values[1] == 0.0 {
            Gender::Male
        } else {
            Gender::Female
        },
        race: Race::ALL[values[2] as usize],
        condition_id: schema.class_labels[class].clone(),
        symptoms,
    })
}

/// Deterministic stratified train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub test_fraction: f64,
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl Split {
    pub fn save(&self, path: &Path) -> Result<(), EncodingError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Split, EncodingError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Indices must be disjoint and cover `0..n_rows`.
    pub fn check(&self, n_rows: usize) -> Result<(), EncodingError> {
        let mut seen = vec![false; n_rows];
        for &i in self.train_indices.iter().chain(&self.test_indices) {
            if i >= n_rows || seen[i] {
                return Err(EncodingError::Format(format!(
                    "split index {i} is out of range or duplicated"
                )));
            }
            seen[i] = true;
        }
        if !seen.iter().all(|s| *s) {
            return Err(EncodingError::Format(
                "split does not cover every row".into(),
            ));
        }
        Ok(())
    }
}

/// Split rows so each class lands in the test set at `test_fraction`, within
/// one record. Classes are shuffled independently on streams derived from
/// `(seed, class)`, so the outcome is deterministic.
pub fn stratified_split(
    dataset: &EncodedDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<Split, EncodingError> {
    if !test_fraction.is_finite() || !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(EncodingError::BadFraction(test_fraction));
    }
    let mut per_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &label) in dataset.labels.iter().enumerate() {
        per_class.entry(label).or_default().push(i);
    }
    let too_small: Vec<&str> = per_class
        .iter()
        .filter(|(_, rows)| rows.len() < 2)
        .map(|(class, _)| dataset.schema.class_labels[*class as usize].as_str())
        .collect();
    if !too_small.is_empty() {
        return Err(EncodingError::ClassTooSmall(too_small.join(", ")));
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut rows) in per_class {
        let mut rng = rng::stream(seed, u64::from(class));
        shuffle(&mut rows, &mut rng);
        let n = rows.len();
        let ideal = (n as f64 * test_fraction).round() as usize;
        let take = ideal.clamp(1, n - 1);
        test.extend_from_slice(&rows[..take]);
        train.extend_from_slice(&rows[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        test_fraction,
        seed,
        train_indices: train,
        test_indices: test,
    })
}

fn shuffle(rows: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..rows.len()).rev() {
        let j = rng.gen_range(0..=i);
        rows.swap(i, j);
    }
}

const BINARY_MAGIC: &[u8; 4] = b"SDXE";
const BINARY_VERSION: u32 = 1;

/// Sidecar schema path for a dataset file: the same name with
/// `.schema.json` appended.
pub fn schema_sidecar_path(data_path: &Path) -> PathBuf {
    let mut name = data_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".schema.json");
    data_path.with_file_name(name)
}

fn write_schema_sidecar(schema: &FeatureSchema, data_path: &Path) -> Result<(), EncodingError> {
    let mut text = serde_json::to_string_pretty(schema)?;
    text.push('\n');
    std::fs::write(schema_sidecar_path(data_path), text)?;
    Ok(())
}

fn read_schema_sidecar(data_path: &Path) -> Result<FeatureSchema, EncodingError> {
    let text = std::fs::read_to_string(schema_sidecar_path(data_path))?;
    let schema: FeatureSchema = serde_json::from_str(&text)?;
    schema.check_fingerprint()?;
    Ok(schema)
}

/// Persist as a compact binary container plus the schema sidecar.
pub fn save_binary(dataset: &EncodedDataset, path: &Path) -> Result<(), EncodingError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(BINARY_MAGIC)?;
    file.write_all(&BINARY_VERSION.to_le_bytes())?;
    let fp = dataset.schema.fingerprint.as_bytes();
    file.write_all(&(fp.len() as u32).to_le_bytes())?;
    file.write_all(fp)?;
    file.write_all(&(dataset.n_rows() as u64).to_le_bytes())?;
    file.write_all(&(dataset.schema.n_features() as u64).to_le_bytes())?;
    for label in &dataset.labels {
        file.write_all(&label.to_le_bytes())?;
    }
    for value in &dataset.features {
        file.write_all(&value.to_le_bytes())?;
    }
    file.flush()?;
    write_schema_sidecar(&dataset.schema, path)
}

/// Load a binary container and its schema sidecar.
pub fn load_binary(path: &Path) -> Result<EncodedDataset, EncodingError> {
    let schema = read_schema_sidecar(path)?;
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(EncodingError::Format("bad magic bytes".into()));
    }
    let mut u32_buf = [0u8; 4];
    file.read_exact(&mut u32_buf)?;
    let version = u32::from_le_bytes(u32_buf);
    if version != BINARY_VERSION {
        return Err(EncodingError::Format(format!(
            "unsupported container version {version}"
        )));
    }
    file.read_exact(&mut u32_buf)?;
    let fp_len = u32::from_le_bytes(u32_buf) as usize;
    let mut fp = vec![0u8; fp_len];
    file.read_exact(&mut fp)?;
    let embedded =
        String::from_utf8(fp).map_err(|_| EncodingError::Format("bad fingerprint".into()))?;
    if embedded != schema.fingerprint {
        return Err(EncodingError::FingerprintMismatch {
            expected: embedded,
            found: schema.fingerprint.clone(),
        });
    }
    let mut u64_buf = [0u8; 8];
    file.read_exact(&mut u64_buf)?;
    let n_rows = u64::from_le_bytes(u64_buf) as usize;
    file.read_exact(&mut u64_buf)?;
    let n_cols = u64::from_le_bytes(u64_buf) as usize;
    if n_cols != schema.n_features() {
        return Err(EncodingError::Format(format!(
            "container has {n_cols} columns, schema expects {}",
            schema.n_features()
        )));
    }
    let mut labels = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        file.read_exact(&mut u32_buf)?;
        labels.push(u32::from_le_bytes(u32_buf));
    }
    let mut features = Vec::with_capacity(n_rows * n_cols);
    for _ in 0..n_rows * n_cols {
        file.read_exact(&mut u64_buf)?;
        features.push(f64::from_le_bytes(u64_buf));
    }
    Ok(EncodedDataset {
        schema,
        features,
        labels,
    })
}

/// Persist as CSV (feature columns plus a trailing class-index column) and
/// the schema sidecar.
pub fn save_csv(dataset: &EncodedDataset, path: &Path) -> Result<(), EncodingError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<&str> = dataset
        .schema
        .features
        .iter()
        .map(|f| f.name.as_str())
        .chain(std::iter::once("label"))
        .collect();
    writeln!(file, "{}", header.join(","))?;
    for i in 0..dataset.n_rows() {
        let mut fields: Vec<String> = dataset.row(i).iter().map(|v| format!("{v}")).collect();
        fields.push(dataset.labels[i].to_string());
        writeln!(file, "{}", fields.join(","))?;
    }
    file.flush()?;
    write_schema_sidecar(&dataset.schema, path)
}

/// Load a CSV dataset and its schema sidecar.
pub fn load_csv(path: &Path) -> Result<EncodedDataset, EncodingError> {
    let schema = read_schema_sidecar(path)?;
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| EncodingError::Format("empty dataset file".into()))?;
    let expected_columns = schema.n_features() + 1;
    if header.split(',').count() != expected_columns {
        return Err(EncodingError::Format(format!(
            "header has {} columns, schema expects {expected_columns}",
            header.split(',').count()
        )));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_columns {
            return Err(EncodingError::Format(format!(
                "row {} has {} columns, expected {expected_columns}",
                i + 2,
                fields.len()
            )));
        }
        for value in &fields[..fields.len() - 1] {
            features.push(value.parse::<f64>().map_err(|_| {
                EncodingError::Format(format!("row {}: bad value {value:?}", i + 2))
            })?);
        }
        labels.push(
            fields[fields.len() - 1]
                .parse::<u32>()
                .map_err(|_| EncodingError::Format(format!("row {}: bad label", i + 2)))?,
        );
    }
    Ok(EncodedDataset {
        schema,
        features,
        labels,
    })
}
