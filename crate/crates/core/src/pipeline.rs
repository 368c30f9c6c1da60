//! End-to-end pipeline: validate, generate, transform, encode, train,
//! evaluate, and write a checksum manifest.
//!
//! One global seed drives everything; each stage derives its own seed from
//! the global seed and a stage tag, so a run is a pure function of
//! `(knowledge base, config)` and the manifest checksums reproduce exactly.
//! The manifest deliberately carries no timestamps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoding::{
    encode, save_binary, schema_sidecar_path, stratified_split, EncodingError, FeatureSchema,
};
use crate::evaluation::{full_evaluation, AdmissionStat, EvalError, FullEvaluation};
use crate::generator::{
    generate_dataset, write_records_csv, DemographicMarginals, GenerationConfig, GenerationError,
};
use crate::kb::{parse_knowledge_base, KbError, KbMode};
use crate::models::{
    HybridNaiveBayes, ModelError, ModelFile, NbParams, RandomForest, RfParams, TrainedModel,
};
use crate::rng;
use crate::transforms::{
    inject, perturb, InjectionMode, InjectionSpec, PerturbationSpec, TransformError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[{stage}] {source}")]
    Kb {
        stage: &'static str,
        #[source]
        source: KbError,
    },
    #[error("[{stage}] knowledge base failed validation:\n{findings}")]
    KbInvalid {
        stage: &'static str,
        findings: String,
    },
    #[error("[{stage}] {source}")]
    Generation {
        stage: &'static str,
        #[source]
        source: GenerationError,
    },
    #[error("[{stage}] {source}")]
    Transform {
        stage: &'static str,
        #[source]
        source: TransformError,
    },
    #[error("[{stage}] {source}")]
    Encoding {
        stage: &'static str,
        #[source]
        source: EncodingError,
    },
    #[error("[{stage}] {source}")]
    Model {
        stage: &'static str,
        #[source]
        source: ModelError,
    },
    #[error("[{stage}] {source}")]
    Eval {
        stage: &'static str,
        #[source]
        source: EvalError,
    },
    #[error("[{stage}] {message}")]
    Io {
        stage: &'static str,
        message: String,
    },
    #[error("invalid run config: {0}")]
    Config(String),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Kb { stage, .. }
            | PipelineError::KbInvalid { stage, .. }
            | PipelineError::Generation { stage, .. }
            | PipelineError::Transform { stage, .. }
            | PipelineError::Encoding { stage, .. }
            | PipelineError::Model { stage, .. }
            | PipelineError::Eval { stage, .. }
            | PipelineError::Io { stage, .. } => stage,
            PipelineError::Config(_) => "config",
        }
    }

    /// Input problems (bad config, bad knowledge base, infeasible settings)
    /// as opposed to runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_)
                | PipelineError::Kb { .. }
                | PipelineError::KbInvalid { .. }
                | PipelineError::Generation {
                    source: GenerationError::TooFewSymptoms { .. }
                        | GenerationError::InvalidMarginals(_),
                    ..
                }
        )
    }
}

/// Generation settings within a run; the stage seed comes from the global
/// seed, not from here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub num_records: u64,
    #[serde(default = "default_min_symptoms")]
    pub min_symptoms: usize,
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

/// How the evaluation dataset deviates from the training distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum ScenarioSpec {
    /// Expression probabilities scaled by `1 +- delta` with random signs.
    Perturb { delta: f64 },
    /// Similar foreign symptoms appended to each condition.
    Inject {
        mode: InjectionMode,
        #[serde(default = "default_max_injected")]
        max_injected: usize,
    },
    /// Records generated with a different minimum symptom count.
    MinSymptoms { min_symptoms: usize },
}

fn default_max_injected() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSettings {
    pub test_fraction: f64,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { test_fraction: 0.2 }
    }
}

/// Model choice plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelChoice {
    Nb {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_var_floor")]
        var_floor: f64,
    },
    Rf {
        #[serde(default = "default_n_trees")]
        n_trees: usize,
        #[serde(default)]
        max_depth: Option<usize>,
        #[serde(default = "default_min_samples_leaf")]
        min_samples_leaf: usize,
        #[serde(default)]
        features_per_split: Option<usize>,
        #[serde(default = "default_bootstrap")]
        bootstrap: bool,
    },
}

fn default_alpha() -> f64 {
    1.0
}

fn default_var_floor() -> f64 {
    1e-9
}

fn default_n_trees() -> usize {
    100
}

fn default_min_samples_leaf() -> usize {
    1
}

fn default_bootstrap() -> bool {
    true
}

/// Full configuration of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kb: PathBuf,
    pub mode: KbMode,
    pub generation: GenerationSettings,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    /// Rows generated for scenario evaluation; defaults to a quarter of the
    /// training rows. Ignored without a scenario (the held-out split is
    /// evaluated instead).
    #[serde(default)]
    pub eval_records: Option<u64>,
    #[serde(default)]
    pub split: SplitSettings,
    /// Feature encoding; defaults to the knowledge-base mode.
    #[serde(default)]
    pub encoding: Option<KbMode>,
    pub model: ModelChoice,
    #[serde(default)]
    pub admission: AdmissionStat,
    /// May be left empty in the file and supplied at run time.
    #[serde(default)]
    pub out_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Load a config file. A relative `kb` path resolves against the config
    /// file's directory, so runs do not depend on the working directory.
    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if config.kb.is_relative() {
            if let Some(parent) = path.parent() {
                config.kb = parent.join(&config.kb);
            }
        }
        Ok(config)
    }

    /// Hash of the effective configuration (canonical JSON).
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    pub path: String,
    pub sha256: String,
}

/// Run record written next to the artifacts. Checksums are a pure function
/// of the inputs and the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub status: String,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            stage: "manifest",
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Io {
            stage: "manifest",
            message: e.to_string(),
        })
    }

    fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| PipelineError::Io {
            stage: "manifest",
            message: e.to_string(),
        })
    }
}

fn io_err(stage: &'static str) -> impl Fn(std::io::Error) -> PipelineError {
    move |e| PipelineError::Io {
        stage,
        message: e.to_string(),
    }
}

fn file_sha256(path: &Path, stage: &'static str) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(io_err(stage))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct ArtifactLog {
    out_dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactLog {
    fn record(
        &mut self,
        name: &str,
        path: &Path,
        stage: &'static str,
    ) -> Result<(), PipelineError> {
        self.entries.push(ArtifactEntry {
            name: name.to_string(),
            path: path
                .strip_prefix(&self.out_dir)
                .unwrap_or(path)
                .display()
                .to_string(),
            sha256: file_sha256(path, stage)?,
        });
        Ok(())
    }
}

const STAGE_TAGS: [&str; 5] = [
    "generate-train",
    "generate-eval",
    "transform",
    "split",
    "model",
];

/// Artifacts and summary returned by a successful run.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub manifest: Manifest,
    pub evaluation: FullEvaluation,
}

/// Run the full pipeline, writing artifacts and `manifest.json` under
/// `config.out_dir`. On a stage failure the manifest is still written with
/// the artifacts produced so far and a `failed:<stage>` status.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome, PipelineError> {
    match config.threads {
        None => run_inner(config),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
            pool.install(|| run_inner(config))
        }
    }
}

fn run_inner(config: &RunConfig) -> Result<PipelineOutcome, PipelineError> {
    if config.out_dir.as_os_str().is_empty() {
        return Err(PipelineError::Config("no output directory set".into()));
    }
    std::fs::create_dir_all(&config.out_dir).map_err(io_err("setup"))?;
    let stage_seeds: BTreeMap<String, u64> = STAGE_TAGS
        .iter()
        .map(|tag| (tag.to_string(), rng::derive_seed(config.seed, tag)))
        .collect();
    let mut log = ArtifactLog {
        out_dir: config.out_dir.clone(),
        entries: Vec::new(),
    };
    let mut manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config.sha256(),
        seed: config.seed,
        stage_seeds: stage_seeds.clone(),
        status: "incomplete".into(),
        artifacts: Vec::new(),
    };
    let manifest_path = config.out_dir.join("manifest.json");

    match run_stages(config, &stage_seeds, &mut log) {
        Ok(evaluation) => {
            manifest.status = "complete".into();
            manifest.artifacts = log.entries;
            manifest.save(&manifest_path)?;
            Ok(PipelineOutcome {
                manifest,
                evaluation,
            })
        }
        Err(error) => {
            manifest.status = format!("failed:{}", error.stage());
            manifest.artifacts = log.entries;
            // Best effort; the stage error is the one worth reporting.
            let _ = manifest.save(&manifest_path);
            Err(error)
        }
    }
}

fn run_stages(
    config: &RunConfig,
    stage_seeds: &BTreeMap<String, u64>,
    log: &mut ArtifactLog,
) -> Result<FullEvaluation, PipelineError> {
    // Knowledge base: parse, validate, prune.
    let kb = parse_knowledge_base(&config.kb, config.mode).map_err(|source| PipelineError::Kb {
        stage: "kb",
        source,
    })?;
    let report = crate::kb::validate(&kb);
    if report.has_errors() {
        return Err(PipelineError::KbInvalid {
            stage: "kb",
            findings: report.to_jsonl(),
        });
    }
    let kb = kb.prune_orphan_symptoms();

    // Training data.
    let train_gen = GenerationConfig {
        num_records: config.generation.num_records,
        min_symptoms: config.generation.min_symptoms,
        seed: stage_seeds["generate-train"],
        demographic_marginals: config.generation.demographic_marginals.clone(),
        max_rejection_retries: config.generation.max_rejection_retries,
    };
    let train_records =
        generate_dataset(&kb, &train_gen).map_err(|source| PipelineError::Generation {
            stage: "generate-train",
            source,
        })?;
    let dataset_path = config.out_dir.join("dataset.csv");
    {
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(&dataset_path).map_err(io_err("generate-train"))?,
        );
        write_records_csv(&train_records, kb.mode, &mut file).map_err(|source| {
            PipelineError::Generation {
                stage: "generate-train",
                source,
            }
        })?;
    }
    log.record("dataset", &dataset_path, "generate-train")?;

    // Encoding.
    let encoding_mode = config.encoding.unwrap_or(config.mode);
    let schema =
        FeatureSchema::build(&kb, encoding_mode).map_err(|source| PipelineError::Encoding {
            stage: "encode",
            source,
        })?;
    let train_ds =
        encode(&train_records, &schema, &kb).map_err(|source| PipelineError::Encoding {
            stage: "encode",
            source,
        })?;
    let encoded_path = config.out_dir.join("encoded.bin");
    save_binary(&train_ds, &encoded_path).map_err(|source| PipelineError::Encoding {
        stage: "encode",
        source,
    })?;
    log.record("encoded", &encoded_path, "encode")?;
    log.record("schema", &schema_sidecar_path(&encoded_path), "encode")?;

    // Split and train.
    let split = stratified_split(&train_ds, config.split.test_fraction, stage_seeds["split"])
        .map_err(|source| PipelineError::Encoding {
            stage: "split",
            source,
        })?;
    let fit_ds = train_ds.subset(&split.train_indices);
    let model = match &config.model {
        ModelChoice::Nb { alpha, var_floor } => TrainedModel::NaiveBayes(
            HybridNaiveBayes::fit(
                &fit_ds,
                NbParams {
                    alpha: *alpha,
                    var_floor: *var_floor,
                },
            )
            .map_err(|source| PipelineError::Model {
                stage: "train",
                source,
            })?,
        ),
        ModelChoice::Rf {
            n_trees,
            max_depth,
            min_samples_leaf,
            features_per_split,
            bootstrap,
        } => TrainedModel::RandomForest(
            RandomForest::fit(
                &fit_ds,
                RfParams {
                    n_trees: *n_trees,
                    max_depth: *max_depth,
                    min_samples_leaf: *min_samples_leaf,
                    features_per_split: *features_per_split,
                    bootstrap: *bootstrap,
                    seed: stage_seeds["model"],
                },
            )
            .map_err(|source| PipelineError::Model {
                stage: "train",
                source,
            })?,
        ),
    };
    let model_path = config.out_dir.join("model.json");
    ModelFile::new(model.clone(), schema.class_labels.clone())
        .save(&model_path)
        .map_err(|source| PipelineError::Model {
            stage: "train",
            source,
        })?;
    log.record("model", &model_path, "train")?;

    // Evaluation data: a scenario generates fresh records from the
    // transformed knowledge base; otherwise the held-out split is used.
    let eval_ds = match &config.scenario {
        None => train_ds.subset(&split.test_indices),
        Some(scenario) => {
            let (eval_kb, min_symptoms) = match scenario {
                ScenarioSpec::Perturb { delta } => {
                    let spec = PerturbationSpec {
                        delta: *delta,
                        seed: stage_seeds["transform"],
                    };
                    (
                        perturb(&kb, &spec).map_err(|source| PipelineError::Transform {
                            stage: "transform",
                            source,
                        })?,
                        config.generation.min_symptoms,
                    )
                }
                ScenarioSpec::Inject { mode, max_injected } => (
                    inject(
                        &kb,
                        &InjectionSpec {
                            mode: *mode,
                            max_injected: *max_injected,
                        },
                    ),
                    config.generation.min_symptoms,
                ),
                ScenarioSpec::MinSymptoms { min_symptoms } => (kb.clone(), *min_symptoms),
            };
            let eval_gen = GenerationConfig {
                num_records: config
                    .eval_records
                    .unwrap_or_else(|| (config.generation.num_records / 4).max(1)),
                min_symptoms,
                seed: stage_seeds["generate-eval"],
                demographic_marginals: config.generation.demographic_marginals.clone(),
                max_rejection_retries: config.generation.max_rejection_retries,
            };
            let eval_records = generate_dataset(&eval_kb, &eval_gen).map_err(|source| {
                PipelineError::Generation {
                    stage: "generate-eval",
                    source,
                }
            })?;
            let eval_path = config.out_dir.join("eval_dataset.csv");
            {
                let mut file = std::io::BufWriter::new(
                    std::fs::File::create(&eval_path).map_err(io_err("generate-eval"))?,
                );
                write_records_csv(&eval_records, eval_kb.mode, &mut file).map_err(|source| {
                    PipelineError::Generation {
                        stage: "generate-eval",
                        source,
                    }
                })?;
            }
            log.record("eval_dataset", &eval_path, "generate-eval")?;
            encode(&eval_records, &schema, &eval_kb).map_err(|source| PipelineError::Encoding {
                stage: "encode",
                source,
            })?
        }
    };

    // Evaluate.
    let posteriors = model
        .predict_proba(&eval_ds)
        .map_err(|source| PipelineError::Model {
            stage: "evaluate",
            source,
        })?;
    let evaluation = full_evaluation(
        &posteriors,
        &eval_ds.labels,
        &schema.class_labels,
        config.admission,
    )
    .map_err(|source| PipelineError::Eval {
        stage: "evaluate",
        source,
    })?;
    let eval_path = config.out_dir.join("evaluation.json");
    {
        let mut text = serde_json::to_string_pretty(&evaluation).expect("evaluation serializes");
        text.push('\n');
        std::fs::write(&eval_path, text).map_err(io_err("evaluate"))?;
    }
    log.record("evaluation", &eval_path, "evaluate")?;

    Ok(evaluation)
}
