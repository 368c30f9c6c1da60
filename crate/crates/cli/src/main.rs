//! `synthdx`: generate synthetic patient records from condition-symptom
//! knowledge bases, transform them through realistic scenarios, train
//! diagnosis models, and evaluate them.
//!
//! Every verb is a thin wrapper over the library; all randomness flows
//! through explicit `--seed` flags, so runs reproduce exactly.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid input, 4 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use synthdx_core::encoding::{
    self, load_binary, load_csv, save_binary, save_csv, stratified_split, EncodedDataset,
    EncodingError, FeatureSchema, Split,
};
use synthdx_core::evaluation::{full_evaluation, top_k_accuracy, AdmissionStat, FullEvaluation};
use synthdx_core::generator::{
    generate_dataset, read_records_csv, write_records_csv, DemographicMarginals, GenerationConfig,
    GenerationError,
};
use synthdx_core::kb::{
    import_symcat_csv, parse_knowledge_base, validate, write_knowledge_base, KbError, KbMode,
};
use synthdx_core::models::{
    argmax, HybridNaiveBayes, ModelError, ModelFile, NbParams, RandomForest, RfParams, TrainedModel,
};
use synthdx_core::pipeline::{run_pipeline, PipelineError, RunConfig};
use synthdx_core::transforms::{
    inject, perturb, InjectionMode, InjectionSpec, PerturbationSpec, TransformError,
};

/// Default output directory when a run config leaves it unset.
const OUT_DIR_ENV: &str = "SYNTHDX_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "synthdx",
    version,
    about = "Synthetic patient records and differential-diagnosis models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-base tools.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Generate labeled patient records.
    Generate(GenerateArgs),
    /// Derive a transformed knowledge base.
    #[command(subcommand)]
    Transform(TransformCommand),
    /// Encode records into a model-ready dataset.
    Encode(EncodeArgs),
    /// Produce a stratified train/test split.
    Split(SplitArgs),
    /// Train a model.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Write per-record posterior probabilities.
    Predict(PredictArgs),
    /// Evaluate a model on a dataset.
    Evaluate(EvaluateArgs),
    /// Render figure-ready CSVs from an evaluation file.
    Report(ReportArgs),
    /// Run the full pipeline from a config file.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum KbCommand {
    /// Check a knowledge base and print findings.
    Validate(KbIoArgs),
    /// Print summary counts.
    Stats(KbIoArgs),
    /// Convert scraped conditions/symptoms CSV tables into the canonical
    /// JSON format.
    ImportSymcat(ImportArgs),
}

#[derive(Args)]
struct KbIoArgs {
    /// Knowledge base JSON file.
    #[arg(long)]
    kb: PathBuf,
    /// Knowledge base mode.
    #[arg(long)]
    mode: KbMode,
    /// Output file (findings as JSON lines / stats as JSON); stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// conditions.csv with a header row.
    #[arg(long)]
    conditions: PathBuf,
    /// symptoms.csv with a header row.
    #[arg(long)]
    symptoms: PathBuf,
    /// Destination for the canonical knowledge base JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    mode: KbMode,
    #[arg(long)]
    num_records: u64,
    #[arg(long, default_value_t = 1)]
    min_symptoms: usize,
    #[arg(long)]
    seed: u64,
    /// JSON file with demographic marginal weights; uniform if absent.
    #[arg(long)]
    marginals: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    max_retries: u32,
    /// Destination records CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TransformCommand {
    /// Scale expression probabilities by 1 +- delta with random signs.
    Perturb(PerturbArgs),
    /// Append similar foreign symptoms to each condition.
    Inject(InjectArgs),
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    mode: KbMode,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    mode: KbMode,
    /// Probability assigned to injected symptoms: min, mean or max of the
    /// condition's existing expression probabilities.
    #[arg(long = "inject-mode")]
    inject_mode: InjectionMode,
    #[arg(long, default_value_t = 5)]
    max_injected: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    mode: KbMode,
    /// Records CSV produced by `generate`.
    #[arg(long)]
    records: PathBuf,
    /// Feature encoding; defaults to the knowledge-base mode.
    #[arg(long)]
    encoding: Option<KbMode>,
    /// Container format for the encoded dataset.
    #[arg(long, default_value = "bin")]
    format: ContainerFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ContainerFormat {
    Bin,
    Csv,
}

#[derive(Args)]
struct SplitArgs {
    /// Encoded dataset (with its schema sidecar next to it).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum TrainCommand {
    /// Naive Bayes with per-feature likelihood families.
    Nb(TrainNbArgs),
    /// Random forest.
    Rf(TrainRfArgs),
}

#[derive(Args)]
struct TrainNbArgs {
    #[arg(long)]
    data: PathBuf,
    /// Optional split file; trains on its train indices.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1e-9)]
    var_floor: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainRfArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_leaf: usize,
    /// Features considered per split; ceil(sqrt(D)) if absent.
    #[arg(long)]
    features_per_split: Option<usize>,
    /// Disable bootstrap resampling.
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Posterior CSV destination; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Partition {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Optional split file restricting the evaluated rows.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    partition: Partition,
    /// Extra Top-k accuracy to print alongside Top-1/Top-5.
    #[arg(long, default_value_t = 5)]
    top_k: usize,
    /// Statistic admitting a prediction as confident in the threshold sweep.
    #[arg(long, default_value = "max")]
    admission: AdmissionStat,
    /// Evaluation JSON destination; metrics print to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation JSON produced by `evaluate` or `run`.
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// RunConfig JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory override (falls back to the config, then the
    /// SYNTHDX_OUT_DIR environment variable).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long)]
    threads: Option<usize>,
}

/// Failures carrying their exit class.
enum CliError {
    /// Bad input data or configuration: exit 3.
    Validation(String),
    /// Runtime failure: exit 4.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        match e {
            KbError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TransformError> for CliError {
    fn from(e: TransformError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EncodingError> for CliError {
    fn from(e: EncodingError) -> Self {
        match e {
            EncodingError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<synthdx_core::evaluation::EvalError> for CliError {
    fn from(e: synthdx_core::evaluation::EvalError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {}", error.message());
            ExitCode::from(error.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Kb(kb) => match kb {
            KbCommand::Validate(args) => kb_validate(args),
            KbCommand::Stats(args) => kb_stats(args),
            KbCommand::ImportSymcat(args) => kb_import(args),
        },
        Command::Generate(args) => generate(args),
        Command::Transform(t) => match t {
            TransformCommand::Perturb(args) => transform_perturb(args),
            TransformCommand::Inject(args) => transform_inject(args),
        },
        Command::Encode(args) => encode_records(args),
        Command::Split(args) => split_dataset(args),
        Command::Train(t) => match t {
            TrainCommand::Nb(args) => train_nb(args),
            TrainCommand::Rf(args) => train_rf(args),
        },
        Command::Predict(args) => predict(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Report(args) => report(args),
        Command::Run(args) => run(args),
    }
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn kb_validate(args: KbIoArgs) -> Result<(), CliError> {
    let kb = parse_knowledge_base(&args.kb, args.mode)?;
    let report = validate(&kb);
    write_or_print(args.out.as_deref(), &report.to_jsonl())?;
    if report.has_errors() {
        return Err(CliError::Validation(format!(
            "{} finding(s), see report",
            report.findings.len()
        )));
    }
    eprintln!(
        "ok: {} conditions, {} symptoms, {} warning(s)",
        kb.conditions.len(),
        kb.symptoms.len(),
        report.findings.len()
    );
    Ok(())
}

fn kb_stats(args: KbIoArgs) -> Result<(), CliError> {
    let kb = parse_knowledge_base(&args.kb, args.mode)?;
    let stats = kb.stats();
    let mut text = serde_json::to_string_pretty(&stats).expect("stats serialize");
    text.push('\n');
    write_or_print(args.out.as_deref(), &text)
}

fn kb_import(args: ImportArgs) -> Result<(), CliError> {
    let kb = import_symcat_csv(&args.conditions, &args.symptoms)?;
    write_knowledge_base(&kb, &args.out)?;
    eprintln!(
        "imported {} conditions, {} symptoms -> {}",
        kb.conditions.len(),
        kb.symptoms.len(),
        args.out.display()
    );
    Ok(())
}

fn load_marginals(path: Option<&Path>) -> Result<DemographicMarginals, CliError> {
    match path {
        None => Ok(DemographicMarginals::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
        }
    }
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let kb = parse_knowledge_base(&args.kb, args.mode)?.prune_orphan_symptoms();
    let config = GenerationConfig {
        num_records: args.num_records,
        min_symptoms: args.min_symptoms,
        seed: args.seed,
        demographic_marginals: load_marginals(args.marginals.as_deref())?,
        max_rejection_retries: args.max_retries,
    };
    let records = generate_dataset(&kb, &config)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    write_records_csv(&records, kb.mode, &mut file)?;
    file.flush()?;
    eprintln!("wrote {} records -> {}", records.len(), args.out.display());
    Ok(())
}

fn transform_perturb(args: PerturbArgs) -> Result<(), CliError> {
    let kb = parse_knowledge_base(&args.kb, args.mode)?;
    let out = perturb(
        &kb,
        &PerturbationSpec {
            delta: args.delta,
            seed: args.seed,
        },
    )?;
    write_knowledge_base(&out, &args.out)?;
    Ok(())
}

fn transform_inject(args: InjectArgs) -> Result<(), CliError> {
    let kb = parse_knowledge_base(&args.kb, args.mode)?;
    let out = inject(
        &kb,
        &InjectionSpec {
            mode: args.inject_mode,
            max_injected: args.max_injected,
        },
    );
    write_knowledge_base(&out, &args.out)?;
    Ok(())
}

fn encode_records(args: EncodeArgs) -> Result<(), CliError> {
    let kb = parse_knowledge_base(&args.kb, args.mode)?.prune_orphan_symptoms();
    let encoding_mode = args.encoding.unwrap_or(kb.mode);
    let schema = FeatureSchema::build(&kb, encoding_mode)?;
    let file = std::io::BufReader::new(std::fs::File::open(&args.records)?);
    let records = read_records_csv(file, kb.mode)?;
    let dataset = encoding::encode(&records, &schema, &kb)?;
    match args.format {
        ContainerFormat::Bin => save_binary(&dataset, &args.out)?,
        ContainerFormat::Csv => save_csv(&dataset, &args.out)?,
    }
    eprintln!(
        "encoded {} rows x {} features -> {}",
        dataset.n_rows(),
        dataset.schema.n_features(),
        args.out.display()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<EncodedDataset, CliError> {
    let result = if path.extension().is_some_and(|e| e == "csv") {
        load_csv(path)
    } else {
        load_binary(path)
    };
    Ok(result?)
}

fn split_dataset(args: SplitArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    let split = stratified_split(&dataset, args.test_fraction, args.seed)?;
    split.save(&args.out)?;
    eprintln!(
        "split {} rows into {} train / {} test",
        dataset.n_rows(),
        split.train_indices.len(),
        split.test_indices.len()
    );
    Ok(())
}

fn training_subset(
    dataset: &EncodedDataset,
    split_path: Option<&Path>,
) -> Result<EncodedDataset, CliError> {
    match split_path {
        None => Ok(dataset.clone()),
        Some(path) => {
            let split = Split::load(path)?;
            split.check(dataset.n_rows())?;
            Ok(dataset.subset(&split.train_indices))
        }
    }
}

fn train_nb(args: TrainNbArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    let fit_ds = training_subset(&dataset, args.split.as_deref())?;
    let model = HybridNaiveBayes::fit(
        &fit_ds,
        NbParams {
            alpha: args.alpha,
            var_floor: args.var_floor,
        },
    )?;
    ModelFile::new(
        TrainedModel::NaiveBayes(model),
        dataset.schema.class_labels.clone(),
    )
    .save(&args.out)?;
    eprintln!(
        "trained nb on {} rows -> {}",
        fit_ds.n_rows(),
        args.out.display()
    );
    Ok(())
}

fn train_rf(args: TrainRfArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    let fit_ds = training_subset(&dataset, args.split.as_deref())?;
    let model = RandomForest::fit(
        &fit_ds,
        RfParams {
            n_trees: args.trees,
            max_depth: args.max_depth,
            min_samples_leaf: args.min_leaf,
            features_per_split: args.features_per_split,
            bootstrap: !args.no_bootstrap,
            seed: args.seed,
        },
    )?;
    ModelFile::new(
        TrainedModel::RandomForest(model),
        dataset.schema.class_labels.clone(),
    )
    .save(&args.out)?;
    eprintln!(
        "trained rf on {} rows -> {}",
        fit_ds.n_rows(),
        args.out.display()
    );
    Ok(())
}

fn predict(args: PredictArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    let model_file = ModelFile::load(&args.model)?;
    let posteriors = model_file.model.predict_proba(&dataset)?;
    let mut out = String::new();
    out.push_str("row,");
    out.push_str(&model_file.class_labels.join(","));
    out.push_str(",top1\n");
    for (i, row) in posteriors.iter().enumerate() {
        let values: Vec<String> = row.iter().map(|p| format!("{p}")).collect();
        out.push_str(&format!(
            "{i},{},{}\n",
            values.join(","),
            model_file.class_labels[argmax(row)]
        ));
    }
    write_or_print(args.out.as_deref(), &out)
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<(), CliError> {
    let dataset = load_dataset(&args.data)?;
    let model_file = ModelFile::load(&args.model)?;
    let eval_ds = match (&args.split, args.partition) {
        (None, _) | (Some(_), Partition::All) => dataset.clone(),
        (Some(path), partition) => {
            let split = Split::load(path)?;
            split.check(dataset.n_rows())?;
            let indices = match partition {
                Partition::Train => &split.train_indices,
                Partition::Test => &split.test_indices,
                Partition::All => unreachable!("handled above"),
            };
            dataset.subset(indices)
        }
    };
    let posteriors = model_file.model.predict_proba(&eval_ds)?;
    let full = full_evaluation(
        &posteriors,
        &eval_ds.labels,
        &eval_ds.schema.class_labels,
        args.admission,
    )?;
    let top_k = top_k_accuracy(&posteriors, &eval_ds.labels, args.top_k)?;
    println!("n_test: {}", full.report.n_test);
    println!("top1: {}", full.report.top1);
    println!("top5: {}", full.report.top5);
    println!("top{}: {top_k}", args.top_k);
    println!("precision_weighted: {}", full.report.precision_weighted);
    if let Some(path) = &args.out {
        let mut text = serde_json::to_string_pretty(&full).expect("evaluation serializes");
        text.push('\n');
        std::fs::write(path, text)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.eval)?;
    let full: FullEvaluation = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.eval.display())))?;
    std::fs::create_dir_all(&args.out_dir)?;
    let thresholds = args.out_dir.join("thresholds.csv");
    std::fs::write(&thresholds, full.thresholds_csv())?;
    let cases = args.out_dir.join("posterior_cases.csv");
    std::fs::write(&cases, full.cases_csv())?;
    println!(
        "top1: {}\ntop5: {}\nprecision_weighted: {}",
        full.report.top1, full.report.top5, full.report.precision_weighted
    );
    eprintln!("wrote {} and {}", thresholds.display(), cases.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(out) = args.out {
        config.out_dir = out;
    } else if config.out_dir.as_os_str().is_empty() {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            config.out_dir = PathBuf::from(dir);
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = Some(threads);
    }
    let outcome = run_pipeline(&config)?;
    println!("status: {}", outcome.manifest.status);
    println!("top1: {}", outcome.evaluation.report.top1);
    println!("top5: {}", outcome.evaluation.report.top5);
    println!(
        "precision_weighted: {}",
        outcome.evaluation.report.precision_weighted
    );
    println!(
        "manifest: {}",
        config.out_dir.join("manifest.json").display()
    );
    Ok(())
}
