//! End-to-end checks of the `synthdx` binary: every verb, determinism of
//! written artifacts, exit codes, and agreement with direct library calls.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use synthdx_core::encoding::{encode, load_binary, stratified_split, FeatureSchema};
use synthdx_core::evaluation::top_k_accuracy;
use synthdx_core::generator::read_records_csv;
use synthdx_core::kb::{parse_knowledge_base, KbMode};
use synthdx_core::models::ModelFile;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn synthdx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthdx"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn expect_success(output: &Output) {
    assert!(
        output.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn kb_validate_passes_clean_fixture_and_rejects_broken_input() {
    let ok = synthdx(&[
        "kb",
        "validate",
        "--kb",
        path_str(&fixture("toy3_symcat.json")),
        "--mode",
        "symcat",
    ]);
    expect_success(&ok);

    // Invalid probability: exit code 3 and a finding on stdout.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(fixture("toy3_symcat.json"))
        .unwrap()
        .replace("\"expression_prob\": 0.9", "\"expression_prob\": 1.9");
    std::fs::write(&bad, text).unwrap();
    let out = synthdx(&["kb", "validate", "--kb", path_str(&bad), "--mode", "symcat"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("1.9"));
}

#[test]
fn usage_errors_exit_with_code_two() {
    let out = synthdx(&["kb", "validate", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        expect_success(&synthdx(&[
            "generate",
            "--kb",
            path_str(&fixture("toy3_symcat.json")),
            "--mode",
            "symcat",
            "--num-records",
            "500",
            "--seed",
            "7",
            "--out",
            path_str(out),
        ]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn transform_verbs_are_deterministic_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("perturbed_a.json");
    let b = dir.path().join("perturbed_b.json");
    for out in [&a, &b] {
        expect_success(&synthdx(&[
            "transform",
            "perturb",
            "--kb",
            path_str(&fixture("toy3_symcat.json")),
            "--mode",
            "symcat",
            "--delta",
            "0.2",
            "--seed",
            "1",
            "--out",
            path_str(out),
        ]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    parse_knowledge_base(&a, KbMode::Symcat).unwrap();

    let injected = dir.path().join("injected.json");
    expect_success(&synthdx(&[
        "transform",
        "inject",
        "--kb",
        path_str(&fixture("inject4_symcat.json")),
        "--mode",
        "symcat",
        "--inject-mode",
        "mean",
        "--out",
        path_str(&injected),
    ]));
    let kb = parse_knowledge_base(&injected, KbMode::Symcat).unwrap();
    assert!(kb.condition("c1").unwrap().symptoms.len() > 2);
}

#[test]
fn full_verb_chain_matches_direct_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let records_path = dir.path().join("records.csv");
    let data_path = dir.path().join("data.bin");
    let split_path = dir.path().join("split.json");
    let model_path = dir.path().join("nb.json");

    expect_success(&synthdx(&[
        "generate",
        "--kb",
        path_str(&fixture("toy10_symcat.json")),
        "--mode",
        "symcat",
        "--num-records",
        "3000",
        "--seed",
        "21",
        "--out",
        path_str(&records_path),
    ]));
    expect_success(&synthdx(&[
        "encode",
        "--kb",
        path_str(&fixture("toy10_symcat.json")),
        "--mode",
        "symcat",
        "--records",
        path_str(&records_path),
        "--out",
        path_str(&data_path),
    ]));
    expect_success(&synthdx(&[
        "split",
        "--data",
        path_str(&data_path),
        "--test-fraction",
        "0.25",
        "--seed",
        "9",
        "--out",
        path_str(&split_path),
    ]));
    expect_success(&synthdx(&[
        "train",
        "nb",
        "--data",
        path_str(&data_path),
        "--split",
        path_str(&split_path),
        "--out",
        path_str(&model_path),
    ]));
    let evaluate = synthdx(&[
        "evaluate",
        "--model",
        path_str(&model_path),
        "--data",
        path_str(&data_path),
        "--split",
        path_str(&split_path),
        "--top-k",
        "3",
    ]);
    expect_success(&evaluate);
    let stdout = String::from_utf8(evaluate.stdout).unwrap();

    // Recompute everything through the library and compare the printed
    // values byte for byte.
    let kb = parse_knowledge_base(&fixture("toy10_symcat.json"), KbMode::Symcat)
        .unwrap()
        .prune_orphan_symptoms();
    let records = read_records_csv(
        std::io::BufReader::new(std::fs::File::open(&records_path).unwrap()),
        KbMode::Symcat,
    )
    .unwrap();
    let schema = FeatureSchema::build(&kb, KbMode::Symcat).unwrap();
    let ds = encode(&records, &schema, &kb).unwrap();
    let split = stratified_split(&ds, 0.25, 9).unwrap();
    let test_ds = ds.subset(&split.test_indices);
    let model = ModelFile::load(&model_path).unwrap().model;
    let posteriors = model.predict_proba(&test_ds).unwrap();
    let top1 = top_k_accuracy(&posteriors, &test_ds.labels, 1).unwrap();
    let top3 = top_k_accuracy(&posteriors, &test_ds.labels, 3).unwrap();
    assert!(stdout.contains(&format!("top1: {top1}\n")), "{stdout}");
    assert!(stdout.contains(&format!("top3: {top3}\n")), "{stdout}");

    // The encoded container reloads to the same dataset the library built.
    assert_eq!(load_binary(&data_path).unwrap(), ds);
}

#[test]
fn predict_writes_one_posterior_row_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let records_path = dir.path().join("records.csv");
    let data_path = dir.path().join("data.bin");
    let model_path = dir.path().join("nb.json");
    let posteriors_path = dir.path().join("posteriors.csv");
    expect_success(&synthdx(&[
        "generate",
        "--kb",
        path_str(&fixture("toy3_symcat.json")),
        "--mode",
        "symcat",
        "--num-records",
        "200",
        "--seed",
        "4",
        "--out",
        path_str(&records_path),
    ]));
    expect_success(&synthdx(&[
        "encode",
        "--kb",
        path_str(&fixture("toy3_symcat.json")),
        "--mode",
        "symcat",
        "--records",
        path_str(&records_path),
        "--out",
        path_str(&data_path),
    ]));
    expect_success(&synthdx(&[
        "train",
        "nb",
        "--data",
        path_str(&data_path),
        "--out",
        path_str(&model_path),
    ]));
    expect_success(&synthdx(&[
        "predict",
        "--model",
        path_str(&model_path),
        "--data",
        path_str(&data_path),
        "--out",
        path_str(&posteriors_path),
    ]));
    let text = std::fs::read_to_string(&posteriors_path).unwrap();
    assert_eq!(text.lines().count(), 201);
    assert!(text.starts_with("row,common_cold,flu_like,stomach_bug,top1\n"));
}

#[test]
fn run_executes_the_bundled_demo_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("demo");
    let run = synthdx(&[
        "run",
        "--config",
        path_str(&fixture("demo_run.json")),
        "--out",
        path_str(&out_dir),
    ]);
    expect_success(&run);
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("status: complete"), "{stdout}");
    for artifact in [
        "manifest.json",
        "dataset.csv",
        "encoded.bin",
        "encoded.bin.schema.json",
        "model.json",
        "evaluation.json",
    ] {
        assert!(out_dir.join(artifact).exists(), "{artifact}");
    }
}

#[test]
fn run_reports_infeasible_config_as_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("bad_run.json");
    let mut config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("demo_run.json")).unwrap()).unwrap();
    config["kb"] = serde_json::json!(path_str(&fixture("toy3_symcat.json")));
    config["generation"]["min_symptoms"] = serde_json::json!(3);
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = synthdx(&[
        "run",
        "--config",
        path_str(&config_path),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("common_cold"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn run_out_dir_falls_back_to_the_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("run.json");
    let mut config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("demo_run.json")).unwrap()).unwrap();
    config["kb"] = serde_json::json!(path_str(&fixture("toy3_symcat.json")));
    config["generation"]["num_records"] = serde_json::json!(300);
    config.as_object_mut().unwrap().remove("out_dir");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let out_dir = dir.path().join("from_env");
    let output = Command::new(env!("CARGO_BIN_EXE_synthdx"))
        .args(["run", "--config", path_str(&config_path)])
        .env("SYNTHDX_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    expect_success(&output);
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn import_symcat_round_trips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    let symptoms = dir.path().join("symptoms.csv");
    let conditions = dir.path().join("conditions.csv");
    let demographic = "age_<1,age_1-4,age_5-14,age_15-29,age_30-44,age_45-59,age_60-74,age_>75,gender_male,gender_female,race_white,race_black,race_hispanic,race_other";
    std::fs::write(
        &symptoms,
        format!(
            "symptom_id,display_name,{demographic}\n\
             cough,Cough,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.5,0.5,0.4,0.3,0.2,0.1\n\
             fever,Fever,0.2,0.2,0.2,0.2,0.2,0.2,0.2,0.2,0.5,0.5,0.25,0.25,0.25,0.25\n"
        ),
    )
    .unwrap();
    std::fs::write(
        &conditions,
        format!(
            "condition_id,display_name,{demographic},symptoms\n\
             flu,Flu,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.5,0.5,0.4,0.3,0.2,0.1,cough:0.7;fever:0.9\n\
             cold,Cold,0.2,0.3,0.3,0.4,0.4,0.3,0.2,0.1,0.5,0.5,0.3,0.3,0.2,0.2,cough:1.0\n"
        ),
    )
    .unwrap();
    let kb_path = dir.path().join("kb.json");
    expect_success(&synthdx(&[
        "kb",
        "import-symcat",
        "--conditions",
        path_str(&conditions),
        "--symptoms",
        path_str(&symptoms),
        "--out",
        path_str(&kb_path),
    ]));
    expect_success(&synthdx(&[
        "kb",
        "validate",
        "--kb",
        path_str(&kb_path),
        "--mode",
        "symcat",
    ]));
}
