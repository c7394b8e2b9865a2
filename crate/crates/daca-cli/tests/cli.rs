//! End-to-end tests of the `daca` binary: the synth -> train -> eval ->
//! bound pipeline, exit codes, determinism, and manifest hygiene.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_daca")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("failed to spawn daca binary")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "daca-cli-{tag}-{}-{}",
        std::process::id(),
        rand::random::<u32>()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const SPEC: &str = "\
feature_dim = 2
seed = 21
source.0.name = politics
source.0.samples = 60
source.0.labeler.weights = 4.0, -4.0
source.0.component.0.mean = 1.0, -1.0
source.0.component.0.scale = 0.5
source.0.component.1.mean = -1.0, 1.0
source.0.component.1.scale = 0.5
source.1.name = entertainment
source.1.samples = 60
source.1.labeler.weights = 4.0, -4.0
source.1.component.0.mean = 1.2, -0.8
source.1.component.0.scale = 0.5
source.1.component.1.mean = -0.8, 1.2
source.1.component.1.scale = 0.5
target.samples = 40
target.labeler.weights = 4.0, -4.0
target.component.0.mean = 1.0, -1.0
target.component.0.scale = 0.5
target.component.1.mean = -1.0, 1.0
target.component.1.scale = 0.5
";

const TRAIN_CONFIG: &str = "\
lr = 0.005
epochs = 6
warmup_epochs = 2
batch_size = 18
transform_hidden = 12
transform_out = 8
head_hidden = 6
similarity_hidden = 12
similarity_out = 4
seed = 5
";

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn synth(dir: &Path, prefix: &str) -> (PathBuf, PathBuf) {
    let spec = dir.join("spec.kv");
    write(&spec, SPEC);
    let out = dir.join(prefix);
    let o = run(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        o.status.success(),
        "synth failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    (
        dir.join(format!("{prefix}.corpus.jsonl")),
        dir.join(format!("{prefix}.truth.jsonl")),
    )
}

fn train(dir: &Path, corpus: &Path, prefix: &str, extra: &[&str]) -> PathBuf {
    let cfg = dir.join("train.kv");
    write(&cfg, TRAIN_CONFIG);
    let out = dir.join(prefix);
    let mut args = vec![
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(
        o.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    dir.join(format!("{prefix}.checkpoint.json"))
}

#[test]
fn full_pipeline_succeeds() {
    let dir = tmp_dir("pipeline");
    let (corpus, truth) = synth(&dir, "data");
    let checkpoint = train(&dir, &corpus, "run", &[]);

    let o = run(&[
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--corpus",
        truth.to_str().unwrap(),
        "--out",
        dir.join("eval").to_str().unwrap(),
    ]);
    assert!(
        o.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("recall = "), "metrics missing: {stdout}");
    assert!(stdout.contains("f1 = "));

    let o = run(&[
        "bound",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--out",
        dir.join("bound").to_str().unwrap(),
        "--lambda",
        "stump",
    ]);
    assert!(
        o.status.success(),
        "bound failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("holds = true"), "bound report: {stdout}");
    assert!(dir.join("bound.bound.txt").exists());
    assert!(dir.join("bound.bound.json").exists());

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn synth_same_seed_is_byte_identical() {
    let dir = tmp_dir("synth-det");
    let (c1, t1) = synth(&dir, "a");
    let (c2, t2) = synth(&dir, "b");
    assert_eq!(std::fs::read(&c1).unwrap(), std::fs::read(&c2).unwrap());
    assert_eq!(std::fs::read(&t1).unwrap(), std::fs::read(&t2).unwrap());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn synth_rejects_invalid_spec_with_exit_2() {
    let dir = tmp_dir("synth-bad");
    let spec = dir.join("bad.kv");
    write(&spec, "feature_dim = 2\nsource.0.samples = 0\n");
    let o = run(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.join("x").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty(), "expected a diagnostic on stderr");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_is_deterministic_and_manifests_differ_only_in_timing() {
    let dir = tmp_dir("train-det");
    let (corpus, _) = synth(&dir, "data");
    train(&dir, &corpus, "r1", &[]);
    train(&dir, &corpus, "r2", &[]);
    assert_eq!(
        std::fs::read(dir.join("r1.checkpoint.json")).unwrap(),
        std::fs::read(dir.join("r2.checkpoint.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.join("r1.history.json")).unwrap(),
        std::fs::read(dir.join("r2.history.json")).unwrap()
    );
    let normalize = |path: PathBuf| {
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        v["duration_ms"] = 0.into();
        v["timestamp_unix_ms"] = 0.into();
        // output paths differ by prefix; compare checksums only
        let sums: Vec<String> = v["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a["sha256"].as_str().unwrap().to_string())
            .collect();
        v["outputs"] = serde_json::Value::Null;
        (v, sums)
    };
    let (m1, s1) = normalize(dir.join("r1.manifest.json"));
    let (m2, s2) = normalize(dir.join("r2.manifest.json"));
    assert_eq!(m1, m2);
    assert_eq!(s1, s2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_ablation_flags_change_the_model() {
    let dir = tmp_dir("train-ablate");
    let (corpus, _) = synth(&dir, "data");
    train(&dir, &corpus, "full", &[]);
    train(&dir, &corpus, "ablated", &["--no-concept"]);
    train(&dir, &corpus, "raw", &["--no-contrastive"]);
    let full = std::fs::read(dir.join("full.checkpoint.json")).unwrap();
    let ablated = std::fs::read(dir.join("ablated.checkpoint.json")).unwrap();
    let raw = std::fs::read(dir.join("raw.checkpoint.json")).unwrap();
    assert_ne!(full, ablated);
    assert_ne!(full, raw);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn checkpoint_roundtrips_through_eval_path() {
    // handcrafted perfect classifier: p = sigmoid(40 (x0 - x1))
    use daca_core::tensor::{Activation, DenseMatrix, LayerParams, MlpParams};
    use daca_core::train::{Checkpoint, TrainConfig};
    use daca_core::{ClassifierHead, DacaModel, DomainHead, SimilarityNet};

    let dir = tmp_dir("eval-perfect");
    let model = DacaModel {
        classifier: ClassifierHead {
            transform: MlpParams::identity(2),
            label_head: MlpParams {
                layers: vec![LayerParams {
                    weight: DenseMatrix::from_rows(&[vec![40.0, -40.0]]),
                    bias: vec![0.0],
                }],
                hidden_activation: Activation::Relu,
                output_activation: Activation::Sigmoid,
            },
        },
        domain: DomainHead {
            net: MlpParams {
                layers: vec![LayerParams {
                    weight: DenseMatrix::from_rows(&[vec![0.0, 0.0]]),
                    bias: vec![0.0],
                }],
                hidden_activation: Activation::Relu,
                output_activation: Activation::Sigmoid,
            },
        },
        similarity: SimilarityNet {
            projection: MlpParams::identity(2),
        },
    };
    let ck_path = dir.join("perfect.checkpoint.json");
    Checkpoint::new(model, TrainConfig::default())
        .save(&ck_path)
        .unwrap();

    // truth corpus labeled by the same rule
    let mut lines = vec![r#"{"feature_dim": 2, "domains": ["s0"]}"#.to_string()];
    lines.push(r#"{"id":"s0-0","domain":"s0","label":1,"features":[1.0,-1.0]}"#.into());
    lines.push(r#"{"id":"s0-1","domain":"s0","label":0,"features":[-1.0,1.0]}"#.into());
    for i in 0..6 {
        let x = if i % 2 == 0 { 1.0 } else { -1.0 };
        lines.push(format!(
            r#"{{"id":"t-{i}","domain":"__target__","label":{},"features":[{x},{}]}}"#,
            (i % 2 == 0) as u8,
            -x
        ));
    }
    let truth_path = dir.join("truth.jsonl");
    write(&truth_path, &(lines.join("\n") + "\n"));

    let o = run(&[
        "eval",
        "--checkpoint",
        ck_path.to_str().unwrap(),
        "--corpus",
        truth_path.to_str().unwrap(),
        "--out",
        dir.join("eval").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("recall = 1.000000"), "{stdout}");
    assert!(stdout.contains("f1 = 1.000000"), "{stdout}");
    let report = std::fs::read_to_string(dir.join("eval.metrics.txt")).unwrap();
    assert!(report.contains("recall = 1.000000"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_without_target_labels_exits_2() {
    let dir = tmp_dir("eval-nolabels");
    let (corpus, _) = synth(&dir, "data");
    let checkpoint = train(&dir, &corpus, "run", &[]);
    let o = run(&[
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(), // training view: no target labels
        "--out",
        dir.join("eval").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bound_without_truth_file_exits_2() {
    let dir = tmp_dir("bound-notruth");
    let (corpus, _) = synth(&dir, "data");
    let o = run(&[
        "bound",
        "--ideal",
        "--corpus",
        corpus.to_str().unwrap(),
        "--truth",
        dir.join("missing.jsonl").to_str().unwrap(),
        "--out",
        dir.join("bound").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bound_ideal_hypothesis_holds_on_no_shift_corpus() {
    let dir = tmp_dir("bound-ideal");
    let (corpus, truth) = synth(&dir, "data");
    let o = run(&[
        "bound",
        "--ideal",
        "--corpus",
        corpus.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--out",
        dir.join("bound").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("target_error = 0.000000"), "{stdout}");
    assert!(stdout.contains("holds = true"));
    // lambda defaulted to 0: warned on stderr
    assert!(String::from_utf8_lossy(&o.stderr).contains("optimistic"));
    // matching feature distributions: the divergence estimate stays small
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("bound.bound.json")).unwrap())
            .unwrap();
    for d in report["per_domain"].as_array().unwrap() {
        let div = d["h_divergence"].as_f64().unwrap();
        assert!(div < 0.8, "divergence {div} on a no-shift corpus");
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bound_on_shifted_corpus_reports_positive_terms_per_domain() {
    let dir = tmp_dir("bound-shifted");
    let spec = dir.join("spec.kv");
    // target feature distribution far from the sources, rotated labeler
    write(
        &spec,
        "\
feature_dim = 2
seed = 4
source.0.samples = 80
source.0.labeler.weights = 4.0, -4.0
source.0.component.0.mean = 1.0, -1.0
source.0.component.0.scale = 0.5
source.0.component.1.mean = -1.0, 1.0
source.0.component.1.scale = 0.5
source.1.samples = 80
source.1.labeler.weights = 4.0, -4.0
source.1.component.0.mean = 0.8, -1.2
source.1.component.0.scale = 0.5
source.1.component.1.mean = -1.2, 0.8
source.1.component.1.scale = 0.5
target.samples = 60
target.labeler.weights = -4.0, -4.0
target.component.0.mean = 4.0, 2.0
target.component.0.scale = 0.5
target.component.1.mean = 2.0, 4.0
target.component.1.scale = 0.5
",
    );
    let out = dir.join("data");
    let o = run(&[
        "synth",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[
        "bound",
        "--ideal",
        "--corpus",
        dir.join("data.corpus.jsonl").to_str().unwrap(),
        "--truth",
        dir.join("data.truth.jsonl").to_str().unwrap(),
        "--out",
        dir.join("bound").to_str().unwrap(),
        "--lambda",
        "stump",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("bound.bound.json")).unwrap())
            .unwrap();
    let domains = report["per_domain"].as_array().unwrap();
    assert_eq!(domains.len(), 2);
    for d in domains {
        for term in [
            "h_divergence",
            "concept_term",
            "lipschitz_term",
            "lambda",
            "constant",
        ] {
            let v = d[term].as_f64().unwrap();
            assert!(
                v > 0.0,
                "{term} = {v} should be positive on a shifted corpus"
            );
        }
    }
    // the text report lists the per-domain breakdown
    let text = std::fs::read_to_string(dir.join("bound.bound.txt")).unwrap();
    assert!(text.contains("source[s0].h_divergence = "), "{text}");
    assert!(text.contains("source[s1].concept_term = "), "{text}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn eval_report_is_deterministic_for_fixed_inputs() {
    let dir = tmp_dir("eval-det");
    let (corpus, truth) = synth(&dir, "data");
    let checkpoint = train(&dir, &corpus, "run", &[]);
    for name in ["e1", "e2"] {
        let o = run(&[
            "eval",
            "--checkpoint",
            checkpoint.to_str().unwrap(),
            "--corpus",
            truth.to_str().unwrap(),
            "--out",
            dir.join(name).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        std::fs::read(dir.join("e1.metrics.txt")).unwrap(),
        std::fs::read(dir.join("e2.metrics.txt")).unwrap()
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn gradcheck_passes_and_prints_per_loss_lines() {
    let o = run(&["gradcheck", "--seed", "11"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for name in [
        "label_loss",
        "domain_loss",
        "contrastive_loss",
        "concept_loss",
        "combined_loss",
    ] {
        assert!(stdout.contains(&format!("{name}: PASS")), "{stdout}");
    }
}

#[test]
fn commands_do_not_mutate_inputs() {
    let dir = tmp_dir("immutability");
    let (corpus, truth) = synth(&dir, "data");
    let before_corpus = std::fs::read(&corpus).unwrap();
    let before_truth = std::fs::read(&truth).unwrap();
    let checkpoint = train(&dir, &corpus, "run", &[]);
    run(&[
        "eval",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--corpus",
        truth.to_str().unwrap(),
        "--out",
        dir.join("eval").to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read(&corpus).unwrap(), before_corpus);
    assert_eq!(std::fs::read(&truth).unwrap(), before_truth);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn manifests_record_matching_checksums() {
    use sha2::{Digest, Sha256};
    let dir = tmp_dir("manifest-sums");
    let (_corpus, _) = synth(&dir, "data");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("data.manifest.json")).unwrap())
            .unwrap();
    for artifact in manifest["outputs"].as_array().unwrap() {
        let path = artifact["path"].as_str().unwrap();
        let bytes = std::fs::read(path).unwrap();
        let digest = format!("{:x}", Sha256::digest(&bytes));
        assert_eq!(digest, artifact["sha256"].as_str().unwrap(), "{path}");
    }
    std::fs::remove_dir_all(&dir).ok();
}
