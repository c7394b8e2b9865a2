//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Run with `cargo test -p daca-cli --test acceptance -- --nocapture`.
//!
//! Everything is seeded; reruns produce identical numbers.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use daca_core::bound::{
    bound_report, empirical_h_divergence, BoundConfig, DivergenceCoefficient, DivergenceMode,
    LambdaMode,
};
use daca_core::concept::sample_peers;
use daca_core::covariate::domain_loss;
use daca_core::data::{
    gen_synthetic, make_batches, FeatureRecord, GaussianComponent, SyntheticDomain, SyntheticSpec,
};
use daca_core::gradcheck::{run_gradcheck, CheckSetup, TOLERANCE};
use daca_core::metrics::{confusion, f1, recall, ConfusionCounts};
use daca_core::tensor::Activation;
use daca_core::train::{loss_terms, predict_target, train, ArchConfig, Stage, TrainConfig};
use daca_core::{Error, LabelingFunction};

fn report(criterion: usize, name: &str, passed: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion} ({name}): {} -- {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_fidelity() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..20u64 {
        for check in run_gradcheck(seed).unwrap() {
            worst = worst.max(check.max_rel_error);
            if !check.passed {
                failures.push(format!(
                    "seed {seed} {}: {:.3e}",
                    check.name, check.max_rel_error
                ));
            }
        }
    }
    let elapsed = started.elapsed();
    let passed = failures.is_empty() && elapsed.as_secs_f64() < 30.0;
    report(
        1,
        "gradient fidelity",
        passed,
        &format!(
            "20 configs x 5 losses, worst relative error {worst:.3e} (tolerance {TOLERANCE:.0e}), {:.2}s{}",
            elapsed.as_secs_f64(),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failures: {failures:?}")
            }
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Reversal exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_reversal_exactness() {
    let mut exact = true;
    for seed in 100..110u64 {
        let setup = CheckSetup::random(seed).unwrap();
        let sources = setup.source_records();
        let targets = setup.target_records();
        let with = domain_loss(
            &setup.model.classifier.transform,
            &setup.model.domain,
            &sources,
            &targets,
            true,
        )
        .unwrap();
        let without = domain_loss(
            &setup.model.classifier.transform,
            &setup.model.domain,
            &sources,
            &targets,
            false,
        )
        .unwrap();
        exact &= with.grad_transform == without.grad_transform.negated();
        exact &= with.grad_domain_head == without.grad_domain_head;
    }
    report(
        2,
        "reversal exactness",
        exact,
        "10 batches: reversed transform gradient is the exact elementwise negation",
    );
}

// ---------------------------------------------------------------------------
// 3. Divergence estimator vs exhaustive oracle
// ---------------------------------------------------------------------------

fn oracle_divergence_1d(source: &[&[f64]], target: &[&[f64]]) -> f64 {
    let mut coords: Vec<f64> = source.iter().chain(target).map(|x| x[0]).collect();
    coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
    coords.dedup();
    let mut thresholds = vec![coords[0] - 1.0, coords[coords.len() - 1] + 1.0];
    for w in coords.windows(2) {
        thresholds.push(0.5 * (w[0] + w[1]));
    }
    let mut best = f64::INFINITY;
    for &t in &thresholds {
        for positive_above in [true, false] {
            let h = |x: &[f64]| (x[0] > t) == positive_above;
            let a = source.iter().filter(|x| !h(x)).count() as f64 / source.len() as f64;
            let b = target.iter().filter(|x| h(x)).count() as f64 / target.len() as f64;
            best = best.min(a + b);
        }
    }
    2.0 * (1.0 - best)
}

#[test]
fn criterion_3_divergence_oracle() {
    let started = Instant::now();
    fn views(d: &[Vec<f64>]) -> Vec<&[f64]> {
        d.iter().map(|v| v.as_slice()).collect()
    }

    let same: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64) * 0.37 - 9.0]).collect();
    let identical_ok = empirical_h_divergence(
        &views(&same),
        &views(&same),
        DivergenceMode::BruteForce,
        0.5,
    )
    .unwrap()
        == 0.0;

    let low: Vec<Vec<f64>> = (0..60).map(|i| vec![i as f64 * 0.01]).collect();
    let high: Vec<Vec<f64>> = (0..60).map(|i| vec![10.0 + i as f64 * 0.01]).collect();
    let separable_ok =
        empirical_h_divergence(&views(&low), &views(&high), DivergenceMode::BruteForce, 0.5)
            .unwrap()
            == 2.0;

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut oracle_matches = 0;
    for _ in 0..100 {
        let n_s = rng.gen_range(2..=100);
        let n_t = rng.gen_range(2..=100);
        let src: Vec<Vec<f64>> = (0..n_s).map(|_| vec![rng.gen_range(-4.0..4.0)]).collect();
        let tgt: Vec<Vec<f64>> = (0..n_t).map(|_| vec![rng.gen_range(-4.0..4.0)]).collect();
        let (s, t) = (views(&src), views(&tgt));
        let estimate = empirical_h_divergence(&s, &t, DivergenceMode::BruteForce, 0.5).unwrap();
        if estimate == oracle_divergence_1d(&s, &t) {
            oracle_matches += 1;
        }
    }
    let elapsed = started.elapsed();
    let passed =
        identical_ok && separable_ok && oracle_matches == 100 && elapsed.as_secs_f64() < 10.0;
    report(
        3,
        "divergence oracle",
        passed,
        &format!(
            "identical = 0: {identical_ok}, separable = 2: {separable_ok}, oracle matches {oracle_matches}/100, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Bound verification on seeded trials
// ---------------------------------------------------------------------------

fn bound_trial_spec(rng: &mut ChaCha8Rng) -> SyntheticSpec {
    // moderate covariate and concept shift, all parameters randomized
    fn component(rng: &mut ChaCha8Rng, cx: f64, cy: f64) -> GaussianComponent {
        GaussianComponent {
            mean: vec![cx + rng.gen_range(-0.4..0.4), cy + rng.gen_range(-0.4..0.4)],
            scale: rng.gen_range(0.4..0.9),
            weight: 1.0,
        }
    }
    let base_angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let norm = rng.gen_range(1.5..4.0);
    let max_rot = rng.gen_range(0.0..0.9);
    let mut domain = |name: &str, rotation: f64| {
        let offset = rng.gen_range(-0.3..0.3);
        let a = base_angle + rotation + rng.gen_range(-0.1..0.1);
        let bias = rng.gen_range(-0.3..0.3);
        SyntheticDomain {
            name: name.into(),
            samples: 500,
            components: vec![
                component(rng, 0.9 + offset, 0.3),
                component(rng, -0.9 + offset, -0.3),
            ],
            labeler: LabelingFunction::new(vec![norm * a.cos(), norm * a.sin()], bias, 0.0)
                .unwrap(),
        }
    };
    let sources = vec![domain("s0", 0.0), domain("s1", max_rot / 2.0)];
    let target = domain("t", max_rot);
    SyntheticSpec {
        feature_dim: 2,
        sources,
        target,
        noise: 0.0,
        seed: rng.gen(),
    }
}

#[test]
fn criterion_4_bound_verification() {
    let started = Instant::now();
    let mut holds = 0;
    let mut slowest = 0.0_f64;
    let trials = 50;
    for trial in 0..trials {
        let trial_start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + trial);
        let spec = bound_trial_spec(&mut rng);
        let (corpus, truth) = gen_synthetic(&spec).unwrap();
        let info = truth.synthetic.clone().unwrap();

        // h trained with the warmup objective only
        let config = TrainConfig {
            lr: 2e-3,
            epochs: 6,
            warmup_epochs: 6,
            batch_size: 48,
            seed: 9000 + trial,
            arch: ArchConfig {
                transform_hidden: vec![16],
                transform_out: 8,
                head_hidden: vec![8],
                similarity_hidden: vec![16],
                similarity_out: 4,
                hidden_activation: Activation::Relu,
            },
            ..TrainConfig::default()
        };
        let (model, _) = train(&corpus, &config).unwrap();
        let bound_config = BoundConfig {
            eta: 0.05,
            vc_dim: 3,
            lipschitz: info.lipschitz,
            lambda: LambdaMode::StumpApprox,
            divergence_coefficient: DivergenceCoefficient::Half,
            tau_domain: 0.5,
        };
        let report = bound_report(
            |x| predict_target(&model, x).unwrap_or(0.5),
            Some(&model),
            &corpus,
            &truth,
            &bound_config,
        )
        .unwrap();
        if report.holds {
            holds += 1;
        }
        slowest = slowest.max(trial_start.elapsed().as_secs_f64());
    }
    let passed = holds >= 48 && slowest < 30.0;
    report(
        4,
        "bound verification",
        passed,
        &format!(
            "inequality holds in {holds}/{trials} trials, slowest trial {slowest:.2}s, total {:.1}s",
            started.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. Concept-alignment efficacy under deliberate concept shift
// ---------------------------------------------------------------------------

/// Shared feature marginal (two blobs separated by a density gap at x0 = 0);
/// the target labeling function cuts through the gap and each source's
/// labeling function is the target's rotated by +70 / -70 degrees, so the
/// pooled source labels conflict over a wide band while agreeing with the
/// target labeling on the blob cores.
fn concept_shift_spec(n: usize, seed: u64) -> SyntheticSpec {
    let components = vec![
        GaussianComponent {
            mean: vec![1.2, 0.0],
            scale: 0.45,
            weight: 1.0,
        },
        GaussianComponent {
            mean: vec![-1.2, 0.0],
            scale: 0.45,
            weight: 1.0,
        },
    ];
    let sharp = 30.0;
    let angle = 70.0_f64.to_radians();
    let labeler = |ang: f64| {
        LabelingFunction::new(vec![sharp * ang.cos(), sharp * ang.sin()], 0.0, 0.0).unwrap()
    };
    let domain = |name: &str, ang: f64| SyntheticDomain {
        name: name.into(),
        samples: n,
        components: components.clone(),
        labeler: labeler(ang),
    };
    SyntheticSpec {
        feature_dim: 2,
        sources: vec![domain("s0", angle), domain("s1", -angle)],
        target: domain("t", 0.0),
        noise: 0.0,
        seed,
    }
}

fn study_config(seed: u64, disable_concept: bool) -> TrainConfig {
    TrainConfig {
        lr: 2e-3,
        epochs: 24,
        warmup_epochs: 6,
        batch_size: 30,
        disable_concept_module: disable_concept,
        seed,
        arch: ArchConfig {
            transform_hidden: vec![32, 32],
            transform_out: 16,
            head_hidden: vec![16],
            similarity_hidden: vec![32],
            similarity_out: 8,
            hidden_activation: Activation::Relu,
        },
        ..TrainConfig::default()
    }
}

fn target_f1_for(spec: &SyntheticSpec, config: &TrainConfig) -> f64 {
    let (corpus, truth) = gen_synthetic(spec).unwrap();
    let (model, _) = train(&corpus, config).unwrap();
    let preds: Vec<f64> = corpus
        .target
        .iter()
        .map(|r| predict_target(&model, &r.features).unwrap())
        .collect();
    let counts = confusion(&preds, &truth.target_labels, 0.5).unwrap();
    f1(&counts).unwrap()
}

#[test]
fn criterion_5_concept_alignment_efficacy() {
    let started = Instant::now();
    let seeds = 5u64;
    let mut full_mean = 0.0;
    let mut ablated_mean = 0.0;
    let mut per_seed = Vec::new();
    for seed in 0..seeds {
        let spec = concept_shift_spec(300, 1000 + seed);
        let full = target_f1_for(&spec, &study_config(seed, false));
        let ablated = target_f1_for(&spec, &study_config(seed, true));
        full_mean += full / seeds as f64;
        ablated_mean += ablated / seeds as f64;
        per_seed.push(format!("{:+.3}", full - ablated));
    }
    let gap = full_mean - ablated_mean;
    let elapsed = started.elapsed();
    let passed = gap >= 0.03 && elapsed.as_secs_f64() < 600.0;
    report(
        5,
        "concept-alignment efficacy",
        passed,
        &format!(
            "mean target F1 {full_mean:.4} (full) vs {ablated_mean:.4} (no concept module), gap {gap:+.4} (need >= +0.03), per-seed {per_seed:?}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. Metric formulas
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_metric_formulas() {
    let hand = ConfusionCounts {
        p: 4,
        tp: 3,
        fp: 1,
        n: 5,
    };
    let exact = recall(&hand).unwrap() == 0.75 && f1(&hand).unwrap() == 0.75;

    let from_preds = confusion(&[0.9, 0.8, 0.2, 0.7], &[1, 1, 1, 0], 0.5).unwrap();
    let counted = from_preds
        == ConfusionCounts {
            p: 3,
            tp: 2,
            fp: 1,
            n: 1,
        }
        && recall(&from_preds).unwrap() == 2.0 / 3.0
        && f1(&from_preds).unwrap() == 2.0 * 2.0 / 6.0;

    let perfect = ConfusionCounts {
        p: 7,
        tp: 7,
        fp: 0,
        n: 3,
    };
    let ones = recall(&perfect).unwrap() == 1.0 && f1(&perfect).unwrap() == 1.0;

    let empty_p = ConfusionCounts {
        p: 0,
        tp: 0,
        fp: 0,
        n: 9,
    };
    let raises = matches!(recall(&empty_p), Err(Error::UndefinedMetric(_)))
        && matches!(f1(&empty_p), Err(Error::UndefinedMetric(_)));

    report(
        6,
        "metric formulas",
        exact && counted && ones && raises,
        &format!("hand fixtures exact: {exact} {counted} {ones}, P = 0 raises: {raises}"),
    );
}

// ---------------------------------------------------------------------------
// 7. Training determinism through the CLI
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_cli_determinism() {
    let dir = std::env::temp_dir().join(format!(
        "daca-acceptance-determinism-{}",
        std::process::id()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    let spec_path = dir.join("spec.kv");
    std::fs::write(
        &spec_path,
        "\
feature_dim = 2
seed = 5
source.0.samples = 80
source.0.labeler.weights = 5.0, -5.0
source.0.component.0.mean = 1.0, -1.0
source.0.component.0.scale = 0.5
source.0.component.1.mean = -1.0, 1.0
source.0.component.1.scale = 0.5
source.1.samples = 80
source.1.labeler.weights = 5.0, -5.0
source.1.component.0.mean = 1.0, -1.0
source.1.component.0.scale = 0.5
source.1.component.1.mean = -1.0, 1.0
source.1.component.1.scale = 0.5
target.samples = 50
target.labeler.weights = 5.0, -5.0
target.component.0.mean = 1.0, -1.0
target.component.0.scale = 0.5
",
    )
    .unwrap();
    let status = |args: &[&str]| {
        std::process::Command::new(env!("CARGO_BIN_EXE_daca"))
            .args(args)
            .output()
            .unwrap()
    };
    let out = dir.join("data");
    let o = status(&[
        "synth",
        "--spec",
        spec_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let corpus = dir.join("data.corpus.jsonl");
    for run in ["r1", "r2"] {
        let o = status(&[
            "train",
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            dir.join(run).to_str().unwrap(),
            "--seed",
            "42",
            "--epochs",
            "5",
            "--warmup",
            "2",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |name: &str| std::fs::read(dir.join(name)).unwrap();
    let checkpoints_identical = read("r1.checkpoint.json") == read("r2.checkpoint.json");
    let histories_identical = read("r1.history.json") == read("r2.history.json");
    std::fs::remove_dir_all(&dir).ok();
    report(
        7,
        "training determinism",
        checkpoints_identical && histories_identical,
        &format!(
            "checkpoints bitwise identical: {checkpoints_identical}, histories bitwise identical: {histories_identical}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Two-stage contract
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_two_stage_contract() {
    let spec = concept_shift_spec(120, 77);
    let (corpus, _) = gen_synthetic(&spec).unwrap();
    let config = study_config(3, false);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = daca_core::DacaModel::init(corpus.feature_dim, &config.arch, &mut rng).unwrap();
    let batch = &make_batches(&corpus, config.batch_size, config.seed, 1).unwrap()[0];
    let pool: Vec<&FeatureRecord> = batch
        .source
        .iter()
        .enumerate()
        .flat_map(|(j, idxs)| idxs.iter().map(move |&i| (j, i)))
        .map(|(j, i)| &corpus.sources[j][i])
        .collect();
    let mut peer_rng = ChaCha8Rng::seed_from_u64(11);
    let peers: Vec<_> = (0..pool.len())
        .filter_map(|i| sample_peers(&pool, i, config.negatives_per_anchor, &mut peer_rng))
        .collect();

    let warmup = loss_terms(&model, &corpus, batch, &peers, &config, Stage::Warmup).unwrap();
    let warmup_concept_absent = warmup.concept.is_none() && warmup.source_pairs.is_none();
    // contrastive stays active during warmup; the concept terms contribute
    // exactly nothing to any gradient
    let warmup_has_contrastive = warmup.contrastive.is_some();

    let full = loss_terms(&model, &corpus, batch, &peers, &config, Stage::Full).unwrap();
    let concept = full
        .concept
        .as_ref()
        .expect("concept term active after warmup");
    let concept_grads_nonzero =
        concept.grad_transform.max_abs() > 0.0 && concept.grad_label_head.max_abs() > 0.0;

    // the concept gradient visibly changes the assembled training gradient
    let (_, warmup_grads) = warmup.assemble(&model);
    let (_, full_grads) = full.assemble(&model);
    let mut diff = 0.0_f64;
    let mut a = Vec::new();
    let mut b = Vec::new();
    warmup_grads.label_head.copy_flat_into(&mut a);
    full_grads.label_head.copy_flat_into(&mut b);
    for (x, y) in a.iter().zip(&b) {
        diff = diff.max((x - y).abs());
    }
    let passed =
        warmup_concept_absent && warmup_has_contrastive && concept_grads_nonzero && diff > 0.0;
    report(
        8,
        "two-stage contract",
        passed,
        &format!(
            "warmup concept terms absent: {warmup_concept_absent}, contrastive active in warmup: {warmup_has_contrastive}, full-stage concept gradient nonzero: {concept_grads_nonzero} (label-head gradient shift {diff:.3e})"
        ),
    );
}

// keep the example constructions honest: the shifted corpus really shifts
#[test]
fn concept_shift_spec_disagrees_on_a_wide_band() {
    let spec = concept_shift_spec(400, 3);
    let (corpus, truth) = gen_synthetic(&spec).unwrap();
    let info = truth.synthetic.unwrap();
    let mut disagree = 0;
    for rec in corpus.sources.iter().flatten() {
        let f0 = info.source_labelers[0].prob(&rec.features);
        let ft = info.target_labeler.prob(&rec.features);
        if (f0 > 0.5) != (ft > 0.5) {
            disagree += 1;
        }
    }
    let frac = disagree as f64 / corpus.total_source_records() as f64;
    assert!(
        (0.1..0.6).contains(&frac),
        "disagreement fraction {frac} out of the intended band"
    );
}
