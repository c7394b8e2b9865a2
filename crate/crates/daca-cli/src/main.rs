//! Command-line entry point: synthetic corpus generation, training,
//! evaluation, bound estimation, and gradient self-checks.

mod config;
mod kv;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use daca_core::bound::{bound_report, BoundConfig, DivergenceCoefficient, LambdaMode};
use daca_core::data::{gen_synthetic, load_corpus, load_truth, write_corpus, write_truth};
use daca_core::gradcheck::run_gradcheck;
use daca_core::metrics::{confusion, MetricsReport};
use daca_core::train::{predict_target, train, Checkpoint};
use daca_core::{Error, Result};

use crate::kv::KvFile;
use crate::manifest::{ManifestBuilder, OutPaths};

#[derive(Parser)]
#[command(
    name = "daca",
    about = "Cross-domain misinformation detection: train with covariate and concept alignment, evaluate, and verify the target-error bound on synthetic corpora",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (plus truth file) from a spec file.
    Synth(SynthArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint against a labeled (truth) corpus.
    Eval(EvalArgs),
    /// Compute the target-error bound report on a synthetic corpus.
    Bound(BoundArgs),
    /// Check analytic gradients of every loss against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic spec file (flat key = value format).
    #[arg(long)]
    spec: PathBuf,
    /// Output prefix; writes <out>.corpus.jsonl, <out>.truth.jsonl,
    /// <out>.manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed declared in the spec file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus file.
    #[arg(long)]
    corpus: PathBuf,
    /// Training config file (flat key = value format); defaults apply
    /// when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output prefix; writes <out>.checkpoint.json, <out>.history.json,
    /// <out>.manifest.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Number of warmup epochs (concept terms off).
    #[arg(long)]
    warmup: Option<usize>,
    /// Ablation: drop the contrastive and concept losses entirely.
    #[arg(long = "no-concept")]
    no_concept: bool,
    /// Ablation: drop the contrastive loss and pair by raw-feature cosine.
    #[arg(long = "no-contrastive")]
    no_contrastive: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled corpus (truth file with target labels).
    #[arg(long)]
    corpus: PathBuf,
    /// Output prefix; writes <out>.metrics.txt and <out>.manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    /// Trained checkpoint providing the hypothesis h.
    #[arg(long, conflicts_with = "ideal")]
    checkpoint: Option<PathBuf>,
    /// Use the true target labeling function as the hypothesis.
    #[arg(long)]
    ideal: bool,
    /// Training-view corpus file.
    #[arg(long)]
    corpus: PathBuf,
    /// Truth file carrying target labels and labeling functions.
    #[arg(long)]
    truth: PathBuf,
    /// Output prefix; writes <out>.bound.txt, <out>.bound.json,
    /// <out>.manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Confidence parameter in (0, 1).
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    /// VC-dimension surrogate for the hypothesis class.
    #[arg(long = "vc-dim", default_value_t = 3)]
    vc_dim: usize,
    /// Ideal-hypothesis error: a number, or `stump` to approximate it over
    /// the threshold-stump class. Defaults to 0 (optimistic).
    #[arg(long)]
    lambda: Option<String>,
    /// Coefficient on the divergence term.
    #[arg(long = "div-coeff", value_enum, default_value_t = DivCoeffArg::Half)]
    div_coeff: DivCoeffArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum DivCoeffArg {
    Half,
    One,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional output prefix for a machine-readable report + manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    // die quietly when stdout is closed early (e.g. piped into `head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bound(args) => cmd_bound(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 = input/config error, 3 = numerical divergence, 4 = undefined metric.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } | Error::NonFinite(_) => 3,
        Error::UndefinedMetric(_) => 4,
        _ => 2,
    }
}

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    let mut manifest = ManifestBuilder::new("synth");
    let mut spec = config::synthetic_spec_from_kv(&KvFile::load(&args.spec)?)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    manifest.config(&spec)?;
    manifest.seed(spec.seed);
    let (corpus, truth) = gen_synthetic(&spec)?;
    let out = OutPaths::new(&args.out)?;
    let corpus_path = out.with_suffix("corpus.jsonl");
    let truth_path = out.with_suffix("truth.jsonl");
    write_corpus(&corpus, &corpus_path)?;
    write_truth(&corpus, &truth, &truth_path)?;
    manifest.artifact(&corpus_path)?;
    manifest.artifact(&truth_path)?;
    manifest.write(&out.manifest())?;
    println!(
        "wrote {} and {}",
        corpus_path.display(),
        truth_path.display()
    );
    println!(
        "domains: {} sources ({} records) + target ({} records), feature_dim {}",
        corpus.num_sources(),
        corpus.total_source_records(),
        corpus.target.len(),
        corpus.feature_dim
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let mut manifest = ManifestBuilder::new("train");
    manifest.corpus_path(&args.corpus);
    let mut config = match &args.config {
        Some(path) => config::train_config_from_kv(&KvFile::load(path)?)?,
        None => daca_core::TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(warmup) = args.warmup {
        config.warmup_epochs = warmup;
    }
    config.disable_concept_module |= args.no_concept;
    config.disable_contrastive_submodule |= args.no_contrastive;
    config.validate()?;
    manifest.config(&config)?;
    manifest.seed(config.seed);

    let corpus = load_corpus(&args.corpus)?;
    let (model, history) = train(&corpus, &config)?;
    let last = history.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs (warmup {}): final combined loss {:.6}",
        config.epochs, config.warmup_epochs, last.combined_loss
    );

    let out = OutPaths::new(&args.out)?;
    let checkpoint_path = out.with_suffix("checkpoint.json");
    let history_path = out.with_suffix("history.json");
    Checkpoint::new(model, config).save(&checkpoint_path)?;
    std::fs::write(&history_path, serde_json::to_string_pretty(&history)?)?;
    manifest.artifact(&checkpoint_path)?;
    manifest.artifact(&history_path)?;
    manifest.write(&out.manifest())?;
    println!(
        "wrote {} and {}",
        checkpoint_path.display(),
        history_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let mut manifest = ManifestBuilder::new("eval");
    manifest.corpus_path(&args.corpus);
    let ck = Checkpoint::load(&args.checkpoint)?;
    let (corpus, truth) = load_truth(&args.corpus)?;
    if corpus.feature_dim != ck.feature_dim {
        return Err(Error::DimensionMismatch {
            context: "checkpoint vs corpus feature_dim".into(),
            expected: ck.feature_dim,
            actual: corpus.feature_dim,
        });
    }
    let mut predictions = Vec::with_capacity(corpus.target.len());
    for rec in &corpus.target {
        predictions.push(predict_target(&ck.model, &rec.features)?);
    }
    let counts = confusion(&predictions, &truth.target_labels, 0.5)?;
    let report = MetricsReport::from_counts(counts)?;
    println!("{report}");

    #[derive(Serialize)]
    struct EvalConfig<'a> {
        checkpoint: &'a str,
        threshold: f64,
    }
    manifest.config(&EvalConfig {
        checkpoint: &args.checkpoint.display().to_string(),
        threshold: 0.5,
    })?;
    let out = OutPaths::new(&args.out)?;
    let report_path = out.with_suffix("metrics.txt");
    std::fs::write(&report_path, format!("{report}\n"))?;
    manifest.artifact(&report_path)?;
    manifest.write(&out.manifest())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_bound(args: BoundArgs) -> Result<ExitCode> {
    if args.checkpoint.is_none() && !args.ideal {
        return Err(Error::InvalidInput(
            "bound needs either --checkpoint or --ideal".into(),
        ));
    }
    let mut manifest = ManifestBuilder::new("bound");
    manifest.corpus_path(&args.corpus);
    manifest.corpus_path(&args.truth);
    let corpus = load_corpus(&args.corpus)?;
    let (truth_corpus, truth) = load_truth(&args.truth)?;
    if truth_corpus.target.len() != corpus.target.len()
        || truth_corpus.feature_dim != corpus.feature_dim
    {
        return Err(Error::InvalidInput(
            "corpus and truth files do not describe the same dataset".into(),
        ));
    }
    let info = truth.synthetic.as_ref().ok_or_else(|| {
        Error::InvalidInput("truth file carries no synthetic labeling functions".into())
    })?;

    let lambda = match args.lambda.as_deref() {
        None => LambdaMode::Supplied(0.0),
        Some("stump") => LambdaMode::StumpApprox,
        Some(v) => LambdaMode::Supplied(v.parse::<f64>().map_err(|_| {
            Error::InvalidConfig(format!("--lambda expects a number or `stump`, got {v:?}"))
        })?),
    };
    let config = BoundConfig {
        eta: args.eta,
        vc_dim: args.vc_dim,
        lipschitz: info.lipschitz,
        lambda,
        divergence_coefficient: match args.div_coeff {
            DivCoeffArg::Half => DivergenceCoefficient::Half,
            DivCoeffArg::One => DivergenceCoefficient::One,
        },
        tau_domain: 0.5,
    };
    manifest.config(&config)?;

    let ck = args
        .checkpoint
        .as_deref()
        .map(Checkpoint::load)
        .transpose()?;
    let report = match &ck {
        Some(ck) => {
            if ck.feature_dim != corpus.feature_dim {
                return Err(Error::DimensionMismatch {
                    context: "checkpoint vs corpus feature_dim".into(),
                    expected: ck.feature_dim,
                    actual: corpus.feature_dim,
                });
            }
            let model = &ck.model;
            bound_report(
                |x| predict_target(model, x).unwrap_or(0.5),
                Some(model),
                &corpus,
                &truth,
                &config,
            )?
        }
        None => {
            let labeler = info.target_labeler.clone();
            bound_report(|x| labeler.prob(x), None, &corpus, &truth, &config)?
        }
    };
    println!("{report}");
    if report.optimistic_lambda {
        eprintln!(
            "warning: lambda defaulted to 0 (optimistic constant); pass --lambda stump or a value"
        );
    }

    let out = OutPaths::new(&args.out)?;
    let text_path = out.with_suffix("bound.txt");
    let json_path = out.with_suffix("bound.json");
    std::fs::write(&text_path, format!("{report}"))?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
    manifest.artifact(&text_path)?;
    manifest.artifact(&json_path)?;
    manifest.write(&out.manifest())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let reports = run_gradcheck(args.seed)?;
    let mut all_passed = true;
    for r in &reports {
        println!(
            "{}: {} (max relative error {:.3e}, tolerance {:.0e})",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.max_rel_error,
            r.tolerance
        );
        all_passed &= r.passed;
    }
    if let Some(prefix) = &args.out {
        #[derive(Serialize)]
        struct Line {
            name: &'static str,
            max_rel_error: f64,
            tolerance: f64,
            passed: bool,
        }
        let lines: Vec<Line> = reports
            .iter()
            .map(|r| Line {
                name: r.name,
                max_rel_error: r.max_rel_error,
                tolerance: r.tolerance,
                passed: r.passed,
            })
            .collect();
        let mut manifest = ManifestBuilder::new("gradcheck");
        manifest.seed(args.seed);
        let out = OutPaths::new(prefix)?;
        let path = out.with_suffix("gradcheck.json");
        std::fs::write(&path, serde_json::to_string_pretty(&lines)?)?;
        manifest.artifact(&path)?;
        manifest.write(&out.manifest())?;
    }
    Ok(if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
