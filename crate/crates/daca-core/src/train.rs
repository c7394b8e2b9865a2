//! Two-stage training of the combined objective.
//!
//! The warmup stage minimizes the label, domain, and contrastive losses so
//! a reliable similarity function exists before the concept terms switch on
//! in the full stage. All randomness flows from the config seed; two runs
//! with the same corpus and config are bitwise identical.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{label_loss, predict_label_prob, ClassifierHead};
use crate::concept::{
    concept_loss, sample_peers, select_extremes_for_anchors, source_pair_concept_loss, ConceptTerm,
    ContrastiveTerm, PairingMode, PeerSet, SimilarityNet,
};
use crate::covariate::{domain_loss, DomainHead, DomainTerm};
use crate::data::{make_batches, Batch, Corpus, FeatureRecord};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, Activation, AdamState, MlpGrads, MlpParams};

/// Network shapes; every width is configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub transform_hidden: Vec<usize>,
    pub transform_out: usize,
    pub head_hidden: Vec<usize>,
    pub similarity_hidden: Vec<usize>,
    pub similarity_out: usize,
    pub hidden_activation: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            transform_hidden: vec![64, 64],
            transform_out: 64,
            head_hidden: vec![32],
            similarity_hidden: vec![64, 64],
            similarity_out: 32,
            hidden_activation: Activation::Relu,
        }
    }
}

/// Training configuration. Loss weights multiply per-batch, size-normalized
/// module losses; `weight_source_pairs = None` resolves to `1 / (k (k - 1))`
/// so the source-pair term does not grow with the number of domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    /// Negative peers per anchor in the contrastive loss.
    pub negatives_per_anchor: usize,
    pub temperature: f64,
    pub weight_domain: f64,
    pub weight_contrastive: f64,
    pub weight_concept: f64,
    pub weight_source_pairs: Option<f64>,
    /// Drops the contrastive and concept losses entirely.
    pub disable_concept_module: bool,
    /// Drops the contrastive loss and pairs by cosine on raw features.
    pub disable_contrastive_submodule: bool,
    pub seed: u64,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 30,
            warmup_epochs: 5,
            batch_size: 32,
            negatives_per_anchor: 3,
            temperature: 0.5,
            weight_domain: 1.0,
            weight_contrastive: 1.0,
            weight_concept: 1.0,
            weight_source_pairs: None,
            disable_concept_module: false,
            disable_contrastive_submodule: false,
            seed: 0,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.negatives_per_anchor == 0 {
            return Err(Error::InvalidConfig(
                "negatives_per_anchor must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.temperature) || self.temperature == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature must be in (0, 1), got {}",
                self.temperature
            )));
        }
        for (name, w) in [
            ("weight_domain", self.weight_domain),
            ("weight_contrastive", self.weight_contrastive),
            ("weight_concept", self.weight_concept),
            (
                "weight_source_pairs",
                self.weight_source_pairs.unwrap_or(0.0),
            ),
        ] {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// The full parameter set: shared transform + label head, domain head, and
/// similarity projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DacaModel {
    pub classifier: ClassifierHead,
    pub domain: DomainHead,
    pub similarity: SimilarityNet,
}

impl DacaModel {
    /// Seeded Xavier init of all four networks, in a fixed order.
    pub fn init(feature_dim: usize, arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        let chain = |ins: usize, hidden: &[usize], out: usize| {
            let mut dims = vec![ins];
            dims.extend_from_slice(hidden);
            dims.push(out);
            dims
        };
        let act = arch.hidden_activation;
        let transform = MlpParams::init(
            &chain(feature_dim, &arch.transform_hidden, arch.transform_out),
            act,
            Activation::Identity,
            rng,
        )?;
        let label_head = MlpParams::init(
            &chain(arch.transform_out, &arch.head_hidden, 1),
            act,
            Activation::Sigmoid,
            rng,
        )?;
        let domain_head = MlpParams::init(
            &chain(arch.transform_out, &arch.head_hidden, 1),
            act,
            Activation::Sigmoid,
            rng,
        )?;
        let projection = MlpParams::init(
            &chain(feature_dim, &arch.similarity_hidden, arch.similarity_out),
            act,
            Activation::Identity,
            rng,
        )?;
        let model = Self {
            classifier: ClassifierHead {
                transform,
                label_head,
            },
            domain: DomainHead { net: domain_head },
            similarity: SimilarityNet { projection },
        };
        model.validate(feature_dim)?;
        Ok(model)
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        self.classifier.validate()?;
        if self.classifier.transform.in_dim() != feature_dim {
            return Err(Error::DimensionMismatch {
                context: "transform in-dim".into(),
                expected: feature_dim,
                actual: self.classifier.transform.in_dim(),
            });
        }
        self.domain.validate(self.classifier.transform.out_dim())?;
        self.similarity.validate(feature_dim)?;
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.transform.in_dim()
    }
}

/// Gradients for every parameter set of a [`DacaModel`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub transform: MlpGrads,
    pub label_head: MlpGrads,
    pub domain_head: MlpGrads,
    pub projection: MlpGrads,
}

impl ModelGrads {
    pub fn zeros_like(model: &DacaModel) -> Self {
        Self {
            transform: MlpGrads::zeros_like(&model.classifier.transform),
            label_head: MlpGrads::zeros_like(&model.classifier.label_head),
            domain_head: MlpGrads::zeros_like(&model.domain.net),
            projection: MlpGrads::zeros_like(&model.similarity.projection),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.transform.is_finite()
            && self.label_head.is_finite()
            && self.domain_head.is_finite()
            && self.projection.is_finite()
    }
}

/// Training stage: the warmup objective excludes the concept terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Warmup,
    Full,
}

/// Per-batch, size-normalized loss values. Terms that are inactive in the
/// current stage or ablation are `None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub label: f64,
    pub domain: Option<f64>,
    pub contrastive: Option<f64>,
    pub concept: Option<f64>,
    pub source_pairs: Option<f64>,
    pub combined: f64,
}

/// Detailed per-term values and gradients, for instrumentation and for the
/// acceptance suite's decomposition checks.
pub struct LossTerms<'a> {
    pub label: crate::classify::LabelTerm,
    pub domain: Option<DomainTerm>,
    pub contrastive: Option<ContrastiveTerm>,
    pub concept: Option<ConceptTerm>,
    pub source_pairs: Option<ConceptTerm>,
    pub source_count: usize,
    pub record_count: usize,
    pub weights: EffectiveWeights,
    pub peer_sets: &'a [PeerSet<'a>],
}

/// Loss weights after resolving stage, ablations, and the k-dependent
/// source-pair default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveWeights {
    pub domain: f64,
    pub contrastive: f64,
    pub concept: f64,
    pub source_pairs: f64,
    /// Pair extremes by raw-feature cosine instead of the learned similarity.
    pub raw_pairing: bool,
}

impl EffectiveWeights {
    pub fn resolve(config: &TrainConfig, k: usize, stage: Stage) -> Self {
        let default_pairs = if k >= 2 {
            1.0 / (k as f64 * (k as f64 - 1.0))
        } else {
            0.0
        };
        let mut w = Self {
            domain: config.weight_domain,
            contrastive: config.weight_contrastive,
            concept: config.weight_concept,
            source_pairs: config.weight_source_pairs.unwrap_or(default_pairs),
            raw_pairing: false,
        };
        if config.disable_concept_module {
            w.contrastive = 0.0;
            w.concept = 0.0;
            w.source_pairs = 0.0;
        }
        if config.disable_contrastive_submodule {
            w.contrastive = 0.0;
            w.raw_pairing = true;
        }
        if stage == Stage::Warmup {
            w.concept = 0.0;
            w.source_pairs = 0.0;
        }
        w
    }
}

fn batch_refs<'a>(
    corpus: &'a Corpus,
    batch: &Batch,
) -> (Vec<Vec<&'a FeatureRecord>>, Vec<&'a FeatureRecord>) {
    let by_domain: Vec<Vec<&FeatureRecord>> = batch
        .source
        .iter()
        .enumerate()
        .map(|(j, idxs)| idxs.iter().map(|&i| &corpus.sources[j][i]).collect())
        .collect();
    let target = batch.target.iter().map(|&i| &corpus.target[i]).collect();
    (by_domain, target)
}

/// Computes every active loss term for one batch. Zero-weight terms are
/// skipped entirely so ablation runs and zero-weight runs share one code
/// path (and one arithmetic trajectory).
pub fn loss_terms<'a>(
    model: &DacaModel,
    corpus: &Corpus,
    batch: &Batch,
    peer_sets: &'a [PeerSet<'a>],
    config: &TrainConfig,
    stage: Stage,
) -> Result<LossTerms<'a>> {
    let weights = EffectiveWeights::resolve(config, corpus.num_sources(), stage);
    let (by_domain, target) = batch_refs(corpus, batch);
    let all_source: Vec<&FeatureRecord> = by_domain.iter().flatten().copied().collect();
    if all_source.is_empty() {
        return Err(Error::InvalidInput("batch has no source records".into()));
    }

    let label = label_loss(&model.classifier, &all_source)?;

    let domain = if weights.domain != 0.0 {
        Some(domain_loss(
            &model.classifier.transform,
            &model.domain,
            &all_source,
            &target,
            true,
        )?)
    } else {
        None
    };

    let contrastive = if weights.contrastive != 0.0 && !peer_sets.is_empty() {
        Some(crate::concept::contrastive_loss(
            &model.similarity,
            peer_sets,
            config.temperature,
        )?)
    } else {
        None
    };

    let pairing = if weights.raw_pairing {
        PairingMode::RawCosine
    } else {
        PairingMode::Learned(&model.similarity)
    };

    let concept = if weights.concept != 0.0 {
        let anchor_feats: Vec<&[f64]> = all_source.iter().map(|r| r.features.as_slice()).collect();
        let cand_feats: Vec<&[f64]> = target.iter().map(|r| r.features.as_slice()).collect();
        let pairs = select_extremes_for_anchors(&pairing, &anchor_feats, &cand_feats)?;
        Some(concept_loss(&model.classifier, &pairs)?)
    } else {
        None
    };

    let source_pairs = if weights.source_pairs != 0.0 && corpus.num_sources() >= 2 {
        Some(source_pair_concept_loss(
            &model.classifier,
            &pairing,
            &by_domain,
            weights.source_pairs,
        )?)
    } else {
        None
    };

    Ok(LossTerms {
        label,
        domain,
        contrastive,
        concept,
        source_pairs,
        source_count: all_source.len(),
        record_count: all_source.len() + target.len(),
        weights,
        peer_sets,
    })
}

impl LossTerms<'_> {
    /// Assembles the weighted, size-normalized breakdown and the training
    /// gradient (domain term already reversed at the transform).
    pub fn assemble(&self, model: &DacaModel) -> (LossBreakdown, ModelGrads) {
        let n_src = self.source_count as f64;
        let n_all = self.record_count as f64;
        let mut grads = ModelGrads::zeros_like(model);

        let label_norm = self.label.value / n_src;
        grads
            .transform
            .add_scaled(&self.label.grad_transform, 1.0 / n_src);
        grads
            .label_head
            .add_scaled(&self.label.grad_label_head, 1.0 / n_src);
        let mut combined = label_norm;

        let domain_norm = self.domain.as_ref().map(|term| {
            let norm = term.value / n_all;
            let scale = self.weights.domain / n_all;
            grads.transform.add_scaled(&term.grad_transform, scale);
            grads.domain_head.add_scaled(&term.grad_domain_head, scale);
            combined += self.weights.domain * norm;
            norm
        });

        let contrastive_norm = self.contrastive.as_ref().map(|term| {
            let n = term.anchors.max(1) as f64;
            let norm = term.value / n;
            let scale = self.weights.contrastive / n;
            grads.projection.add_scaled(&term.grad_projection, scale);
            combined += self.weights.contrastive * norm;
            norm
        });

        let concept_norm = self.concept.as_ref().map(|term| {
            let norm = term.value / n_src;
            let scale = self.weights.concept / n_src;
            grads.transform.add_scaled(&term.grad_transform, scale);
            grads.label_head.add_scaled(&term.grad_label_head, scale);
            combined += self.weights.concept * norm;
            norm
        });

        // source-pair term arrives pre-weighted and per-anchor normalized
        let source_pair_value = self.source_pairs.as_ref().map(|term| {
            grads.transform.add_scaled(&term.grad_transform, 1.0);
            grads.label_head.add_scaled(&term.grad_label_head, 1.0);
            combined += term.value;
            term.value
        });

        (
            LossBreakdown {
                label: label_norm,
                domain: domain_norm,
                contrastive: contrastive_norm,
                concept: concept_norm,
                source_pairs: source_pair_value,
                combined,
            },
            grads,
        )
    }
}

/// Weighted sum of the per-batch module losses for one stage, with the
/// training gradient (gradient reversal applied inside the domain term).
pub fn combined_loss(
    model: &DacaModel,
    corpus: &Corpus,
    batch: &Batch,
    peer_sets: &[PeerSet<'_>],
    config: &TrainConfig,
    stage: Stage,
) -> Result<(LossBreakdown, ModelGrads)> {
    Ok(loss_terms(model, corpus, batch, peer_sets, config, stage)?.assemble(model))
}

/// Loss record for one epoch; concept terms are absent during warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub label_loss: f64,
    pub domain_loss: Option<f64>,
    pub contrastive_loss: Option<f64>,
    pub concept_loss: Option<f64>,
    pub source_pair_loss: Option<f64>,
    pub combined_loss: f64,
}

/// Per-epoch mean batch losses for a whole run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochHistory {
    pub epochs: Vec<EpochRecord>,
}

struct MeanAcc {
    sum: f64,
    count: usize,
}

impl MeanAcc {
    fn new() -> Self {
        Self { sum: 0.0, count: 0 }
    }

    fn push(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.count += 1;
        }
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Trains a model on the corpus. Returns the model and per-epoch history.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<(DacaModel, EpochHistory)> {
    config.validate()?;
    corpus.validate(false)?;
    let labels_present = |label: u8| {
        corpus
            .sources
            .iter()
            .flatten()
            .any(|r| r.label == Some(label))
    };
    if !labels_present(0) || !labels_present(1) {
        return Err(Error::UnusableCorpus(
            "source corpora contain only one label class".into(),
        ));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = DacaModel::init(corpus.feature_dim, &config.arch, &mut init_rng)?;
    let mut peer_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_5EED_5EED_5EED);

    let mut adam_transform = AdamState::new(model.classifier.transform.param_count());
    let mut adam_label = AdamState::new(model.classifier.label_head.param_count());
    let mut adam_domain = AdamState::new(model.domain.net.param_count());
    let mut adam_projection = AdamState::new(model.similarity.projection.param_count());

    let mut history = EpochHistory::default();
    for epoch in 1..=config.epochs {
        let stage = if epoch <= config.warmup_epochs {
            Stage::Warmup
        } else {
            Stage::Full
        };
        let weights = EffectiveWeights::resolve(config, corpus.num_sources(), stage);
        let batches = make_batches(corpus, config.batch_size, config.seed, epoch)?;
        let mut acc_label = MeanAcc::new();
        let mut acc_domain = MeanAcc::new();
        let mut acc_contrastive = MeanAcc::new();
        let mut acc_concept = MeanAcc::new();
        let mut acc_pairs = MeanAcc::new();
        let mut acc_combined = MeanAcc::new();
        for (batch_idx, batch) in batches.iter().enumerate() {
            let (by_domain, _) = batch_refs(corpus, batch);
            let pool: Vec<&FeatureRecord> = by_domain.iter().flatten().copied().collect();
            let peer_sets: Vec<PeerSet<'_>> = if weights.contrastive != 0.0 {
                (0..pool.len())
                    .filter_map(|i| {
                        sample_peers(&pool, i, config.negatives_per_anchor, &mut peer_rng)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let (breakdown, grads) =
                combined_loss(&model, corpus, batch, &peer_sets, config, stage)?;
            if !breakdown.combined.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    what: "combined loss".into(),
                    epoch,
                    batch: batch_idx,
                });
            }
            let step = |params: &mut MlpParams, g: &MlpGrads, state: &mut AdamState| {
                adam_step(params, g, state, config.lr).map_err(|e| match e {
                    Error::NonFinite(what) => Error::Divergence {
                        what,
                        epoch,
                        batch: batch_idx,
                    },
                    other => other,
                })
            };
            step(
                &mut model.classifier.transform,
                &grads.transform,
                &mut adam_transform,
            )?;
            step(
                &mut model.classifier.label_head,
                &grads.label_head,
                &mut adam_label,
            )?;
            if breakdown.domain.is_some() {
                step(&mut model.domain.net, &grads.domain_head, &mut adam_domain)?;
            }
            // the projection is updated by the contrastive loss alone
            if breakdown.contrastive.is_some() {
                step(
                    &mut model.similarity.projection,
                    &grads.projection,
                    &mut adam_projection,
                )?;
            }
            acc_label.push(Some(breakdown.label));
            acc_domain.push(breakdown.domain);
            acc_contrastive.push(breakdown.contrastive);
            acc_concept.push(breakdown.concept);
            acc_pairs.push(breakdown.source_pairs);
            acc_combined.push(Some(breakdown.combined));
        }
        history.epochs.push(EpochRecord {
            epoch,
            stage,
            label_loss: acc_label.mean().unwrap_or(0.0),
            domain_loss: acc_domain.mean(),
            contrastive_loss: acc_contrastive.mean(),
            concept_loss: acc_concept.mean(),
            source_pair_loss: acc_pairs.mean(),
            combined_loss: acc_combined.mean().unwrap_or(0.0),
        });
    }
    Ok((model, history))
}

/// Probability that a feature vector is misinformation; the inference path
/// touches only the transform and label head.
pub fn predict_target(model: &DacaModel, x: &[f64]) -> Result<f64> {
    predict_label_prob(&model.classifier, x)
}

/// Hard decision: label 1 iff the probability is strictly above 0.5, so a
/// probability of exactly 0.5 resolves to 0.
pub fn hard_label(p: f64) -> u8 {
    u8::from(p > 0.5)
}

/// Versioned model container; round-trips bit-exactly through JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub feature_dim: usize,
    pub seed: u64,
    pub config: TrainConfig,
    pub model: DacaModel,
}

/// Format tag written into every checkpoint.
pub const CHECKPOINT_FORMAT: &str = "daca-checkpoint-v1";

impl Checkpoint {
    pub fn new(model: DacaModel, config: TrainConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            feature_dim: model.feature_dim(),
            seed: config.seed,
            config,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT})",
                ck.format
            )));
        }
        ck.model.validate(ck.feature_dim)?;
        Ok(ck)
    }
}
