//! Corpus representation, line-delimited file I/O, batching, and a
//! synthetic-corpus generator with known labeling functions.
//!
//! File format: UTF-8, one JSON object per line. The first line is a
//! header `{"feature_dim": D, "domains": [...]}`; every following line is
//! a record with keys `id`, `domain`, `features`, and (for source records)
//! `label`. The domain string `"__target__"` is reserved for the target.
//! Truth files use the same layout with `label` present on target records
//! and, for synthetic corpora, a `synthetic` header extension carrying the
//! labeling functions and their Lipschitz constant.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::sigmoid;

/// Reserved domain string for target records in corpus files.
pub const TARGET_DOMAIN: &str = "__target__";

/// Which domain a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// Index into [`Corpus::domain_names`].
    Source(usize),
    Target,
}

/// One piece of information: an id, a domain, a dense feature vector, and
/// (for source records) a binary label. Label 0 = true information,
/// 1 = misinformation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub domain: Domain,
    pub features: Vec<f64>,
    pub label: Option<u8>,
}

/// k labeled source datasets plus one unlabeled target dataset sharing a
/// feature dimension. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub feature_dim: usize,
    pub domain_names: Vec<String>,
    pub sources: Vec<Vec<FeatureRecord>>,
    pub target: Vec<FeatureRecord>,
}

impl Corpus {
    /// Number of source domains.
    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn total_source_records(&self) -> usize {
        self.sources.iter().map(Vec::len).sum()
    }

    /// Validates every corpus invariant; `allow_target_labels` is set for
    /// truth files, where target records carry eval-only labels.
    pub fn validate(&self, allow_target_labels: bool) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::InvalidInput("corpus has no source domains".into()));
        }
        if self.sources.len() != self.domain_names.len() {
            return Err(Error::InvalidInput(
                "domain name list does not match source datasets".into(),
            ));
        }
        if self.target.is_empty() {
            return Err(Error::InvalidInput("corpus has no target records".into()));
        }
        for (j, records) in self.sources.iter().enumerate() {
            if records.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "source domain {} has no records",
                    self.domain_names[j]
                )));
            }
            for rec in records {
                self.validate_record(rec, Domain::Source(j), false)?;
            }
        }
        for rec in &self.target {
            self.validate_record(rec, Domain::Target, allow_target_labels)?;
        }
        Ok(())
    }

    fn validate_record(
        &self,
        rec: &FeatureRecord,
        expected: Domain,
        allow_target_labels: bool,
    ) -> Result<()> {
        if rec.domain != expected {
            return Err(Error::InvalidRecord {
                id: rec.id.clone(),
                message: "record filed under the wrong domain".into(),
            });
        }
        if rec.features.len() != self.feature_dim {
            return Err(Error::InvalidRecord {
                id: rec.id.clone(),
                message: format!(
                    "features length {} does not match corpus feature_dim {}",
                    rec.features.len(),
                    self.feature_dim
                ),
            });
        }
        if rec.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRecord {
                id: rec.id.clone(),
                message: "non-finite feature value".into(),
            });
        }
        match (rec.domain, rec.label) {
            (Domain::Source(_), None) => Err(Error::InvalidRecord {
                id: rec.id.clone(),
                message: "source record is missing its label".into(),
            }),
            (Domain::Target, Some(_)) if !allow_target_labels => Err(Error::InvalidRecord {
                id: rec.id.clone(),
                message: "target record carries a label in a training corpus".into(),
            }),
            (_, Some(l)) if l > 1 => Err(Error::InvalidRecord {
                id: rec.id.clone(),
                message: format!("label must be 0 or 1, got {l}"),
            }),
            _ => Ok(()),
        }
    }
}

/// Logistic-of-affine labeling function with an optional label-flip rate:
/// `f(x) = flip + (1 - 2 flip) * sigmoid(w . x + b)`.
///
/// Its Lipschitz constant is known in closed form: `(1 - 2 flip) ||w|| / 4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingFunction {
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default)]
    pub flip: f64,
}

impl LabelingFunction {
    pub fn new(weights: Vec<f64>, bias: f64, flip: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&flip) {
            return Err(Error::InvalidConfig(format!(
                "label flip rate must be in [0, 0.5), got {flip}"
            )));
        }
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::InvalidConfig(
                "labeling function needs finite, non-empty weights".into(),
            ));
        }
        Ok(Self {
            weights,
            bias,
            flip,
        })
    }

    /// Probability of label 1 for a feature vector.
    pub fn prob(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.weights.len());
        let score: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
        self.flip + (1.0 - 2.0 * self.flip) * sigmoid(score + self.bias)
    }

    /// Closed-form Lipschitz bound of [`Self::prob`].
    pub fn lipschitz(&self) -> f64 {
        let norm: f64 = self.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        (1.0 - 2.0 * self.flip) * norm / 4.0
    }
}

/// One Gaussian mixture component: `x = mean + scale * z`, `z ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    pub scale: f64,
    pub weight: f64,
}

/// Feature distribution and labeling function for one synthetic domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomain {
    pub name: String,
    pub samples: usize,
    pub components: Vec<GaussianComponent>,
    pub labeler: LabelingFunction,
}

/// Full description of a synthetic corpus: per-domain Gaussian mixtures,
/// logistic labeling functions (Lipschitz constant known by construction),
/// sample counts, a global label-noise level, and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub feature_dim: usize,
    pub sources: Vec<SyntheticDomain>,
    pub target: SyntheticDomain,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::InvalidConfig(
                "synthetic spec needs k >= 1 sources".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::InvalidConfig(format!(
                "noise level must be in [0, 0.5), got {}",
                self.noise
            )));
        }
        for dom in self.sources.iter().chain(std::iter::once(&self.target)) {
            if dom.samples == 0 {
                return Err(Error::InvalidConfig(format!(
                    "domain {} has zero samples",
                    dom.name
                )));
            }
            if dom.components.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "domain {} has no mixture components",
                    dom.name
                )));
            }
            for c in &dom.components {
                if c.mean.len() != self.feature_dim {
                    return Err(Error::InvalidConfig(format!(
                        "domain {}: component mean dim {} != feature_dim {}",
                        dom.name,
                        c.mean.len(),
                        self.feature_dim
                    )));
                }
                if c.scale <= 0.0 || c.weight <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "domain {}: component scale and weight must be positive",
                        dom.name
                    )));
                }
            }
            if dom.labeler.weights.len() != self.feature_dim {
                return Err(Error::InvalidConfig(format!(
                    "domain {}: labeler weight dim {} != feature_dim {}",
                    dom.name,
                    dom.labeler.weights.len(),
                    self.feature_dim
                )));
            }
        }
        Ok(())
    }
}

/// Ground truth retained alongside a synthetic corpus: eval-only target
/// labels plus the labeling functions needed for bound estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusTruth {
    /// Aligned with `corpus.target` order.
    pub target_labels: Vec<u8>,
    pub synthetic: Option<SyntheticInfo>,
}

/// Labeling functions of a synthetic corpus and their shared Lipschitz bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInfo {
    pub source_labelers: Vec<LabelingFunction>,
    pub target_labeler: LabelingFunction,
    pub lipschitz: f64,
}

/// Generates a reproducible corpus from a [`SyntheticSpec`]. Target labels
/// and labeling-function handles are returned separately as eval-only truth.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Corpus, CorpusTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sources = Vec::with_capacity(spec.sources.len());
    let mut source_labelers = Vec::with_capacity(spec.sources.len());
    for (j, dom) in spec.sources.iter().enumerate() {
        let labeler = noisy(&dom.labeler, spec.noise)?;
        let mut records = Vec::with_capacity(dom.samples);
        for i in 0..dom.samples {
            let features = sample_mixture(&dom.components, spec.feature_dim, &mut rng);
            let label = u8::from(rng.gen::<f64>() < labeler.prob(&features));
            records.push(FeatureRecord {
                id: format!("s{j}-{i:06}"),
                domain: Domain::Source(j),
                features,
                label: Some(label),
            });
        }
        sources.push(records);
        source_labelers.push(labeler);
    }
    let target_labeler = noisy(&spec.target.labeler, spec.noise)?;
    let mut target = Vec::with_capacity(spec.target.samples);
    let mut target_labels = Vec::with_capacity(spec.target.samples);
    for i in 0..spec.target.samples {
        let features = sample_mixture(&spec.target.components, spec.feature_dim, &mut rng);
        target_labels.push(u8::from(rng.gen::<f64>() < target_labeler.prob(&features)));
        target.push(FeatureRecord {
            id: format!("t-{i:06}"),
            domain: Domain::Target,
            features,
            label: None,
        });
    }
    let lipschitz = source_labelers
        .iter()
        .chain(std::iter::once(&target_labeler))
        .map(LabelingFunction::lipschitz)
        .fold(0.0_f64, f64::max);
    let corpus = Corpus {
        feature_dim: spec.feature_dim,
        domain_names: spec.sources.iter().map(|d| d.name.clone()).collect(),
        sources,
        target,
    };
    corpus.validate(false)?;
    Ok((
        corpus,
        CorpusTruth {
            target_labels,
            synthetic: Some(SyntheticInfo {
                source_labelers,
                target_labeler,
                lipschitz,
            }),
        },
    ))
}

fn noisy(labeler: &LabelingFunction, noise: f64) -> Result<LabelingFunction> {
    let flip = labeler.flip + noise;
    LabelingFunction::new(labeler.weights.clone(), labeler.bias, flip)
}

fn sample_mixture(components: &[GaussianComponent], dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let pick = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = &components[components.len() - 1];
    for c in components {
        acc += c.weight;
        if pick < acc {
            chosen = c;
            break;
        }
    }
    (0..dim)
        .map(|d| chosen.mean[d] + chosen.scale * standard_normal(rng))
        .collect()
}

/// Box-Muller; two uniform draws per normal keeps the stream layout simple.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// File I/O
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    feature_dim: usize,
    domains: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    synthetic: Option<SyntheticInfo>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    domain: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    features: Vec<f64>,
}

/// Loads a training corpus. Rejects labeled target records, unlabeled
/// source records, dimension mismatches, and non-finite values.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let (corpus, _, had_target_labels) = read_corpus_file(path)?;
    if had_target_labels {
        return Err(Error::InvalidInput(
            "training corpus contains labeled target records; use the truth loader".into(),
        ));
    }
    corpus.validate(false)?;
    Ok(corpus)
}

/// Loads a truth file: a corpus whose target records all carry eval-only
/// labels, plus any synthetic labeling-function metadata from the header.
pub fn load_truth(path: &Path) -> Result<(Corpus, CorpusTruth)> {
    let (mut corpus, synthetic, _) = read_corpus_file(path)?;
    corpus.validate(true)?;
    let mut target_labels = Vec::with_capacity(corpus.target.len());
    for rec in &mut corpus.target {
        match rec.label.take() {
            Some(l) => target_labels.push(l),
            None => {
                return Err(Error::InvalidRecord {
                    id: rec.id.clone(),
                    message: "truth file target record is missing its eval label".into(),
                })
            }
        }
    }
    Ok((
        corpus,
        CorpusTruth {
            target_labels,
            synthetic,
        },
    ))
}

fn read_corpus_file(path: &Path) -> Result<(Corpus, Option<SyntheticInfo>, bool)> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines().enumerate();
    let header: HeaderLine = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty corpus file".into(),
            })
        }
    };
    if header.feature_dim == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "feature_dim must be positive".into(),
        });
    }
    let domain_index: HashMap<&str, usize> = header
        .domains
        .iter()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i))
        .collect();
    if domain_index.contains_key(TARGET_DOMAIN) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header domain list may not contain {TARGET_DOMAIN}"),
        });
    }
    let mut sources: Vec<Vec<FeatureRecord>> = vec![Vec::new(); header.domains.len()];
    let mut target = Vec::new();
    let mut had_target_labels = false;
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        let domain = if row.domain == TARGET_DOMAIN {
            Domain::Target
        } else {
            match domain_index.get(row.domain.as_str()) {
                Some(&j) => Domain::Source(j),
                None => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: format!("unknown domain {:?} (not in header)", row.domain),
                    })
                }
            }
        };
        let rec = FeatureRecord {
            id: row.id,
            domain,
            features: row.features,
            label: row.label,
        };
        match domain {
            Domain::Source(j) => sources[j].push(rec),
            Domain::Target => {
                had_target_labels |= rec.label.is_some();
                target.push(rec);
            }
        }
    }
    Ok((
        Corpus {
            feature_dim: header.feature_dim,
            domain_names: header.domains,
            sources,
            target,
        },
        header.synthetic,
        had_target_labels,
    ))
}

/// Writes a training corpus (unlabeled target records).
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_file(corpus, None, None, path)
}

/// Writes a truth file: target labels attached, synthetic metadata in the
/// header when available.
pub fn write_truth(corpus: &Corpus, truth: &CorpusTruth, path: &Path) -> Result<()> {
    if truth.target_labels.len() != corpus.target.len() {
        return Err(Error::InvalidInput(format!(
            "truth labels ({}) do not align with target records ({})",
            truth.target_labels.len(),
            corpus.target.len()
        )));
    }
    write_file(
        corpus,
        Some(&truth.target_labels),
        truth.synthetic.as_ref(),
        path,
    )
}

fn write_file(
    corpus: &Corpus,
    target_labels: Option<&[u8]>,
    synthetic: Option<&SyntheticInfo>,
    path: &Path,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    let header = HeaderLine {
        feature_dim: corpus.feature_dim,
        domains: corpus.domain_names.clone(),
        synthetic: synthetic.cloned(),
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for (j, records) in corpus.sources.iter().enumerate() {
        for rec in records {
            let row = RecordLine {
                id: rec.id.clone(),
                domain: corpus.domain_names[j].clone(),
                label: rec.label,
                features: rec.features.clone(),
            };
            writeln!(out, "{}", serde_json::to_string(&row)?)?;
        }
    }
    for (i, rec) in corpus.target.iter().enumerate() {
        let row = RecordLine {
            id: rec.id.clone(),
            domain: TARGET_DOMAIN.to_string(),
            label: target_labels.map(|l| l[i]),
            features: rec.features.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&row)?)?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Per-domain sub-batches for one optimization step, as indices into the
/// corpus (`source[j]` indexes `corpus.sources[j]`, `target` indexes
/// `corpus.target`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub source: Vec<Vec<usize>>,
    pub target: Vec<usize>,
}

/// Emits the deterministic batch sequence for one epoch.
///
/// Every source record appears exactly once per epoch. Slots are allocated
/// across the k sources and the target proportionally to dataset sizes
/// (largest-remainder rounding), with a floor of 2 per source and 1 for the
/// target; target slots resample uniformly once the target permutation is
/// exhausted. When a source sub-batch would be single-label even though its
/// domain has both labels, a later record of the missing label is swapped in
/// from the epoch's permutation (best effort: the tail of a permutation can
/// run out of one label).
pub fn make_batches(
    corpus: &Corpus,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch>> {
    let k = corpus.num_sources();
    if batch_size < 2 * (k + 1) {
        return Err(Error::InvalidConfig(format!(
            "batch_size {batch_size} too small: need at least 2(k+1) = {}",
            2 * (k + 1)
        )));
    }
    let slots = allocate_slots(corpus, batch_size);
    let target_slots = slots[k];

    // Stream layout is fixed: one epoch-level rng drives the shuffles and
    // the with-replacement target draws, keyed by (seed, epoch).
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut perms: Vec<Vec<usize>> = corpus
        .sources
        .iter()
        .map(|records| shuffled_indices(records.len(), &mut rng))
        .collect();
    let target_perm = shuffled_indices(corpus.target.len(), &mut rng);

    // Plan each domain's windows for the whole epoch, then repair label
    // presence by swapping across windows before anything is emitted.
    let plans: Vec<Vec<(usize, usize)>> = (0..k)
        .map(|j| plan_windows(corpus.sources[j].len(), slots[j]))
        .collect();
    let batches_needed = plans.iter().map(Vec::len).max().unwrap_or(0);
    for j in 0..k {
        enforce_label_presence(&corpus.sources[j], &mut perms[j], &plans[j]);
    }

    let mut batches = Vec::with_capacity(batches_needed);
    let mut target_cursor = 0usize;
    for b in 0..batches_needed {
        let mut source = Vec::with_capacity(k);
        for j in 0..k {
            match plans[j].get(b) {
                Some(&(start, len)) => source.push(perms[j][start..start + len].to_vec()),
                None => source.push(Vec::new()),
            }
        }
        let mut target = Vec::with_capacity(target_slots);
        for _ in 0..target_slots {
            if target_cursor < target_perm.len() {
                target.push(target_perm[target_cursor]);
                target_cursor += 1;
            } else {
                target.push(rng.gen_range(0..corpus.target.len()));
            }
        }
        batches.push(Batch { source, target });
    }
    Ok(batches)
}

/// Splits `n` records into consecutive windows of `slot` entries. A lone
/// trailing record is merged into the previous window so peer sampling
/// always sees at least a pair.
fn plan_windows(n: usize, slot: usize) -> Vec<(usize, usize)> {
    let mut windows = Vec::new();
    let mut at = 0;
    while at < n {
        let mut len = slot.min(n - at);
        if n - at - len == 1 && len == slot {
            len += 1; // absorb the would-be singleton tail
        }
        windows.push((at, len));
        at += len;
    }
    windows
}

/// Largest-remainder allocation of `batch_size` slots over the k sources
/// plus the target (last entry), with floors of 2 per source and 1 target.
fn allocate_slots(corpus: &Corpus, batch_size: usize) -> Vec<usize> {
    let k = corpus.num_sources();
    let mut sizes: Vec<usize> = corpus.sources.iter().map(Vec::len).collect();
    sizes.push(corpus.target.len());
    let total: usize = sizes.iter().sum();
    let raw: Vec<f64> = sizes
        .iter()
        .map(|&n| batch_size as f64 * n as f64 / total as f64)
        .collect();
    let mut slots: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut remaining = batch_size - slots.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        slots[i] += 1;
        remaining -= 1;
    }
    // Enforce floors by stealing from the largest allocation.
    let floor_of = |i: usize| if i == k { 1 } else { 2 };
    loop {
        let deficit: Vec<usize> = (0..slots.len())
            .filter(|&i| slots[i] < floor_of(i))
            .collect();
        if deficit.is_empty() {
            break;
        }
        for i in deficit {
            let donor = (0..slots.len())
                .filter(|&d| slots[d] > floor_of(d))
                .max_by_key(|&d| slots[d])
                .expect("batch_size >= 2(k+1) guarantees a donor");
            slots[donor] -= 1;
            slots[i] += 1;
        }
    }
    slots
}

fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Repairs single-label windows by swapping in a record of the missing
/// label from a window that holds at least two of them, so no repaired
/// window is broken again. Best effort: when the minority label has fewer
/// records than there are windows, some windows stay single-label and peer
/// sampling falls back across domains.
fn enforce_label_presence(
    records: &[FeatureRecord],
    perm: &mut [usize],
    windows: &[(usize, usize)],
) {
    let has_label = |label: u8| records.iter().any(|r| r.label == Some(label));
    if !(has_label(0) && has_label(1)) {
        return; // domain genuinely single-label
    }
    let window_of = |pos: usize| windows.iter().position(|&(s, l)| pos >= s && pos < s + l);
    for &(start, len) in windows {
        if len < 2 {
            continue;
        }
        let count = |label: u8| {
            perm[start..start + len]
                .iter()
                .filter(|&&i| records[i].label == Some(label))
                .count()
        };
        let missing = match (count(0), count(1)) {
            (0, _) => 0,
            (_, 0) => 1,
            _ => continue,
        };
        let donor = (0..perm.len()).find(|&p| {
            if p >= start && p < start + len {
                return false;
            }
            if records[perm[p]].label != Some(missing) {
                return false;
            }
            // the donor window must keep one record of the missing label
            match window_of(p) {
                Some(w) => {
                    let (ws, wl) = windows[w];
                    perm[ws..ws + wl]
                        .iter()
                        .filter(|&&i| records[i].label == Some(missing))
                        .count()
                        >= 2
                }
                None => true,
            }
        });
        if let Some(p) = donor {
            perm.swap(start + len - 1, p);
        }
    }
}
