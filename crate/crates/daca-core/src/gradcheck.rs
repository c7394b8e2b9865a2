//! Finite-difference validation of every loss in the system, used by the
//! CLI self-check command and the acceptance suite.
//!
//! Peer sets and extreme pairs are frozen before differentiation so the
//! objective stays smooth across the perturbation; the domain check feeds
//! the reversal path and compares its negation against the numeric
//! derivative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classify::label_loss;
use crate::concept::{
    concept_loss, contrastive_loss, sample_peers, select_extremes_for_anchors, PairingMode, PeerSet,
};
use crate::covariate::domain_loss;
use crate::data::{Domain, FeatureRecord};
use crate::error::Result;
use crate::tensor::{finite_diff_check, Activation, MlpParams};
use crate::train::{ArchConfig, DacaModel};

/// Relative tolerance of every check.
pub const TOLERANCE: f64 = 1e-4;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one loss check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(name: &'static str, max_rel_error: f64) -> Self {
        Self {
            name,
            max_rel_error,
            tolerance: TOLERANCE,
            passed: max_rel_error <= TOLERANCE,
        }
    }
}

/// One randomized small configuration: model, records, frozen peers.
pub struct CheckSetup {
    pub model: DacaModel,
    pub records: Vec<FeatureRecord>,
    pub temperature: f64,
    pub negatives_per_anchor: usize,
}

impl CheckSetup {
    /// Small tanh networks (smooth everywhere, so central differences are
    /// well behaved) over a random two-source batch.
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 3;
        let arch = ArchConfig {
            transform_hidden: vec![6],
            transform_out: 4,
            head_hidden: vec![4],
            similarity_hidden: vec![6],
            similarity_out: 3,
            hidden_activation: Activation::Tanh,
        };
        let model = DacaModel::init(dim, &arch, &mut rng)?;
        let mut records = Vec::new();
        for j in 0..2usize {
            for i in 0..4usize {
                records.push(FeatureRecord {
                    id: format!("s{j}-{i}"),
                    domain: Domain::Source(j),
                    features: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    label: Some((i % 2) as u8),
                });
            }
        }
        for i in 0..4usize {
            records.push(FeatureRecord {
                id: format!("t-{i}"),
                domain: Domain::Target,
                features: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                label: None,
            });
        }
        Ok(Self {
            model,
            records,
            temperature: 0.5,
            negatives_per_anchor: 2,
        })
    }

    pub fn source_records(&self) -> Vec<&FeatureRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r.domain, Domain::Source(_)))
            .collect()
    }

    pub fn target_records(&self) -> Vec<&FeatureRecord> {
        self.records
            .iter()
            .filter(|r| r.domain == Domain::Target)
            .collect()
    }

    fn sources_by_domain(&self) -> Vec<Vec<&FeatureRecord>> {
        let mut by_domain = vec![Vec::new(); 2];
        for r in &self.records {
            if let Domain::Source(j) = r.domain {
                by_domain[j].push(r);
            }
        }
        by_domain
    }

    fn frozen_peers(&self, seed: u64) -> Vec<PeerSet<'_>> {
        let pool = self.source_records();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..pool.len())
            .filter_map(|i| sample_peers(&pool, i, self.negatives_per_anchor, &mut rng))
            .collect()
    }
}

fn flat_pair(a: &MlpParams, b: &MlpParams) -> Vec<f64> {
    let mut flat = Vec::new();
    a.copy_flat_into(&mut flat);
    b.copy_flat_into(&mut flat);
    flat
}

/// Runs every check on one randomized configuration.
pub fn run_gradcheck(seed: u64) -> Result<Vec<GradCheckReport>> {
    let setup = CheckSetup::random(seed)?;
    let model = &setup.model;
    let sources = setup.source_records();
    let targets = setup.target_records();
    let source_feats: Vec<&[f64]> = sources.iter().map(|r| r.features.as_slice()).collect();
    let target_feats: Vec<&[f64]> = targets.iter().map(|r| r.features.as_slice()).collect();
    let peers = setup.frozen_peers(seed ^ 0xABCD);
    // freeze the extreme pairs once, using the initial similarity net
    let pairing = PairingMode::Learned(&model.similarity);
    let pairs = select_extremes_for_anchors(&pairing, &source_feats, &target_feats)?;
    let by_domain = setup.sources_by_domain();
    let pair_01 = select_extremes_for_anchors(
        &pairing,
        &by_domain[0]
            .iter()
            .map(|r| r.features.as_slice())
            .collect::<Vec<_>>(),
        &by_domain[1]
            .iter()
            .map(|r| r.features.as_slice())
            .collect::<Vec<_>>(),
    )?;
    let pair_10 = select_extremes_for_anchors(
        &pairing,
        &by_domain[1]
            .iter()
            .map(|r| r.features.as_slice())
            .collect::<Vec<_>>(),
        &by_domain[0]
            .iter()
            .map(|r| r.features.as_slice())
            .collect::<Vec<_>>(),
    )?;

    let mut reports = Vec::new();

    // L_y over (transform, label head)
    let err = finite_diff_check(
        |theta| {
            let mut m = model.clone();
            let used = m.classifier.transform.set_from_flat(theta);
            m.classifier.label_head.set_from_flat(&theta[used..]);
            let term = label_loss(&m.classifier, &sources).unwrap();
            let mut g = Vec::new();
            term.grad_transform.copy_flat_into(&mut g);
            term.grad_label_head.copy_flat_into(&mut g);
            (term.value, g)
        },
        &flat_pair(&model.classifier.transform, &model.classifier.label_head),
        FD_STEP,
    );
    reports.push(GradCheckReport::new("label_loss", err));

    // L_d over (transform, domain head); the analytic transform gradient is
    // produced through the reversal and negated back, so the reversal path
    // itself is under test.
    let err = finite_diff_check(
        |theta| {
            let mut m = model.clone();
            let used = m.classifier.transform.set_from_flat(theta);
            m.domain.net.set_from_flat(&theta[used..]);
            let term =
                domain_loss(&m.classifier.transform, &m.domain, &sources, &targets, true).unwrap();
            let mut g = Vec::new();
            term.grad_transform.negated().copy_flat_into(&mut g);
            term.grad_domain_head.copy_flat_into(&mut g);
            (term.value, g)
        },
        &flat_pair(&model.classifier.transform, &model.domain.net),
        FD_STEP,
    );
    reports.push(GradCheckReport::new("domain_loss", err));

    // L_s over the projection, peers frozen
    let mut flat = Vec::new();
    model.similarity.projection.copy_flat_into(&mut flat);
    let err = finite_diff_check(
        |theta| {
            let mut m = model.clone();
            m.similarity.projection.set_from_flat(theta);
            let term = contrastive_loss(&m.similarity, &peers, setup.temperature).unwrap();
            let mut g = Vec::new();
            term.grad_projection.copy_flat_into(&mut g);
            (term.value, g)
        },
        &flat,
        FD_STEP,
    );
    reports.push(GradCheckReport::new("contrastive_loss", err));

    // L_c over (transform, label head), pair selection frozen
    let err = finite_diff_check(
        |theta| {
            let mut m = model.clone();
            let used = m.classifier.transform.set_from_flat(theta);
            m.classifier.label_head.set_from_flat(&theta[used..]);
            let term = concept_loss(&m.classifier, &pairs).unwrap();
            let mut g = Vec::new();
            term.grad_transform.copy_flat_into(&mut g);
            term.grad_label_head.copy_flat_into(&mut g);
            (term.value, g)
        },
        &flat_pair(&model.classifier.transform, &model.classifier.label_head),
        FD_STEP,
    );
    reports.push(GradCheckReport::new("concept_loss", err));

    // combined loss over all four parameter sets (weights 1, source-pair
    // weight 1/2 for k = 2), gradient assembled mathematically: the domain
    // contribution enters un-reversed so it is the true derivative.
    let n_src = sources.len() as f64;
    let n_all = (sources.len() + targets.len()) as f64;
    let n_anchors = peers.len() as f64;
    let w_pairs = 0.5;
    let mut flat_all = Vec::new();
    model.classifier.transform.copy_flat_into(&mut flat_all);
    model.classifier.label_head.copy_flat_into(&mut flat_all);
    model.domain.net.copy_flat_into(&mut flat_all);
    model.similarity.projection.copy_flat_into(&mut flat_all);
    let err = finite_diff_check(
        |theta| {
            let mut m = model.clone();
            let mut at = m.classifier.transform.set_from_flat(theta);
            at += m.classifier.label_head.set_from_flat(&theta[at..]);
            at += m.domain.net.set_from_flat(&theta[at..]);
            m.similarity.projection.set_from_flat(&theta[at..]);

            let lab = label_loss(&m.classifier, &sources).unwrap();
            let dom = domain_loss(
                &m.classifier.transform,
                &m.domain,
                &sources,
                &targets,
                false,
            )
            .unwrap();
            let con = contrastive_loss(&m.similarity, &peers, setup.temperature).unwrap();
            let cl = concept_loss(&m.classifier, &pairs).unwrap();
            let sp01 = concept_loss(&m.classifier, &pair_01).unwrap();
            let sp10 = concept_loss(&m.classifier, &pair_10).unwrap();
            let sp_value =
                w_pairs * (sp01.value / pair_01.len() as f64 + sp10.value / pair_10.len() as f64);

            let value = lab.value / n_src
                + dom.value / n_all
                + con.value / n_anchors
                + cl.value / n_src
                + sp_value;

            let mut g_transform = lab.grad_transform.clone();
            g_transform.scale(1.0 / n_src);
            g_transform.add_scaled(&dom.grad_transform, 1.0 / n_all);
            g_transform.add_scaled(&cl.grad_transform, 1.0 / n_src);
            g_transform.add_scaled(&sp01.grad_transform, w_pairs / pair_01.len() as f64);
            g_transform.add_scaled(&sp10.grad_transform, w_pairs / pair_10.len() as f64);
            let mut g_label = lab.grad_label_head.clone();
            g_label.scale(1.0 / n_src);
            g_label.add_scaled(&cl.grad_label_head, 1.0 / n_src);
            g_label.add_scaled(&sp01.grad_label_head, w_pairs / pair_01.len() as f64);
            g_label.add_scaled(&sp10.grad_label_head, w_pairs / pair_10.len() as f64);
            let mut g_domain = dom.grad_domain_head.clone();
            g_domain.scale(1.0 / n_all);
            let mut g_proj = con.grad_projection.clone();
            g_proj.scale(1.0 / n_anchors);

            let mut g = Vec::new();
            g_transform.copy_flat_into(&mut g);
            g_label.copy_flat_into(&mut g);
            g_domain.copy_flat_into(&mut g);
            g_proj.copy_flat_into(&mut g);
            (value, g)
        },
        &flat_all,
        FD_STEP,
    );
    reports.push(GradCheckReport::new("combined_loss", err));

    Ok(reports)
}
