//! Concept alignment: a contrastive sub-module that learns a similarity
//! function over projected features, and a concept sub-module that pulls
//! label predictions together for similar source/target pairs and apart
//! for dissimilar ones.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classify::ClassifierHead;
use crate::data::FeatureRecord;
use crate::error::{Error, Result};
use crate::tensor::{clamp_prob, mlp_backward, mlp_forward, MlpGrads, MlpParams, PROB_CLAMP};

/// Norm floor for the cosine denominator; projections collapsing below it
/// are degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

/// Projection network behind the learned similarity function. Identity
/// output activation; out-dim at least 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityNet {
    pub projection: MlpParams,
}

impl SimilarityNet {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        self.projection.validate()?;
        if self.projection.in_dim() != feature_dim {
            return Err(Error::DimensionMismatch {
                context: "similarity projection in-dim".into(),
                expected: feature_dim,
                actual: self.projection.in_dim(),
            });
        }
        if self.projection.out_dim() < 2 {
            return Err(Error::DimensionMismatch {
                context: "similarity projection out-dim".into(),
                expected: 2,
                actual: self.projection.out_dim(),
            });
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine with the denominator floored at [`NORM_FLOOR`]; degenerate inputs
/// are flagged in the log instead of poisoning the run with NaN.
fn cosine_floored(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        log::warn!("cosine hit the norm floor (norms {na:e}, {nb:e})");
    }
    dot(a, b) / (na.max(NORM_FLOOR) * nb.max(NORM_FLOOR))
}

/// Learned similarity: cosine of the two projected vectors. Symmetric and
/// bounded in [-1, 1]. Errors when a projection collapses below the norm
/// floor.
pub fn similarity(net: &SimilarityNet, x_i: &[f64], x_j: &[f64]) -> Result<f64> {
    let u = mlp_forward(&net.projection, x_i)?.0;
    let v = mlp_forward(&net.projection, x_j)?.0;
    let (nu, nv) = (norm(&u), norm(&v));
    if nu < NORM_FLOOR || nv < NORM_FLOOR {
        return Err(Error::DegenerateEmbedding { norm: nu.min(nv) });
    }
    Ok(dot(&u, &v) / (nu * nv))
}

/// How source/target pairs are matched: by the learned similarity or, for
/// the contrastive-ablation run, by cosine on raw feature vectors.
#[derive(Debug, Clone, Copy)]
pub enum PairingMode<'a> {
    Learned(&'a SimilarityNet),
    RawCosine,
}

impl PairingMode<'_> {
    fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            PairingMode::Learned(net) => Ok(mlp_forward(&net.projection, x)?.0),
            PairingMode::RawCosine => Ok(x.to_vec()),
        }
    }
}

/// An anchor with one same-label positive peer and `m` opposite-label
/// negative peers, all drawn from the source pool.
#[derive(Debug, Clone)]
pub struct PeerSet<'a> {
    pub anchor: &'a FeatureRecord,
    pub positive: &'a FeatureRecord,
    pub negatives: Vec<&'a FeatureRecord>,
}

/// Uniformly samples a positive and `m` negatives for `pool[anchor_idx]`
/// without replacement. Returns `None` when the pool lacks enough eligible
/// records; the caller skips the anchor for this batch.
pub fn sample_peers<'a, R: Rng + ?Sized>(
    pool: &[&'a FeatureRecord],
    anchor_idx: usize,
    m: usize,
    rng: &mut R,
) -> Option<PeerSet<'a>> {
    let anchor = pool[anchor_idx];
    let label = anchor.label?;
    let positives: Vec<usize> = (0..pool.len())
        .filter(|&i| i != anchor_idx && pool[i].label == Some(label))
        .collect();
    let mut negatives: Vec<usize> = (0..pool.len())
        .filter(|&i| pool[i].label == Some(1 - label))
        .collect();
    if positives.is_empty() || negatives.len() < m {
        log::debug!(
            "anchor {} skipped: {} positives, {} negatives (need 1 and {m})",
            anchor.id,
            positives.len(),
            negatives.len()
        );
        return None;
    }
    let positive = pool[positives[rng.gen_range(0..positives.len())]];
    // partial Fisher-Yates: the first m entries become the sample
    for i in 0..m {
        let j = rng.gen_range(i..negatives.len());
        negatives.swap(i, j);
    }
    Some(PeerSet {
        anchor,
        positive,
        negatives: negatives[..m].iter().map(|&i| pool[i]).collect(),
    })
}

/// Value and gradient of the contrastive similarity loss.
#[derive(Debug, Clone)]
pub struct ContrastiveTerm {
    /// Sum over anchors of the per-anchor softmax cross-entropy.
    pub value: f64,
    pub grad_projection: MlpGrads,
    pub anchors: usize,
}

/// Temperature-scaled softmax loss over each anchor's positive and negative
/// similarities: per anchor,
/// `-log( exp(s+/tau) / (exp(s+/tau) + sum_l exp(s-_l/tau)) )`.
pub fn contrastive_loss(
    net: &SimilarityNet,
    peer_sets: &[PeerSet<'_>],
    temperature: f64,
) -> Result<ContrastiveTerm> {
    if !(0.0..1.0).contains(&temperature) || temperature == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "contrastive temperature must be in (0, 1), got {temperature}"
        )));
    }
    let mut value = 0.0;
    let mut grad_projection = MlpGrads::zeros_like(&net.projection);
    for set in peer_sets {
        let (u, trace_a) = mlp_forward(&net.projection, &set.anchor.features)?;
        let mut peer_embeds = Vec::with_capacity(1 + set.negatives.len());
        peer_embeds.push(mlp_forward(&net.projection, &set.positive.features)?);
        for neg in &set.negatives {
            peer_embeds.push(mlp_forward(&net.projection, &neg.features)?);
        }
        let sims: Vec<f64> = peer_embeds
            .iter()
            .map(|(v, _)| cosine_floored(&u, v))
            .collect();
        // stable softmax over scaled similarities; entry 0 is the positive
        let scaled: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
        let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|z| (z - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        value += m + z.ln() - scaled[0];
        // d loss / d sim_i
        let mut upstream_anchor = vec![0.0; u.len()];
        for (i, ((v, trace_p), &sim)) in peer_embeds.iter().zip(&sims).enumerate() {
            let softmax = exps[i] / z;
            let dsim = if i == 0 {
                (softmax - 1.0) / temperature
            } else {
                softmax / temperature
            };
            let (du, dv) = cosine_backward(&u, v, sim);
            for (ua, d) in upstream_anchor.iter_mut().zip(&du) {
                *ua += dsim * d;
            }
            let upstream_peer: Vec<f64> = dv.iter().map(|d| dsim * d).collect();
            let (gp, _) = mlp_backward(&net.projection, trace_p, &upstream_peer)?;
            grad_projection.add_scaled(&gp, 1.0);
        }
        let (ga, _) = mlp_backward(&net.projection, &trace_a, &upstream_anchor)?;
        grad_projection.add_scaled(&ga, 1.0);
    }
    Ok(ContrastiveTerm {
        value,
        grad_projection,
        anchors: peer_sets.len(),
    })
}

/// Partial derivatives of `cos(u, v)` with respect to `u` and `v`. Where
/// the norm floor binds, the norm is treated as a constant.
fn cosine_backward(u: &[f64], v: &[f64], sim: f64) -> (Vec<f64>, Vec<f64>) {
    let (nu, nv) = (norm(u), norm(v));
    let (fu, fv) = (nu.max(NORM_FLOOR), nv.max(NORM_FLOOR));
    let du: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(ui, vi)| {
            let mut g = vi / (fu * fv);
            if nu > NORM_FLOOR {
                g -= sim * ui / (fu * fu);
            }
            g
        })
        .collect();
    let dv: Vec<f64> = v
        .iter()
        .zip(u)
        .map(|(vi, ui)| {
            let mut g = ui / (fu * fv);
            if nv > NORM_FLOOR {
                g -= sim * vi / (fv * fv);
            }
            g
        })
        .collect();
    (du, dv)
}

/// For one source anchor: the most similar and most dissimilar candidate
/// target features, with their similarity values and candidate indices.
#[derive(Debug, Clone)]
pub struct ExtremePair<'a> {
    pub anchor: &'a [f64],
    pub most_similar: &'a [f64],
    pub most_dissimilar: &'a [f64],
    pub sim_most: f64,
    pub sim_least: f64,
    pub most_idx: usize,
    pub least_idx: usize,
}

/// Finds the most and least similar candidates for one anchor. Ties break
/// toward the lowest candidate index.
pub fn select_extremes<'a>(
    pairing: &PairingMode<'_>,
    anchor: &'a [f64],
    candidates: &[&'a [f64]],
) -> Result<ExtremePair<'a>> {
    let mut pairs = select_extremes_for_anchors(pairing, &[anchor], candidates)?;
    Ok(pairs.pop().expect("one anchor in, one pair out"))
}

/// Batch form of [`select_extremes`]: candidates are embedded once and
/// reused across anchors.
pub fn select_extremes_for_anchors<'a>(
    pairing: &PairingMode<'_>,
    anchors: &[&'a [f64]],
    candidates: &[&'a [f64]],
) -> Result<Vec<ExtremePair<'a>>> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "extreme selection needs a non-empty candidate set".into(),
        ));
    }
    let cand_embeds: Vec<Vec<f64>> = candidates
        .iter()
        .map(|c| pairing.embed(c))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(anchors.len());
    for anchor in anchors {
        let a = pairing.embed(anchor)?;
        let mut best = (0usize, f64::NEG_INFINITY);
        let mut worst = (0usize, f64::INFINITY);
        for (i, c) in cand_embeds.iter().enumerate() {
            let sim = cosine_floored(&a, c);
            if sim > best.1 {
                best = (i, sim);
            }
            if sim < worst.1 {
                worst = (i, sim);
            }
        }
        out.push(ExtremePair {
            anchor,
            most_similar: candidates[best.0],
            most_dissimilar: candidates[worst.0],
            sim_most: best.1,
            sim_least: worst.1,
            most_idx: best.0,
            least_idx: worst.0,
        });
    }
    Ok(out)
}

/// Value and gradients of a concept alignment term.
#[derive(Debug, Clone)]
pub struct ConceptTerm {
    /// Sum over anchors of
    /// `(p(anchor) - p(c))^2 - (p(anchor) - p(d))^2`, each summand in [-1, 1].
    pub value: f64,
    pub grad_transform: MlpGrads,
    pub grad_label_head: MlpGrads,
    pub anchors: usize,
}

impl ConceptTerm {
    fn empty(head: &ClassifierHead) -> Self {
        Self {
            value: 0.0,
            grad_transform: MlpGrads::zeros_like(&head.transform),
            grad_label_head: MlpGrads::zeros_like(&head.label_head),
            anchors: 0,
        }
    }
}

/// Squared-difference concept loss over pre-selected extreme pairs.
/// Gradients flow through the classifier only; the pair selection is
/// treated as constant.
pub fn concept_loss(head: &ClassifierHead, pairs: &[ExtremePair<'_>]) -> Result<ConceptTerm> {
    let mut term = ConceptTerm::empty(head);
    term.anchors = pairs.len();
    for pair in pairs {
        let (p_a, fwd_a) = predict_traced(head, pair.anchor)?;
        let (p_c, fwd_c) = predict_traced(head, pair.most_similar)?;
        let (p_d, fwd_d) = predict_traced(head, pair.most_dissimilar)?;
        term.value += (p_a - p_c).powi(2) - (p_a - p_d).powi(2);
        let d_a = 2.0 * (p_a - p_c) - 2.0 * (p_a - p_d);
        let d_c = -2.0 * (p_a - p_c);
        let d_d = 2.0 * (p_a - p_d);
        accumulate_prediction_grad(head, &fwd_a, d_a, &mut term)?;
        accumulate_prediction_grad(head, &fwd_c, d_c, &mut term)?;
        accumulate_prediction_grad(head, &fwd_d, d_d, &mut term)?;
    }
    Ok(term)
}

struct PredictionForward {
    p_raw: f64,
    trace_transform: crate::tensor::ForwardTrace,
    trace_head: crate::tensor::ForwardTrace,
}

fn predict_traced(head: &ClassifierHead, x: &[f64]) -> Result<(f64, PredictionForward)> {
    let (hidden, trace_transform) = mlp_forward(&head.transform, x)?;
    let (out, trace_head) = mlp_forward(&head.label_head, &hidden)?;
    let p_raw = out[0];
    Ok((
        clamp_prob(p_raw),
        PredictionForward {
            p_raw,
            trace_transform,
            trace_head,
        },
    ))
}

fn accumulate_prediction_grad(
    head: &ClassifierHead,
    fwd: &PredictionForward,
    d_p: f64,
    term: &mut ConceptTerm,
) -> Result<()> {
    // the clamp has zero derivative where it binds
    let gate = if fwd.p_raw < PROB_CLAMP || fwd.p_raw > 1.0 - PROB_CLAMP {
        0.0
    } else {
        1.0
    };
    let (gy, dh) = mlp_backward(&head.label_head, &fwd.trace_head, &[d_p * gate])?;
    let (gh, _) = mlp_backward(&head.transform, &fwd.trace_transform, &dh)?;
    term.grad_label_head.add_scaled(&gy, 1.0);
    term.grad_transform.add_scaled(&gh, 1.0);
    Ok(())
}

/// Concept alignment applied between every ordered pair of source domains:
/// for pair (j, n), domain j's sub-batch records are the anchors and domain
/// n's sub-batch is the candidate set. Each pair's contribution is
/// normalized by its anchor count; the total is scaled by `weight`.
/// Returns a zero term when k < 2.
pub fn source_pair_concept_loss(
    head: &ClassifierHead,
    pairing: &PairingMode<'_>,
    sub_batches: &[Vec<&FeatureRecord>],
    weight: f64,
) -> Result<ConceptTerm> {
    let mut total = ConceptTerm::empty(head);
    if sub_batches.len() < 2 {
        return Ok(total);
    }
    for (j, anchors) in sub_batches.iter().enumerate() {
        if anchors.is_empty() {
            continue;
        }
        for (n, candidates) in sub_batches.iter().enumerate() {
            if j == n || candidates.is_empty() {
                continue;
            }
            let anchor_feats: Vec<&[f64]> = anchors.iter().map(|r| r.features.as_slice()).collect();
            let cand_feats: Vec<&[f64]> =
                candidates.iter().map(|r| r.features.as_slice()).collect();
            let pairs = select_extremes_for_anchors(pairing, &anchor_feats, &cand_feats)?;
            let term = concept_loss(head, &pairs)?;
            let scale = weight / anchors.len() as f64;
            total.value += scale * term.value;
            total.grad_transform.add_scaled(&term.grad_transform, scale);
            total
                .grad_label_head
                .add_scaled(&term.grad_label_head, scale);
            total.anchors += term.anchors;
        }
    }
    Ok(total)
}
