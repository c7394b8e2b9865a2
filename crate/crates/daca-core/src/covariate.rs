//! Adversarial covariate alignment: a domain classifier trained on top of
//! the shared transform, with the transform's gradient reversed so that
//! minimizing the loss plays the min-max game in a single pass.

use serde::{Deserialize, Serialize};

use crate::classify::bce;
use crate::data::FeatureRecord;
use crate::error::{Error, Result};
use crate::tensor::{clamp_prob, mlp_backward, mlp_forward, MlpGrads, MlpParams};

/// Domain classifier head: sigmoid output over one unit, reading the
/// shared transform's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainHead {
    pub net: MlpParams,
}

impl DomainHead {
    pub fn validate(&self, transform_out: usize) -> Result<()> {
        self.net.validate()?;
        if self.net.in_dim() != transform_out {
            return Err(Error::DimensionMismatch {
                context: "domain head in-dim vs transform out-dim".into(),
                expected: transform_out,
                actual: self.net.in_dim(),
            });
        }
        if self.net.out_dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "domain head out-dim".into(),
                expected: 1,
                actual: self.net.out_dim(),
            });
        }
        Ok(())
    }
}

/// Probability that a transformed vector came from the target domain.
pub fn predict_domain_prob(head: &DomainHead, hidden: &[f64]) -> Result<f64> {
    Ok(clamp_prob(mlp_forward(&head.net, hidden)?.0[0]))
}

/// Value and gradients of the adversarial domain loss.
#[derive(Debug, Clone)]
pub struct DomainTerm {
    /// Sum of per-record cross-entropies over all records in the batch.
    pub value: f64,
    /// Transform gradient with the reversal applied (elementwise negation
    /// of the true chain-rule gradient).
    pub grad_transform: MlpGrads,
    pub grad_domain_head: MlpGrads,
    pub records: usize,
}

/// Domain cross-entropy over source (d = 0) and target (d = 1) records.
///
/// The reversal layer sits at the transform/head boundary: its forward pass
/// is the identity, so the loss value is unaffected, while the gradient
/// flowing into the transform is negated exactly. `apply_reversal = false`
/// yields the plain chain-rule gradient; gradient checks use it to compare
/// against the negated form.
pub fn domain_loss(
    transform: &MlpParams,
    head: &DomainHead,
    source_records: &[&FeatureRecord],
    target_records: &[&FeatureRecord],
    apply_reversal: bool,
) -> Result<DomainTerm> {
    if source_records.is_empty() || target_records.is_empty() {
        return Err(Error::InvalidInput(
            "domain loss needs both source and target records in the batch".into(),
        ));
    }
    let mut value = 0.0;
    let mut grad_transform = MlpGrads::zeros_like(transform);
    let mut grad_domain_head = MlpGrads::zeros_like(&head.net);
    let mut accumulate = |rec: &FeatureRecord, d: f64| -> Result<()> {
        let (hidden, trace_h) = mlp_forward(transform, &rec.features)?;
        let (out, trace_d) = mlp_forward(&head.net, &hidden)?;
        let (loss, dq) = bce(out[0], d);
        value += loss;
        let (gd, dh) = mlp_backward(&head.net, &trace_d, &[dq])?;
        let (gh, _) = mlp_backward(transform, &trace_h, &dh)?;
        grad_domain_head.add_scaled(&gd, 1.0);
        grad_transform.add_scaled(&gh, 1.0);
        Ok(())
    };
    for rec in source_records {
        accumulate(rec, 0.0)?;
    }
    for rec in target_records {
        accumulate(rec, 1.0)?;
    }
    if apply_reversal {
        grad_transform = grad_transform.negated();
    }
    Ok(DomainTerm {
        value,
        grad_transform,
        grad_domain_head,
        records: source_records.len() + target_records.len(),
    })
}
