//! Shared feature transformation, label classifier head, and the source
//! cross-entropy loss.

use serde::{Deserialize, Serialize};

use crate::data::FeatureRecord;
use crate::error::{Error, Result};
use crate::tensor::{clamp_prob, mlp_backward, mlp_forward, MlpGrads, MlpParams, PROB_CLAMP};

/// Feature transform plus label head. The transform output feeds every
/// other head in the model; the label head ends in a sigmoid over one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub transform: MlpParams,
    pub label_head: MlpParams,
}

impl ClassifierHead {
    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        self.label_head.validate()?;
        if self.transform.out_dim() != self.label_head.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "transform out-dim vs label head in-dim".into(),
                expected: self.transform.out_dim(),
                actual: self.label_head.in_dim(),
            });
        }
        if self.label_head.out_dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "label head out-dim".into(),
                expected: 1,
                actual: self.label_head.out_dim(),
            });
        }
        Ok(())
    }
}

/// Applies the shared feature transform.
pub fn transform(transform: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(mlp_forward(transform, x)?.0)
}

/// Probability that a record is misinformation, clamped away from 0 and 1
/// for log safety.
pub fn predict_label_prob(head: &ClassifierHead, x: &[f64]) -> Result<f64> {
    let hidden = mlp_forward(&head.transform, x)?.0;
    let p = mlp_forward(&head.label_head, &hidden)?.0[0];
    Ok(clamp_prob(p))
}

/// Value and gradients of a label cross-entropy term.
#[derive(Debug, Clone)]
pub struct LabelTerm {
    /// Sum (not mean) of per-record cross-entropies over the given records.
    pub value: f64,
    pub grad_transform: MlpGrads,
    pub grad_label_head: MlpGrads,
    pub records: usize,
}

/// Binary cross-entropy of the clamped probability, plus its derivative
/// with respect to the raw (pre-clamp) probability. The clamp has zero
/// derivative where it binds.
pub(crate) fn bce(p_raw: f64, y: f64) -> (f64, f64) {
    let p = clamp_prob(p_raw);
    let value = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let grad = if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p_raw) {
        (p - y) / (p * (1.0 - p))
    } else {
        0.0
    };
    (value, grad)
}

/// Cross-entropy loss summed over labeled source records, with exact
/// gradients for the transform and the label head. The caller normalizes
/// by batch size before combining losses.
pub fn label_loss(head: &ClassifierHead, records: &[&FeatureRecord]) -> Result<LabelTerm> {
    let mut value = 0.0;
    let mut grad_transform = MlpGrads::zeros_like(&head.transform);
    let mut grad_label_head = MlpGrads::zeros_like(&head.label_head);
    for rec in records {
        let y = match rec.label {
            Some(l) => f64::from(l),
            None => {
                return Err(Error::InvalidRecord {
                    id: rec.id.clone(),
                    message: "label loss requires labeled records".into(),
                })
            }
        };
        let (hidden, trace_h) = mlp_forward(&head.transform, &rec.features)?;
        let (out, trace_y) = mlp_forward(&head.label_head, &hidden)?;
        let (loss, dp) = bce(out[0], y);
        value += loss;
        let (gy, dh) = mlp_backward(&head.label_head, &trace_y, &[dp])?;
        let (gh, _) = mlp_backward(&head.transform, &trace_h, &dh)?;
        grad_label_head.add_scaled(&gy, 1.0);
        grad_transform.add_scaled(&gh, 1.0);
    }
    Ok(LabelTerm {
        value,
        grad_transform,
        grad_label_head,
        records: records.len(),
    })
}
