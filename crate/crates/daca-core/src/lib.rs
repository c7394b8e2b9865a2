//! Cross-domain misinformation detection training toolkit.
//!
//! Learns a classifier from several labeled source corpora plus one
//! unlabeled target corpus by jointly minimizing a source classification
//! loss, an adversarial domain loss (gradient reversal), a contrastive
//! similarity loss, and a concept alignment loss. Also ships estimators
//! for every term of the associated target-error bound so the whole
//! pipeline can be verified end to end on synthetic corpora with known
//! labeling functions.

pub mod bound;
pub mod classify;
pub mod concept;
pub mod covariate;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod tensor;
pub mod train;

pub use bound::{BoundConfig, BoundReport, DivergenceCoefficient, DivergenceMode, LambdaMode};
pub use classify::ClassifierHead;
pub use concept::{ExtremePair, PairingMode, PeerSet, SimilarityNet};
pub use covariate::DomainHead;
pub use data::{Corpus, CorpusTruth, Domain, FeatureRecord, LabelingFunction, SyntheticSpec};
pub use error::{Error, Result};
pub use metrics::ConfusionCounts;
pub use train::{ArchConfig, Checkpoint, DacaModel, EpochHistory, Stage, TrainConfig};
