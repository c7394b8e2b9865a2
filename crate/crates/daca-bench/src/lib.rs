//! Shared fixtures for the benchmark suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use daca_core::data::{GaussianComponent, SyntheticDomain, SyntheticSpec};
use daca_core::tensor::Activation;
use daca_core::train::{ArchConfig, TrainConfig};
use daca_core::{DacaModel, LabelingFunction};

/// Two source domains plus a target, dim 2, mild shift.
pub fn bench_spec(samples: usize) -> SyntheticSpec {
    let labeler = LabelingFunction::new(vec![3.0, -2.0], 0.0, 0.0).unwrap();
    let domain = |name: &str, cx: f64| SyntheticDomain {
        name: name.into(),
        samples,
        components: vec![
            GaussianComponent {
                mean: vec![cx, 0.5],
                scale: 0.8,
                weight: 1.0,
            },
            GaussianComponent {
                mean: vec![-cx, -0.5],
                scale: 0.8,
                weight: 1.0,
            },
        ],
        labeler: labeler.clone(),
    };
    SyntheticSpec {
        feature_dim: 2,
        sources: vec![domain("s0", 1.0), domain("s1", 1.2)],
        target: domain("t", 0.9),
        noise: 0.0,
        seed: 42,
    }
}

pub fn bench_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        epochs: 1,
        warmup_epochs: 0,
        batch_size: 32,
        seed: 7,
        arch: ArchConfig {
            transform_hidden: vec![64, 64],
            transform_out: 64,
            head_hidden: vec![32],
            similarity_hidden: vec![64, 64],
            similarity_out: 32,
            hidden_activation: Activation::Relu,
        },
        ..TrainConfig::default()
    }
}

pub fn bench_model(feature_dim: usize) -> DacaModel {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    DacaModel::init(feature_dim, &bench_config().arch, &mut rng).unwrap()
}
