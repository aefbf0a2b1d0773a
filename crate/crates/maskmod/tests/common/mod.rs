//! Shared fixtures for the integration suites. Each test binary uses a
//! subset, so the unused-code lint is off.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use maskmod::data::{generate, Dataset, Split, SyntheticSpec};
use maskmod::registry::{ArchDescriptor, BaselineParams, LayerSpec, NetworkState};
use maskmod::train::Schedule;

/// A small architecture that exercises conv+bn, pooling, gap and a masked
/// dense layer.
pub fn tiny_arch() -> ArchDescriptor {
    ArchDescriptor {
        input: [2, 8, 8],
        layers: vec![
            LayerSpec::Conv {
                name: "conv1".into(),
                out_ch: 4,
                kernel: 3,
                stride: 1,
                padding: 1,
                masked: true,
                bn: true,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv {
                name: "conv2".into(),
                out_ch: 8,
                kernel: 3,
                stride: 1,
                padding: 1,
                masked: true,
                bn: true,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::GlobalAvgPool,
            LayerSpec::Dense {
                name: "fc1".into(),
                out: 12,
                masked: true,
            },
            LayerSpec::Relu,
        ],
    }
}

/// An untrained but structurally valid baseline.
pub fn random_theta(seed: u64, classes: usize) -> BaselineParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NetworkState::pretrain_init(&tiny_arch(), classes, &mut rng)
        .expect("tiny arch is valid")
        .to_baseline_params()
}

pub fn small_synthetic(seed: u64, n_train: usize, n_test: usize) -> (Dataset, Dataset) {
    let spec = SyntheticSpec {
        seed,
        classes: 4,
        image: [2, 8, 8],
        n_train,
        n_test,
        noise: 0.2,
        transform: None,
    };
    (
        generate(&spec, Split::Train).expect("generator accepts the spec"),
        generate(&spec, Split::Test).expect("generator accepts the spec"),
    )
}

pub fn quick_schedule(epochs: usize) -> Schedule {
    Schedule {
        epochs,
        decay_epoch: epochs.saturating_sub(2).max(1),
        batch_size: 32,
        adam_lr: 5e-3,
        sgd_lr: 5e-3,
        momentum: 0.9,
    }
}
