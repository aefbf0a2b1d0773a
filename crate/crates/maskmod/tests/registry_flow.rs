//! Registry-level behavior: serialization round trips, identity of the
//! freshly initialized task network, frozen-baseline guarantees and the
//! exact overhead arithmetic.

mod common;

use common::{random_theta, small_synthetic, tiny_arch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use maskmod::data::derive_seed;
use maskmod::error::Error;
use maskmod::mask::Variant;
use maskmod::registry::{
    add_task, build_task_network, forward_backbone, forward_logits, measured_payload_bytes,
    overhead, ArchDescriptor, BaselineParams, LayerSpec, NetworkState, TaskParams, TaskSetup,
};
use maskmod::tensor::Graph;
use maskmod::train::{TaskTrainConfig, TrainOptions};

fn bits_of(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn baseline_save_load_save_is_byte_identical() {
    let theta = random_theta(1, 4);
    let bytes = theta.to_bytes();
    let loaded = BaselineParams::from_bytes(&bytes).unwrap();
    assert_eq!(bytes, loaded.to_bytes());
    assert_eq!(theta.content_digest(), loaded.content_digest());
}

#[test]
fn fresh_task_backbone_matches_baseline_bit_for_bit() {
    let theta = random_theta(2, 4);
    let (_, test) = small_synthetic(5, 32, 32);
    let (probe, _) = test.probe(16);

    for variant in [Variant::Full, Variant::Simple, Variant::Piggyback] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let setup = TaskSetup {
            variant,
            ..TaskSetup::default()
        };
        let task_net = NetworkState::task_init(&theta, &setup, 4, &mut rng).unwrap();
        let base_net = NetworkState::baseline(&theta).unwrap();

        let g1 = Graph::new();
        let base_out = forward_backbone(&g1, &base_net, &probe, false).unwrap();
        let g2 = Graph::new();
        let task_out = forward_backbone(&g2, &task_net, &probe, false).unwrap();
        assert_eq!(
            bits_of(&base_out.to_vec()),
            bits_of(&task_out.to_vec()),
            "variant {variant:?} is not initialization-neutral"
        );
    }
}

#[test]
fn piggyback_with_all_ones_mask_equals_baseline_backbone() {
    let theta = random_theta(3, 4);
    let (_, test) = small_synthetic(6, 32, 32);
    let (probe, _) = test.probe(8);

    // A stored piggyback task whose masks are all ones and whose batch norm
    // is the baseline's: the backbone must be the baseline's exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let setup = TaskSetup {
        variant: Variant::Piggyback,
        task_bn: true,
        ..TaskSetup::default()
    };
    let net = NetworkState::task_init(&theta, &setup, 4, &mut rng).unwrap();
    let omega = net.to_task_params("allones").binarized();
    for mask in omega.masks.values() {
        let m = mask.to_binary();
        assert_eq!(m.ones_count(), m.len(), "init masks must be all ones");
    }

    let f_i = build_task_network(&theta, &omega).unwrap();
    let g1 = Graph::new();
    let base =
        forward_backbone(&g1, &NetworkState::baseline(&theta).unwrap(), &probe, false).unwrap();
    let g2 = Graph::new();
    let task = forward_backbone(&g2, &f_i, &probe, false).unwrap();
    assert_eq!(bits_of(&base.to_vec()), bits_of(&task.to_vec()));
}

fn quick_task_cfg(seed: u64, variant: Variant) -> TaskTrainConfig {
    TaskTrainConfig {
        setup: TaskSetup {
            variant,
            ..TaskSetup::default()
        },
        schedule: common::quick_schedule(3),
        options: TrainOptions {
            seed,
            ..TrainOptions::default()
        },
    }
}

#[test]
fn trained_task_round_trips_with_identical_logits() {
    let theta = random_theta(7, 4);
    let (train, test) = small_synthetic(8, 96, 32);
    let (omega, _) =
        add_task(&theta, "t", &train, &quick_task_cfg(1, Variant::Full), None).unwrap();

    let bytes = omega.to_bytes_with_arch(&theta.arch);
    let (loaded, arch) = TaskParams::from_bytes(&bytes).unwrap();
    assert_eq!(arch, theta.arch);
    assert_eq!(bytes, loaded.to_bytes_with_arch(&arch));

    let (probe, _) = test.probe(16);
    let g1 = Graph::new();
    let logits_a = forward_logits(
        &g1,
        &build_task_network(&theta, &omega).unwrap(),
        &probe,
        false,
    )
    .unwrap();
    let g2 = Graph::new();
    let logits_b = forward_logits(
        &g2,
        &build_task_network(&theta, &loaded).unwrap(),
        &probe,
        false,
    )
    .unwrap();
    assert_eq!(bits_of(&logits_a.to_vec()), bits_of(&logits_b.to_vec()));
}

#[test]
fn real_mask_checkpoint_round_trips_too() {
    let theta = random_theta(7, 4);
    let (train, _) = small_synthetic(8, 64, 32);
    let (omega, _) = maskmod::train::train_task(
        &theta,
        "ckpt",
        &train,
        &quick_task_cfg(2, Variant::Simple),
        None,
    )
    .unwrap();
    assert_eq!(omega.storage(), maskmod::registry::MaskStorage::Real);
    let bytes = omega.to_bytes_with_arch(&theta.arch);
    let (loaded, arch) = TaskParams::from_bytes(&bytes).unwrap();
    assert_eq!(bytes, loaded.to_bytes_with_arch(&arch));
}

#[test]
fn add_task_leaves_theta_digest_unchanged_and_old_logits_intact() {
    let theta = random_theta(11, 4);
    let digest0 = theta.content_digest();
    let (train_a, test_a) = small_synthetic(21, 96, 32);
    let (train_b, _) = small_synthetic(22, 96, 32);
    let (train_c, _) = small_synthetic(23, 96, 32);

    let (omega_a, _) = add_task(
        &theta,
        "a",
        &train_a,
        &quick_task_cfg(31, Variant::Full),
        None,
    )
    .unwrap();
    let (probe, _) = test_a.probe(16);
    let g = Graph::new();
    let logits_before = forward_logits(
        &g,
        &build_task_network(&theta, &omega_a).unwrap(),
        &probe,
        false,
    )
    .unwrap()
    .to_vec();

    let (_omega_b, _) = add_task(
        &theta,
        "b",
        &train_b,
        &quick_task_cfg(32, Variant::Simple),
        None,
    )
    .unwrap();
    let (_omega_c, _) = add_task(
        &theta,
        "c",
        &train_c,
        &quick_task_cfg(33, Variant::Piggyback),
        None,
    )
    .unwrap();

    assert_eq!(
        theta.content_digest(),
        digest0,
        "baseline digest must never move"
    );
    let g = Graph::new();
    let logits_after = forward_logits(
        &g,
        &build_task_network(&theta, &omega_a).unwrap(),
        &probe,
        false,
    )
    .unwrap()
    .to_vec();
    assert_eq!(bits_of(&logits_before), bits_of(&logits_after));
}

#[test]
fn task_order_independence_same_seed_same_bytes() {
    let theta = random_theta(13, 4);
    let (train_a, _) = small_synthetic(41, 96, 32);
    let (train_b, _) = small_synthetic(42, 96, 32);

    // A then B.
    let (_a, _) = add_task(
        &theta,
        "a",
        &train_a,
        &quick_task_cfg(51, Variant::Full),
        None,
    )
    .unwrap();
    let (b_after_a, _) = add_task(
        &theta,
        "b",
        &train_b,
        &quick_task_cfg(52, Variant::Full),
        None,
    )
    .unwrap();
    // B alone.
    let (b_alone, _) = add_task(
        &theta,
        "b",
        &train_b,
        &quick_task_cfg(52, Variant::Full),
        None,
    )
    .unwrap();

    assert_eq!(
        b_after_a.to_bytes_with_arch(&theta.arch),
        b_alone.to_bytes_with_arch(&theta.arch)
    );
}

/// The overhead fixture: two masked conv layers totalling 9600 weights,
/// both followed by 8-channel batch norm.
fn overhead_arch() -> ArchDescriptor {
    ArchDescriptor {
        input: [4, 10, 10],
        layers: vec![
            LayerSpec::Conv {
                name: "conv1".into(),
                out_ch: 8,
                kernel: 10,
                stride: 1,
                padding: 0,
                masked: true,
                bn: true,
            },
            LayerSpec::Relu,
            LayerSpec::Conv {
                name: "conv2".into(),
                out_ch: 8,
                kernel: 10,
                stride: 1,
                padding: 5,
                masked: true,
                bn: true,
            },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
        ],
    }
}

#[test]
fn overhead_matches_hand_arithmetic_and_serialized_payload() {
    let arch = overhead_arch();
    let plan = arch.plan().unwrap();
    assert_eq!(plan.backbone_weight_count(), 9600);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta = NetworkState::pretrain_init(&arch, 3, &mut rng)
        .unwrap()
        .to_baseline_params();

    let make_omega = |tag: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tag, "omega"));
        NetworkState::task_init(&theta, &TaskSetup::default(), 3, &mut rng)
            .unwrap()
            .to_task_params(&format!("task{tag}"))
            .binarized()
    };

    // One task: extras are 9600 mask bits + 32 * (8 k + 64 bn) = 11904 bits,
    // i.e. 372 extra words on a 9600-word baseline -> ratio 1.03875.
    let omega = make_omega(0);
    let report = overhead(&theta, &[&omega]).unwrap();
    assert_eq!(report.baseline_words, 9600);
    assert_eq!(report.tasks[0].mask_bits, 9600);
    assert_eq!(report.tasks[0].scalar_words, 72);
    assert_eq!(report.tasks[0].extra_bits, 11904);
    assert!((report.ratio - 1.03875).abs() < 1e-12);

    // The serialized payload (masks + k + bn, classifier excluded) must
    // match the arithmetic exactly: 11904 bits = 1488 bytes.
    let payload = measured_payload_bytes(&omega, &arch).unwrap();
    assert_eq!(payload * 8, report.tasks[0].extra_bits);

    // Zero tasks: ratio exactly 1.
    let empty = overhead(&theta, &[]).unwrap();
    assert_eq!(empty.ratio_num_bits, empty.ratio_den_bits);
    assert!((empty.ratio - 1.0).abs() < 1e-15);

    // m tasks: ratio = 1 + m * extra / baseline, exactly in integers,
    // and below 1 + 0.05 m.
    for m in [1usize, 2, 4] {
        let omegas: Vec<TaskParams> = (0..m as u64).map(make_omega).collect();
        let refs: Vec<&TaskParams> = omegas.iter().collect();
        let r = overhead(&theta, &refs).unwrap();
        assert_eq!(r.ratio_num_bits, 32 * 9600 + (m as u64) * 11904);
        assert_eq!(r.ratio_den_bits, 32 * 9600);
        assert!(r.ratio < 1.0 + 0.05 * m as f64);
    }
}

#[test]
fn mask_scalars_dominated_ratio_tends_to_one_plus_m_over_32() {
    // With the classifier and batch norm excluded and scalars negligible,
    // m tasks cost about m/32 of the baseline.
    let arch = overhead_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = NetworkState::pretrain_init(&arch, 3, &mut rng)
        .unwrap()
        .to_baseline_params();
    let omegas: Vec<TaskParams> = (0..4u64)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(t);
            let mut omega = NetworkState::task_init(&theta, &TaskSetup::default(), 3, &mut rng)
                .unwrap()
                .to_task_params(&format!("t{t}"))
                .binarized();
            omega.bn = None; // drop the 32-bit bn words to isolate mask bits
            omega
        })
        .collect();
    let refs: Vec<&TaskParams> = omegas.iter().collect();
    let r = overhead(&theta, &refs).unwrap();
    // The 8 k words per task are the only remaining scalars: 4*256 bits on
    // a 307200-bit baseline, under half a percent.
    let ideal = 1.0 + 4.0 / 32.0;
    assert!(
        (r.ratio - ideal).abs() < 0.005,
        "ratio {} vs ideal {}",
        r.ratio,
        ideal
    );
}

#[test]
fn corrupted_task_file_is_rejected_with_digest_error() {
    let theta = random_theta(17, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let omega = NetworkState::task_init(&theta, &TaskSetup::default(), 4, &mut rng)
        .unwrap()
        .to_task_params("x")
        .binarized();
    let mut bytes = omega.to_bytes_with_arch(&theta.arch);
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(
        TaskParams::from_bytes(&bytes),
        Err(Error::DigestMismatch { .. })
    ));
}

#[test]
fn layer_mismatch_errors_name_the_layer() {
    let theta = random_theta(19, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut omega = NetworkState::task_init(&theta, &TaskSetup::default(), 4, &mut rng)
        .unwrap()
        .to_task_params("x");
    omega.masks.shift_remove("conv2");
    match build_task_network(&theta, &omega) {
        Err(Error::LayerMismatch { layer, .. }) => assert_eq!(layer, "conv2"),
        Err(other) => panic!("expected LayerMismatch, got {other}"),
        Ok(_) => panic!("expected LayerMismatch, got a network"),
    }
}

#[test]
fn networks_evaluate_in_parallel_threads() {
    let theta = random_theta(23, 4);
    let (train, test) = small_synthetic(61, 64, 48);
    let (omega, _) = add_task(
        &theta,
        "p",
        &train,
        &quick_task_cfg(71, Variant::Full),
        None,
    )
    .unwrap();

    let sequential = maskmod::eval::evaluate(&theta, Some(&omega), &test).unwrap();
    let (a, b) = std::thread::scope(|scope| {
        let h1 = scope.spawn(|| maskmod::eval::evaluate(&theta, Some(&omega), &test).unwrap());
        let h2 = scope.spawn(|| maskmod::eval::evaluate(&theta, None, &test).unwrap());
        (h1.join().unwrap(), h2.join().unwrap())
    });
    assert_eq!(a.error, sequential.error);
    let _ = b;
}

#[test]
fn tiny_arch_is_the_fixture_we_think_it_is() {
    let plan = tiny_arch().plan().unwrap();
    assert_eq!(plan.weighted.len(), 3);
    assert_eq!(plan.feature_dim, 12);
}

#[test]
fn cross_architecture_task_files_are_rejected_gracefully() {
    // An omega trained for the tiny arch evaluated against a wider baseline
    // must produce a layer error, not a panic.
    let theta_small = random_theta(83, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let omega = NetworkState::task_init(&theta_small, &TaskSetup::default(), 4, &mut rng)
        .unwrap()
        .to_task_params("small")
        .binarized();

    let wide_arch = ArchDescriptor {
        input: [2, 8, 8],
        layers: tiny_arch()
            .layers
            .into_iter()
            .map(|l| match l {
                LayerSpec::Conv {
                    name,
                    kernel,
                    stride,
                    padding,
                    masked,
                    bn,
                    ..
                } => LayerSpec::Conv {
                    name,
                    out_ch: 6,
                    kernel,
                    stride,
                    padding,
                    masked,
                    bn,
                },
                other => other,
            })
            .collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let theta_wide = NetworkState::pretrain_init(&wide_arch, 4, &mut rng)
        .unwrap()
        .to_baseline_params();

    match build_task_network(&theta_wide, &omega) {
        Err(Error::LayerMismatch { .. }) => {}
        Err(other) => panic!("expected LayerMismatch, got {other}"),
        Ok(_) => panic!("mismatched architectures must not build"),
    }
}
