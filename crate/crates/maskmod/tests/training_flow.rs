//! Training-loop behavior: group routing, schedule, frozen-parameter
//! guarantees, divergence handling and the separable sanity task.

mod common;

use common::{quick_schedule, random_theta, small_synthetic};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use maskmod::data::Dataset;
use maskmod::error::Error;
use maskmod::mask::Variant;
use maskmod::registry::{MaskSlot, NetworkState, TaskSetup};
use maskmod::train::{lr_at, train_network, train_task, Schedule, TaskTrainConfig, TrainOptions};

/// Two linearly separable classes: bright vs dark first channel.
fn separable_dataset(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let (c, h, w) = (2usize, 8usize, 8usize);
    let mut images = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let level = if class == 0 { 0.25 } else { 0.75 };
        for _ in 0..h * w {
            let v: f32 = level + rng.gen_range(-0.05..0.05);
            images.push((v - 0.5) / 0.5);
        }
        for _ in 0..h * w {
            let v: f32 = rng.gen_range(0.0..1.0);
            images.push((v - 0.5) / 0.5);
        }
        labels.push(class);
    }
    Dataset {
        shape: [c, h, w],
        images,
        labels,
        classes: 2,
    }
}

#[test]
fn separable_task_reaches_99_percent_with_simple_variant() {
    let theta = random_theta(31, 4);
    let data = separable_dataset(1, 128);
    let cfg = TaskTrainConfig {
        setup: TaskSetup {
            variant: Variant::Simple,
            ..TaskSetup::default()
        },
        schedule: quick_schedule(8),
        options: TrainOptions {
            seed: 5,
            ..TrainOptions::default()
        },
    };
    let (_omega, metrics) = train_task(&theta, "sep", &data, &cfg, None).unwrap();
    let final_acc = metrics.last().unwrap().accuracy;
    assert!(final_acc >= 0.99, "train accuracy {final_acc}");

    // Epoch-average loss decreases over the first epochs.
    assert!(
        metrics[1].loss < metrics[0].loss,
        "loss should fall: {} -> {}",
        metrics[0].loss,
        metrics[1].loss
    );
}

#[test]
fn piggyback_routing_updates_only_masks_bn_and_classifier() {
    let theta = random_theta(37, 4);
    let (train, _) = small_synthetic(71, 64, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let setup = TaskSetup {
        variant: Variant::Piggyback,
        ..TaskSetup::default()
    };
    let net = NetworkState::task_init(&theta, &setup, 4, &mut rng).unwrap();

    let weights_before: Vec<Vec<u32>> = net
        .layers
        .values()
        .map(|l| l.weight.to_vec().iter().map(|v| v.to_bits()).collect())
        .collect();
    let k_before: Vec<Vec<f32>> = net
        .layers
        .values()
        .flat_map(|l| {
            l.k.as_ref()
                .map(|k| vec![k.k0.to_vec(), k.k1.to_vec(), k.k2.to_vec(), k.k3.to_vec()])
        })
        .flatten()
        .collect();
    let masks_before: Vec<Vec<f32>> = net
        .layers
        .values()
        .filter_map(|l| match &l.mask {
            Some(MaskSlot::Real(r)) => Some(r.to_vec()),
            _ => None,
        })
        .collect();
    let classifier_before = net.classifier.weight.to_vec();

    train_network(
        &net,
        &train,
        &quick_schedule(2),
        &TrainOptions::default(),
        None,
    )
    .unwrap();

    let weights_after: Vec<Vec<u32>> = net
        .layers
        .values()
        .map(|l| l.weight.to_vec().iter().map(|v| v.to_bits()).collect())
        .collect();
    assert_eq!(
        weights_before, weights_after,
        "frozen weights must not move"
    );

    let k_after: Vec<Vec<f32>> = net
        .layers
        .values()
        .flat_map(|l| {
            l.k.as_ref()
                .map(|k| vec![k.k0.to_vec(), k.k1.to_vec(), k.k2.to_vec(), k.k3.to_vec()])
        })
        .flatten()
        .collect();
    assert_eq!(k_before, k_after, "piggyback k values are all fixed");

    let masks_after: Vec<Vec<f32>> = net
        .layers
        .values()
        .filter_map(|l| match &l.mask {
            Some(MaskSlot::Real(r)) => Some(r.to_vec()),
            _ => None,
        })
        .collect();
    assert_ne!(masks_before, masks_after, "real masks must receive updates");
    assert_ne!(classifier_before, net.classifier.weight.to_vec());

    let bn_scale_changed = net
        .layers
        .values()
        .filter_map(|l| l.bn.as_ref())
        .any(|bn| bn.scale.to_vec().iter().any(|&v| v != 1.0));
    assert!(bn_scale_changed, "task batch norm must receive updates");
}

#[test]
fn learning_rates_decay_by_ten_at_the_scheduled_epoch() {
    let theta = random_theta(41, 4);
    let (train, _) = small_synthetic(81, 64, 32);
    let schedule = Schedule {
        epochs: 4,
        decay_epoch: 2,
        batch_size: 32,
        adam_lr: 1e-4,
        sgd_lr: 1e-3,
        momentum: 0.9,
    };
    let cfg = TaskTrainConfig {
        setup: TaskSetup::default(),
        schedule: schedule.clone(),
        options: TrainOptions::default(),
    };
    let (_omega, metrics) = train_task(&theta, "decay", &train, &cfg, None).unwrap();
    for m in &metrics {
        let expect_adam = lr_at(schedule.adam_lr, m.epoch, schedule.decay_epoch);
        let expect_sgd = lr_at(schedule.sgd_lr, m.epoch, schedule.decay_epoch);
        assert_eq!(m.adam_lr, expect_adam);
        assert_eq!(m.sgd_lr, expect_sgd);
    }
    assert_eq!(metrics[1].adam_lr, 1e-4);
    assert_eq!(metrics[2].adam_lr, 1e-5);
    assert_eq!(metrics[2].sgd_lr, 1e-4);
}

#[test]
fn invalid_schedule_is_rejected() {
    let schedule = Schedule {
        epochs: 5,
        decay_epoch: 5,
        ..Schedule::default()
    };
    assert!(matches!(schedule.validate(), Err(Error::BadConfig { .. })));
}

#[test]
fn divergent_learning_rate_aborts_with_diagnostics() {
    let theta = random_theta(43, 4);
    let (train, _) = small_synthetic(91, 64, 32);
    let mut schedule = quick_schedule(3);
    schedule.adam_lr = 1e38;
    schedule.sgd_lr = 1e38;
    let cfg = TaskTrainConfig {
        setup: TaskSetup::default(),
        schedule,
        options: TrainOptions::default(),
    };
    match train_task(&theta, "diverge", &train, &cfg, None) {
        Err(Error::TrainingDiverged {
            epoch,
            batch,
            adam_lr,
            ..
        }) => {
            assert_eq!(epoch, 0);
            assert!(batch >= 1, "first finite batch precedes the blow-up");
            assert_eq!(adam_lr, 1e38);
        }
        Err(other) => panic!("expected TrainingDiverged, got {other}"),
        Ok(_) => panic!("expected TrainingDiverged, training finished"),
    }
}

#[test]
fn parallel_data_path_reproduces_synchronous_training() {
    let theta = random_theta(47, 4);
    let (train, _) = small_synthetic(101, 96, 32);
    let run = |parallel: bool| {
        let cfg = TaskTrainConfig {
            setup: TaskSetup::default(),
            schedule: quick_schedule(3),
            options: TrainOptions {
                seed: 9,
                augment_mirror: true,
                parallel_data: parallel,
            },
        };
        let (omega, _) = train_task(&theta, "par", &train, &cfg, None).unwrap();
        omega.to_bytes_with_arch(&theta.arch)
    };
    assert_eq!(run(false), run(true));
}

#[test]
fn metrics_log_is_appended_as_json_lines() {
    let theta = random_theta(53, 4);
    let (train, _) = small_synthetic(111, 64, 32);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    let cfg = TaskTrainConfig {
        setup: TaskSetup::default(),
        schedule: quick_schedule(3),
        options: TrainOptions::default(),
    };
    train_task(&theta, "log", &train, &cfg, Some(&path)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["epoch"], i);
        assert_eq!(v["split"], "train");
        assert!(v["loss"].is_f64());
        assert!(v["accuracy"].is_f64());
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let theta = random_theta(59, 4);
    let empty = Dataset {
        shape: [2, 8, 8],
        images: vec![],
        labels: vec![],
        classes: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = NetworkState::task_init(&theta, &TaskSetup::default(), 4, &mut rng).unwrap();
    assert!(matches!(
        train_network(
            &net,
            &empty,
            &quick_schedule(3),
            &TrainOptions::default(),
            None
        ),
        Err(Error::EmptyDataset)
    ));
}
