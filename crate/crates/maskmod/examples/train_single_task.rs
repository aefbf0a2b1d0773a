//! End-to-end library usage: pretrain a baseline on the base synthetic
//! task, add one transformed task, evaluate it, round-trip the artifact
//! through its binary format and show the density report.

use maskmod::config::{default_pretrain_schedule, desk_arch};
use maskmod::data::{generate, Split, SynthTransform, SyntheticSpec};
use maskmod::eval::{evaluate, mask_density, render_density_bars};
use maskmod::registry::{add_task, build_task_network, TaskParams, TaskSetup};
use maskmod::train::{pretrain, Schedule, TaskTrainConfig, TrainOptions};

fn main() -> maskmod::Result<()> {
    let arch = desk_arch();
    let base = SyntheticSpec {
        seed: 5,
        ..SyntheticSpec::default()
    };
    let base_train = generate(&base, Split::Train)?;
    let base_test = generate(&base, Split::Test)?;

    println!("pretraining the baseline...");
    let (theta, _) = pretrain(
        &arch,
        base_train.classes,
        &base_train,
        &default_pretrain_schedule(),
        &TrainOptions {
            seed: 5,
            ..TrainOptions::default()
        },
        None,
    )?;
    let base_acc = evaluate(&theta, None, &base_test)?.accuracy;
    println!(
        "baseline accuracy on its own task: {:.1}%",
        base_acc * 100.0
    );

    let task = SyntheticSpec {
        seed: 6,
        transform: Some(SynthTransform::Invert),
        ..SyntheticSpec::default()
    };
    let task_train = generate(&task, Split::Train)?;
    let task_test = generate(&task, Split::Test)?;

    println!("adding task `invert` (full variant)...");
    let cfg = TaskTrainConfig {
        setup: TaskSetup::default(),
        schedule: Schedule {
            epochs: 20,
            decay_epoch: 15,
            batch_size: 32,
            adam_lr: 1e-2,
            sgd_lr: 1e-2,
            momentum: 0.9,
        },
        options: TrainOptions {
            seed: 6,
            ..TrainOptions::default()
        },
    };
    let (omega, metrics) = add_task(&theta, "invert", &task_train, &cfg, None)?;
    println!(
        "final train loss {:.4}, accuracy {:.1}%",
        metrics.last().unwrap().loss,
        metrics.last().unwrap().accuracy * 100.0
    );

    let result = evaluate(&theta, Some(&omega), &task_test)?;
    println!(
        "test accuracy of the task network: {:.1}%",
        result.accuracy * 100.0
    );

    // Round-trip through the binary container: identical bytes, identical
    // network.
    let bytes = omega.to_bytes_with_arch(&theta.arch);
    let (loaded, arch_back) = TaskParams::from_bytes(&bytes)?;
    assert_eq!(bytes, loaded.to_bytes_with_arch(&arch_back));
    let _net = build_task_network(&theta, &loaded)?;
    println!("artifact round-trips: {} bytes", bytes.len());

    println!();
    print!(
        "{}",
        render_density_bars(&mask_density(&omega, &theta.arch)?)
    );
    Ok(())
}
