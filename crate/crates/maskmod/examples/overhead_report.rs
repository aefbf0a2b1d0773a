//! Exact storage accounting: what m additional tasks cost on top of a
//! frozen baseline, in baseline-parameter units.

use maskmod::registry::{measured_payload_bytes, overhead, NetworkState, TaskParams, TaskSetup};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> maskmod::Result<()> {
    let arch = maskmod::config::desk_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let theta = NetworkState::pretrain_init(&arch, 4, &mut rng)?.to_baseline_params();

    let omegas: Vec<TaskParams> = (0..4u64)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
            NetworkState::task_init(&theta, &TaskSetup::default(), 4, &mut rng)
                .map(|net| net.to_task_params(&format!("task{t}")).binarized())
        })
        .collect::<maskmod::Result<_>>()?;

    println!(
        "baseline backbone: {} weights",
        arch.plan()?.backbone_weight_count()
    );
    println!(
        "{:<6} {:>12} {:>14} {:>12} {:>10}",
        "tasks", "mask bits", "scalar words", "extra bits", "ratio"
    );
    for m in 1..=4 {
        let refs: Vec<&TaskParams> = omegas[..m].iter().collect();
        let report = overhead(&theta, &refs)?;
        let t = &report.tasks[0];
        println!(
            "{:<6} {:>12} {:>14} {:>12} {:>10.5}",
            m,
            t.mask_bits * m as u64,
            t.scalar_words * m as u64,
            report.total_extra_bits,
            report.ratio
        );
    }

    // The arithmetic is cross-checked against the real serialized payload.
    let payload = measured_payload_bytes(&omegas[0], &arch)?;
    let report = overhead(&theta, &[&omegas[0]])?;
    println!(
        "\nserialized payload of one task: {} bytes = {} bits (arithmetic says {})",
        payload,
        payload * 8,
        report.tasks[0].extra_bits
    );
    Ok(())
}
