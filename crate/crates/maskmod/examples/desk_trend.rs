//! Runs the desk-scale trend experiment: pretrain on the base synthetic
//! task, then add three transformed tasks under four adaptation regimes
//! (classifier-only, piggyback with task batch norm, simple, full) and
//! compare against individually fine-tuned references.

use maskmod::eval::{mask_density, render_density_bars};
use maskmod::experiment::{render_trend_table, run_trend_experiment, TrendConfig};

fn main() -> maskmod::Result<()> {
    let cfg = TrendConfig::default();
    let start = std::time::Instant::now();
    let outcome = run_trend_experiment(&cfg)?;
    println!("{}", render_trend_table(&outcome));

    for omega in &outcome.full_omegas {
        let report = mask_density(omega, &outcome.theta.arch)?;
        println!("{}", render_density_bars(&report));
    }
    println!("total runtime: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
