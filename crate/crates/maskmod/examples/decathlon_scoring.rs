//! The decathlon-style score: per-task maximum errors are twice the
//! fine-tuned reference errors, the scale is calibrated so a perfect task
//! scores 1000, and the reference itself scores 250.

use indexmap::IndexMap;
use maskmod::eval::{decathlon_score, DecathlonConfig};

fn main() -> maskmod::Result<()> {
    let mut reference = IndexMap::new();
    reference.insert("invert".to_string(), 0.08);
    reference.insert("channel_shuffle".to_string(), 0.15);
    reference.insert("rotate90".to_string(), 0.05);
    let cfg = DecathlonConfig::from_reference_errors(&reference, 1e-3)?;

    println!("{:<18} {:>8} {:>10}", "task", "e_max", "alpha");
    for task in ["invert", "channel_shuffle", "rotate90"] {
        println!(
            "{:<18} {:>8.3} {:>10.1}",
            task,
            cfg.e_max(task).unwrap(),
            cfg.alpha(task)?
        );
    }

    let rows: Vec<(&str, Box<dyn Fn(f64) -> f64>)> = vec![
        ("perfect (E=0)", Box::new(|_| 0.0)),
        ("reference (E=Emax/2)", Box::new(|emax| emax / 2.0)),
        ("at the cap (E=Emax)", Box::new(|emax| emax)),
        ("beyond the cap", Box::new(|emax| emax * 1.5)),
    ];
    println!("\n{:<22} {:>10} {:>12}", "model", "per-task", "total");
    for (label, err_of) in rows {
        let errors: IndexMap<String, f64> = reference
            .keys()
            .map(|task| (task.clone(), err_of(cfg.e_max(task).unwrap())))
            .collect();
        let score = decathlon_score(&errors, &cfg)?;
        let per: Vec<String> = score.per_task.values().map(|s| format!("{s:.0}")).collect();
        println!("{:<22} {:>10} {:>12.0}", label, per.join("/"), score.total);
    }
    Ok(())
}
