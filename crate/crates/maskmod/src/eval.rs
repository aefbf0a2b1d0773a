//! Evaluation, the decathlon-style score and mask-density analysis.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::Variant;
use crate::nn::argmax_rows;
use crate::registry::{forward_logits, BaselineParams, NetworkState, TaskParams};
use crate::tensor::Graph;

/// Error rate and accuracy of one network on one dataset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalResult {
    pub error: f64,
    pub accuracy: f64,
    pub samples: usize,
}

const EVAL_BATCH: usize = 256;

/// Deterministic eval-mode error rate of an assembled network.
pub fn evaluate_network(net: &NetworkState<f32>, data: &Dataset) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.validate()?;
    let mut wrong = 0usize;
    let mut idx = 0usize;
    while idx < data.len() {
        let end = (idx + EVAL_BATCH).min(data.len());
        let indices: Vec<usize> = (idx..end).collect();
        let (x, labels) = data.batch(&indices);
        let graph = Graph::new();
        let logits = forward_logits(&graph, net, &x, false)?;
        let preds = argmax_rows(&logits);
        wrong += preds.iter().zip(&labels).filter(|(p, l)| p != l).count();
        idx = end;
    }
    let error = wrong as f64 / data.len() as f64;
    Ok(EvalResult {
        error,
        accuracy: 1.0 - error,
        samples: data.len(),
    })
}

/// Evaluates a stored task (or the baseline itself when `omega` is `None`).
pub fn evaluate(
    theta: &BaselineParams,
    omega: Option<&TaskParams>,
    data: &Dataset,
) -> Result<EvalResult> {
    let net = match omega {
        Some(omega) => NetworkState::from_task(theta, omega)?,
        None => NetworkState::baseline(theta)?,
    };
    evaluate_network(&net, data)
}

// ---------------------------------------------------------------------------
// Decathlon score
// ---------------------------------------------------------------------------

/// Per-task maximum errors and the derived scale coefficients.
///
/// `alpha_d = 1000 / (e_max_d)^2`, so a zero-error task scores exactly 1000
/// and a task at half its maximum error (the fine-tuned reference that was
/// doubled to produce `e_max`) scores exactly 250.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecathlonConfig {
    e_max: IndexMap<String, f64>,
}

impl DecathlonConfig {
    pub fn new(e_max: IndexMap<String, f64>) -> Result<Self> {
        for (task, &e) in &e_max {
            if !(0.0 < e && e <= 1.0) {
                return Err(Error::BadConfig {
                    msg: format!("e_max for `{task}` must lie in (0, 1], got {e}"),
                });
            }
        }
        Ok(DecathlonConfig { e_max })
    }

    /// Doubles fine-tuned reference errors, clamping into `(0, 1]` with the
    /// given floor so that perfect references stay scoreable.
    pub fn from_reference_errors(reference: &IndexMap<String, f64>, floor: f64) -> Result<Self> {
        let e_max = reference
            .iter()
            .map(|(task, &e)| (task.clone(), (2.0 * e).clamp(floor, 1.0)))
            .collect();
        Self::new(e_max)
    }

    pub fn alpha(&self, task: &str) -> Result<f64> {
        let e = self.e_max.get(task).ok_or_else(|| Error::MissingTask {
            task: task.to_string(),
            what: "decathlon config".to_string(),
        })?;
        Ok(1000.0 / (e * e))
    }

    pub fn e_max(&self, task: &str) -> Option<f64> {
        self.e_max.get(task).copied()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &String> {
        self.e_max.keys()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_task: IndexMap<String, f64>,
    pub total: f64,
}

/// `s_d = alpha_d * max(0, e_max_d - e_d)^2`, summed over tasks.
pub fn decathlon_score(
    errors: &IndexMap<String, f64>,
    cfg: &DecathlonConfig,
) -> Result<ScoreReport> {
    for task in cfg.tasks() {
        if !errors.contains_key(task) {
            return Err(Error::MissingTask {
                task: task.clone(),
                what: "error table".to_string(),
            });
        }
    }
    let mut per_task = IndexMap::new();
    let mut total = 0.0;
    for (task, &e_d) in errors {
        let e_max = cfg.e_max(task).ok_or_else(|| Error::MissingTask {
            task: task.clone(),
            what: "decathlon config".to_string(),
        })?;
        let alpha = cfg.alpha(task)?;
        let margin = (e_max - e_d).max(0.0);
        let score = alpha * margin * margin;
        per_task.insert(task.clone(), score);
        total += score;
    }
    Ok(ScoreReport { per_task, total })
}

// ---------------------------------------------------------------------------
// Mask density analysis
// ---------------------------------------------------------------------------

/// Per-layer mask statistics and transform coefficients, ordered by depth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskDensityReport {
    pub task: String,
    pub layers: Vec<LayerDensity>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDensity {
    pub layer: String,
    pub depth: usize,
    pub ones: usize,
    pub total: usize,
    pub density: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
}

/// Fraction of 1-bits per masked layer plus the layer's k values.
pub fn mask_density(
    omega: &TaskParams,
    arch: &crate::registry::ArchDescriptor,
) -> Result<MaskDensityReport> {
    let plan = arch.plan()?;
    let mut layers = Vec::new();
    for l in plan.masked_layers() {
        let mask = omega
            .masks
            .get(&l.name)
            .ok_or_else(|| Error::LayerMismatch {
                layer: l.name.clone(),
                msg: "mask missing".into(),
            })?;
        let binary = mask.to_binary();
        let k = &omega.k[&l.name];
        let k1 = k.k1.iter().map(|&v| v as f64).sum::<f64>() / k.k1.len() as f64;
        layers.push(LayerDensity {
            layer: l.name.clone(),
            depth: l.depth,
            ones: binary.ones_count(),
            total: binary.len(),
            density: binary.density(),
            k1,
            k2: k.k2 as f64,
            k3: k.k3 as f64,
        });
    }
    Ok(MaskDensityReport {
        task: omega.task.clone(),
        layers,
    })
}

/// Plain-text bar rendering of a density report.
pub fn render_density_bars(report: &MaskDensityReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("mask density per layer ({}):\n", report.task));
    for l in &report.layers {
        let filled = (l.density * 40.0).round() as usize;
        out.push_str(&format!(
            "  {:>2} {:<10} [{}{}] {:>6.1}%  k1={:+.3} k2={:+.3} k3={:+.3}\n",
            l.depth,
            l.layer,
            "#".repeat(filled),
            "-".repeat(40 - filled.min(40)),
            l.density * 100.0,
            l.k1,
            l.k2,
            l.k3
        ));
    }
    out
}

/// Results-file record for one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskResult {
    pub error: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Results file: a JSON map task -> {error, accuracy, score?}.
pub type ResultsFile = IndexMap<String, TaskResult>;

/// Piggyback is a special case of the transform; expose the variant check
/// so report tooling can label runs.
pub fn variant_label(v: Variant) -> &'static str {
    match v {
        Variant::Piggyback => "piggyback",
        Variant::Simple => "simple",
        Variant::Full => "full",
    }
}
