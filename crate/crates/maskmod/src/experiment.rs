//! The desk-scale trend experiment: pretrain on the base synthetic task,
//! then add the transformed tasks under four adaptation regimes plus
//! individually fine-tuned references.

use indexmap::IndexMap;
use serde::Serialize;

use crate::config::{default_pretrain_schedule, desk_arch};
use crate::data::{derive_seed, generate, make_synthetic_suite, Dataset, Split, SyntheticSpec};
use crate::error::Result;
use crate::eval::{decathlon_score, evaluate, evaluate_network, DecathlonConfig, ScoreReport};
use crate::mask::{SurrogateKind, Variant};
use crate::registry::{add_task, ArchDescriptor, BaselineParams, TaskParams, TaskSetup};
use crate::train::{
    finetune, pretrain, train_classifier_only, Schedule, TaskTrainConfig, TrainOptions,
};

#[derive(Debug, Clone)]
pub struct TrendConfig {
    pub seed: u64,
    pub arch: ArchDescriptor,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f32,
    pub pretrain_schedule: Schedule,
    pub task_schedule: Schedule,
    /// Fine-tuned references and the classifier-only baseline reuse the
    /// pretraining schedule (they train free weights, not adapters).
    pub surrogate: SurrogateKind,
}

impl Default for TrendConfig {
    fn default() -> Self {
        TrendConfig {
            seed: 42,
            arch: desk_arch(),
            n_train: 512,
            n_test: 512,
            noise: 0.30,
            pretrain_schedule: default_pretrain_schedule(),
            task_schedule: Schedule {
                epochs: 20,
                decay_epoch: 10,
                batch_size: 32,
                adam_lr: 1e-2,
                sgd_lr: 1e-2,
                momentum: 0.9,
            },
            surrogate: SurrogateKind::Identity,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeResult {
    pub regime: String,
    pub per_task_accuracy: IndexMap<String, f64>,
    pub mean_accuracy: f64,
}

impl RegimeResult {
    fn from_accuracies(regime: &str, acc: IndexMap<String, f64>) -> Self {
        let mean = acc.values().sum::<f64>() / acc.len() as f64;
        RegimeResult {
            regime: regime.to_string(),
            per_task_accuracy: acc,
            mean_accuracy: mean,
        }
    }
}

#[derive(Serialize)]
pub struct TrendOutcome {
    pub baseline_accuracy: f64,
    pub task_names: Vec<String>,
    pub classifier_only: RegimeResult,
    pub piggyback: RegimeResult,
    pub simple: RegimeResult,
    pub full: RegimeResult,
    pub finetune: RegimeResult,
    pub decathlon: ScoreReport,
    #[serde(skip)]
    pub theta: BaselineParams,
    #[serde(skip)]
    pub full_omegas: Vec<TaskParams>,
}

fn task_datasets(cfg: &TrendConfig) -> Result<Vec<(String, Dataset, Dataset)>> {
    let suite = make_synthetic_suite(cfg.seed, 4)?;
    let mut out = Vec::new();
    for (name, spec) in suite {
        let spec = SyntheticSpec {
            n_train: cfg.n_train,
            n_test: cfg.n_test,
            noise: cfg.noise,
            ..spec
        };
        let train = generate(&spec, Split::Train)?;
        let test = generate(&spec, Split::Test)?;
        out.push((name, train, test));
    }
    Ok(out)
}

/// Runs the full experiment. Deterministic for a fixed config.
pub fn run_trend_experiment(cfg: &TrendConfig) -> Result<TrendOutcome> {
    let mut datasets = task_datasets(cfg)?;
    let (_, base_train, base_test) = datasets.remove(0);

    let (theta, _) = pretrain(
        &cfg.arch,
        base_train.classes,
        &base_train,
        &cfg.pretrain_schedule,
        &TrainOptions {
            seed: derive_seed(cfg.seed, "pretrain"),
            ..TrainOptions::default()
        },
        None,
    )?;
    let baseline_accuracy = evaluate(&theta, None, &base_test)?.accuracy;

    let task_names: Vec<String> = datasets.iter().map(|(n, _, _)| n.clone()).collect();

    let mut finetune_acc = IndexMap::new();
    let mut reference_errors = IndexMap::new();
    for (name, train, test) in &datasets {
        let (net, _) = finetune(
            &theta,
            name,
            train,
            &cfg.pretrain_schedule,
            &TrainOptions {
                seed: derive_seed(cfg.seed, &format!("finetune/{name}")),
                ..TrainOptions::default()
            },
        )?;
        let result = evaluate_network(&net, test)?;
        finetune_acc.insert(name.clone(), result.accuracy);
        reference_errors.insert(name.clone(), result.error);
    }

    let mut classifier_acc = IndexMap::new();
    for (name, train, test) in &datasets {
        let (net, _) = train_classifier_only(
            &theta,
            name,
            train,
            &cfg.pretrain_schedule,
            &TrainOptions {
                seed: derive_seed(cfg.seed, &format!("clsonly/{name}")),
                ..TrainOptions::default()
            },
        )?;
        classifier_acc.insert(name.clone(), evaluate_network(&net, test)?.accuracy);
    }

    let run_variant =
        |variant: Variant, tag: &str| -> Result<(IndexMap<String, f64>, Vec<TaskParams>)> {
            let mut acc = IndexMap::new();
            let mut omegas = Vec::new();
            for (name, train, test) in &datasets {
                let cfg_task = TaskTrainConfig {
                    setup: TaskSetup {
                        variant,
                        surrogate: cfg.surrogate,
                        channel_wise: false,
                        learn_override: None,
                        task_bn: true,
                    },
                    schedule: cfg.task_schedule.clone(),
                    options: TrainOptions {
                        seed: derive_seed(cfg.seed, &format!("{tag}/{name}")),
                        ..TrainOptions::default()
                    },
                };
                let (omega, _) = add_task(&theta, name, train, &cfg_task, None)?;
                acc.insert(name.clone(), evaluate(&theta, Some(&omega), test)?.accuracy);
                omegas.push(omega);
            }
            Ok((acc, omegas))
        };

    let (piggyback_acc, _) = run_variant(Variant::Piggyback, "piggyback")?;
    let (simple_acc, _) = run_variant(Variant::Simple, "simple")?;
    let (full_acc, full_omegas) = run_variant(Variant::Full, "full")?;

    let decathlon_cfg = DecathlonConfig::from_reference_errors(&reference_errors, 1e-3)?;
    let full_errors: IndexMap<String, f64> = full_acc
        .iter()
        .map(|(k, &a)| (k.clone(), 1.0 - a))
        .collect();
    let decathlon = decathlon_score(&full_errors, &decathlon_cfg)?;

    Ok(TrendOutcome {
        baseline_accuracy,
        task_names,
        classifier_only: RegimeResult::from_accuracies("classifier_only", classifier_acc),
        piggyback: RegimeResult::from_accuracies("piggyback_bn", piggyback_acc),
        simple: RegimeResult::from_accuracies("simple", simple_acc),
        full: RegimeResult::from_accuracies("full", full_acc),
        finetune: RegimeResult::from_accuracies("finetune", finetune_acc),
        decathlon,
        theta,
        full_omegas,
    })
}

/// Renders the outcome as an aligned text table.
pub fn render_trend_table(outcome: &TrendOutcome) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "baseline accuracy on its own task: {:.1}%\n\n",
        outcome.baseline_accuracy * 100.0
    ));
    out.push_str(&format!("{:<16}", "regime"));
    for name in &outcome.task_names {
        out.push_str(&format!("{:>16}", name));
    }
    out.push_str(&format!("{:>10}\n", "mean"));
    for regime in [
        &outcome.classifier_only,
        &outcome.piggyback,
        &outcome.simple,
        &outcome.full,
        &outcome.finetune,
    ] {
        out.push_str(&format!("{:<16}", regime.regime));
        for name in &outcome.task_names {
            out.push_str(&format!(
                "{:>15.1}%",
                regime.per_task_accuracy[name] * 100.0
            ));
        }
        out.push_str(&format!("{:>9.1}%\n", regime.mean_accuracy * 100.0));
    }
    out.push_str(&format!(
        "\ndecathlon score of the full variant: {:.0} (max {})\n",
        outcome.decathlon.total,
        1000 * outcome.task_names.len()
    ));
    out
}
