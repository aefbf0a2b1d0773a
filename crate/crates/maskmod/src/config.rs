//! Run configuration: architecture, transform flags, schedules and data.
//!
//! Paths inside a config are resolved relative to the config file's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate, make_synthetic_suite, Dataset, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::mask::{SurrogateKind, Variant};
use crate::registry::{ArchDescriptor, LayerSpec, TaskSetup};
use crate::train::Schedule;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    /// The built-in multi-task suite.
    Synthetic {
        seed: u64,
        n_tasks: usize,
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_noise")]
        noise: f32,
    },
    /// An IDX image/label pair; `task_name` labels the single task it holds.
    Idx {
        task_name: String,
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes: usize,
        mean: Vec<f32>,
        std: Vec<f32>,
    },
}

fn default_n_train() -> usize {
    512
}
fn default_n_test() -> usize {
    256
}
fn default_noise() -> f32 {
    0.10
}
fn default_task_bn() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub arch: ArchDescriptor,
    pub seed: u64,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_surrogate")]
    pub surrogate: SurrogateKind,
    #[serde(default)]
    pub channel_wise: bool,
    #[serde(default)]
    pub learn_k: Option<Vec<usize>>,
    #[serde(default = "default_task_bn")]
    pub task_bn: bool,
    /// Schedule for `add-task` runs.
    #[serde(default)]
    pub schedule: Schedule,
    /// Schedule for `pretrain` runs.
    #[serde(default = "default_pretrain_schedule")]
    pub pretrain: Schedule,
    #[serde(default)]
    pub augment_mirror: bool,
    #[serde(default)]
    pub parallel_data: bool,
    pub data: DataConfig,
}

fn default_variant() -> Variant {
    Variant::Full
}
fn default_surrogate() -> SurrogateKind {
    SurrogateKind::Identity
}

/// Pretraining runs from scratch, so it gets a hotter schedule than the
/// task adapter runs.
pub fn default_pretrain_schedule() -> Schedule {
    Schedule {
        epochs: 20,
        decay_epoch: 15,
        batch_size: 32,
        adam_lr: 2e-3,
        sgd_lr: 1e-2,
        momentum: 0.9,
    }
}

/// The default desk-scale CNN: two masked convolutions with batch norm, a
/// masked dense layer, global average pooling in between.
pub fn desk_arch() -> ArchDescriptor {
    ArchDescriptor {
        input: [2, 12, 12],
        layers: vec![
            LayerSpec::Conv {
                name: "conv1".into(),
                out_ch: 8,
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
                out_ch: 16,
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
                out: 24,
                masked: true,
            },
            LayerSpec::Relu,
        ],
    }
}

impl RunConfig {
    /// A ready-to-edit configuration for the synthetic suite.
    pub fn example(seed: u64) -> Self {
        RunConfig {
            arch: desk_arch(),
            seed,
            variant: Variant::Full,
            surrogate: SurrogateKind::Identity,
            channel_wise: false,
            learn_k: None,
            task_bn: true,
            schedule: Schedule::default(),
            pretrain: default_pretrain_schedule(),
            augment_mirror: false,
            parallel_data: false,
            data: DataConfig::Synthetic {
                seed,
                n_tasks: 4,
                n_train: default_n_train(),
                n_test: default_n_test(),
                noise: default_noise(),
            },
        }
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.arch.plan()?;
        cfg.schedule.validate()?;
        cfg.pretrain.validate()?;
        let dir = path
            .parent()
            .map(|p| p.to_path_buf())
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((cfg, dir))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// The transform wiring for `add-task`, after CLI overrides.
    pub fn task_setup(&self) -> TaskSetup {
        TaskSetup {
            variant: self.variant,
            surrogate: self.surrogate,
            channel_wise: self.channel_wise,
            learn_override: self.learn_k.clone(),
            task_bn: self.task_bn,
        }
    }

    /// Names of the tasks this config can produce data for.
    pub fn task_names(&self) -> Result<Vec<String>> {
        match &self.data {
            DataConfig::Synthetic { seed, n_tasks, .. } => {
                Ok(make_synthetic_suite(*seed, *n_tasks)?
                    .into_iter()
                    .map(|(name, _)| name)
                    .collect())
            }
            DataConfig::Idx { task_name, .. } => Ok(vec![task_name.clone()]),
        }
    }

    /// Materializes one split of one task's data.
    pub fn dataset(&self, config_dir: &Path, task: &str, split: Split) -> Result<Dataset> {
        match &self.data {
            DataConfig::Synthetic {
                seed,
                n_tasks,
                n_train,
                n_test,
                noise,
            } => {
                let suite = make_synthetic_suite(*seed, *n_tasks)?;
                let (_, spec) = suite
                    .into_iter()
                    .find(|(name, _)| name == task)
                    .ok_or_else(|| Error::MissingTask {
                        task: task.to_string(),
                        what: "synthetic suite".to_string(),
                    })?;
                let spec = SyntheticSpec {
                    n_train: *n_train,
                    n_test: *n_test,
                    noise: *noise,
                    ..spec
                };
                generate(&spec, split)
            }
            DataConfig::Idx {
                task_name,
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
                mean,
                std,
            } => {
                if task != task_name {
                    return Err(Error::MissingTask {
                        task: task.to_string(),
                        what: format!("idx config (holds `{task_name}`)"),
                    });
                }
                let (images, labels) = match split {
                    Split::Train => (train_images, train_labels),
                    Split::Test => (test_images, test_labels),
                };
                crate::data::idx::load_idx(
                    &config_dir.join(images),
                    &config_dir.join(labels),
                    *classes,
                    mean,
                    std,
                )
            }
        }
    }
}

/// Reads the `MASKMOD_SEED` override, if set.
pub fn env_seed_override() -> Result<Option<u64>> {
    match std::env::var("MASKMOD_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::BadConfig {
                msg: format!("MASKMOD_SEED must be an unsigned integer, got `{v}`"),
            }),
        Err(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_config_round_trips_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let cfg = RunConfig::example(7);
        cfg.save(&path).unwrap();
        let (loaded, loaded_dir) = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.seed, 7);
        assert_eq!(loaded_dir, dir.path());
        assert_eq!(
            loaded.task_names().unwrap(),
            vec!["base", "invert", "channel_shuffle", "rotate90"]
        );
    }

    #[test]
    fn synthetic_dataset_resolution_is_deterministic() {
        let cfg = RunConfig::example(3);
        let a = cfg.dataset(Path::new("."), "invert", Split::Train).unwrap();
        let b = cfg.dataset(Path::new("."), "invert", Split::Train).unwrap();
        assert_eq!(a.images, b.images);
        assert!(cfg.dataset(Path::new("."), "nope", Split::Train).is_err());
    }
}
