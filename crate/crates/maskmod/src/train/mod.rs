//! The training loop: Adam for masks, transform coefficients and batch
//! norm; SGD with momentum for the classifier; both learning rates decayed
//! by 10 at a scheduled epoch.

mod optim;

pub use optim::{Adam, SgdMomentum};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, softmax_xent};
use crate::registry::{forward_logits, BaselineParams, NetworkState, TaskParams, TaskSetup};
use crate::tensor::Graph;

/// Learning-rate schedule and loop sizing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    /// Epoch index (0-based) at which both learning rates divide by 10.
    pub decay_epoch: usize,
    pub batch_size: usize,
    pub adam_lr: f64,
    pub sgd_lr: f64,
    pub momentum: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 20,
            decay_epoch: 15,
            batch_size: 32,
            adam_lr: 1e-4,
            sgd_lr: 1e-3,
            momentum: 0.9,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.decay_epoch >= self.epochs {
            return Err(Error::BadConfig {
                msg: format!(
                    "decay_epoch {} must be below total epochs {}",
                    self.decay_epoch, self.epochs
                ),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::BadConfig {
                msg: "batch_size must be positive".into(),
            });
        }
        Ok(())
    }
}

/// `lr0` before the decay epoch, `lr0 / 10` from it onward.
pub fn lr_at(initial: f64, epoch: usize, decay_epoch: usize) -> f64 {
    if epoch >= decay_epoch {
        initial / 10.0
    } else {
        initial
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub adam_lr: f64,
    pub sgd_lr: f64,
}

/// Loop options beyond the schedule.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Seed for batch shuffling and augmentation draws.
    pub seed: u64,
    /// Random horizontal mirroring of training batches.
    pub augment_mirror: bool,
    /// Produce batches on a worker thread through a bounded queue. Batch
    /// order and contents are decided up front, so results stay identical;
    /// only the gathering overlaps compute.
    pub parallel_data: bool,
}

fn mirror_in_place(buf: &mut [f32], c: usize, h: usize, w: usize, sample: usize) {
    let base = sample * c * h * w;
    for ci in 0..c {
        for i in 0..h {
            let row = base + (ci * h + i) * w;
            buf[row..row + w].reverse();
        }
    }
}

struct BatchPlan {
    indices: Vec<usize>,
    mirror: Vec<bool>,
}

fn gather(data: &Dataset, plan: &BatchPlan) -> (Vec<f32>, Vec<usize>) {
    let ilen = data.image_len();
    let mut buf = Vec::with_capacity(plan.indices.len() * ilen);
    let mut labels = Vec::with_capacity(plan.indices.len());
    for &i in &plan.indices {
        buf.extend_from_slice(&data.images[i * ilen..(i + 1) * ilen]);
        labels.push(data.labels[i]);
    }
    let [c, h, w] = data.shape;
    for (s, &flip) in plan.mirror.iter().enumerate() {
        if flip {
            mirror_in_place(&mut buf, c, h, w, s);
        }
    }
    (buf, labels)
}

/// Trains `net` in place on `data` and returns the per-epoch metric log.
///
/// All tensors marked learnable outside the classifier go to Adam; the
/// classifier goes to SGD with momentum. A non-finite loss aborts with the
/// offending epoch, batch and learning rates.
pub fn train_network(
    net: &NetworkState<f32>,
    data: &Dataset,
    schedule: &Schedule,
    options: &TrainOptions,
    mut metrics_sink: Option<&mut dyn Write>,
) -> Result<Vec<EpochMetrics>> {
    schedule.validate()?;
    data.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut adam = Adam::new(net.backbone_learnables(), schedule.adam_lr);
    let mut sgd = SgdMomentum::new(
        net.classifier_learnables(),
        schedule.sgd_lr,
        schedule.momentum,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(options.seed, "batches"));
    let [c, h, w] = data.shape;
    let mut metrics = Vec::with_capacity(schedule.epochs);

    for epoch in 0..schedule.epochs {
        // Scheduled rates are tracked in f64 so the decay is exact in the
        // metric log; the optimizers round to their element type.
        let adam_lr = lr_at(schedule.adam_lr, epoch, schedule.decay_epoch);
        let sgd_lr = lr_at(schedule.sgd_lr, epoch, schedule.decay_epoch);
        adam.set_lr(adam_lr);
        sgd.set_lr(sgd_lr);

        // Decide the whole epoch's batches up front so the synchronous and
        // producer-thread paths see identical streams.
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let plans: Vec<BatchPlan> = order
            .chunks(schedule.batch_size)
            .map(|chunk| BatchPlan {
                indices: chunk.to_vec(),
                mirror: chunk
                    .iter()
                    .map(|_| options.augment_mirror && rng.gen_bool(0.5))
                    .collect(),
            })
            .collect();

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;

        let run_batch = |batch_idx: usize,
                         buf: Vec<f32>,
                         labels: Vec<usize>,
                         adam: &mut Adam<f32>,
                         sgd: &mut SgdMomentum<f32>|
         -> Result<(f64, usize, usize)> {
            let n = labels.len();
            let x =
                crate::tensor::Tensor::new(vec![n, c, h, w], buf).expect("batch shape consistent");
            let graph = Graph::new();
            let logits = forward_logits(&graph, net, &x, true)?;
            let loss = softmax_xent(&graph, &logits, &labels)?;
            let loss_val = loss.item() as f64;
            if !loss_val.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: batch_idx,
                    adam_lr,
                    sgd_lr,
                });
            }
            graph.backward(&loss)?;
            adam.step();
            sgd.step();
            adam.zero_grads();
            sgd.zero_grads();
            let preds = argmax_rows(&logits);
            let hit = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            Ok((loss_val * n as f64, hit, n))
        };

        if options.parallel_data {
            let (tx, rx) = std::sync::mpsc::sync_channel::<(Vec<f32>, Vec<usize>)>(2);
            std::thread::scope(|scope| -> Result<()> {
                scope.spawn(move || {
                    for plan in &plans {
                        if tx.send(gather(data, plan)).is_err() {
                            break;
                        }
                    }
                });
                for (batch_idx, (buf, labels)) in rx.iter().enumerate() {
                    let (l, hit, n) = run_batch(batch_idx, buf, labels, &mut adam, &mut sgd)?;
                    loss_sum += l;
                    correct += hit;
                    seen += n;
                }
                Ok(())
            })?;
        } else {
            for (batch_idx, plan) in plans.iter().enumerate() {
                let (buf, labels) = gather(data, plan);
                let (l, hit, n) = run_batch(batch_idx, buf, labels, &mut adam, &mut sgd)?;
                loss_sum += l;
                correct += hit;
                seen += n;
            }
        }

        let entry = EpochMetrics {
            epoch,
            split: "train".to_string(),
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            adam_lr,
            sgd_lr,
        };
        if let Some(sink) = metrics_sink.as_deref_mut() {
            serde_json::to_writer(&mut *sink, &entry)?;
            sink.write_all(b"\n")?;
        }
        metrics.push(entry);
    }
    Ok(metrics)
}

/// Opens (append) a metrics file and runs [`train_network`] against it.
pub fn train_network_logged(
    net: &NetworkState<f32>,
    data: &Dataset,
    schedule: &Schedule,
    options: &TrainOptions,
    metrics_path: Option<&Path>,
) -> Result<Vec<EpochMetrics>> {
    match metrics_path {
        Some(path) => {
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?;
            train_network(net, data, schedule, options, Some(&mut file))
        }
        None => train_network(net, data, schedule, options, None),
    }
}

/// Configuration of one task-training run.
#[derive(Debug, Clone)]
pub struct TaskTrainConfig {
    pub setup: TaskSetup,
    pub schedule: Schedule,
    pub options: TrainOptions,
}

/// Trains a fresh task on a frozen baseline. The returned parameters carry
/// real-valued masks (a resumable checkpoint state); callers producing the
/// final artifact binarize them.
pub fn train_task(
    theta: &BaselineParams,
    task_name: &str,
    data: &Dataset,
    cfg: &TaskTrainConfig,
    metrics_path: Option<&Path>,
) -> Result<(TaskParams, Vec<EpochMetrics>)> {
    let mut init_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.options.seed, &format!("init/{task_name}")));
    let net = NetworkState::task_init(theta, &cfg.setup, data.classes, &mut init_rng)?;
    let mut options = cfg.options.clone();
    options.seed = derive_seed(cfg.options.seed, &format!("train/{task_name}"));
    let metrics = train_network_logged(&net, data, &cfg.schedule, &options, metrics_path)?;
    Ok((net.to_task_params(task_name), metrics))
}

/// Pretrains a baseline network from scratch.
pub fn pretrain(
    arch: &crate::registry::ArchDescriptor,
    classes: usize,
    data: &Dataset,
    schedule: &Schedule,
    options: &TrainOptions,
    metrics_path: Option<&Path>,
) -> Result<(BaselineParams, Vec<EpochMetrics>)> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(options.seed, "init/baseline"));
    let net = NetworkState::pretrain_init(arch, classes, &mut init_rng)?;
    let mut opts = options.clone();
    opts.seed = derive_seed(options.seed, "train/baseline");
    let metrics = train_network_logged(&net, data, schedule, &opts, metrics_path)?;
    Ok((net.to_baseline_params(), metrics))
}

/// Trains an individually fine-tuned reference model (all weights free).
pub fn finetune(
    theta: &BaselineParams,
    task_name: &str,
    data: &Dataset,
    schedule: &Schedule,
    options: &TrainOptions,
) -> Result<(NetworkState<f32>, Vec<EpochMetrics>)> {
    let mut init_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(options.seed, &format!("init/ft/{task_name}")));
    let net = NetworkState::finetune_init(theta, data.classes, &mut init_rng)?;
    let mut opts = options.clone();
    opts.seed = derive_seed(options.seed, &format!("train/ft/{task_name}"));
    let metrics = train_network_logged(&net, data, schedule, &opts, None)?;
    Ok((net, metrics))
}

/// Trains only a fresh classifier on the frozen feature extractor.
pub fn train_classifier_only(
    theta: &BaselineParams,
    task_name: &str,
    data: &Dataset,
    schedule: &Schedule,
    options: &TrainOptions,
) -> Result<(NetworkState<f32>, Vec<EpochMetrics>)> {
    let mut init_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(options.seed, &format!("init/co/{task_name}")));
    let net = NetworkState::classifier_only_init(theta, data.classes, &mut init_rng)?;
    let mut opts = options.clone();
    opts.seed = derive_seed(options.seed, &format!("train/co/{task_name}"));
    let metrics = train_network_logged(&net, data, schedule, &opts, None)?;
    Ok((net, metrics))
}
