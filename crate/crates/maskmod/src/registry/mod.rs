//! Ownership of the frozen shared parameters and the per-task parameter
//! sets: building task networks, accounting parameter overhead and
//! serializing everything bit-exactly.

pub mod arch;
pub mod checkpoint;
mod network;

pub use arch::{ArchDescriptor, ArchPlan, LayerSpec, WeightedLayer};
pub use network::{
    build_task_network, forward_backbone, forward_logits, DenseState, LayerState, MaskSlot,
    NetworkState, TaskSetup,
};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, KParams, SurrogateKind, Variant};
use crate::tensor::{Element, Tensor};
use checkpoint::{Entry, Payload};

/// A plain, thread-shareable parameter buffer (storage is always `f32`).
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Param {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Param { shape, data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_tensor<E: Element>(&self) -> Tensor<E> {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|&v| E::from_f32(v)).collect(),
        )
        .expect("stored parameter shapes are consistent")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Self {
        Param {
            shape: t.shape(),
            data: t.to_vec(),
        }
    }
}

/// Stored batch-normalization state for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStored {
    pub scale: Vec<f32>,
    pub bias: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BnStored {
    pub fn identity(channels: usize) -> Self {
        BnStored {
            scale: vec![1.0; channels],
            bias: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels()
    }
}

/// The frozen shared parameters plus the baseline's own batch-norm state
/// and classifier, i.e. everything needed to run the pretraining task.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub arch: ArchDescriptor,
    pub classes: usize,
    pub weights: IndexMap<String, Param>,
    pub bn: IndexMap<String, BnStored>,
    pub classifier_weight: Param,
    pub classifier_bias: Param,
}

/// How a task's masks are materialized on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStorage {
    /// Bit-packed binary masks: the final, 1-bit-per-weight artifact.
    Binary,
    /// Real-valued masks: training checkpoints that can resume.
    Real,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskState {
    Real(Param),
    Binary(BinaryMask),
}

impl MaskState {
    pub fn to_binary(&self) -> BinaryMask {
        match self {
            MaskState::Binary(m) => m.clone(),
            MaskState::Real(r) => BinaryMask::from_reals(r.shape.clone(), &r.data)
                .expect("real mask shape matches its data"),
        }
    }

    pub fn bit_count(&self) -> usize {
        match self {
            MaskState::Binary(m) => m.len(),
            MaskState::Real(r) => r.numel(),
        }
    }
}

/// Everything stored for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskParams {
    pub task: String,
    pub variant: Variant,
    pub surrogate: SurrogateKind,
    pub channel_wise: bool,
    pub learn_override: Option<Vec<usize>>,
    pub classes: usize,
    pub masks: IndexMap<String, MaskState>,
    pub k: IndexMap<String, KParams<f32>>,
    /// Task-specific batch-norm state; `None` means the task runs on the
    /// baseline's frozen batch-norm parameters.
    pub bn: Option<IndexMap<String, BnStored>>,
    pub classifier_weight: Param,
    pub classifier_bias: Param,
}

impl TaskParams {
    pub fn storage(&self) -> MaskStorage {
        match self.masks.values().next() {
            Some(MaskState::Real(_)) => MaskStorage::Real,
            _ => MaskStorage::Binary,
        }
    }

    /// Converts any real masks to their thresholded binary form.
    pub fn binarized(&self) -> TaskParams {
        let mut out = self.clone();
        out.masks = self
            .masks
            .iter()
            .map(|(k, v)| (k.clone(), MaskState::Binary(v.to_binary())))
            .collect();
        out
    }
}

// ---------------------------------------------------------------------------
// Typed serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ThetaMeta {
    arch: ArchDescriptor,
    classes: usize,
}

#[derive(Serialize, Deserialize)]
struct OmegaMeta {
    arch: ArchDescriptor,
    task: String,
    variant: Variant,
    surrogate: SurrogateKind,
    channel_wise: bool,
    task_bn: bool,
    classes: usize,
    mask_storage: MaskStorage,
    learn_override: Option<Vec<usize>>,
}

fn bn_entries(name: &str, bn: &BnStored) -> Vec<Entry> {
    let c = bn.channels();
    vec![
        Entry::f32(format!("{name}.bn.scale"), vec![c], bn.scale.clone()),
        Entry::f32(format!("{name}.bn.bias"), vec![c], bn.bias.clone()),
        Entry::f32(format!("{name}.bn.mean"), vec![c], bn.mean.clone()),
        Entry::f32(format!("{name}.bn.var"), vec![c], bn.var.clone()),
    ]
}

fn take_entry<'a>(
    entries: &mut impl Iterator<Item = &'a Entry>,
    expected_name: &str,
    layer: &str,
) -> Result<&'a Entry> {
    match entries.next() {
        Some(e) if e.name == expected_name => Ok(e),
        Some(e) => Err(Error::LayerMismatch {
            layer: layer.to_string(),
            msg: format!("expected entry `{expected_name}`, found `{}`", e.name),
        }),
        None => Err(Error::LayerMismatch {
            layer: layer.to_string(),
            msg: format!("missing entry `{expected_name}`"),
        }),
    }
}

fn expect_f32(entry: &Entry, shape: &[usize], layer: &str) -> Result<Vec<f32>> {
    match &entry.payload {
        Payload::F32 { shape: s, data } if s == shape => Ok(data.clone()),
        Payload::F32 { shape: s, .. } => Err(Error::LayerMismatch {
            layer: layer.to_string(),
            msg: format!(
                "entry `{}` has shape {:?}, expected {:?}",
                entry.name, s, shape
            ),
        }),
        Payload::Bits(_) => Err(Error::LayerMismatch {
            layer: layer.to_string(),
            msg: format!("entry `{}` is a bit mask, expected f32", entry.name),
        }),
    }
}

fn read_bn<'a>(
    entries: &mut impl Iterator<Item = &'a Entry>,
    name: &str,
    channels: usize,
) -> Result<BnStored> {
    let scale = expect_f32(
        take_entry(entries, &format!("{name}.bn.scale"), name)?,
        &[channels],
        name,
    )?;
    let bias = expect_f32(
        take_entry(entries, &format!("{name}.bn.bias"), name)?,
        &[channels],
        name,
    )?;
    let mean = expect_f32(
        take_entry(entries, &format!("{name}.bn.mean"), name)?,
        &[channels],
        name,
    )?;
    let var = expect_f32(
        take_entry(entries, &format!("{name}.bn.var"), name)?,
        &[channels],
        name,
    )?;
    Ok(BnStored {
        scale,
        bias,
        mean,
        var,
    })
}

impl BaselineParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = ThetaMeta {
            arch: self.arch.clone(),
            classes: self.classes,
        };
        let desc = serde_json::to_string(&meta).expect("descriptor serializes");
        let mut entries = Vec::new();
        for (name, p) in &self.weights {
            entries.push(Entry::f32(
                format!("{name}.weight"),
                p.shape.clone(),
                p.data.clone(),
            ));
        }
        for (name, bn) in &self.bn {
            entries.extend(bn_entries(name, bn));
        }
        entries.push(Entry::f32(
            "classifier.weight",
            self.classifier_weight.shape.clone(),
            self.classifier_weight.data.clone(),
        ));
        entries.push(Entry::f32(
            "classifier.bias",
            self.classifier_bias.shape.clone(),
            self.classifier_bias.data.clone(),
        ));
        checkpoint::serialize(checkpoint::KIND_BASELINE, &desc, &entries)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, desc, entries) = checkpoint::deserialize(bytes, Some(checkpoint::KIND_BASELINE))?;
        let meta: ThetaMeta = serde_json::from_str(&desc)?;
        let plan = meta.arch.plan()?;
        let mut it = entries.iter();
        let mut weights = IndexMap::new();
        for layer in &plan.weighted {
            let e = take_entry(&mut it, &format!("{}.weight", layer.name), &layer.name)?;
            let data = expect_f32(e, &layer.weight_shape, &layer.name)?;
            weights.insert(
                layer.name.clone(),
                Param::new(layer.weight_shape.clone(), data),
            );
        }
        let mut bn = IndexMap::new();
        for layer in plan.bn_layers() {
            let c = layer.bn_channels.expect("bn layer has channels");
            bn.insert(layer.name.clone(), read_bn(&mut it, &layer.name, c)?);
        }
        let cw = take_entry(&mut it, "classifier.weight", "classifier")?;
        let classifier_weight = Param::new(
            vec![meta.classes, plan.feature_dim],
            expect_f32(cw, &[meta.classes, plan.feature_dim], "classifier")?,
        );
        let cb = take_entry(&mut it, "classifier.bias", "classifier")?;
        let classifier_bias = Param::new(
            vec![meta.classes],
            expect_f32(cb, &[meta.classes], "classifier")?,
        );
        if let Some(extra) = it.next() {
            return Err(Error::LayerMismatch {
                layer: extra.name.clone(),
                msg: "unexpected trailing entry".into(),
            });
        }
        Ok(BaselineParams {
            arch: meta.arch,
            classes: meta.classes,
            weights,
            bn,
            classifier_weight,
            classifier_bias,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 over the canonical serialized body. Recomputed after task
    /// training to prove the baseline never moved.
    pub fn content_digest(&self) -> [u8; 32] {
        let bytes = self.to_bytes();
        let mut out = [0u8; 32];
        out.copy_from_slice(&bytes[bytes.len() - 32..]);
        out
    }
}

impl TaskParams {
    pub fn to_bytes_with_arch(&self, arch: &ArchDescriptor) -> Vec<u8> {
        let meta = OmegaMeta {
            arch: arch.clone(),
            task: self.task.clone(),
            variant: self.variant,
            surrogate: self.surrogate,
            channel_wise: self.channel_wise,
            task_bn: self.bn.is_some(),
            classes: self.classes,
            mask_storage: self.storage(),
            learn_override: self.learn_override.clone(),
        };
        let desc = serde_json::to_string(&meta).expect("descriptor serializes");
        let mut entries = Vec::new();
        for (name, mask) in &self.masks {
            match mask {
                MaskState::Binary(m) => {
                    entries.push(Entry::bits(format!("{name}.mask"), m.clone()))
                }
                MaskState::Real(r) => entries.push(Entry::f32(
                    format!("{name}.rmask"),
                    r.shape.clone(),
                    r.data.clone(),
                )),
            }
            let k = &self.k[name];
            entries.push(Entry::f32(format!("{name}.k0"), vec![], vec![k.k0]));
            let k1_shape = if self.channel_wise {
                vec![k.k1.len()]
            } else {
                vec![]
            };
            entries.push(Entry::f32(format!("{name}.k1"), k1_shape, k.k1.clone()));
            entries.push(Entry::f32(format!("{name}.k2"), vec![], vec![k.k2]));
            entries.push(Entry::f32(format!("{name}.k3"), vec![], vec![k.k3]));
        }
        if let Some(bn) = &self.bn {
            for (name, b) in bn {
                entries.extend(bn_entries(name, b));
            }
        }
        entries.push(Entry::f32(
            "classifier.weight",
            self.classifier_weight.shape.clone(),
            self.classifier_weight.data.clone(),
        ));
        entries.push(Entry::f32(
            "classifier.bias",
            self.classifier_bias.shape.clone(),
            self.classifier_bias.data.clone(),
        ));
        checkpoint::serialize(checkpoint::KIND_TASK, &desc, &entries)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, ArchDescriptor)> {
        let (_, desc, entries) = checkpoint::deserialize(bytes, Some(checkpoint::KIND_TASK))?;
        let meta: OmegaMeta = serde_json::from_str(&desc)?;
        let plan = meta.arch.plan()?;
        let mut it = entries.iter();
        let mut masks = IndexMap::new();
        let mut k_map = IndexMap::new();
        for layer in plan.masked_layers() {
            let name = &layer.name;
            let mask = match meta.mask_storage {
                MaskStorage::Binary => {
                    let e = take_entry(&mut it, &format!("{name}.mask"), name)?;
                    match &e.payload {
                        Payload::Bits(m) if m.shape() == layer.weight_shape.as_slice() => {
                            MaskState::Binary(m.clone())
                        }
                        Payload::Bits(m) => {
                            return Err(Error::LayerMismatch {
                                layer: name.clone(),
                                msg: format!(
                                    "mask shape {:?} does not match weight shape {:?}",
                                    m.shape(),
                                    layer.weight_shape
                                ),
                            })
                        }
                        _ => {
                            return Err(Error::LayerMismatch {
                                layer: name.clone(),
                                msg: "expected bit-packed mask".into(),
                            })
                        }
                    }
                }
                MaskStorage::Real => {
                    let e = take_entry(&mut it, &format!("{name}.rmask"), name)?;
                    let data = expect_f32(e, &layer.weight_shape, name)?;
                    MaskState::Real(Param::new(layer.weight_shape.clone(), data))
                }
            };
            masks.insert(name.clone(), mask);

            let k0 = expect_f32(take_entry(&mut it, &format!("{name}.k0"), name)?, &[], name)?[0];
            let k1_entry = take_entry(&mut it, &format!("{name}.k1"), name)?;
            let k1_shape: Vec<usize> = if meta.channel_wise {
                vec![layer.out_channels()]
            } else {
                vec![]
            };
            let k1 = expect_f32(k1_entry, &k1_shape, name)?;
            let k2 = expect_f32(take_entry(&mut it, &format!("{name}.k2"), name)?, &[], name)?[0];
            let k3 = expect_f32(take_entry(&mut it, &format!("{name}.k3"), name)?, &[], name)?[0];
            let resolved = KParams::<f32>::resolve(
                meta.variant,
                layer.bn_channels.is_some(),
                meta.channel_wise,
                layer.out_channels(),
                meta.learn_override.as_deref(),
            )?;
            let k = KParams {
                k0,
                k1,
                k2,
                k3,
                ..resolved
            };
            k.validate(layer.bn_channels.is_some())?;
            k_map.insert(name.clone(), k);
        }
        let bn = if meta.task_bn {
            let mut bn = IndexMap::new();
            for layer in plan.bn_layers() {
                let c = layer.bn_channels.expect("bn layer has channels");
                bn.insert(layer.name.clone(), read_bn(&mut it, &layer.name, c)?);
            }
            Some(bn)
        } else {
            None
        };
        let cw = take_entry(&mut it, "classifier.weight", "classifier")?;
        let classifier_weight = Param::new(
            vec![meta.classes, plan.feature_dim],
            expect_f32(cw, &[meta.classes, plan.feature_dim], "classifier")?,
        );
        let cb = take_entry(&mut it, "classifier.bias", "classifier")?;
        let classifier_bias = Param::new(
            vec![meta.classes],
            expect_f32(cb, &[meta.classes], "classifier")?,
        );
        if let Some(extra) = it.next() {
            return Err(Error::LayerMismatch {
                layer: extra.name.clone(),
                msg: "unexpected trailing entry".into(),
            });
        }
        Ok((
            TaskParams {
                task: meta.task,
                variant: meta.variant,
                surrogate: meta.surrogate,
                channel_wise: meta.channel_wise,
                learn_override: meta.learn_override,
                classes: meta.classes,
                masks,
                k: k_map,
                bn,
                classifier_weight,
                classifier_bias,
            },
            meta.arch,
        ))
    }

    pub fn save(&self, arch: &ArchDescriptor, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes_with_arch(arch))?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, ArchDescriptor)> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

// ---------------------------------------------------------------------------
// Overhead accounting
// ---------------------------------------------------------------------------

/// Exact storage accounting for a set of tasks on one baseline.
#[derive(Debug, Clone, Serialize)]
pub struct OverheadReport {
    /// Backbone weight count (32-bit words); classifiers and batch-norm
    /// excluded, matching the per-task extras below.
    pub baseline_words: u64,
    pub tasks: Vec<TaskOverhead>,
    /// Σ over tasks of `extra_bits`.
    pub total_extra_bits: u64,
    /// `(baseline + extras) / baseline` in bits, exact.
    pub ratio_num_bits: u64,
    pub ratio_den_bits: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TaskOverhead {
    pub task: String,
    /// One bit per masked weight (exact count, before byte padding).
    pub mask_bits: u64,
    /// 32-bit scalars: k parameters plus task batch-norm parameters.
    pub scalar_words: u64,
    pub extra_bits: u64,
}

/// Computes the storage overhead of `omegas` relative to `theta`.
///
/// Classifiers are excluded on both sides. Each masked weight costs one
/// mask bit per task; every k coefficient and task batch-norm parameter
/// costs a 32-bit word.
pub fn overhead(theta: &BaselineParams, omegas: &[&TaskParams]) -> Result<OverheadReport> {
    let plan = theta.arch.plan()?;
    let baseline_words = plan.backbone_weight_count() as u64;
    let mut tasks = Vec::new();
    let mut total_extra_bits = 0u64;
    for omega in omegas {
        let mask_bits: u64 = omega.masks.values().map(|m| m.bit_count() as u64).sum();
        let k_words: u64 = omega.k.values().map(|k| k.scalar_count() as u64).sum();
        let bn_words: u64 = omega
            .bn
            .as_ref()
            .map(|bn| bn.values().map(|b| b.param_count() as u64).sum())
            .unwrap_or(0);
        let scalar_words = k_words + bn_words;
        let extra_bits = mask_bits + 32 * scalar_words;
        total_extra_bits += extra_bits;
        tasks.push(TaskOverhead {
            task: omega.task.clone(),
            mask_bits,
            scalar_words,
            extra_bits,
        });
    }
    let den = 32 * baseline_words;
    let num = den + total_extra_bits;
    Ok(OverheadReport {
        baseline_words,
        tasks,
        total_extra_bits,
        ratio_num_bits: num,
        ratio_den_bits: den,
        ratio: num as f64 / den as f64,
    })
}

/// Trains a new task against a frozen baseline and returns the final task
/// artifact (masks binarized).
///
/// The baseline's content digest is recomputed after training; any change
/// is a fatal invariant violation.
pub fn add_task(
    theta: &BaselineParams,
    task_name: &str,
    data: &crate::data::Dataset,
    cfg: &crate::train::TaskTrainConfig,
    metrics_path: Option<&std::path::Path>,
) -> Result<(TaskParams, Vec<crate::train::EpochMetrics>)> {
    let digest_before = theta.content_digest();
    let (omega, metrics) = crate::train::train_task(theta, task_name, data, cfg, metrics_path)?;
    let digest_after = theta.content_digest();
    if digest_before != digest_after {
        return Err(Error::BaselineModified {
            msg: format!("digest changed while training task `{task_name}`"),
        });
    }
    Ok((omega.binarized(), metrics))
}

/// Sum of the serialized payload bytes of the mask, k and batch-norm
/// entries of a final task artifact (names, extents and the digest are
/// metadata and excluded). Used to cross-check [`overhead`] arithmetic
/// against real files.
pub fn measured_payload_bytes(omega: &TaskParams, arch: &ArchDescriptor) -> Result<u64> {
    let bytes = omega.binarized().to_bytes_with_arch(arch);
    let (_, _, entries) = checkpoint::deserialize(&bytes, Some(checkpoint::KIND_TASK))?;
    Ok(entries
        .iter()
        .filter(|e| !e.name.starts_with("classifier."))
        .map(|e| e.payload_bytes() as u64)
        .sum())
}
