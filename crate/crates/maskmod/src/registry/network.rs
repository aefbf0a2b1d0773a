//! Executable networks assembled from stored parameters.
//!
//! A [`NetworkState`] owns graph tensors for one network instance. The same
//! forward walk serves the pretraining baseline, fine-tuned references,
//! frozen feature extractors and mask-transformed task networks; what varies
//! is which tensors require gradients and whether a mask slot is present.

use indexmap::IndexMap;
use rand::Rng;

use super::arch::{ArchDescriptor, LayerSpec};
use super::{BaselineParams, BnStored, MaskState, Param, TaskParams};
use crate::error::{Error, Result};
use crate::mask::{
    init_mask, threshold_ste, transform_op, KParams, KTensors, SurrogateKind, Variant,
};
use crate::nn::{
    batchnorm, conv2d, dense, global_avg_pool, max_pool2d, relu, BatchNormParams, Conv2dParams,
    DenseParams,
};
use crate::tensor::{ops, Element, Graph, Tensor};

pub struct DenseState<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

pub enum MaskSlot<E: Element> {
    /// Trainable real mask, thresholded on every forward pass.
    Real(Tensor<E>),
    /// Frozen {0,1} values decoded from a stored binary mask.
    Frozen(Tensor<E>),
}

pub struct LayerState<E: Element> {
    pub weight: Tensor<E>,
    pub mask: Option<MaskSlot<E>>,
    pub k: Option<KTensors<E>>,
    pub k_learn: [bool; 4],
    pub bn: Option<BatchNormParams<E>>,
    /// Frozen batch norm runs with its stored statistics even while the
    /// rest of the network trains (feature-extractor semantics).
    pub bn_frozen: bool,
}

/// Per-task knobs describing how the transform is wired.
#[derive(Debug, Clone)]
pub struct TaskSetup {
    pub variant: Variant,
    pub surrogate: SurrogateKind,
    pub channel_wise: bool,
    pub learn_override: Option<Vec<usize>>,
    /// Learn task-specific batch-norm parameters (otherwise the baseline's
    /// are used, frozen).
    pub task_bn: bool,
}

impl Default for TaskSetup {
    fn default() -> Self {
        TaskSetup {
            variant: Variant::Full,
            surrogate: SurrogateKind::Identity,
            channel_wise: false,
            learn_override: None,
            task_bn: true,
        }
    }
}

pub struct NetworkState<E: Element> {
    pub arch: ArchDescriptor,
    pub variant: Option<Variant>,
    pub surrogate: SurrogateKind,
    pub channel_wise: bool,
    pub learn_override: Option<Vec<usize>>,
    pub layers: IndexMap<String, LayerState<E>>,
    pub classifier: DenseState<E>,
    pub classes: usize,
}

fn kaiming_uniform<E: Element>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<E> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<E> = (0..n)
        .map(|_| E::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape consistent")
}

fn bn_tensors<E: Element>(stored: &BnStored, learnable: bool) -> BatchNormParams<E> {
    let to_t = |v: &[f32]| {
        Tensor::new(vec![v.len()], v.iter().map(|&x| E::from_f32(x)).collect())
            .expect("bn arrays are consistent")
    };
    let p = BatchNormParams {
        scale: to_t(&stored.scale),
        bias: to_t(&stored.bias),
        running_mean: to_t(&stored.mean),
        running_var: to_t(&stored.var),
        momentum: E::from_f64(crate::nn::BN_MOMENTUM),
        eps: E::from_f64(crate::nn::BN_EPS),
    };
    p.scale.set_requires_grad(learnable);
    p.bias.set_requires_grad(learnable);
    p
}

fn bn_to_stored(p: &BatchNormParams<f32>) -> BnStored {
    BnStored {
        scale: p.scale.to_vec(),
        bias: p.bias.to_vec(),
        mean: p.running_mean.to_vec(),
        var: p.running_var.to_vec(),
    }
}

impl NetworkState<f32> {
    /// A fresh, fully learnable network for pretraining the baseline.
    pub fn pretrain_init(
        arch: &ArchDescriptor,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let plan = arch.plan()?;
        let mut layers = IndexMap::new();
        for l in &plan.weighted {
            let fan_in: usize = l.weight_shape[1..].iter().product();
            let weight = kaiming_uniform::<f32>(&l.weight_shape, fan_in, rng).requires_grad();
            let bn = l.bn_channels.map(|c| {
                let p = BatchNormParams::<f32>::new(c);
                p.scale.set_requires_grad(true);
                p.bias.set_requires_grad(true);
                p
            });
            layers.insert(
                l.name.clone(),
                LayerState {
                    weight,
                    mask: None,
                    k: None,
                    k_learn: [false; 4],
                    bn,
                    bn_frozen: false,
                },
            );
        }
        let classifier = DenseState {
            weight: kaiming_uniform::<f32>(&[classes, plan.feature_dim], plan.feature_dim, rng)
                .requires_grad(),
            bias: Tensor::zeros(&[classes]).requires_grad(),
        };
        Ok(NetworkState {
            arch: arch.clone(),
            variant: None,
            surrogate: SurrogateKind::Identity,
            channel_wise: false,
            learn_override: None,
            layers,
            classifier,
            classes,
        })
    }

    /// The baseline network itself, fully frozen (evaluation of task 0).
    pub fn baseline(theta: &BaselineParams) -> Result<Self> {
        let plan = theta.arch.plan()?;
        let mut layers = IndexMap::new();
        for l in &plan.weighted {
            let weight = theta_weight(theta, &l.name)?.to_tensor::<f32>();
            let bn = match l.bn_channels {
                Some(_) => Some(bn_tensors::<f32>(theta_bn(theta, &l.name)?, false)),
                None => None,
            };
            layers.insert(
                l.name.clone(),
                LayerState {
                    weight,
                    mask: None,
                    k: None,
                    k_learn: [false; 4],
                    bn,
                    bn_frozen: true,
                },
            );
        }
        Ok(NetworkState {
            arch: theta.arch.clone(),
            variant: None,
            surrogate: SurrogateKind::Identity,
            channel_wise: false,
            learn_override: None,
            layers,
            classifier: DenseState {
                weight: theta.classifier_weight.to_tensor(),
                bias: theta.classifier_bias.to_tensor(),
            },
            classes: theta.classes,
        })
    }

    /// Frozen backbone, frozen batch norm, fresh learnable classifier.
    pub fn classifier_only_init(
        theta: &BaselineParams,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut state = Self::baseline(theta)?;
        let plan = theta.arch.plan()?;
        state.classes = classes;
        state.classifier = DenseState {
            weight: kaiming_uniform::<f32>(&[classes, plan.feature_dim], plan.feature_dim, rng)
                .requires_grad(),
            bias: Tensor::zeros(&[classes]).requires_grad(),
        };
        Ok(state)
    }

    /// A fully learnable copy of the baseline with a fresh classifier: the
    /// individually fine-tuned reference model.
    pub fn finetune_init(
        theta: &BaselineParams,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let plan = theta.arch.plan()?;
        let mut layers = IndexMap::new();
        for l in &plan.weighted {
            let weight = theta_weight(theta, &l.name)?
                .to_tensor::<f32>()
                .requires_grad();
            let bn = match l.bn_channels {
                Some(_) => Some(bn_tensors::<f32>(theta_bn(theta, &l.name)?, true)),
                None => None,
            };
            layers.insert(
                l.name.clone(),
                LayerState {
                    weight,
                    mask: None,
                    k: None,
                    k_learn: [false; 4],
                    bn,
                    bn_frozen: false,
                },
            );
        }
        Ok(NetworkState {
            arch: theta.arch.clone(),
            variant: None,
            surrogate: SurrogateKind::Identity,
            channel_wise: false,
            learn_override: None,
            layers,
            classifier: DenseState {
                weight: kaiming_uniform::<f32>(&[classes, plan.feature_dim], plan.feature_dim, rng)
                    .requires_grad(),
                bias: Tensor::zeros(&[classes]).requires_grad(),
            },
            classes,
        })
    }

    /// Fresh task state: frozen backbone, trainable masks and coefficients,
    /// batch norm copied from the baseline (trainable iff `task_bn`),
    /// fresh classifier.
    pub fn task_init(
        theta: &BaselineParams,
        setup: &TaskSetup,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let plan = theta.arch.plan()?;
        let mut layers = IndexMap::new();
        for l in &plan.weighted {
            let weight = theta_weight(theta, &l.name)?.to_tensor::<f32>();
            let (mask, k, k_learn) = if l.masked {
                let r = init_mask::<f32>(&l.weight_shape, rng);
                let kp = KParams::<f32>::resolve(
                    setup.variant,
                    l.bn_channels.is_some(),
                    setup.channel_wise,
                    l.out_channels(),
                    setup.learn_override.as_deref(),
                )?;
                let learn = kp.learn;
                (
                    Some(MaskSlot::Real(r)),
                    Some(KTensors::from_params(&kp)),
                    learn,
                )
            } else {
                (None, None, [false; 4])
            };
            let bn = match l.bn_channels {
                Some(_) => Some(bn_tensors::<f32>(theta_bn(theta, &l.name)?, setup.task_bn)),
                None => None,
            };
            layers.insert(
                l.name.clone(),
                LayerState {
                    weight,
                    mask,
                    k,
                    k_learn,
                    bn,
                    bn_frozen: !setup.task_bn,
                },
            );
        }
        Ok(NetworkState {
            arch: theta.arch.clone(),
            variant: Some(setup.variant),
            surrogate: setup.surrogate,
            channel_wise: setup.channel_wise,
            learn_override: setup.learn_override.clone(),
            layers,
            classifier: DenseState {
                weight: kaiming_uniform::<f32>(&[classes, plan.feature_dim], plan.feature_dim, rng)
                    .requires_grad(),
                bias: Tensor::zeros(&[classes]).requires_grad(),
            },
            classes,
        })
    }

    /// Builds the frozen executable network `f_i` for a stored task.
    pub fn from_task(theta: &BaselineParams, omega: &TaskParams) -> Result<Self> {
        let plan = theta.arch.plan()?;
        omega_arch_check(&plan, omega)?;
        let mut layers = IndexMap::new();
        for l in &plan.weighted {
            let weight = theta_weight(theta, &l.name)?.to_tensor::<f32>();
            let (mask, k) = if l.masked {
                let state = omega
                    .masks
                    .get(&l.name)
                    .ok_or_else(|| Error::LayerMismatch {
                        layer: l.name.clone(),
                        msg: "task parameters missing mask".into(),
                    })?;
                let binary = state.to_binary();
                if binary.len() != l.weight_count() {
                    return Err(Error::LayerMismatch {
                        layer: l.name.clone(),
                        msg: format!(
                            "mask covers {} weights, layer has {} (do theta and omega share an architecture?)",
                            binary.len(),
                            l.weight_count()
                        ),
                    });
                }
                let slot = MaskSlot::Frozen(
                    Tensor::new(l.weight_shape.clone(), binary.to_dense::<f32>())
                        .expect("mask length checked against the layer"),
                );
                let kp = omega.k.get(&l.name).ok_or_else(|| Error::LayerMismatch {
                    layer: l.name.clone(),
                    msg: "task parameters missing k".into(),
                })?;
                kp.validate(l.bn_channels.is_some())?;
                (Some(slot), Some(KTensors::from_params(kp)))
            } else {
                (None, None)
            };
            let bn = match l.bn_channels {
                Some(_) => {
                    let stored = match &omega.bn {
                        Some(bn) => bn.get(&l.name).ok_or_else(|| Error::LayerMismatch {
                            layer: l.name.clone(),
                            msg: "task parameters missing batch norm".into(),
                        })?,
                        None => theta_bn(theta, &l.name)?,
                    };
                    Some(bn_tensors::<f32>(stored, false))
                }
                None => None,
            };
            layers.insert(
                l.name.clone(),
                LayerState {
                    weight,
                    mask,
                    k,
                    k_learn: [false; 4],
                    bn,
                    bn_frozen: true,
                },
            );
        }
        Ok(NetworkState {
            arch: theta.arch.clone(),
            variant: Some(omega.variant),
            surrogate: omega.surrogate,
            channel_wise: omega.channel_wise,
            learn_override: omega.learn_override.clone(),
            layers,
            classifier: DenseState {
                weight: omega.classifier_weight.to_tensor(),
                bias: omega.classifier_bias.to_tensor(),
            },
            classes: omega.classes,
        })
    }

    /// Extracts trained task parameters (real masks preserved).
    pub fn to_task_params(&self, task: &str) -> TaskParams {
        let variant = self.variant.expect("task state carries a variant");
        let mut masks = IndexMap::new();
        let mut k_map = IndexMap::new();
        let mut bn = IndexMap::new();
        let mut task_bn = false;
        for (name, l) in &self.layers {
            if let Some(slot) = &l.mask {
                let r = match slot {
                    MaskSlot::Real(r) => r,
                    MaskSlot::Frozen(_) => {
                        panic!("cannot extract task params from a frozen network")
                    }
                };
                masks.insert(name.clone(), MaskState::Real(Param::from_tensor(r)));
                let kt = l.k.as_ref().expect("masked layer has k tensors");
                k_map.insert(
                    name.clone(),
                    kt.to_params(variant, l.k_learn, self.channel_wise),
                );
            }
            if let Some(p) = &l.bn {
                if !l.bn_frozen {
                    task_bn = true;
                    bn.insert(name.clone(), bn_to_stored(p));
                }
            }
        }
        TaskParams {
            task: task.to_string(),
            variant,
            surrogate: self.surrogate,
            channel_wise: self.channel_wise,
            learn_override: self.learn_override.clone(),
            classes: self.classes,
            masks,
            k: k_map,
            bn: task_bn.then_some(bn),
            classifier_weight: Param::from_tensor(&self.classifier.weight),
            classifier_bias: Param::from_tensor(&self.classifier.bias),
        }
    }

    /// Extracts a pretrained (or fine-tuned) network as baseline parameters.
    pub fn to_baseline_params(&self) -> BaselineParams {
        let mut weights = IndexMap::new();
        let mut bn = IndexMap::new();
        for (name, l) in &self.layers {
            assert!(l.mask.is_none(), "baseline layers are unmasked");
            weights.insert(name.clone(), Param::from_tensor(&l.weight));
            if let Some(p) = &l.bn {
                bn.insert(name.clone(), bn_to_stored(p));
            }
        }
        BaselineParams {
            arch: self.arch.clone(),
            classes: self.classes,
            weights,
            bn,
            classifier_weight: Param::from_tensor(&self.classifier.weight),
            classifier_bias: Param::from_tensor(&self.classifier.bias),
        }
    }
}

fn theta_weight<'a>(theta: &'a BaselineParams, name: &str) -> Result<&'a Param> {
    theta.weights.get(name).ok_or_else(|| Error::LayerMismatch {
        layer: name.to_string(),
        msg: "baseline is missing this layer's weights".into(),
    })
}

fn theta_bn<'a>(theta: &'a BaselineParams, name: &str) -> Result<&'a BnStored> {
    theta.bn.get(name).ok_or_else(|| Error::LayerMismatch {
        layer: name.to_string(),
        msg: "baseline is missing this layer's batch-norm state".into(),
    })
}

fn omega_arch_check(plan: &super::ArchPlan, omega: &TaskParams) -> Result<()> {
    for l in plan.masked_layers() {
        if !omega.masks.contains_key(&l.name) {
            return Err(Error::LayerMismatch {
                layer: l.name.clone(),
                msg: "mask missing for masked layer".into(),
            });
        }
    }
    for name in omega.masks.keys() {
        match plan.layer(name) {
            Some(l) if l.masked => {}
            _ => {
                return Err(Error::LayerMismatch {
                    layer: name.clone(),
                    msg: "mask present for a layer the architecture does not mask".into(),
                })
            }
        }
    }
    Ok(())
}

impl<E: Element> NetworkState<E> {
    /// All learnable tensors except the classifier (the Adam group), in
    /// deterministic architecture order.
    pub fn backbone_learnables(&self) -> Vec<Tensor<E>> {
        let mut out = Vec::new();
        for l in self.layers.values() {
            if l.weight.is_requires_grad() {
                out.push(l.weight.clone());
            }
            if let Some(MaskSlot::Real(r)) = &l.mask {
                if r.is_requires_grad() {
                    out.push(r.clone());
                }
            }
            if let Some(k) = &l.k {
                out.extend(k.learnable());
            }
            if let Some(bn) = &l.bn {
                if bn.scale.is_requires_grad() {
                    out.push(bn.scale.clone());
                }
                if bn.bias.is_requires_grad() {
                    out.push(bn.bias.clone());
                }
            }
        }
        out
    }

    /// The classifier tensors when learnable (the SGD group).
    pub fn classifier_learnables(&self) -> Vec<Tensor<E>> {
        let mut out = Vec::new();
        if self.classifier.weight.is_requires_grad() {
            out.push(self.classifier.weight.clone());
        }
        if self.classifier.bias.is_requires_grad() {
            out.push(self.classifier.bias.clone());
        }
        out
    }

    /// Snapshot of every frozen (non-learnable) tensor, for invariance checks.
    pub fn frozen_snapshot(&self) -> Vec<(String, Vec<E>)> {
        let mut out = Vec::new();
        for (name, l) in &self.layers {
            if !l.weight.is_requires_grad() {
                out.push((format!("{name}.weight"), l.weight.to_vec()));
            }
            if let Some(k) = &l.k {
                for (i, t) in [&k.k0, &k.k1, &k.k2, &k.k3].iter().enumerate() {
                    if !t.is_requires_grad() {
                        out.push((format!("{name}.k{i}"), t.to_vec()));
                    }
                }
            }
        }
        out
    }
}

/// Runs the backbone (everything before the classifier).
pub fn forward_backbone<E: Element>(
    graph: &Graph<E>,
    net: &NetworkState<E>,
    x: &Tensor<E>,
    training: bool,
) -> Result<Tensor<E>> {
    let mut cur = x.clone();
    for layer in &net.arch.layers {
        cur = match layer {
            LayerSpec::Conv {
                name,
                stride,
                padding,
                ..
            } => {
                let st = net.layers.get(name).ok_or_else(|| Error::LayerMismatch {
                    layer: name.clone(),
                    msg: "no state for layer".into(),
                })?;
                let weight = effective_weight(graph, net, st)?;
                let out = conv2d(
                    graph,
                    &cur,
                    &Conv2dParams {
                        weight,
                        bias: None,
                        stride: *stride,
                        padding: *padding,
                    },
                )?;
                match &st.bn {
                    Some(bn) => batchnorm(graph, &out, bn, training && !st.bn_frozen)?,
                    None => out,
                }
            }
            LayerSpec::Dense { name, .. } => {
                let st = net.layers.get(name).ok_or_else(|| Error::LayerMismatch {
                    layer: name.clone(),
                    msg: "no state for layer".into(),
                })?;
                let weight = effective_weight(graph, net, st)?;
                dense(graph, &cur, &DenseParams { weight, bias: None })?
            }
            LayerSpec::Relu => relu(graph, &cur)?,
            LayerSpec::MaxPool { size } => max_pool2d(graph, &cur, *size)?,
            LayerSpec::GlobalAvgPool => global_avg_pool(graph, &cur)?,
            LayerSpec::Flatten => {
                let shape = cur.shape();
                let n = shape[0];
                let rest: usize = shape[1..].iter().product();
                ops::reshape(graph, &cur, vec![n, rest])?
            }
        };
    }
    Ok(cur)
}

/// Backbone plus classifier.
pub fn forward_logits<E: Element>(
    graph: &Graph<E>,
    net: &NetworkState<E>,
    x: &Tensor<E>,
    training: bool,
) -> Result<Tensor<E>> {
    let features = forward_backbone(graph, net, x, training)?;
    dense(
        graph,
        &features,
        &DenseParams {
            weight: net.classifier.weight.clone(),
            bias: Some(net.classifier.bias.clone()),
        },
    )
}

fn effective_weight<E: Element>(
    graph: &Graph<E>,
    net: &NetworkState<E>,
    st: &LayerState<E>,
) -> Result<Tensor<E>> {
    match (&st.mask, &st.k) {
        (Some(slot), Some(k)) => {
            let variant = net.variant.ok_or_else(|| Error::BadConfig {
                msg: "masked layer present but no variant set".into(),
            })?;
            let m = match slot {
                MaskSlot::Real(r) => threshold_ste(graph, r, net.surrogate)?,
                MaskSlot::Frozen(m) => m.clone(),
            };
            transform_op(graph, &st.weight, &m, k, variant)
        }
        _ => Ok(st.weight.clone()),
    }
}

/// Spec-level constructor: the executable task network `f_i`.
pub fn build_task_network(theta: &BaselineParams, omega: &TaskParams) -> Result<NetworkState<f32>> {
    NetworkState::from_task(theta, omega)
}
