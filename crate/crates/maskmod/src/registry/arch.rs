//! Architecture descriptor: an ordered layer list with enough detail to
//! rebuild the network, decide which layers carry masks and which are
//! followed by batch normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv2d_output_extent;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        name: String,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        masked: bool,
        bn: bool,
    },
    Dense {
        name: String,
        out: usize,
        masked: bool,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    GlobalAvgPool,
    Flatten,
}

/// The network skeleton shared by the baseline and every task network.
/// Backbone layers are bias-free; the per-task classifier (a dense layer
/// with bias, `feature_dim -> classes`) is not part of the descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    /// Input image shape `[channels, height, width]`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// One weighted (conv or dense) layer, resolved against concrete shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedLayer {
    pub name: String,
    /// Weight shape: `[out_ch, in_ch, k, k]` for conv, `[out, in]` for dense.
    pub weight_shape: Vec<usize>,
    pub masked: bool,
    /// Channel count when the layer is followed by batch normalization.
    pub bn_channels: Option<usize>,
    /// Depth index among weighted layers, starting at 0.
    pub depth: usize,
}

impl WeightedLayer {
    pub fn weight_count(&self) -> usize {
        self.weight_shape.iter().product()
    }

    pub fn out_channels(&self) -> usize {
        self.weight_shape[0]
    }
}

/// Validated view of an architecture.
#[derive(Debug, Clone)]
pub struct ArchPlan {
    pub weighted: Vec<WeightedLayer>,
    /// Input size of the classifier.
    pub feature_dim: usize,
}

impl ArchPlan {
    pub fn layer(&self, name: &str) -> Option<&WeightedLayer> {
        self.weighted.iter().find(|l| l.name == name)
    }

    pub fn masked_layers(&self) -> impl Iterator<Item = &WeightedLayer> {
        self.weighted.iter().filter(|l| l.masked)
    }

    pub fn bn_layers(&self) -> impl Iterator<Item = &WeightedLayer> {
        self.weighted.iter().filter(|l| l.bn_channels.is_some())
    }

    /// Total backbone weight count (conv + dense, classifier excluded).
    pub fn backbone_weight_count(&self) -> usize {
        self.weighted.iter().map(|l| l.weight_count()).sum()
    }
}

enum Dims {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl ArchDescriptor {
    /// Walks the layer list, checking geometry and collecting weighted
    /// layers with their concrete shapes.
    pub fn plan(&self) -> Result<ArchPlan> {
        if self.layers.is_empty() {
            return Err(Error::BadConfig {
                msg: "architecture has no layers".into(),
            });
        }
        let mut dims = Dims::Spatial(self.input[0], self.input[1], self.input[2]);
        let mut weighted = Vec::new();
        let mut names = std::collections::HashSet::new();
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv {
                    name,
                    out_ch,
                    kernel,
                    stride,
                    padding,
                    masked,
                    bn,
                } => {
                    let (c, h, w) = match dims {
                        Dims::Spatial(c, h, w) => (c, h, w),
                        Dims::Flat(_) => {
                            return Err(Error::BadConfig {
                                msg: format!("conv layer `{name}` after flattened features"),
                            })
                        }
                    };
                    let oh = conv2d_output_extent(h, *kernel, *stride, *padding)?;
                    let ow = conv2d_output_extent(w, *kernel, *stride, *padding)?;
                    if !names.insert(name.clone()) {
                        return Err(Error::BadConfig {
                            msg: format!("duplicate layer name `{name}`"),
                        });
                    }
                    weighted.push(WeightedLayer {
                        name: name.clone(),
                        weight_shape: vec![*out_ch, c, *kernel, *kernel],
                        masked: *masked,
                        bn_channels: bn.then_some(*out_ch),
                        depth: weighted.len(),
                    });
                    dims = Dims::Spatial(*out_ch, oh, ow);
                }
                LayerSpec::Dense { name, out, masked } => {
                    let fin = match dims {
                        Dims::Flat(f) => f,
                        Dims::Spatial(..) => {
                            return Err(Error::BadConfig {
                                msg: format!(
                                    "dense layer `{name}` needs flat input; insert flatten or global_avg_pool"
                                ),
                            })
                        }
                    };
                    if !names.insert(name.clone()) {
                        return Err(Error::BadConfig {
                            msg: format!("duplicate layer name `{name}`"),
                        });
                    }
                    weighted.push(WeightedLayer {
                        name: name.clone(),
                        weight_shape: vec![*out, fin],
                        masked: *masked,
                        bn_channels: None,
                        depth: weighted.len(),
                    });
                    dims = Dims::Flat(*out);
                }
                LayerSpec::Relu => {}
                LayerSpec::MaxPool { size } => {
                    let (c, h, w) = match dims {
                        Dims::Spatial(c, h, w) => (c, h, w),
                        Dims::Flat(_) => {
                            return Err(Error::BadConfig {
                                msg: "max_pool after flattened features".into(),
                            })
                        }
                    };
                    if *size == 0 || h % size != 0 || w % size != 0 {
                        return Err(Error::BadGeometry {
                            op: "max_pool2d".into(),
                            msg: format!("window {size} does not tile {h}x{w}"),
                        });
                    }
                    dims = Dims::Spatial(c, h / size, w / size);
                }
                LayerSpec::GlobalAvgPool => {
                    let c = match dims {
                        Dims::Spatial(c, _, _) => c,
                        Dims::Flat(_) => {
                            return Err(Error::BadConfig {
                                msg: "global_avg_pool after flattened features".into(),
                            })
                        }
                    };
                    dims = Dims::Flat(c);
                }
                LayerSpec::Flatten => {
                    let f = match dims {
                        Dims::Spatial(c, h, w) => c * h * w,
                        Dims::Flat(f) => f,
                    };
                    dims = Dims::Flat(f);
                }
            }
        }
        let feature_dim = match dims {
            Dims::Flat(f) => f,
            Dims::Spatial(..) => {
                return Err(Error::BadConfig {
                    msg: "architecture must end with flat features (flatten or global_avg_pool)"
                        .into(),
                })
            }
        };
        Ok(ArchPlan {
            weighted,
            feature_dim,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_arch() -> ArchDescriptor {
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

    #[test]
    fn plan_resolves_shapes_and_feature_dim() {
        let plan = toy_arch().plan().unwrap();
        assert_eq!(plan.feature_dim, 24);
        assert_eq!(plan.weighted.len(), 3);
        assert_eq!(plan.weighted[0].weight_shape, vec![8, 2, 3, 3]);
        assert_eq!(plan.weighted[1].weight_shape, vec![16, 8, 3, 3]);
        assert_eq!(plan.weighted[2].weight_shape, vec![24, 16]);
        assert_eq!(plan.backbone_weight_count(), 144 + 1152 + 384);
        assert_eq!(plan.bn_layers().count(), 2);
    }

    #[test]
    fn dense_without_flat_input_is_rejected() {
        let arch = ArchDescriptor {
            input: [1, 4, 4],
            layers: vec![LayerSpec::Dense {
                name: "fc".into(),
                out: 3,
                masked: false,
            }],
        };
        assert!(arch.plan().is_err());
    }

    #[test]
    fn descriptor_round_trips_through_json() {
        let arch = toy_arch();
        let json = serde_json::to_string(&arch).unwrap();
        let back: ArchDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(arch, back);
        // Canonical form: serializing again yields identical text.
        assert_eq!(json, serde_json::to_string(&back).unwrap());
    }
}
