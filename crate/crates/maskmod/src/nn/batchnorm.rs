//! Batch normalization over `[n, c, h, w]` with per-channel statistics.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, View};

/// Per-channel batch normalization state.
///
/// `scale` and `bias` are learnable; the running statistics are updated by
/// exponential moving average during training forwards and consumed in eval
/// mode. `momentum` is the weight of the new batch statistic.
pub struct BatchNormParams<E: Element> {
    pub scale: Tensor<E>,
    pub bias: Tensor<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    pub momentum: E,
    pub eps: E,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

impl<E: Element> BatchNormParams<E> {
    /// Fresh parameters: identity transform, zero mean, unit variance.
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            scale: Tensor::ones(&[channels]),
            bias: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: E::from_f64(BN_MOMENTUM),
            eps: E::from_f64(BN_EPS),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.numel()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.scale.numel();
        for (name, t) in [
            ("bias", &self.bias),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if t.numel() != c {
                return Err(Error::invalid(
                    "batchnorm",
                    format!("{name} has {} entries, scale has {c}", t.numel()),
                ));
            }
        }
        if self.running_var.data().iter().any(|v| *v <= E::zero()) {
            return Err(Error::invalid(
                "batchnorm",
                "running_var entries must be positive",
            ));
        }
        let m = self.momentum.to_f64_lossy();
        if !(0.0 < m && m < 1.0) {
            return Err(Error::invalid(
                "batchnorm",
                format!("momentum {m} outside (0,1)"),
            ));
        }
        Ok(())
    }
}

fn check_input<E: Element>(
    x: &View<'_, E>,
    channels: usize,
) -> Result<(usize, usize, usize, usize)> {
    if x.shape.len() != 4 {
        return Err(Error::invalid(
            "batchnorm",
            format!("input must be 4-D [n,c,h,w], got {:?}", x.shape),
        ));
    }
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    if c != channels {
        return Err(Error::shape_mismatch("batchnorm", x.shape, &[channels]));
    }
    Ok((n, c, h, w))
}

fn channel_stats<E: Element>(x: &[E], n: usize, c: usize, hw: usize) -> (Vec<E>, Vec<E>) {
    let m = E::from_f64((n * hw) as f64);
    let mut mean = vec![E::zero(); c];
    let mut var = vec![E::zero(); c];
    for ci in 0..c {
        let mut acc = E::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for k in 0..hw {
                acc = acc + x[base + k];
            }
        }
        mean[ci] = acc / m;
    }
    for ci in 0..c {
        let mu = mean[ci];
        let mut acc = E::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for k in 0..hw {
                let d = x[base + k] - mu;
                acc = acc + d * d;
            }
        }
        var[ci] = acc / m;
    }
    (mean, var)
}

fn normalize<E: Element>(
    x: &[E],
    n: usize,
    c: usize,
    hw: usize,
    mean: &[E],
    var: &[E],
    scale: &[E],
    bias: &[E],
    eps: E,
) -> Vec<E> {
    let mut out = vec![E::zero(); x.len()];
    for ci in 0..c {
        let inv = (var[ci] + eps).sqrt().recip();
        let (g, b, mu) = (scale[ci], bias[ci], mean[ci]);
        for ni in 0..n {
            let base = (ni * c + ci) * hw;
            for k in 0..hw {
                out[base + k] = g * (x[base + k] - mu) * inv + b;
            }
        }
    }
    out
}

/// Batch normalization.
///
/// Training mode normalizes with batch statistics and folds them into the
/// running statistics; eval mode normalizes with the stored running
/// statistics. Training mode needs at least two elements per channel.
pub fn batchnorm<E: Element>(
    graph: &Graph<E>,
    x: &Tensor<E>,
    p: &BatchNormParams<E>,
    training: bool,
) -> Result<Tensor<E>> {
    p.validate()?;
    let channels = p.channels();
    let eps = p.eps;

    if training {
        // Update running statistics as a side effect of recording the op.
        {
            let xb = x.borrow_inner();
            let view = xb.view();
            let (n, c, h, w) = check_input(&view, channels)?;
            if n * h * w < 2 {
                return Err(Error::DegenerateBatchStats { count: n * h * w });
            }
            let (mean, var) = channel_stats(view.data, n, c, h * w);
            let mom = p.momentum;
            let keep = E::one() - mom;
            p.running_mean.update_data(|rm| {
                for (r, b) in rm.iter_mut().zip(&mean) {
                    *r = keep * *r + mom * *b;
                }
            });
            p.running_var.update_data(|rv| {
                for (r, b) in rv.iter_mut().zip(&var) {
                    *r = keep * *r + mom * *b;
                }
            });
        }
        graph.forward_op(
            "batchnorm",
            &[x, &p.scale, &p.bias],
            move |ins| {
                let (n, c, h, w) = check_input(&ins[0], channels)?;
                let hw = h * w;
                let (mean, var) = channel_stats(ins[0].data, n, c, hw);
                let out = normalize(
                    ins[0].data,
                    n,
                    c,
                    hw,
                    &mean,
                    &var,
                    ins[1].data,
                    ins[2].data,
                    eps,
                );
                Ok((ins[0].shape.to_vec(), out))
            },
            move |args| {
                let x = args.inputs[0];
                let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
                let hw = h * w;
                let m = E::from_f64((n * hw) as f64);
                let (mean, var) = channel_stats(x.data, n, c, hw);
                let scale = args.inputs[1].data;

                let mut dx = if args.needs[0] {
                    Some(vec![E::zero(); x.data.len()])
                } else {
                    None
                };
                let mut dscale = vec![E::zero(); c];
                let mut dbias = vec![E::zero(); c];

                for ci in 0..c {
                    let inv = (var[ci] + eps).sqrt().recip();
                    let mu = mean[ci];
                    // First pass: sums needed by every term.
                    let mut sum_up = E::zero();
                    let mut sum_up_xhat = E::zero();
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for k in 0..hw {
                            let u = args.upstream[base + k];
                            let xhat = (x.data[base + k] - mu) * inv;
                            sum_up = sum_up + u;
                            sum_up_xhat = sum_up_xhat + u * xhat;
                        }
                    }
                    dbias[ci] = sum_up;
                    dscale[ci] = sum_up_xhat;
                    if let Some(dx) = dx.as_mut() {
                        let g = scale[ci];
                        for ni in 0..n {
                            let base = (ni * c + ci) * hw;
                            for k in 0..hw {
                                let u = args.upstream[base + k];
                                let xhat = (x.data[base + k] - mu) * inv;
                                // dL/dx through batch mean and variance.
                                dx[base + k] = g * inv * (u - sum_up / m - xhat * sum_up_xhat / m);
                            }
                        }
                    }
                }
                vec![dx, Some(dscale), Some(dbias)]
            },
        )
    } else {
        let rm = p.running_mean.to_vec();
        let rv = p.running_var.to_vec();
        let (rm_b, rv_b) = (rm.clone(), rv.clone());
        graph.forward_op(
            "batchnorm_eval",
            &[x, &p.scale, &p.bias],
            move |ins| {
                let (n, c, h, w) = check_input(&ins[0], channels)?;
                let out = normalize(
                    ins[0].data,
                    n,
                    c,
                    h * w,
                    &rm,
                    &rv,
                    ins[1].data,
                    ins[2].data,
                    eps,
                );
                Ok((ins[0].shape.to_vec(), out))
            },
            move |args| {
                let x = args.inputs[0];
                let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
                let hw = h * w;
                let scale = args.inputs[1].data;
                let mut dx = if args.needs[0] {
                    Some(vec![E::zero(); x.data.len()])
                } else {
                    None
                };
                let mut dscale = vec![E::zero(); c];
                let mut dbias = vec![E::zero(); c];
                for ci in 0..c {
                    let inv = (rv_b[ci] + eps).sqrt().recip();
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for k in 0..hw {
                            let u = args.upstream[base + k];
                            dbias[ci] = dbias[ci] + u;
                            dscale[ci] = dscale[ci] + u * (x.data[base + k] - rm_b[ci]) * inv;
                            if let Some(dx) = dx.as_mut() {
                                dx[base + k] = u * scale[ci] * inv;
                            }
                        }
                    }
                }
                vec![dx, Some(dscale), Some(dbias)]
            },
        )
    }
}
