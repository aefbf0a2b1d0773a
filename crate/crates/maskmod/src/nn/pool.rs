//! Spatial pooling: non-overlapping max pooling and global average pooling.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor};

/// Non-overlapping `size`×`size` max pooling. Extents must divide evenly.
///
/// The backward pass routes the upstream gradient to the argmax position of
/// each window (first occurrence wins on exact ties), recomputed from the
/// recorded input.
pub fn max_pool2d<E: Element>(graph: &Graph<E>, x: &Tensor<E>, size: usize) -> Result<Tensor<E>> {
    graph.forward_op(
        "max_pool2d",
        &[x],
        move |ins| {
            let s = ins[0].shape;
            if s.len() != 4 {
                return Err(Error::invalid(
                    "max_pool2d",
                    format!("input must be 4-D, got {s:?}"),
                ));
            }
            let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
            if size == 0 || h % size != 0 || w % size != 0 {
                return Err(Error::BadGeometry {
                    op: "max_pool2d".into(),
                    msg: format!("window {size} does not tile {h}x{w}"),
                });
            }
            let (oh, ow) = (h / size, w / size);
            let mut out = vec![E::zero(); n * c * oh * ow];
            for ni in 0..n {
                for ci in 0..c {
                    let plane = &ins[0].data[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut best = plane[i * size * w + j * size];
                            for u in 0..size {
                                for v in 0..size {
                                    let val = plane[(i * size + u) * w + j * size + v];
                                    if val > best {
                                        best = val;
                                    }
                                }
                            }
                            out[((ni * c + ci) * oh + i) * ow + j] = best;
                        }
                    }
                }
            }
            Ok((vec![n, c, oh, ow], out))
        },
        move |args| {
            let s = args.inputs[0].shape;
            let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
            let (oh, ow) = (h / size, w / size);
            let mut dx = vec![E::zero(); args.inputs[0].numel()];
            for ni in 0..n {
                for ci in 0..c {
                    let off = (ni * c + ci) * h * w;
                    let plane = &args.inputs[0].data[off..off + h * w];
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut best = plane[i * size * w + j * size];
                            let mut best_idx = i * size * w + j * size;
                            for u in 0..size {
                                for v in 0..size {
                                    let idx = (i * size + u) * w + j * size + v;
                                    if plane[idx] > best {
                                        best = plane[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                            dx[off + best_idx] = dx[off + best_idx]
                                + args.upstream[((ni * c + ci) * oh + i) * ow + j];
                        }
                    }
                }
            }
            vec![Some(dx)]
        },
    )
}

/// Averages each channel plane down to a single value: `[n,c,h,w] -> [n,c]`.
pub fn global_avg_pool<E: Element>(graph: &Graph<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
    graph.forward_op(
        "global_avg_pool",
        &[x],
        |ins| {
            let s = ins[0].shape;
            if s.len() != 4 {
                return Err(Error::invalid(
                    "global_avg_pool",
                    format!("input must be 4-D, got {s:?}"),
                ));
            }
            let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
            let m = E::from_f64(hw as f64);
            let mut out = vec![E::zero(); n * c];
            for nc in 0..n * c {
                let mut acc = E::zero();
                for k in 0..hw {
                    acc = acc + ins[0].data[nc * hw + k];
                }
                out[nc] = acc / m;
            }
            Ok((vec![n, c], out))
        },
        |args| {
            let s = args.inputs[0].shape;
            let hw = s[2] * s[3];
            let m = E::from_f64(hw as f64);
            let mut dx = vec![E::zero(); args.inputs[0].numel()];
            for (nc, u) in args.upstream.iter().enumerate() {
                let g = *u / m;
                for k in 0..hw {
                    dx[nc * hw + k] = g;
                }
            }
            vec![Some(dx)]
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, DEFAULT_STEP, DEFAULT_TOL};
    use crate::tensor::ops;
    use rand::prelude::*;

    #[test]
    fn max_pool_picks_window_maxima() {
        let g = Graph::new();
        let x = Tensor::<f64>::new(
            vec![1, 1, 2, 4],
            vec![1.0, 2.0, 5.0, 4.0, 3.0, 0.0, -1.0, 6.0],
        )
        .unwrap();
        let y = max_pool2d(&g, &x, 2).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 1, 2]);
        assert_eq!(y.to_vec(), vec![3.0, 6.0]);
    }

    #[test]
    fn gap_averages_planes() {
        let g = Graph::new();
        let x = Tensor::<f64>::new(vec![1, 2, 1, 2], vec![1.0, 3.0, 10.0, 20.0]).unwrap();
        let y = global_avg_pool(&g, &x).unwrap();
        assert_eq!(y.shape(), vec![1, 2]);
        assert_eq!(y.to_vec(), vec![2.0, 15.0]);
    }

    #[test]
    fn pooling_gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let x = Tensor::<f64>::new(
            vec![2, 2, 4, 4],
            (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
        .requires_grad();
        for use_max in [true, false] {
            let build = |x: &Tensor<f64>| {
                let g = Graph::new();
                let y = if use_max {
                    max_pool2d(&g, x, 2).unwrap()
                } else {
                    global_avg_pool(&g, x).unwrap()
                };
                let loss = ops::sum_all(&g, &ops::mul(&g, &y, &y).unwrap()).unwrap();
                (g, loss)
            };
            x.zero_grad();
            let report = check_gradients(
                std::slice::from_ref(&x),
                || build(&x).1.item(),
                || {
                    let (g, loss) = build(&x);
                    g.backward(&loss).unwrap();
                },
                DEFAULT_STEP,
                DEFAULT_TOL,
            );
            assert!(
                report.ok(),
                "use_max={use_max}: max rel err {:.3e}",
                report.max_rel_err
            );
        }
    }
}
