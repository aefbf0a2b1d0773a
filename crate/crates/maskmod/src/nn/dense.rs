//! Fully-connected layer: `y = x · Wᵀ + b` with `W` shaped `[out, in]`.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor};

pub struct DenseParams<E: Element> {
    /// Weight, shaped `[out, in]`.
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
}

/// Applies a dense layer to `x` `[n, in]`, producing `[n, out]`.
pub fn dense<E: Element>(graph: &Graph<E>, x: &Tensor<E>, p: &DenseParams<E>) -> Result<Tensor<E>> {
    let with_bias = p.bias.is_some();
    let fwd = move |ins: &[crate::tensor::View<'_, E>]| {
        let x = &ins[0];
        let w = &ins[1];
        if x.shape.len() != 2 || w.shape.len() != 2 || x.shape[1] != w.shape[1] {
            return Err(Error::shape_mismatch("dense", x.shape, w.shape));
        }
        let (n, fin) = (x.shape[0], x.shape[1]);
        let fout = w.shape[0];
        if with_bias && ins[2].shape != [fout] {
            return Err(Error::shape_mismatch("dense(bias)", ins[2].shape, &[fout]));
        }
        let mut out = vec![E::zero(); n * fout];
        for ni in 0..n {
            for o in 0..fout {
                let mut acc = E::zero();
                for i in 0..fin {
                    acc = acc + x.data[ni * fin + i] * w.data[o * fin + i];
                }
                if with_bias {
                    acc = acc + ins[2].data[o];
                }
                out[ni * fout + o] = acc;
            }
        }
        Ok((vec![n, fout], out))
    };
    let bwd = move |args: &crate::tensor::BwdArgs<'_, E>| {
        let x = args.inputs[0];
        let w = args.inputs[1];
        let (n, fin) = (x.shape[0], x.shape[1]);
        let fout = w.shape[0];
        let dx = if args.needs[0] {
            let mut dx = vec![E::zero(); n * fin];
            for ni in 0..n {
                for o in 0..fout {
                    let u = args.upstream[ni * fout + o];
                    for i in 0..fin {
                        dx[ni * fin + i] = dx[ni * fin + i] + u * w.data[o * fin + i];
                    }
                }
            }
            Some(dx)
        } else {
            None
        };
        let dw = if args.needs[1] {
            let mut dw = vec![E::zero(); fout * fin];
            for ni in 0..n {
                for o in 0..fout {
                    let u = args.upstream[ni * fout + o];
                    for i in 0..fin {
                        dw[o * fin + i] = dw[o * fin + i] + u * x.data[ni * fin + i];
                    }
                }
            }
            Some(dw)
        } else {
            None
        };
        let mut grads = vec![dx, dw];
        if with_bias {
            let db = if args.needs[2] {
                let mut db = vec![E::zero(); fout];
                for ni in 0..n {
                    for o in 0..fout {
                        db[o] = db[o] + args.upstream[ni * fout + o];
                    }
                }
                Some(db)
            } else {
                None
            };
            grads.push(db);
        }
        grads
    };

    match &p.bias {
        Some(b) => graph.forward_op("dense", &[x, &p.weight, b], fwd, bwd),
        None => graph.forward_op("dense", &[x, &p.weight], fwd, bwd),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, DEFAULT_STEP, DEFAULT_TOL};
    use crate::tensor::ops;
    use rand::prelude::*;

    #[test]
    fn computes_affine_map() {
        let g = Graph::new();
        let x = Tensor::<f64>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let y = dense(
            &g,
            &x,
            &DenseParams {
                weight: w,
                bias: Some(b),
            },
        )
        .unwrap();
        assert_eq!(y.to_vec(), vec![1.5, 1.5]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::<f64>::new(
            vec![3, 4],
            (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
        .requires_grad();
        let w = Tensor::<f64>::new(
            vec![2, 4],
            (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
        .requires_grad();
        let b = Tensor::<f64>::new(vec![2], vec![0.3, -0.7])
            .unwrap()
            .requires_grad();
        let build = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            let g = Graph::new();
            let y = dense(
                &g,
                x,
                &DenseParams {
                    weight: w.clone(),
                    bias: Some(b.clone()),
                },
            )
            .unwrap();
            let loss = ops::sum_all(&g, &ops::mul(&g, &y, &y).unwrap()).unwrap();
            (g, loss)
        };
        let params = [x.clone(), w.clone(), b.clone()];
        let report = check_gradients(
            &params,
            || build(&x, &w, &b).1.item(),
            || {
                let (g, loss) = build(&x, &w, &b);
                g.backward(&loss).unwrap();
            },
            DEFAULT_STEP,
            DEFAULT_TOL,
        );
        assert!(report.ok(), "max rel err {:.3e}", report.max_rel_err);
    }
}
