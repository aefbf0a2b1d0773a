//! Built-in elementwise and reduction operations with analytic backward rules.
//!
//! Broadcasting is restricted to the scalar-tensor case; everything else
//! requires exact shape agreement.

use super::{Element, Graph, Tensor, View};
use crate::error::{Error, Result};

fn check_same_shape<E: Element>(op: &str, a: &View<'_, E>, b: &View<'_, E>) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::shape_mismatch(op, a.shape, b.shape));
    }
    Ok(())
}

/// Elementwise sum of two same-shape tensors.
pub fn add<E: Element>(g: &Graph<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    g.forward_op(
        "add",
        &[a, b],
        |ins| {
            check_same_shape("add", &ins[0], &ins[1])?;
            let data = ins[0]
                .data
                .iter()
                .zip(ins[1].data)
                .map(|(x, y)| *x + *y)
                .collect();
            Ok((ins[0].shape.to_vec(), data))
        },
        |args| vec![Some(args.upstream.to_vec()), Some(args.upstream.to_vec())],
    )
}

/// Elementwise difference `a - b`.
pub fn sub<E: Element>(g: &Graph<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    g.forward_op(
        "sub",
        &[a, b],
        |ins| {
            check_same_shape("sub", &ins[0], &ins[1])?;
            let data = ins[0]
                .data
                .iter()
                .zip(ins[1].data)
                .map(|(x, y)| *x - *y)
                .collect();
            Ok((ins[0].shape.to_vec(), data))
        },
        |args| {
            vec![
                Some(args.upstream.to_vec()),
                Some(args.upstream.iter().map(|&u| -u).collect()),
            ]
        },
    )
}

/// Hadamard product of two same-shape tensors.
pub fn mul<E: Element>(g: &Graph<E>, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    g.forward_op(
        "mul",
        &[a, b],
        |ins| {
            check_same_shape("mul", &ins[0], &ins[1])?;
            let data = ins[0]
                .data
                .iter()
                .zip(ins[1].data)
                .map(|(x, y)| *x * *y)
                .collect();
            Ok((ins[0].shape.to_vec(), data))
        },
        |args| {
            let a = args.inputs[0].data;
            let b = args.inputs[1].data;
            vec![
                Some(args.upstream.iter().zip(b).map(|(u, y)| *u * *y).collect()),
                Some(args.upstream.iter().zip(a).map(|(u, x)| *u * *x).collect()),
            ]
        },
    )
}

/// Multiplies a tensor by a compile-time constant.
pub fn scale<E: Element>(g: &Graph<E>, a: &Tensor<E>, c: E) -> Result<Tensor<E>> {
    g.forward_op(
        "scale",
        &[a],
        move |ins| {
            Ok((
                ins[0].shape.to_vec(),
                ins[0].data.iter().map(|&x| x * c).collect(),
            ))
        },
        move |args| vec![Some(args.upstream.iter().map(|&u| u * c).collect())],
    )
}

/// Broadcast-multiplies a tensor by a scalar (rank-0) tensor.
pub fn mul_scalar<E: Element>(g: &Graph<E>, a: &Tensor<E>, s: &Tensor<E>) -> Result<Tensor<E>> {
    g.forward_op(
        "mul_scalar",
        &[a, s],
        |ins| {
            if ins[1].numel() != 1 {
                return Err(Error::shape_mismatch(
                    "mul_scalar",
                    ins[0].shape,
                    ins[1].shape,
                ));
            }
            let c = ins[1].data[0];
            Ok((
                ins[0].shape.to_vec(),
                ins[0].data.iter().map(|&x| x * c).collect(),
            ))
        },
        |args| {
            let c = args.inputs[1].data[0];
            let da = args.upstream.iter().map(|&u| u * c).collect();
            let ds = args
                .upstream
                .iter()
                .zip(args.inputs[0].data)
                .map(|(u, x)| *u * *x)
                .sum();
            vec![Some(da), Some(vec![ds])]
        },
    )
}

/// Sums all elements into a scalar.
pub fn sum_all<E: Element>(g: &Graph<E>, a: &Tensor<E>) -> Result<Tensor<E>> {
    g.forward_op(
        "sum_all",
        &[a],
        |ins| Ok((vec![], vec![ins[0].data.iter().copied().sum()])),
        |args| {
            let u = args.upstream[0];
            vec![Some(vec![u; args.inputs[0].numel()])]
        },
    )
}

/// Mean of all elements.
pub fn mean_all<E: Element>(g: &Graph<E>, a: &Tensor<E>) -> Result<Tensor<E>> {
    g.forward_op(
        "mean_all",
        &[a],
        |ins| {
            let n = E::from_f64(ins[0].numel() as f64);
            Ok((vec![], vec![ins[0].data.iter().copied().sum::<E>() / n]))
        },
        |args| {
            let n = E::from_f64(args.inputs[0].numel() as f64);
            let u = args.upstream[0] / n;
            vec![Some(vec![u; args.inputs[0].numel()])]
        },
    )
}

/// Sums over one axis; the gradient broadcasts the upstream back along it.
pub fn sum_axis<E: Element>(g: &Graph<E>, a: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
    g.forward_op(
        "sum_axis",
        &[a],
        move |ins| {
            let shape = ins[0].shape;
            if axis >= shape.len() {
                return Err(Error::invalid(
                    "sum_axis",
                    format!("axis {} out of range for shape {:?}", axis, shape),
                ));
            }
            let (out_shape, outer, len, inner) = axis_split(shape, axis);
            let mut out = vec![E::zero(); outer * inner];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        out[o * inner + i] =
                            out[o * inner + i] + ins[0].data[(o * len + k) * inner + i];
                    }
                }
            }
            Ok((out_shape, out))
        },
        move |args| {
            let shape = args.inputs[0].shape;
            let (_, outer, len, inner) = axis_split(shape, axis);
            let mut grad = vec![E::zero(); args.inputs[0].numel()];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        grad[(o * len + k) * inner + i] = args.upstream[o * inner + i];
                    }
                }
            }
            vec![Some(grad)]
        },
    )
}

fn axis_split(shape: &[usize], axis: usize) -> (Vec<usize>, usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    (out_shape, outer, len, inner)
}

/// Rectified linear unit. Subgradient 0 at the kink.
pub fn relu<E: Element>(g: &Graph<E>, a: &Tensor<E>) -> Result<Tensor<E>> {
    g.forward_op(
        "relu",
        &[a],
        |ins| {
            let data = ins[0]
                .data
                .iter()
                .map(|&x| if x > E::zero() { x } else { E::zero() })
                .collect();
            Ok((ins[0].shape.to_vec(), data))
        },
        |args| {
            let x = args.inputs[0].data;
            let grad = args
                .upstream
                .iter()
                .zip(x)
                .map(|(u, xi)| if *xi > E::zero() { *u } else { E::zero() })
                .collect();
            vec![Some(grad)]
        },
    )
}

/// Reinterprets the buffer under a new shape with the same element count.
pub fn reshape<E: Element>(g: &Graph<E>, a: &Tensor<E>, shape: Vec<usize>) -> Result<Tensor<E>> {
    let bwd_shape = shape.clone();
    g.forward_op(
        "reshape",
        &[a],
        move |ins| {
            let n: usize = shape.iter().product();
            if n != ins[0].numel() {
                return Err(Error::invalid(
                    "reshape",
                    format!("cannot reshape {:?} into {:?}", ins[0].shape, shape),
                ));
            }
            Ok((shape.clone(), ins[0].data.to_vec()))
        },
        move |args| {
            let _ = &bwd_shape;
            vec![Some(args.upstream.to_vec())]
        },
    )
}
