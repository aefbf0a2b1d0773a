//! Softmax cross-entropy over integer class labels.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor};

fn row_softmax<E: Element>(row: &[E]) -> Vec<E> {
    let max = row.iter().fold(E::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<E> = row.iter().map(|&v| (v - max).exp()).collect();
    let denom: E = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Mean negative log-likelihood of `labels` under the row-wise softmax of
/// `logits` `[n, k]`. The backward rule yields `(softmax − onehot)/n`.
pub fn softmax_xent<E: Element>(
    graph: &Graph<E>,
    logits: &Tensor<E>,
    labels: &[usize],
) -> Result<Tensor<E>> {
    let labels_fwd = labels.to_vec();
    let labels_bwd = labels.to_vec();
    graph.forward_op(
        "softmax_xent",
        &[logits],
        move |ins| {
            let s = ins[0].shape;
            if s.len() != 2 {
                return Err(Error::invalid(
                    "softmax_xent",
                    format!("logits must be [n,k], got {s:?}"),
                ));
            }
            let (n, k) = (s[0], s[1]);
            if labels_fwd.len() != n {
                return Err(Error::invalid(
                    "softmax_xent",
                    format!("{} labels for {} rows", labels_fwd.len(), n),
                ));
            }
            let mut total = E::zero();
            for (ni, &label) in labels_fwd.iter().enumerate() {
                if label >= k {
                    return Err(Error::LabelOutOfRange { label, classes: k });
                }
                let row = &ins[0].data[ni * k..(ni + 1) * k];
                let max = row.iter().fold(E::neg_infinity(), |a, &b| a.max(b));
                let lse = row.iter().map(|&v| (v - max).exp()).sum::<E>().ln() + max;
                total = total + lse - row[label];
            }
            Ok((vec![], vec![total / E::from_f64(n as f64)]))
        },
        move |args| {
            let s = args.inputs[0].shape;
            let (n, k) = (s[0], s[1]);
            let inv_n = E::from_f64(n as f64).recip();
            let u = args.upstream[0];
            let mut grad = vec![E::zero(); n * k];
            for (ni, &label) in labels_bwd.iter().enumerate() {
                let row = &args.inputs[0].data[ni * k..(ni + 1) * k];
                let sm = row_softmax(row);
                for ki in 0..k {
                    let onehot = if ki == label { E::one() } else { E::zero() };
                    grad[ni * k + ki] = u * (sm[ki] - onehot) * inv_n;
                }
            }
            vec![Some(grad)]
        },
    )
}

/// Row-wise argmax of logits, used for accuracy counting.
pub fn argmax_rows<E: Element>(logits: &Tensor<E>) -> Vec<usize> {
    let shape = logits.shape();
    let (n, k) = (shape[0], shape[1]);
    let data = logits.data();
    (0..n)
        .map(|ni| {
            let row = &data[ni * k..(ni + 1) * k];
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
