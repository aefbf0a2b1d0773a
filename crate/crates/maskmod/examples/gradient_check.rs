//! Verifies the layer gradients against central finite differences in
//! 64-bit mode and prints the observed error for each layer kind.

use maskmod::gradcheck::{check_gradients, DEFAULT_STEP, DEFAULT_TOL};
use maskmod::nn::{
    batchnorm, conv2d, dense, softmax_xent, BatchNormParams, Conv2dParams, DenseParams,
};
use maskmod::tensor::{ops, Graph, Tensor};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
    .requires_grad()
}

fn main() -> maskmod::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let x = rand_tensor(&mut rng, &[2, 2, 4, 4]);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let b = rand_tensor(&mut rng, &[3]);
    let report = check_gradients(
        &[x.clone(), w.clone(), b.clone()],
        || conv_loss(&x, &w, &b).1.item(),
        || {
            let (g, loss) = conv_loss(&x, &w, &b);
            g.backward(&loss).unwrap();
        },
        DEFAULT_STEP,
        DEFAULT_TOL,
    );
    println!(
        "conv2d       {} entries, max rel err {:.2e} -> {}",
        report.entries,
        report.max_rel_err,
        if report.ok() { "ok" } else { "MISMATCH" }
    );

    let x = rand_tensor(&mut rng, &[4, 3]);
    let wt = rand_tensor(&mut rng, &[2, 3]);
    let bias = rand_tensor(&mut rng, &[2]);
    let bn = BatchNormParams::<f64>::new(2);
    bn.scale.set_requires_grad(true);
    bn.bias.set_requires_grad(true);
    let labels = vec![0usize, 1, 1, 0];
    let build = || {
        let g = Graph::new();
        let h = dense(
            &g,
            &x,
            &DenseParams {
                weight: wt.clone(),
                bias: Some(bias.clone()),
            },
        )
        .unwrap();
        let loss = softmax_xent(&g, &h, &labels).unwrap();
        (g, loss)
    };
    let report = check_gradients(
        &[x.clone(), wt.clone(), bias.clone()],
        || build().1.item(),
        || {
            let (g, loss) = build();
            g.backward(&loss).unwrap();
        },
        DEFAULT_STEP,
        DEFAULT_TOL,
    );
    println!(
        "dense+xent   {} entries, max rel err {:.2e} -> {}",
        report.entries,
        report.max_rel_err,
        if report.ok() { "ok" } else { "MISMATCH" }
    );

    let x = rand_tensor(&mut rng, &[3, 2, 3, 3]);
    let p = BatchNormParams::<f64>::new(2);
    p.scale.set_requires_grad(true);
    p.bias.set_requires_grad(true);
    let bn_build = |training: bool| {
        let g = Graph::new();
        let y = batchnorm(&g, &x, &p, training).unwrap();
        let sq = ops::mul(&g, &y, &y).unwrap();
        let loss = ops::sum_all(&g, &sq).unwrap();
        (g, loss)
    };
    for training in [true, false] {
        let report = check_gradients(
            &[x.clone(), p.scale.clone(), p.bias.clone()],
            || bn_build(training).1.item(),
            || {
                let (g, loss) = bn_build(training);
                g.backward(&loss).unwrap();
            },
            DEFAULT_STEP,
            DEFAULT_TOL,
        );
        println!(
            "batchnorm[{}] {} entries, max rel err {:.2e} -> {}",
            if training { "train" } else { "eval " },
            report.entries,
            report.max_rel_err,
            if report.ok() { "ok" } else { "MISMATCH" }
        );
    }
    Ok(())
}

fn conv_loss(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> (Graph<f64>, Tensor<f64>) {
    let g = Graph::new();
    let y = conv2d(
        &g,
        x,
        &Conv2dParams {
            weight: w.clone(),
            bias: Some(b.clone()),
            stride: 1,
            padding: 1,
        },
    )
    .unwrap();
    let sq = ops::mul(&g, &y, &y).unwrap();
    let loss = ops::sum_all(&g, &sq).unwrap();
    (g, loss)
}
