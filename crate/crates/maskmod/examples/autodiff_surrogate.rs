//! The recording graph in miniature: built-in ops, gradient accumulation,
//! and a custom operation whose backward rule deliberately differs from the
//! analytic derivative — the mechanism behind straight-through masks.

use maskmod::tensor::{ops, Graph, Tensor};

fn main() -> maskmod::Result<()> {
    // d/dw sum(w*w) = 2w.
    let g = Graph::new();
    let w = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5])?.requires_grad();
    let loss = ops::sum_all(&g, &ops::mul(&g, &w, &w)?)?;
    g.backward(&loss)?;
    println!("w        = {:?}", w.to_vec());
    println!("d(w*w)/dw = {:?}  (expected 2w)", w.grad().unwrap());

    // The same graph replayed twice accumulates gradients additively.
    g.backward(&loss)?;
    println!(
        "after second backward: {:?}  (exactly doubled)\n",
        w.grad().unwrap()
    );

    // A custom op: forward squares, backward passes the upstream through.
    // The recorded rule wins; this is the surrogate-gradient contract.
    let g = Graph::new();
    let x = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 3.0])?.requires_grad();
    let y = g.forward_op(
        "square_with_identity_backward",
        &[&x],
        |ins| {
            Ok((
                ins[0].shape.to_vec(),
                ins[0].data.iter().map(|v| v * v).collect(),
            ))
        },
        |args| vec![Some(args.upstream.to_vec())],
    )?;
    let loss = ops::sum_all(&g, &y)?;
    g.backward(&loss)?;
    println!("forward:  x^2       = {:?}", y.to_vec());
    println!(
        "backward: claimed 1 = {:?}  (analytic would be 2x)",
        x.grad().unwrap()
    );
    Ok(())
}
