//! The weight transform itself: thresholding a real mask, the piggyback /
//! simple / full variants, surrogate gradients and their sign-agreement
//! guarantee.

use maskmod::mask::{
    init_mask, surrogate_backward, threshold, transform_weights, BinaryMask, KParams,
    SurrogateKind, Variant,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn main() -> maskmod::Result<()> {
    // Fresh real masks start in [0.0001, 0.0002]: every bit is 1, so a new
    // task starts as an exact copy of the baseline.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = init_mask::<f32>(&[3, 3], &mut rng);
    let m = threshold(&r);
    println!("fresh mask: {}/{} bits set", m.ones_count(), m.len());

    // The three variants on a toy weight vector.
    let w = [2.0f32, -1.0, 0.5, -0.25];
    let mask = BinaryMask::from_bools(vec![4], &[true, false, true, false])?;
    let piggyback = KParams {
        variant: Variant::Piggyback,
        k0: 0.0,
        k1: vec![0.0],
        k2: 0.0,
        k3: 1.0,
        learn: [false; 4],
        channel_wise: false,
    };
    let simple = KParams {
        variant: Variant::Simple,
        k0: 1.0,
        k1: vec![0.5],
        k2: 2.0,
        k3: 0.0,
        learn: [false; 4],
        channel_wise: false,
    };
    let full = KParams {
        variant: Variant::Full,
        k0: 1.0,
        k1: vec![0.5],
        k2: 2.0,
        k3: -1.0,
        learn: [false; 4],
        channel_wise: false,
    };
    println!("w                 = {w:?}");
    println!("mask              = {:?}", mask.to_dense::<f32>());
    println!(
        "piggyback (W o M) = {:?}",
        transform_weights(&w, &mask, &piggyback)?
    );
    println!(
        "simple            = {:?}",
        transform_weights(&w, &mask, &simple)?
    );
    println!(
        "full              = {:?}",
        transform_weights(&w, &mask, &full)?
    );

    // Surrogate gradients: both kinds preserve the sign of every entry, so
    // mask updates always walk downhill in the discrete objective.
    let upstream: Vec<f32> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let reals: Vec<f32> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
    for kind in [SurrogateKind::Identity, SurrogateKind::Sigmoid] {
        let grads = surrogate_backward(&upstream, &reals, kind);
        let agree = grads
            .iter()
            .zip(&upstream)
            .all(|(g, u)| *u == 0.0 || g.signum() == u.signum());
        println!(
            "{kind:?}: sign agreement across {} entries: {agree}",
            grads.len()
        );
    }
    Ok(())
}
