//! Binary weight masks and the affine weight transforms built on them.
//!
//! Each masked layer carries a real-valued matrix `R` shaped like the layer
//! weight `W`. Thresholding `R` at zero (inclusive) yields the binary mask
//! `M`, and the layer then runs with
//!
//! ```text
//! W~ = k0·W + k1·1 + k2·M + k3·(W∘M)
//! ```
//!
//! The `piggyback` variant fixes `(k0,k1,k2,k3) = (0,0,0,1)`, reducing the
//! transform to the multiplicative mask `W∘M`; the `simple` variant fixes
//! `k3 = 0`. The threshold has no useful derivative, so its backward rule is
//! a strictly increasing surrogate, which preserves the sign of the gradient
//! with respect to the mask bits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor};

/// Surrogate used in place of the threshold derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    /// Pass the upstream gradient through unchanged.
    Identity,
    /// Scale the upstream gradient by the sigmoid derivative at `r`.
    Sigmoid,
}

/// Which terms of the affine transform are in play.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `W∘M` only.
    Piggyback,
    /// `k0·W + k1·1 + k2·M`.
    Simple,
    /// All four terms.
    Full,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Piggyback => "piggyback",
            Variant::Simple => "simple",
            Variant::Full => "full",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "piggyback" => Ok(Variant::Piggyback),
            "simple" => Ok(Variant::Simple),
            "full" => Ok(Variant::Full),
            other => Err(Error::invalid(
                "variant",
                format!("unknown variant `{other}`"),
            )),
        }
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(SurrogateKind::Identity),
            "sigmoid" => Ok(SurrogateKind::Sigmoid),
            other => Err(Error::invalid(
                "surrogate",
                format!("unknown surrogate `{other}`"),
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Binary masks
// ---------------------------------------------------------------------------

/// A {0,1} mask stored bit-packed: row-major, least-significant-bit first
/// within each byte, zero-padded to a byte boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    shape: Vec<usize>,
    len: usize,
    bytes: Vec<u8>,
}

impl BinaryMask {
    pub fn from_bools(shape: Vec<usize>, bits: &[bool]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != bits.len() {
            return Err(Error::invalid(
                "BinaryMask",
                format!("shape {:?} needs {} bits, got {}", shape, len, bits.len()),
            ));
        }
        let mut bytes = vec![0u8; len.div_ceil(8)];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        Ok(BinaryMask { shape, len, bytes })
    }

    /// Thresholds real values at zero, inclusive: `m[i] = 1 iff r[i] >= 0`.
    pub fn from_reals<E: Element>(shape: Vec<usize>, reals: &[E]) -> Result<Self> {
        let bits: Vec<bool> = reals.iter().map(|r| *r >= E::zero()).collect();
        Self::from_bools(shape, &bits)
    }

    /// Reconstructs a mask from its packed byte form.
    pub fn from_packed(shape: Vec<usize>, bytes: Vec<u8>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::invalid(
                "BinaryMask",
                format!("{} packed bytes for {} bits", bytes.len(), len),
            ));
        }
        if len % 8 != 0 {
            let padding = bytes[bytes.len() - 1] >> (len % 8);
            if padding != 0 {
                return Err(Error::invalid("BinaryMask", "padding bits must be zero"));
            }
        }
        Ok(BinaryMask { shape, len, bytes })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn packed_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len);
        self.bytes[i / 8] & (1 << (i % 8)) != 0
    }

    /// Population count straight from the packed form.
    pub fn ones_count(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.ones_count() as f64 / self.len as f64
    }

    pub fn to_dense<E: Element>(&self) -> Vec<E> {
        (0..self.len)
            .map(|i| if self.get(i) { E::one() } else { E::zero() })
            .collect()
    }
}

/// Spec-level threshold: binarize a real mask tensor.
pub fn threshold<E: Element>(r: &Tensor<E>) -> BinaryMask {
    BinaryMask::from_reals(r.shape(), &r.data()).expect("tensor shape matches its own data")
}

// ---------------------------------------------------------------------------
// Surrogate gradients
// ---------------------------------------------------------------------------

fn sigmoid<E: Element>(x: E) -> E {
    if x >= E::zero() {
        (E::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

/// Derivative of the sigmoid, computed as `σ(r)·σ(−r)` to stay positive far
/// from the origin.
pub fn sigmoid_deriv<E: Element>(r: E) -> E {
    sigmoid(r) * sigmoid(-r)
}

/// Maps the gradient with respect to the binary mask to a gradient with
/// respect to the real mask. Both kinds have strictly positive derivative,
/// so the sign of each entry is preserved.
pub fn surrogate_backward<E: Element>(upstream: &[E], r: &[E], kind: SurrogateKind) -> Vec<E> {
    assert_eq!(upstream.len(), r.len(), "surrogate shapes must match");
    match kind {
        SurrogateKind::Identity => upstream.to_vec(),
        SurrogateKind::Sigmoid => upstream
            .iter()
            .zip(r)
            .map(|(u, ri)| *u * sigmoid_deriv(*ri))
            .collect(),
    }
}

/// Lower bound of the real-mask initialization range.
pub const MASK_INIT_LO: f64 = 0.0001;
/// Upper bound of the real-mask initialization range.
pub const MASK_INIT_HI: f64 = 0.0002;

/// Draws a fresh real mask with entries i.i.d. uniform on
/// [`MASK_INIT_LO`, `MASK_INIT_HI`]. All entries are positive, so the
/// thresholded mask starts as all ones and the transform starts neutral.
pub fn init_mask<E: Element>(shape: &[usize], rng: &mut impl Rng) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let data: Vec<E> = (0..n)
        .map(|_| E::from_f64(rng.gen_range(MASK_INIT_LO..MASK_INIT_HI)))
        .collect();
    Tensor::new(shape.to_vec(), data)
        .expect("init_mask shape is consistent by construction")
        .requires_grad()
}

// ---------------------------------------------------------------------------
// k parameters
// ---------------------------------------------------------------------------

/// Per-layer transform coefficients with their learnability flags.
///
/// `k1` holds one entry in scalar mode or one per output channel in
/// channel-wise mode. Learnability is resolved against the variant and the
/// batch-norm rule by [`KParams::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct KParams<E: Element> {
    pub variant: Variant,
    pub k0: E,
    pub k1: Vec<E>,
    pub k2: E,
    pub k3: E,
    /// Learnable flags for (k0, k1, k2, k3).
    pub learn: [bool; 4],
    pub channel_wise: bool,
}

impl<E: Element> KParams<E> {
    /// Builds the default, neutral-start parameters for a layer.
    ///
    /// `bn_follows` fixes `k0 = 1` for the simple and full variants because
    /// batch normalization makes the output invariant to the scale of the
    /// convolution weights. `learn_override`, when given, selects exactly
    /// which k indices are learnable (subject to the variant rules).
    pub fn resolve(
        variant: Variant,
        bn_follows: bool,
        channel_wise: bool,
        out_channels: usize,
        learn_override: Option<&[usize]>,
    ) -> Result<Self> {
        let k1_len = if channel_wise { out_channels } else { 1 };
        let (k0, k3) = match variant {
            Variant::Piggyback => (E::zero(), E::one()),
            Variant::Simple | Variant::Full => (E::one(), E::zero()),
        };
        let default_learn = match variant {
            Variant::Piggyback => [false, false, false, false],
            Variant::Simple => [!bn_follows, true, true, false],
            Variant::Full => [!bn_follows, true, true, true],
        };
        let learn = match learn_override {
            None => default_learn,
            Some(set) => {
                let mut learn = [false; 4];
                for &idx in set {
                    if idx > 3 {
                        return Err(Error::InvalidKParams {
                            variant: variant.to_string(),
                            msg: format!("k index {idx} out of range"),
                        });
                    }
                    learn[idx] = true;
                }
                let allowed: [bool; 4] = match variant {
                    Variant::Piggyback => [false, true, false, false],
                    Variant::Simple => [!bn_follows, true, true, false],
                    Variant::Full => [!bn_follows, true, true, true],
                };
                for i in 0..4 {
                    if learn[i] && !allowed[i] {
                        return Err(Error::InvalidKParams {
                            variant: variant.to_string(),
                            msg: format!(
                                "k{i} cannot be learned (variant constraints{})",
                                if bn_follows {
                                    ", layer followed by batchnorm"
                                } else {
                                    ""
                                }
                            ),
                        });
                    }
                }
                learn
            }
        };
        let params = KParams {
            variant,
            k0,
            k1: vec![E::zero(); k1_len],
            k2: E::zero(),
            k3,
            learn,
            channel_wise,
        };
        params.validate(bn_follows)?;
        Ok(params)
    }

    /// Checks the fixed-value constraints of the variant.
    pub fn validate(&self, bn_follows: bool) -> Result<()> {
        let err = |msg: String| Error::InvalidKParams {
            variant: self.variant.to_string(),
            msg,
        };
        match self.variant {
            Variant::Piggyback => {
                if self.k0 != E::zero() || self.k2 != E::zero() || self.k3 != E::one() {
                    return Err(err(format!(
                        "piggyback requires (k0,k2,k3)=(0,0,1), got ({}, {}, {})",
                        self.k0, self.k2, self.k3
                    )));
                }
                if self.learn[0] || self.learn[2] || self.learn[3] {
                    return Err(err("piggyback only allows k1 to be learned".into()));
                }
                if !self.learn[1] && self.k1.iter().any(|v| *v != E::zero()) {
                    return Err(err("piggyback with fixed k1 requires k1 = 0".into()));
                }
            }
            Variant::Simple => {
                if self.k3 != E::zero() || self.learn[3] {
                    return Err(err(format!(
                        "simple requires fixed k3 = 0, got {}",
                        self.k3
                    )));
                }
                if bn_follows && (self.k0 != E::one() || self.learn[0]) {
                    return Err(err("k0 must be fixed at 1 under batchnorm".into()));
                }
            }
            Variant::Full => {
                if bn_follows && (self.k0 != E::one() || self.learn[0]) {
                    return Err(err("k0 must be fixed at 1 under batchnorm".into()));
                }
            }
        }
        if self.channel_wise && self.k1.is_empty() {
            return Err(err("channel-wise k1 requires at least one channel".into()));
        }
        if !self.channel_wise && self.k1.len() != 1 {
            return Err(err(format!(
                "scalar mode expects one k1 entry, got {}",
                self.k1.len()
            )));
        }
        Ok(())
    }

    /// Number of stored scalars: k0, k2, k3 plus however many k1 entries.
    pub fn scalar_count(&self) -> usize {
        3 + self.k1.len()
    }
}

// ---------------------------------------------------------------------------
// The transform
// ---------------------------------------------------------------------------

/// Shared value kernel: sums only the terms whose coefficient is nonzero,
/// so the neutral configurations reproduce their target bit patterns
/// exactly (`(1,0,0,0)` gives `W` verbatim; `(0,0,0,1)` gives `W∘M`
/// verbatim).
fn transform_kernel<E: Element>(w: &[E], m: &[E], k0: E, k1: &[E], k2: E, k3: E) -> Vec<E> {
    let n = w.len();
    let block = n / k1.len();
    let mut out = vec![E::zero(); n];
    let mut wrote = false;
    if k0 != E::zero() {
        for (o, wi) in out.iter_mut().zip(w) {
            *o = k0 * *wi;
        }
        wrote = true;
    }
    if k1.iter().any(|v| *v != E::zero()) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = *o + k1[i / block];
        }
        wrote = true;
    }
    if k2 != E::zero() {
        for (o, mi) in out.iter_mut().zip(m) {
            *o = *o + k2 * *mi;
        }
        wrote = true;
    }
    if k3 != E::zero() {
        if wrote {
            for ((o, wi), mi) in out.iter_mut().zip(w).zip(m) {
                *o = *o + k3 * *wi * *mi;
            }
        } else {
            // Sole term: keep the product's exact bits (k3 = 1 is Piggyback).
            for ((o, wi), mi) in out.iter_mut().zip(w).zip(m) {
                *o = k3 * *wi * *mi;
            }
        }
    }
    out
}

/// Applies the affine transform to a weight buffer using a binary mask.
pub fn transform_weights<E: Element>(w: &[E], m: &BinaryMask, k: &KParams<E>) -> Result<Vec<E>> {
    if w.len() != m.len() {
        return Err(Error::invalid(
            "transform_weights",
            format!("weight has {} entries, mask has {}", w.len(), m.len()),
        ));
    }
    if k.channel_wise && w.len() % k.k1.len() != 0 {
        return Err(Error::invalid(
            "transform_weights",
            format!(
                "{} weights not divisible by {} channels",
                w.len(),
                k.k1.len()
            ),
        ));
    }
    // A fixed-value check only; learnability is irrelevant to the value path.
    k.validate_values()?;
    let dense = m.to_dense::<E>();
    Ok(transform_kernel(w, &dense, k.k0, &k.k1, k.k2, k.k3))
}

impl<E: Element> KParams<E> {
    fn validate_values(&self) -> Result<()> {
        let err = |msg: String| Error::InvalidKParams {
            variant: self.variant.to_string(),
            msg,
        };
        match self.variant {
            Variant::Piggyback => {
                if self.k0 != E::zero() || self.k2 != E::zero() || self.k3 != E::one() {
                    return Err(err("piggyback requires (k0,k2,k3)=(0,0,1)".into()));
                }
            }
            Variant::Simple => {
                if self.k3 != E::zero() {
                    return Err(err("simple requires k3 = 0".into()));
                }
            }
            Variant::Full => {}
        }
        Ok(())
    }
}

/// Graph tensors for one masked layer's coefficients.
pub struct KTensors<E: Element> {
    pub k0: Tensor<E>,
    pub k1: Tensor<E>,
    pub k2: Tensor<E>,
    pub k3: Tensor<E>,
}

impl<E: Element> KTensors<E> {
    /// Wraps plain values into tensors, marking learnable ones.
    pub fn from_params(k: &KParams<E>) -> Self {
        let k0 = Tensor::scalar(k.k0);
        let k1 = if k.channel_wise {
            Tensor::new(vec![k.k1.len()], k.k1.clone()).expect("k1 shape consistent")
        } else {
            Tensor::scalar(k.k1[0])
        };
        let k2 = Tensor::scalar(k.k2);
        let k3 = Tensor::scalar(k.k3);
        k0.set_requires_grad(k.learn[0]);
        k1.set_requires_grad(k.learn[1]);
        k2.set_requires_grad(k.learn[2]);
        k3.set_requires_grad(k.learn[3]);
        KTensors { k0, k1, k2, k3 }
    }

    /// Reads the tensor values back into a plain parameter set.
    pub fn to_params(&self, variant: Variant, learn: [bool; 4], channel_wise: bool) -> KParams<E> {
        KParams {
            variant,
            k0: self.k0.item(),
            k1: self.k1.to_vec(),
            k2: self.k2.item(),
            k3: self.k3.item(),
            learn,
            channel_wise,
        }
    }

    pub fn learnable(&self) -> Vec<Tensor<E>> {
        [&self.k0, &self.k1, &self.k2, &self.k3]
            .into_iter()
            .filter(|t| t.is_requires_grad())
            .cloned()
            .collect()
    }
}

/// Records the threshold with its straight-through surrogate backward rule.
///
/// Forward emits exact {0,1} values; backward maps the mask gradient to the
/// real mask through [`surrogate_backward`].
pub fn threshold_ste<E: Element>(
    graph: &Graph<E>,
    r: &Tensor<E>,
    kind: SurrogateKind,
) -> Result<Tensor<E>> {
    graph.forward_op(
        "threshold_ste",
        &[r],
        |ins| {
            let data = ins[0]
                .data
                .iter()
                .map(|&v| if v >= E::zero() { E::one() } else { E::zero() })
                .collect();
            Ok((ins[0].shape.to_vec(), data))
        },
        move |args| {
            vec![Some(surrogate_backward(
                args.upstream,
                args.inputs[0].data,
                kind,
            ))]
        },
    )
}

/// Records the affine weight transform on the graph.
///
/// Inputs are `(W, M, k0, k1, k2, k3)`; gradients flow to the mask and the
/// learnable coefficients but never to `W`, which stays frozen:
/// `∂/∂k0 = Σ u∘W`, `∂/∂k1 = Σ u` (per channel in channel-wise mode),
/// `∂/∂k2 = Σ u∘M`, `∂/∂k3 = Σ u∘W∘M`, `∂/∂M = k2·u + k3·u∘W`.
pub fn transform_op<E: Element>(
    graph: &Graph<E>,
    w: &Tensor<E>,
    m: &Tensor<E>,
    k: &KTensors<E>,
    variant: Variant,
) -> Result<Tensor<E>> {
    graph.forward_op(
        "transform_weights",
        &[w, m, &k.k0, &k.k1, &k.k2, &k.k3],
        move |ins| {
            let (w, m) = (&ins[0], &ins[1]);
            if w.shape != m.shape {
                return Err(Error::shape_mismatch("transform_weights", w.shape, m.shape));
            }
            let k0 = ins[2].data[0];
            let k1 = ins[3].data;
            let k2 = ins[4].data[0];
            let k3 = ins[5].data[0];
            match variant {
                Variant::Piggyback if k0 != E::zero() || k2 != E::zero() || k3 != E::one() => {
                    return Err(Error::InvalidKParams {
                        variant: variant.to_string(),
                        msg: "piggyback requires (k0,k2,k3)=(0,0,1)".into(),
                    });
                }
                Variant::Simple if k3 != E::zero() => {
                    return Err(Error::InvalidKParams {
                        variant: variant.to_string(),
                        msg: "simple requires k3 = 0".into(),
                    });
                }
                _ => {}
            }
            if w.numel() % k1.len() != 0 {
                return Err(Error::shape_mismatch(
                    "transform_weights(k1)",
                    w.shape,
                    ins[3].shape,
                ));
            }
            Ok((
                w.shape.to_vec(),
                transform_kernel(w.data, m.data, k0, k1, k2, k3),
            ))
        },
        |args| {
            let w = args.inputs[0].data;
            let m = args.inputs[1].data;
            let k1_len = args.inputs[3].numel();
            let block = w.len() / k1_len;
            let k2 = args.inputs[4].data[0];
            let k3 = args.inputs[5].data[0];
            let u = args.upstream;

            let dm = if args.needs[1] {
                Some(
                    u.iter()
                        .zip(w)
                        .map(|(ui, wi)| k2 * *ui + k3 * *ui * *wi)
                        .collect(),
                )
            } else {
                None
            };
            let dk0 = if args.needs[2] {
                Some(vec![u.iter().zip(w).map(|(ui, wi)| *ui * *wi).sum()])
            } else {
                None
            };
            let dk1 = if args.needs[3] {
                let mut sums = vec![E::zero(); k1_len];
                for (i, ui) in u.iter().enumerate() {
                    sums[i / block] = sums[i / block] + *ui;
                }
                Some(sums)
            } else {
                None
            };
            let dk2 = if args.needs[4] {
                Some(vec![u.iter().zip(m).map(|(ui, mi)| *ui * *mi).sum()])
            } else {
                None
            };
            let dk3 = if args.needs[5] {
                Some(vec![u
                    .iter()
                    .zip(w)
                    .zip(m)
                    .map(|((ui, wi), mi)| *ui * *wi * *mi)
                    .sum()])
            } else {
                None
            };
            // W is frozen by contract; no gradient slot for it.
            vec![None, dm, dk0, dk1, dk2, dk3]
        },
    )
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn threshold_pack_roundtrip(reals in prop::collection::vec(-1.0f64..1.0, 1..80)) {
            let mask = BinaryMask::from_reals(vec![reals.len()], &reals).unwrap();
            let back = BinaryMask::from_packed(vec![reals.len()], mask.packed_bytes().to_vec()).unwrap();
            prop_assert_eq!(&mask, &back);
            for (i, r) in reals.iter().enumerate() {
                prop_assert_eq!(mask.get(i), *r >= 0.0);
            }
            let unpacked = mask.to_dense::<f64>().iter().filter(|&&v| v == 1.0).count();
            prop_assert_eq!(mask.ones_count(), unpacked);
        }

        #[test]
        fn surrogate_sign_agreement(
            upstream in prop::collection::vec(-10.0f64..10.0, 1..32),
            shift in -6.0f64..6.0,
        ) {
            let r: Vec<f64> = upstream.iter().map(|u| u * 0.3 + shift).collect();
            for kind in [SurrogateKind::Identity, SurrogateKind::Sigmoid] {
                let grads = surrogate_backward(&upstream, &r, kind);
                for (g, u) in grads.iter().zip(&upstream) {
                    if *u != 0.0 {
                        prop_assert_eq!(g.signum(), u.signum());
                    }
                }
            }
        }

        #[test]
        fn transform_superposition_in_k(
            w in prop::collection::vec(-2.0f64..2.0, 1..24),
            ka in prop::array::uniform4(-2.0f64..2.0),
            kb in prop::array::uniform4(-2.0f64..2.0),
            seed in any::<u64>(),
        ) {
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bits: Vec<bool> = (0..w.len()).map(|_| rng.gen_bool(0.5)).collect();
            let m = BinaryMask::from_bools(vec![w.len()], &bits).unwrap();
            let t = |k: &[f64; 4]| {
                transform_weights(&w, &m, &KParams {
                    variant: Variant::Full,
                    k0: k[0],
                    k1: vec![k[1]],
                    k2: k[2],
                    k3: k[3],
                    learn: [false; 4],
                    channel_wise: false,
                }).unwrap()
            };
            let sum = [ka[0] + kb[0], ka[1] + kb[1], ka[2] + kb[2], ka[3] + kb[3]];
            let lhs = t(&sum);
            let (a, b) = (t(&ka), t(&kb));
            for i in 0..w.len() {
                prop_assert!((lhs[i] - (a[i] + b[i])).abs() < 1e-9);
            }
        }
    }
}
