//! Direct 2-D convolution (cross-correlation).
//!
//! Deliberately loop-based: at the scales this crate targets, a transparent
//! kernel that is easy to verify against a brute-force oracle beats an
//! im2col pipeline.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, View};

/// Parameters of a 2-D convolution layer.
pub struct Conv2dParams<E: Element> {
    /// Kernel, shaped `[out_ch, in_ch, kh, kw]`.
    pub weight: Tensor<E>,
    /// Optional per-output-channel bias.
    pub bias: Option<Tensor<E>>,
    pub stride: usize,
    pub padding: usize,
}

/// Output extent for one spatial dimension, or an error when the geometry
/// does not divide evenly.
pub fn conv2d_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    let padded = input + 2 * padding;
    if kernel > padded {
        return Err(Error::BadGeometry {
            op: "conv2d".into(),
            msg: format!("kernel extent {kernel} exceeds padded input extent {padded}"),
        });
    }
    if stride == 0 {
        return Err(Error::BadGeometry {
            op: "conv2d".into(),
            msg: "stride must be positive".into(),
        });
    }
    let span = padded - kernel;
    if span % stride != 0 {
        return Err(Error::BadGeometry {
            op: "conv2d".into(),
            msg: format!(
                "non-integral output extent: ({input} + 2*{padding} - {kernel}) is not divisible by stride {stride}"
            ),
        });
    }
    Ok(span / stride + 1)
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

fn geometry<E: Element>(
    x: &View<'_, E>,
    wt: &View<'_, E>,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    if x.shape.len() != 4 {
        return Err(Error::invalid(
            "conv2d",
            format!("input must be 4-D, got {:?}", x.shape),
        ));
    }
    if wt.shape.len() != 4 {
        return Err(Error::invalid(
            "conv2d",
            format!("weight must be 4-D, got {:?}", wt.shape),
        ));
    }
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (oc, wc, kh, kw) = (wt.shape[0], wt.shape[1], wt.shape[2], wt.shape[3]);
    if c != wc {
        return Err(Error::shape_mismatch("conv2d", x.shape, wt.shape));
    }
    let oh = conv2d_output_extent(h, kh, stride, padding)?;
    let ow = conv2d_output_extent(w, kw, stride, padding)?;
    Ok(Geometry {
        n,
        c,
        h,
        w,
        oc,
        kh,
        kw,
        oh,
        ow,
        stride,
        padding,
    })
}

fn conv_forward<E: Element>(x: &[E], wt: &[E], bias: Option<&[E]>, g: &Geometry) -> Vec<E> {
    let mut out = vec![E::zero(); g.n * g.oc * g.oh * g.ow];
    let in_plane = g.h * g.w;
    let k_plane = g.kh * g.kw;
    for n in 0..g.n {
        let x_img = &x[n * g.c * in_plane..(n + 1) * g.c * in_plane];
        for o in 0..g.oc {
            let w_oc = &wt[o * g.c * k_plane..(o + 1) * g.c * k_plane];
            let b = bias.map(|b| b[o]).unwrap_or_else(E::zero);
            for i in 0..g.oh {
                for j in 0..g.ow {
                    let mut acc = E::zero();
                    for c in 0..g.c {
                        let x_ch = &x_img[c * in_plane..(c + 1) * in_plane];
                        let w_ch = &w_oc[c * k_plane..(c + 1) * k_plane];
                        for u in 0..g.kh {
                            let row = (i * g.stride + u) as isize - g.padding as isize;
                            if row < 0 || row >= g.h as isize {
                                continue;
                            }
                            for v in 0..g.kw {
                                let col = (j * g.stride + v) as isize - g.padding as isize;
                                if col < 0 || col >= g.w as isize {
                                    continue;
                                }
                                acc = acc
                                    + x_ch[row as usize * g.w + col as usize] * w_ch[u * g.kw + v];
                            }
                        }
                    }
                    out[((n * g.oc + o) * g.oh + i) * g.ow + j] = acc + b;
                }
            }
        }
    }
    out
}

fn conv_backward<E: Element>(
    upstream: &[E],
    x: &[E],
    wt: &[E],
    g: &Geometry,
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> (Option<Vec<E>>, Option<Vec<E>>, Option<Vec<E>>) {
    let in_plane = g.h * g.w;
    let k_plane = g.kh * g.kw;
    let mut dx = if need_dx {
        Some(vec![E::zero(); x.len()])
    } else {
        None
    };
    let mut dw = if need_dw {
        Some(vec![E::zero(); wt.len()])
    } else {
        None
    };
    let mut db = if need_db {
        Some(vec![E::zero(); g.oc])
    } else {
        None
    };

    for n in 0..g.n {
        for o in 0..g.oc {
            for i in 0..g.oh {
                for j in 0..g.ow {
                    let u_val = upstream[((n * g.oc + o) * g.oh + i) * g.ow + j];
                    if let Some(db) = db.as_mut() {
                        db[o] = db[o] + u_val;
                    }
                    for c in 0..g.c {
                        for u in 0..g.kh {
                            let row = (i * g.stride + u) as isize - g.padding as isize;
                            if row < 0 || row >= g.h as isize {
                                continue;
                            }
                            for v in 0..g.kw {
                                let col = (j * g.stride + v) as isize - g.padding as isize;
                                if col < 0 || col >= g.w as isize {
                                    continue;
                                }
                                let x_idx =
                                    (n * g.c + c) * in_plane + row as usize * g.w + col as usize;
                                let w_idx = (o * g.c + c) * k_plane + u * g.kw + v;
                                if let Some(dx) = dx.as_mut() {
                                    dx[x_idx] = dx[x_idx] + u_val * wt[w_idx];
                                }
                                if let Some(dw) = dw.as_mut() {
                                    dw[w_idx] = dw[w_idx] + u_val * x[x_idx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// 2-D cross-correlation of `x` `[n, c, h, w]` with `p.weight`, producing
/// `[n, out_ch, h', w']` where `h' = (h + 2·padding − kh)/stride + 1`.
pub fn conv2d<E: Element>(
    graph: &Graph<E>,
    x: &Tensor<E>,
    p: &Conv2dParams<E>,
) -> Result<Tensor<E>> {
    let stride = p.stride;
    let padding = p.padding;
    match &p.bias {
        Some(bias) => graph.forward_op(
            "conv2d",
            &[x, &p.weight, bias],
            move |ins| {
                let geo = geometry(&ins[0], &ins[1], stride, padding)?;
                if ins[2].shape != [geo.oc] {
                    return Err(Error::shape_mismatch(
                        "conv2d(bias)",
                        ins[2].shape,
                        &[geo.oc],
                    ));
                }
                let out = conv_forward(ins[0].data, ins[1].data, Some(ins[2].data), &geo);
                Ok((vec![geo.n, geo.oc, geo.oh, geo.ow], out))
            },
            move |args| {
                let geo = geometry(&args.inputs[0], &args.inputs[1], stride, padding)
                    .expect("geometry revalidated in backward");
                let (dx, dw, db) = conv_backward(
                    args.upstream,
                    args.inputs[0].data,
                    args.inputs[1].data,
                    &geo,
                    args.needs[0],
                    args.needs[1],
                    args.needs[2],
                );
                vec![dx, dw, db]
            },
        ),
        None => graph.forward_op(
            "conv2d",
            &[x, &p.weight],
            move |ins| {
                let geo = geometry(&ins[0], &ins[1], stride, padding)?;
                let out = conv_forward(ins[0].data, ins[1].data, None, &geo);
                Ok((vec![geo.n, geo.oc, geo.oh, geo.ow], out))
            },
            move |args| {
                let geo = geometry(&args.inputs[0], &args.inputs[1], stride, padding)
                    .expect("geometry revalidated in backward");
                let (dx, dw, _) = conv_backward(
                    args.upstream,
                    args.inputs[0].data,
                    args.inputs[1].data,
                    &geo,
                    args.needs[0],
                    args.needs[1],
                    false,
                );
                vec![dx, dw]
            },
        ),
    }
}
