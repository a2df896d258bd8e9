use rayon::prelude::*;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

/// Flat input offset of the maximum chosen for every pooled output.
#[derive(Clone, Debug)]
pub struct PoolIndices {
    input: Dims,
    argmax: Vec<usize>,
}

pub fn max_pool2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(max_pool2_with_indices(x)?.0)
}

/// 2x2 max pooling with stride 2. Ties go to the first element of the
/// window in row-major order.
pub fn max_pool2_with_indices<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let d = x.dims();
    if d.h % 2 != 0 || d.w % 2 != 0 {
        return Err(Error::shape(format!("max_pool2 needs even H and W, got {d}")));
    }
    let od = Dims {
        h: d.h / 2,
        w: d.w / 2,
        ..d
    };
    let mut out = vec![T::zero(); od.numel()];
    let mut argmax = vec![0usize; od.numel()];
    out.par_chunks_mut(od.plane())
        .zip(argmax.par_chunks_mut(od.plane()))
        .enumerate()
        .for_each(|(plane, (op, ap))| {
            let base = plane * d.plane();
            let xp = &x.data()[base..base + d.plane()];
            for y in 0..od.h {
                for xo in 0..od.w {
                    let mut best = 2 * y * d.w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (2 * y + dy) * d.w + 2 * xo + dx;
                        if xp[i] > xp[best] {
                            best = i;
                        }
                    }
                    op[y * od.w + xo] = xp[best];
                    ap[y * od.w + xo] = base + best;
                }
            }
        });
    Ok((Tensor::from_parts(od, out), PoolIndices { input: d, argmax }))
}

/// Routes each pooled gradient to the element that won its window.
pub fn max_pool2_backward<T: Element>(idx: &PoolIndices, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.numel() != idx.argmax.len() {
        return Err(Error::shape("max_pool2 grad does not match pooled output"));
    }
    let mut gx = vec![T::zero(); idx.input.numel()];
    for (&i, &g) in idx.argmax.iter().zip(grad_out.data()) {
        gx[i] = gx[i] + g;
    }
    Ok(Tensor::from_parts(idx.input, gx))
}

/// Nearest-neighbour x2 upsampling: each pixel fills a 2x2 block.
pub fn upsample2<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let d = x.dims();
    let od = Dims {
        h: 2 * d.h,
        w: 2 * d.w,
        ..d
    };
    let mut out = vec![T::zero(); od.numel()];
    out.par_chunks_mut(od.plane())
        .zip(x.data().par_chunks(d.plane()))
        .for_each(|(op, xp)| {
            for y in 0..od.h {
                let src = &xp[(y / 2) * d.w..(y / 2 + 1) * d.w];
                let row = &mut op[y * od.w..(y + 1) * od.w];
                for (xo, v) in row.iter_mut().enumerate() {
                    *v = src[xo / 2];
                }
            }
        });
    Tensor::from_parts(od, out)
}

/// Sums each 2x2 block of the upsampled gradient back into its source pixel.
pub fn upsample2_backward<T: Element>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let od = grad_out.dims();
    if od.h % 2 != 0 || od.w % 2 != 0 {
        return Err(Error::shape(format!("upsample2 grad has odd spatial dims {od}")));
    }
    let d = Dims {
        h: od.h / 2,
        w: od.w / 2,
        ..od
    };
    let mut gx = vec![T::zero(); d.numel()];
    gx.par_chunks_mut(d.plane())
        .zip(grad_out.data().par_chunks(od.plane()))
        .for_each(|(gp, op)| {
            for y in 0..d.h {
                for x in 0..d.w {
                    let i = 2 * y * od.w + 2 * x;
                    gp[y * d.w + x] = ((op[i] + op[i + 1]) + op[i + od.w]) + op[i + od.w + 1];
                }
            }
        });
    Ok(Tensor::from_parts(d, gx))
}

/// Concatenates along channels: `a`'s channels first, then `b`'s.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (da, db) = (a.dims(), b.dims());
    if (da.n, da.h, da.w) != (db.n, db.h, db.w) {
        return Err(Error::shape(format!("cannot concat {da} with {db} along channels")));
    }
    let od = Dims { c: da.c + db.c, ..da };
    let (la, lb) = (da.c * da.plane(), db.c * db.plane());
    let mut out = Vec::with_capacity(od.numel());
    for n in 0..da.n {
        out.extend_from_slice(&a.data()[n * la..(n + 1) * la]);
        out.extend_from_slice(&b.data()[n * lb..(n + 1) * lb]);
    }
    Ok(Tensor::from_parts(od, out))
}

/// Inverse of [`concat_channels`] for gradients: first `c_a` channels, rest.
pub fn split_channels<T: Element>(g: &Tensor<T>, c_a: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = g.dims();
    if c_a == 0 || c_a >= d.c {
        return Err(Error::shape(format!("cannot split {d} at channel {c_a}")));
    }
    let (da, db) = (Dims { c: c_a, ..d }, Dims { c: d.c - c_a, ..d });
    let (la, lb) = (da.c * d.plane(), db.c * d.plane());
    let mut a = Vec::with_capacity(da.numel());
    let mut b = Vec::with_capacity(db.numel());
    for chunk in g.data().chunks(la + lb) {
        a.extend_from_slice(&chunk[..la]);
        b.extend_from_slice(&chunk[la..]);
    }
    Ok((Tensor::from_parts(da, a), Tensor::from_parts(db, b)))
}
