//! Raw compute kernels over flat slices.
//!
//! Work is split over independent output planes with rayon. Each output
//! element is reduced in a fixed order inside one task, so results do not
//! depend on the thread count.

use rayon::prelude::*;

use super::{Float, Shape};
use crate::error::{Error, Result};

pub(crate) fn conv_out_shape(xs: Shape, ws: Shape, stride: usize, pad: usize) -> Result<Shape> {
    if ws.c != xs.c {
        return Err(Error::dim(format!(
            "conv2d: input has {} channels, kernel expects {}",
            xs.c, ws.c
        )));
    }
    if ws.h != ws.w || ws.h.is_multiple_of(2) {
        return Err(Error::dim(format!(
            "conv2d: kernel must be square with odd size, got {}x{}",
            ws.h, ws.w
        )));
    }
    if stride == 0 {
        return Err(Error::dim("conv2d: stride must be positive"));
    }
    let k = ws.h;
    if xs.h + 2 * pad < k || xs.w + 2 * pad < k {
        return Err(Error::dim(format!(
            "conv2d: kernel {k} larger than padded input {}x{}",
            xs.h + 2 * pad,
            xs.w + 2 * pad
        )));
    }
    let oh = (xs.h + 2 * pad - k) / stride + 1;
    let ow = (xs.w + 2 * pad - k) / stride + 1;
    Ok(Shape::new(xs.n, ws.n, oh, ow))
}

/// Range of output columns `ox` whose input column `ox*stride + kx - pad`
/// falls inside `[0, width)`.
#[inline]
fn valid_range(
    out: usize,
    width: usize,
    stride: usize,
    k_off: usize,
    pad: usize,
) -> (usize, usize) {
    // ix = ox*stride + k_off - pad
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    let hi = if width + pad > k_off {
        ((width - 1 + pad - k_off) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_forward<T: Float>(
    x: &[T],
    xs: Shape,
    w: &[T],
    ws: Shape,
    b: Option<&[T]>,
    stride: usize,
    pad: usize,
    ys: Shape,
) -> Vec<T> {
    let k = ws.h;
    let (oh, ow) = (ys.h, ys.w);
    let mut out = vec![T::zero(); ys.numel()];
    if ys.numel() == 0 {
        return out;
    }
    out.par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane, o)| {
            let n = plane / ys.c;
            let co = plane % ys.c;
            if let Some(b) = b {
                o.iter_mut().for_each(|v| *v = b[co]);
            }
            for ci in 0..xs.c {
                let xp = &x[(n * xs.c + ci) * xs.plane()..][..xs.plane()];
                let wk = &w[(co * ws.c + ci) * k * k..][..k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi) = valid_range(ow, xs.w, stride, kx, pad);
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            let xr = &xp[iy as usize * xs.w..][..xs.w];
                            let or = &mut o[oy * ow..][..ow];
                            if stride == 1 {
                                let shift = kx as isize - pad as isize;
                                let xs_row = &xr[(lo as isize + shift) as usize
                                    ..(hi as isize + shift) as usize];
                                for (ov, &xv) in or[lo..hi].iter_mut().zip(xs_row) {
                                    *ov += wv * xv;
                                }
                            } else {
                                for ox in lo..hi {
                                    or[ox] += wv * xr[ox * stride + kx - pad];
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Gradient of a convolution with respect to its input.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_input<T: Float>(
    dy: &[T],
    ys: Shape,
    w: &[T],
    ws: Shape,
    xs: Shape,
    stride: usize,
    pad: usize,
) -> Vec<T> {
    let k = ws.h;
    let (oh, ow) = (ys.h, ys.w);
    let mut dx = vec![T::zero(); xs.numel()];
    dx.par_chunks_mut(xs.plane())
        .enumerate()
        .for_each(|(plane, d)| {
            let n = plane / xs.c;
            let ci = plane % xs.c;
            for co in 0..ys.c {
                let gp = &dy[(n * ys.c + co) * oh * ow..][..oh * ow];
                let wk = &w[(co * ws.c + ci) * k * k..][..k * k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (lo, hi) = valid_range(ow, xs.w, stride, kx, pad);
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            let dr = &mut d[iy as usize * xs.w..][..xs.w];
                            let gr = &gp[oy * ow..][..ow];
                            if stride == 1 {
                                let shift = kx as isize - pad as isize;
                                let dseg = &mut dr[(lo as isize + shift) as usize
                                    ..(hi as isize + shift) as usize];
                                for (dv, &gv) in dseg.iter_mut().zip(&gr[lo..hi]) {
                                    *dv += wv * gv;
                                }
                            } else {
                                for ox in lo..hi {
                                    dr[ox * stride + kx - pad] += wv * gr[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
    dx
}

/// Gradients of a convolution with respect to weight and bias.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward_params<T: Float>(
    dy: &[T],
    ys: Shape,
    x: &[T],
    xs: Shape,
    ws: Shape,
    stride: usize,
    pad: usize,
) -> (Vec<T>, Vec<T>) {
    let k = ws.h;
    let (oh, ow) = (ys.h, ys.w);
    let mut dw = vec![T::zero(); ws.numel()];
    dw.par_chunks_mut(ws.c * k * k)
        .enumerate()
        .for_each(|(co, dwk)| {
            for ci in 0..xs.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let (lo, hi) = valid_range(ow, xs.w, stride, kx, pad);
                        let mut acc = T::zero();
                        for n in 0..xs.n {
                            let gp = &dy[(n * ys.c + co) * oh * ow..][..oh * ow];
                            let xp = &x[(n * xs.c + ci) * xs.plane()..][..xs.plane()];
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= xs.h as isize {
                                    continue;
                                }
                                let xr = &xp[iy as usize * xs.w..][..xs.w];
                                let gr = &gp[oy * ow..][..ow];
                                if stride == 1 {
                                    let shift = kx as isize - pad as isize;
                                    let xseg = &xr[(lo as isize + shift) as usize
                                        ..(hi as isize + shift) as usize];
                                    for (&gv, &xv) in gr[lo..hi].iter().zip(xseg) {
                                        acc += gv * xv;
                                    }
                                } else {
                                    for ox in lo..hi {
                                        acc += gr[ox] * xr[ox * stride + kx - pad];
                                    }
                                }
                            }
                        }
                        dwk[(ci * k + ky) * k + kx] = acc;
                    }
                }
            }
        });
    let mut db = vec![T::zero(); ys.c];
    for (co, slot) in db.iter_mut().enumerate() {
        let mut acc = T::zero();
        for n in 0..ys.n {
            for &g in &dy[(n * ys.c + co) * oh * ow..][..oh * ow] {
                acc += g;
            }
        }
        *slot = acc;
    }
    (dw, db)
}

pub(crate) fn avg_pool2<T: Float>(x: &[T], xs: Shape) -> Vec<T> {
    let (oh, ow) = (xs.h / 2, xs.w / 2);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); xs.n * xs.c * oh * ow];
    for (p, o) in out.chunks_mut(oh * ow).enumerate() {
        let xp = &x[p * xs.plane()..][..xs.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                let i = 2 * oy * xs.w + 2 * ox;
                o[oy * ow + ox] = (xp[i] + xp[i + 1] + xp[i + xs.w] + xp[i + xs.w + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Float>(dy: &[T], xs: Shape) -> Vec<T> {
    let (oh, ow) = (xs.h / 2, xs.w / 2);
    let quarter = T::lit(0.25);
    let mut dx = vec![T::zero(); xs.numel()];
    for (p, d) in dx.chunks_mut(xs.plane()).enumerate() {
        let g = &dy[p * oh * ow..][..oh * ow];
        for iy in 0..xs.h {
            for ix in 0..xs.w {
                d[iy * xs.w + ix] = g[(iy / 2) * ow + ix / 2] * quarter;
            }
        }
    }
    dx
}

pub(crate) fn up_nearest2<T: Float>(x: &[T], xs: Shape) -> Vec<T> {
    let (oh, ow) = (xs.h * 2, xs.w * 2);
    let mut out = vec![T::zero(); xs.n * xs.c * oh * ow];
    for (p, o) in out.chunks_mut(oh * ow).enumerate() {
        let xp = &x[p * xs.plane()..][..xs.plane()];
        for oy in 0..oh {
            for ox in 0..ow {
                o[oy * ow + ox] = xp[(oy / 2) * xs.w + ox / 2];
            }
        }
    }
    out
}

pub(crate) fn up_nearest2_backward<T: Float>(dy: &[T], xs: Shape) -> Vec<T> {
    let ow = xs.w * 2;
    let mut dx = vec![T::zero(); xs.numel()];
    for (p, d) in dx.chunks_mut(xs.plane()).enumerate() {
        let g = &dy[p * 4 * xs.plane()..][..4 * xs.plane()];
        for iy in 0..xs.h {
            for ix in 0..xs.w {
                let i = 2 * iy * ow + 2 * ix;
                d[iy * xs.w + ix] = g[i] + g[i + 1] + g[i + ow] + g[i + ow + 1];
            }
        }
    }
    dx
}

/// `out[n, c, h*r + i, w*r + j] = in[n, c*r*r + i*r + j, h, w]`.
pub(crate) fn pixel_shuffle<T: Float>(x: &[T], xs: Shape, r: usize) -> Vec<T> {
    let c_out = xs.c / (r * r);
    let (oh, ow) = (xs.h * r, xs.w * r);
    let mut out = vec![T::zero(); xs.numel()];
    for n in 0..xs.n {
        for c in 0..c_out {
            for i in 0..r {
                for j in 0..r {
                    let src = &x[((n * xs.c) + c * r * r + i * r + j) * xs.plane()..][..xs.plane()];
                    let dst = &mut out[(n * c_out + c) * oh * ow..][..oh * ow];
                    for h in 0..xs.h {
                        for w in 0..xs.w {
                            dst[(h * r + i) * ow + w * r + j] = src[h * xs.w + w];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`pixel_shuffle`]; `ys` is the shape of the unshuffled result.
pub(crate) fn pixel_unshuffle<T: Float>(x: &[T], ys: Shape, r: usize) -> Vec<T> {
    let c_in = ys.c / (r * r);
    let (ih, iw) = (ys.h * r, ys.w * r);
    let mut out = vec![T::zero(); ys.numel()];
    for n in 0..ys.n {
        for c in 0..c_in {
            for i in 0..r {
                for j in 0..r {
                    let src = &x[(n * c_in + c) * ih * iw..][..ih * iw];
                    let dst =
                        &mut out[((n * ys.c) + c * r * r + i * r + j) * ys.plane()..][..ys.plane()];
                    for h in 0..ys.h {
                        for w in 0..ys.w {
                            dst[h * ys.w + w] = src[(h * r + i) * iw + w * r + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Concatenates along channels: `a` is `(n, ca, h, w)`, `b` is `(n, cb, h, w)`.
pub(crate) fn concat_channels<T: Float>(a: &[T], as_: Shape, b: &[T], bs: Shape) -> Vec<T> {
    let pa = as_.c * as_.plane();
    let pb = bs.c * bs.plane();
    let mut out = Vec::with_capacity(a.len() + b.len());
    for n in 0..as_.n {
        out.extend_from_slice(&a[n * pa..(n + 1) * pa]);
        out.extend_from_slice(&b[n * pb..(n + 1) * pb]);
    }
    out
}

pub(crate) fn split_channels<T: Float>(d: &[T], as_: Shape, bs: Shape) -> (Vec<T>, Vec<T>) {
    let pa = as_.c * as_.plane();
    let pb = bs.c * bs.plane();
    let mut da = Vec::with_capacity(as_.numel());
    let mut db = Vec::with_capacity(bs.numel());
    for n in 0..as_.n {
        let base = n * (pa + pb);
        da.extend_from_slice(&d[base..base + pa]);
        db.extend_from_slice(&d[base + pa..base + pa + pb]);
    }
    (da, db)
}
