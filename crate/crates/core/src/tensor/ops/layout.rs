use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor, Var};

/// `out[i] = x[index[i]]`; the backward pass scatters back.
fn gather<'t, T: Float>(
    name: &str,
    x: &Var<'t, T>,
    out: Shape,
    index: Vec<usize>,
) -> Result<Var<'t, T>> {
    debug_assert_eq!(index.len(), out.numel());
    let src = x.value().data();
    let data = index.iter().map(|&i| src[i]).collect();
    let in_shape = x.shape();
    let index = Rc::new(index);
    x.tape().record(
        name,
        Tensor::from_vec(out, data)?,
        &[x],
        Box::new(move |g, _| {
            let mut dx = Tensor::zeros(in_shape);
            let d = dx.data_mut();
            for (&i, &gv) in index.iter().zip(g.data()) {
                d[i] += gv;
            }
            vec![Some(dx)]
        }),
    )
}

/// `(n, c, h, w) -> (n, c*r*r, h/r, w/r)` with
/// `out[n][c*r*r + dy*r + dx][y][x] = in[n][c][y*r + dy][x*r + dx]`.
pub fn pixel_unshuffle<'t, T: Float>(x: &Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let [n, c, h, w] = x.shape().0;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::dim(format!(
            "pixel_unshuffle: spatial size {h}x{w} not divisible by {r}"
        )));
    }
    let (oh, ow) = (h / r, w / r);
    let out = Shape::new(n, c * r * r, oh, ow);
    let mut index = Vec::with_capacity(out.numel());
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    for y in 0..oh {
                        for xx in 0..ow {
                            index.push(((b * c + ch) * h + y * r + dy) * w + xx * r + dx);
                        }
                    }
                }
            }
        }
    }
    gather("pixel_unshuffle", x, out, index)
}

/// Exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<'t, T: Float>(x: &Var<'t, T>, r: usize) -> Result<Var<'t, T>> {
    let [n, cr, h, w] = x.shape().0;
    if r == 0 || cr % (r * r) != 0 {
        return Err(Error::dim(format!(
            "pixel_shuffle: {cr} channels not divisible by {r}^2"
        )));
    }
    let c = cr / (r * r);
    let out = Shape::new(n, c, h * r, w * r);
    let mut index = Vec::with_capacity(out.numel());
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..h * r {
                for ox in 0..w * r {
                    let (y, dy, xx, dx) = (oy / r, oy % r, ox / r, ox % r);
                    let ic = ch * r * r + dy * r + dx;
                    index.push(((b * cr + ic) * h + y) * w + xx);
                }
            }
        }
    }
    gather("pixel_shuffle", x, out, index)
}

/// Reorders every `(h, w)` plane: `out[.., j] = in[.., order[j]]`, reshaped to
/// `(out_h, out_w)`.
pub fn permute_spatial<'t, T: Float>(
    x: &Var<'t, T>,
    order: &[usize],
    out_h: usize,
    out_w: usize,
) -> Result<Var<'t, T>> {
    let s = x.shape();
    let p = s.plane();
    if order.len() != out_h * out_w || order.iter().any(|&i| i >= p) {
        return Err(Error::dim(format!(
            "permute_spatial: order of length {} invalid for {s} -> {out_h}x{out_w}",
            order.len()
        )));
    }
    let planes = s.n() * s.c();
    let mut index = Vec::with_capacity(planes * order.len());
    for pl in 0..planes {
        index.extend(order.iter().map(|&i| pl * p + i));
    }
    gather(
        "permute_spatial",
        x,
        Shape::new(s.n(), s.c(), out_h, out_w),
        index,
    )
}

pub fn concat_channels<'t, T: Float>(xs: &[&Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::dim("concat_channels: no inputs"))?
        .shape();
    let (n, h, w) = (first.n(), first.h(), first.w());
    if let Some(bad) = xs
        .iter()
        .find(|v| v.shape().n() != n || v.shape().h() != h || v.shape().w() != w)
    {
        return Err(Error::dim(format!(
            "concat_channels: {} incompatible with {first}",
            bad.shape()
        )));
    }
    let widths: Vec<usize> = xs.iter().map(|v| v.shape().c()).collect();
    let total: usize = widths.iter().sum();
    let p = h * w;
    let mut data = Vec::with_capacity(n * total * p);
    for b in 0..n {
        for (v, &c) in xs.iter().zip(&widths) {
            data.extend_from_slice(&v.value().data()[b * c * p..(b + 1) * c * p]);
        }
    }
    xs[0].tape().record(
        "concat_channels",
        Tensor::from_vec(Shape::new(n, total, h, w), data)?,
        xs,
        Box::new(move |g, need| {
            let gd = g.data();
            let mut offset = 0;
            widths
                .iter()
                .zip(need)
                .map(|(&c, &needed)| {
                    let start = offset;
                    offset += c;
                    needed.then(|| {
                        let mut d = Vec::with_capacity(n * c * p);
                        for b in 0..n {
                            let base = (b * total + start) * p;
                            d.extend_from_slice(&gd[base..base + c * p]);
                        }
                        Tensor::from_vec(Shape::new(n, c, h, w), d).unwrap()
                    })
                })
                .collect()
        }),
    )
}

/// Channels `[start, start + len)`.
pub fn narrow_channels<'t, T: Float>(x: &Var<'t, T>, start: usize, len: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    let [n, c, h, w] = s.0;
    if start + len > c {
        return Err(Error::dim(format!(
            "narrow_channels: [{start}, {}) out of range for {s}",
            start + len
        )));
    }
    let p = h * w;
    let mut data = Vec::with_capacity(n * len * p);
    for b in 0..n {
        let base = (b * c + start) * p;
        data.extend_from_slice(&x.value().data()[base..base + len * p]);
    }
    x.tape().record(
        "narrow_channels",
        Tensor::from_vec(Shape::new(n, len, h, w), data)?,
        &[x],
        Box::new(move |g, _| {
            let mut dx = Tensor::zeros(s);
            let dd = dx.data_mut();
            for b in 0..n {
                let base = (b * c + start) * p;
                dd[base..base + len * p].copy_from_slice(&g.data()[b * len * p..(b + 1) * len * p]);
            }
            vec![Some(dx)]
        }),
    )
}

/// Per-channel spatial mean, `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn global_avg_pool<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let s = x.shape();
    let p = s.plane();
    if p == 0 {
        return Err(Error::dim(format!("global_avg_pool: empty planes in {s}")));
    }
    let inv = T::one() / T::from_usize(p).unwrap();
    let data = x
        .value()
        .data()
        .chunks(p)
        .map(|pl| pl.iter().copied().sum::<T>() * inv)
        .collect();
    x.tape().record(
        "global_avg_pool",
        Tensor::from_vec(Shape::new(s.n(), s.c(), 1, 1), data)?,
        &[x],
        Box::new(move |g, _| {
            let mut d = Vec::with_capacity(s.numel());
            for &gv in g.data() {
                d.extend(std::iter::repeat_n(gv * inv, p));
            }
            vec![Some(Tensor::from_vec(s, d).unwrap())]
        }),
    )
}
