use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor, Var};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

fn broadcast_shape(op: &str, a: Shape, b: Shape) -> Result<Shape> {
    let mut out = [0; 4];
    for i in 0..4 {
        let (x, y) = (a.0[i], b.0[i]);
        out[i] = if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            return Err(Error::dim(format!("{op}: cannot broadcast {a} with {b}")));
        };
    }
    Ok(Shape(out))
}

/// Strides of `s` viewed inside `out`, with zero stride on broadcast axes.
fn bstrides(s: Shape, out: Shape) -> [usize; 4] {
    let [_, c, h, w] = s.0;
    let dense = [c * h * w, h * w, w, 1];
    let mut st = [0; 4];
    for i in 0..4 {
        st[i] = if s.0[i] == out.0[i] { dense[i] } else { 0 };
    }
    st
}

fn for_each_index(out: Shape, a: Shape, b: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let sa = bstrides(a, out);
    let sb = bstrides(b, out);
    let [n, c, h, w] = out.0;
    let mut o = 0;
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..w {
                    f(o, ba + i3 * sa[3], bb + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

/// Sums `grad` (shaped like the broadcast output) down to `target`.
pub(crate) fn reduce_to<T: Float>(grad: &Tensor<T>, target: Shape) -> Tensor<T> {
    if grad.shape() == target {
        return grad.clone();
    }
    let mut out = Tensor::zeros(target);
    let g = grad.data();
    let o = out.data_mut();
    for_each_index(grad.shape(), grad.shape(), target, |i, _, t| o[t] += g[i]);
    out
}

fn binary<'t, T: Float>(kind: Binary, a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    let name = match kind {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
    };
    let (sa, sb) = (a.shape(), b.shape());
    let out_shape = broadcast_shape(name, sa, sb)?;
    let (av, bv) = (a.value(), b.value());
    let value = if sa == sb {
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        Tensor::from_vec(out_shape, data)?
    } else {
        let mut out = Tensor::zeros(out_shape);
        let (ad, bd) = (av.data(), bv.data());
        let od = out.data_mut();
        for_each_index(out_shape, sa, sb, |o, i, j| {
            od[o] = match kind {
                Binary::Add => ad[i] + bd[j],
                Binary::Sub => ad[i] - bd[j],
                Binary::Mul => ad[i] * bd[j],
            }
        });
        out
    };

    let (ar, br) = (a.value_rc(), b.value_rc());
    a.tape().record(
        name,
        value,
        &[a, b],
        Box::new(move |g, need| {
            let ga = need[0].then(|| {
                let full = match kind {
                    Binary::Add | Binary::Sub => g.clone(),
                    Binary::Mul => mul_bcast(g, &br),
                };
                reduce_to(&full, sa)
            });
            let gb = need[1].then(|| {
                let full = match kind {
                    Binary::Add => g.clone(),
                    Binary::Sub => g.map(|v| -v),
                    Binary::Mul => mul_bcast(g, &ar),
                };
                reduce_to(&full, sb)
            });
            vec![ga, gb]
        }),
    )
}

/// `g * other` where `other` broadcasts into `g`'s shape.
fn mul_bcast<T: Float>(g: &Tensor<T>, other: &Tensor<T>) -> Tensor<T> {
    let shape = g.shape();
    if other.shape() == shape {
        let data = g.data().iter().zip(other.data()).map(|(&x, &y)| x * y).collect();
        return Tensor::from_vec(shape, data).unwrap();
    }
    let mut out = Tensor::zeros(shape);
    let (gd, od_in) = (g.data(), other.data());
    let od = out.data_mut();
    for_each_index(shape, shape, other.shape(), |o, i, j| od[o] = gd[i] * od_in[j]);
    out
}

/// Elementwise sum with broadcasting over size-1 axes.
pub fn add<'t, T: Float>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    binary(Binary::Add, a, b)
}

pub fn sub<'t, T: Float>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    binary(Binary::Sub, a, b)
}

/// Elementwise (Hadamard) product with broadcasting over size-1 axes.
pub fn mul<'t, T: Float>(a: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
    binary(Binary::Mul, a, b)
}

pub fn scale<'t, T: Float>(x: &Var<'t, T>, k: T) -> Result<Var<'t, T>> {
    x.tape().record(
        "scale",
        x.value().map(|v| v * k),
        &[x],
        Box::new(move |g, _| vec![Some(g.map(|v| v * k))]),
    )
}

pub fn sum<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    x.tape().record(
        "sum",
        Tensor::scalar(x.value().sum()),
        &[x],
        Box::new(move |g, _| vec![Some(Tensor::full(shape, g.data()[0]))]),
    )
}

pub fn mean<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let inv = T::one() / T::from_usize(shape.numel()).unwrap();
    x.tape().record(
        "mean",
        Tensor::scalar(x.value().sum() * inv),
        &[x],
        Box::new(move |g, _| vec![Some(Tensor::full(shape, g.data()[0] * inv))]),
    )
}
