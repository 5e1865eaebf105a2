use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor, Var};

/// Symmetric spatial padding applied by a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero(usize),
    Reflect(usize),
}

impl Padding {
    /// Zero padding that preserves spatial size for an odd kernel.
    pub fn same(k: usize) -> Self {
        Padding::Zero(k / 2)
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    groups: usize,
}

impl Geom {
    fn new(x: Shape, wt: Shape, stride: usize, pad: usize, groups: usize) -> Result<Self> {
        let [n, ci, h, w] = x.0;
        let [co, cig, kh, kw] = wt.0;
        if stride == 0 {
            return Err(Error::dim("conv: stride must be positive"));
        }
        if groups == 0 || ci % groups != 0 || co % groups != 0 || cig * groups != ci {
            return Err(Error::dim(format!(
                "conv: weight {wt} incompatible with input {x} and {groups} group(s)"
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::dim(format!(
                "conv: kernel {kh}x{kw} larger than padded input {x}"
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(Geom {
            n,
            ci,
            h,
            w,
            co,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
            groups,
        })
    }

    fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.co, self.oh, self.ow)
    }

    fn cig(&self) -> usize {
        self.ci / self.groups
    }

    fn cog(&self) -> usize {
        self.co / self.groups
    }

    /// Output index range along one axis for kernel tap `k`.
    fn range(&self, k: usize, input: usize, output: usize) -> (usize, usize) {
        let (s, p, k) = (self.stride as isize, self.pad as isize, k as isize);
        let lo = if p > k { (p - k + s - 1) / s } else { 0 };
        let hi = (input as isize - 1 + p - k).div_euclid(s) + 1;
        let hi = hi.clamp(0, output as isize);
        (lo as usize, (lo as isize).max(hi) as usize)
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Visits every (input channel, output channel, tap) triple.
    fn taps(&self, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let (cig, cog) = (self.cig(), self.cog());
        for o in 0..self.co {
            let grp = o / cog;
            for j in 0..cig {
                let i = grp * cig + j;
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let widx = ((o * cig + j) * self.kh + ky) * self.kw + kx;
                        f(o, i, ky, kx, widx);
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Float>(a: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot<T: Float>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

fn forward<T: Float>(g: &Geom, x: &[T], wt: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![T::zero(); g.n * g.co * op];
    for n in 0..g.n {
        let xb = &x[n * g.ci * ip..(n + 1) * g.ci * ip];
        let ob = &mut out[n * g.co * op..(n + 1) * g.co * op];
        if let Some(b) = bias {
            for (o, &bv) in b.iter().enumerate() {
                ob[o * op..(o + 1) * op].iter_mut().for_each(|v| *v = bv);
            }
        }
        g.taps(|o, i, ky, kx, widx| {
            let wv = wt[widx];
            if wv == T::zero() {
                return;
            }
            let xp = &xb[i * ip..(i + 1) * ip];
            let opl = &mut ob[o * op..(o + 1) * op];
            if g.is_pointwise() {
                axpy(wv, xp, opl);
                return;
            }
            let (y0, y1) = g.range(ky, g.h, g.oh);
            let (x0, x1) = g.range(kx, g.w, g.ow);
            for oy in y0..y1 {
                let iy = oy * g.stride + ky - g.pad;
                let orow = &mut opl[oy * g.ow..(oy + 1) * g.ow];
                let irow = &xp[iy * g.w..(iy + 1) * g.w];
                if g.stride == 1 {
                    let ix0 = x0 + kx - g.pad;
                    axpy(wv, &irow[ix0..ix0 + (x1 - x0)], &mut orow[x0..x1]);
                } else {
                    for ox in x0..x1 {
                        orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
                    }
                }
            }
        });
    }
    out
}

fn backward_input<T: Float>(g: &Geom, grad: &[T], wt: &[T]) -> Vec<T> {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut dx = vec![T::zero(); g.n * g.ci * ip];
    for n in 0..g.n {
        let gb = &grad[n * g.co * op..(n + 1) * g.co * op];
        let db = &mut dx[n * g.ci * ip..(n + 1) * g.ci * ip];
        g.taps(|o, i, ky, kx, widx| {
            let wv = wt[widx];
            if wv == T::zero() {
                return;
            }
            let gp = &gb[o * op..(o + 1) * op];
            let dp = &mut db[i * ip..(i + 1) * ip];
            if g.is_pointwise() {
                axpy(wv, gp, dp);
                return;
            }
            let (y0, y1) = g.range(ky, g.h, g.oh);
            let (x0, x1) = g.range(kx, g.w, g.ow);
            for oy in y0..y1 {
                let iy = oy * g.stride + ky - g.pad;
                let grow = &gp[oy * g.ow..(oy + 1) * g.ow];
                let drow = &mut dp[iy * g.w..(iy + 1) * g.w];
                if g.stride == 1 {
                    let ix0 = x0 + kx - g.pad;
                    axpy(wv, &grow[x0..x1], &mut drow[ix0..ix0 + (x1 - x0)]);
                } else {
                    for ox in x0..x1 {
                        drow[ox * g.stride + kx - g.pad] += wv * grow[ox];
                    }
                }
            }
        });
    }
    dx
}

fn backward_weight<T: Float>(g: &Geom, grad: &[T], x: &[T]) -> Vec<T> {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut dw = vec![T::zero(); g.co * g.cig() * g.kh * g.kw];
    g.taps(|o, i, ky, kx, widx| {
        let mut acc = T::zero();
        for n in 0..g.n {
            let gp = &grad[(n * g.co + o) * op..(n * g.co + o + 1) * op];
            let xp = &x[(n * g.ci + i) * ip..(n * g.ci + i + 1) * ip];
            if g.is_pointwise() {
                acc += dot(gp, xp);
                continue;
            }
            let (y0, y1) = g.range(ky, g.h, g.oh);
            let (x0, x1) = g.range(kx, g.w, g.ow);
            for oy in y0..y1 {
                let iy = oy * g.stride + ky - g.pad;
                let grow = &gp[oy * g.ow..(oy + 1) * g.ow];
                let irow = &xp[iy * g.w..(iy + 1) * g.w];
                if g.stride == 1 {
                    let ix0 = x0 + kx - g.pad;
                    acc += dot(&grow[x0..x1], &irow[ix0..ix0 + (x1 - x0)]);
                } else {
                    for ox in x0..x1 {
                        acc += grow[ox] * irow[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
        dw[widx] = acc;
    });
    dw
}

fn backward_bias<T: Float>(g: &Geom, grad: &[T]) -> Vec<T> {
    let op = g.oh * g.ow;
    (0..g.co)
        .map(|o| {
            (0..g.n)
                .map(|n| grad[(n * g.co + o) * op..(n * g.co + o + 1) * op].iter().copied().sum::<T>())
                .sum()
        })
        .collect()
}

fn grouped<'t, T: Float>(
    name: &str,
    x: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    stride: usize,
    padding: Padding,
    groups: usize,
) -> Result<Var<'t, T>> {
    let (x, pad) = match padding {
        Padding::Zero(p) => (x.clone(), p),
        Padding::Reflect(p) => (self::pad(x, [p, p, p, p], PadMode::Reflect)?, 0),
    };
    let geom = Geom::new(x.shape(), weight.shape(), stride, pad, groups)?;
    if let Some(b) = bias {
        if b.shape().numel() != geom.co {
            return Err(Error::dim(format!(
                "{name}: bias {} does not match {} output channels",
                b.shape(),
                geom.co
            )));
        }
    }
    let value = Tensor::from_vec(
        geom.out_shape(),
        forward(
            &geom,
            x.value().data(),
            weight.value().data(),
            bias.map(|b| b.value().data()),
        ),
    )?;
    let (xr, wr) = (x.value_rc(), weight.value_rc());
    let (xs, ws) = (x.shape(), weight.shape());
    let bs = bias.map(|b| b.shape());
    let mut parents = vec![&x, weight];
    if let Some(b) = bias {
        parents.push(b);
    }
    x.tape().record(
        name,
        value,
        &parents,
        Box::new(move |g, need| {
            let gd = g.data();
            let mut out = vec![
                need[0].then(|| Tensor::from_vec(xs, backward_input(&geom, gd, wr.data())).unwrap()),
                need[1].then(|| Tensor::from_vec(ws, backward_weight(&geom, gd, xr.data())).unwrap()),
            ];
            if let Some(bs) = bs {
                out.push(need[2].then(|| Tensor::from_vec(bs, backward_bias(&geom, gd)).unwrap()));
            }
            out
        }),
    )
}

/// Dense 2D convolution. `weight` is `(co, ci, kh, kw)`; `bias` has `co` elements.
pub fn conv2d<'t, T: Float>(
    x: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    stride: usize,
    padding: Padding,
) -> Result<Var<'t, T>> {
    grouped("conv2d", x, weight, bias, stride, padding, 1)
}

/// Depth-wise convolution, `weight` is `(c, 1, k, k)`.
pub fn dwconv2d<'t, T: Float>(
    x: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    padding: Padding,
) -> Result<Var<'t, T>> {
    let c = x.shape().c();
    let ws = weight.shape();
    if ws.n() != c || ws.c() != 1 {
        return Err(Error::dim(format!(
            "dwconv2d: weight {ws} does not match {c} input channels"
        )));
    }
    grouped("dwconv2d", x, weight, bias, 1, padding, c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    /// Mirror without repeating the edge sample.
    Reflect,
}

/// Source index of padded coordinate `i` (relative to the unpadded origin).
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Spatial padding by `[top, bottom, left, right]`.
pub fn pad<'t, T: Float>(x: &Var<'t, T>, amount: [usize; 4], mode: PadMode) -> Result<Var<'t, T>> {
    let [top, bottom, left, right] = amount;
    let s = x.shape();
    let (h, w) = (s.h(), s.w());
    if h == 0 || w == 0 {
        return Err(Error::dim(format!("pad: empty input {s}")));
    }
    let out = Shape::new(s.n(), s.c(), h + top + bottom, w + left + right);
    // source index per output element, or None for zero fill
    let map_axis = |len: usize, before: usize, n: usize| -> Vec<Option<usize>> {
        (0..len)
            .map(|i| {
                let rel = i as isize - before as isize;
                match mode {
                    PadMode::Reflect => Some(reflect_index(rel, n)),
                    PadMode::Zero => (rel >= 0 && (rel as usize) < n).then_some(rel as usize),
                }
            })
            .collect()
    };
    let ys = map_axis(out.h(), top, h);
    let xs = map_axis(out.w(), left, w);
    let planes = s.n() * s.c();
    let mut value = Tensor::zeros(out);
    {
        let src = x.value().data();
        let dst = value.data_mut();
        for p in 0..planes {
            for (oy, sy) in ys.iter().enumerate() {
                let Some(sy) = sy else { continue };
                for (ox, sx) in xs.iter().enumerate() {
                    if let Some(sx) = sx {
                        dst[(p * out.h() + oy) * out.w() + ox] = src[(p * h + sy) * w + sx];
                    }
                }
            }
        }
    }
    x.tape().record(
        "pad",
        value,
        &[x],
        Box::new(move |g, _| {
            let mut dx = Tensor::zeros(s);
            let gd = g.data();
            let dd = dx.data_mut();
            for p in 0..planes {
                for (oy, sy) in ys.iter().enumerate() {
                    let Some(sy) = sy else { continue };
                    for (ox, sx) in xs.iter().enumerate() {
                        if let Some(sx) = sx {
                            dd[(p * h + sy) * w + sx] += gd[(p * out.h() + oy) * out.w() + ox];
                        }
                    }
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Spatial window `[top, top + h) x [left, left + w)`.
pub fn crop<'t, T: Float>(
    x: &Var<'t, T>,
    top: usize,
    left: usize,
    h: usize,
    w: usize,
) -> Result<Var<'t, T>> {
    let s = x.shape();
    if top + h > s.h() || left + w > s.w() {
        return Err(Error::dim(format!(
            "crop: window {h}x{w} at ({top}, {left}) exceeds {s}"
        )));
    }
    let out = Shape::new(s.n(), s.c(), h, w);
    let planes = s.n() * s.c();
    let mut data = Vec::with_capacity(out.numel());
    let src = x.value().data();
    for p in 0..planes {
        for y in 0..h {
            let start = (p * s.h() + top + y) * s.w() + left;
            data.extend_from_slice(&src[start..start + w]);
        }
    }
    x.tape().record(
        "crop",
        Tensor::from_vec(out, data)?,
        &[x],
        Box::new(move |g, _| {
            let mut dx = Tensor::zeros(s);
            let gd = g.data();
            let dd = dx.data_mut();
            for p in 0..planes {
                for y in 0..h {
                    let start = (p * s.h() + top + y) * s.w() + left;
                    dd[start..start + w].copy_from_slice(&gd[(p * h + y) * w..(p * h + y + 1) * w]);
                }
            }
            vec![Some(dx)]
        }),
    )
}
