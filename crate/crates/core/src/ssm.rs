//! Selective-scan state space kernel, the four-direction 2D scan built on it,
//! and the gated vision state space module that wraps the scan.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{join, uniform, Conv, LayerNorm};
use crate::tensor::ops::{self, Padding};
use crate::tensor::{Ctx, Float, ParamId, ParamStore, Shape, Tensor, Var};

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// Inverse of `softplus`, for placing the initial step size.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

struct ScanDims {
    d: usize,
    s: usize,
    l: usize,
}

fn as_f64<T: Float>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

fn to_tensor<T: Float>(shape: Shape, v: &[f64]) -> Tensor<T> {
    Tensor::from_vec(shape, v.iter().map(|&x| T::of(x)).collect()).unwrap()
}

/// `(n, N, 1, L)` to time-major `(n, L, N)` and back.
fn to_time_major(v: &[f64], n: usize, s: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for b in 0..n {
        for k in 0..s {
            for t in 0..l {
                out[(b * l + t) * s + k] = v[(b * s + k) * l + t];
            }
        }
    }
    out
}

fn from_time_major(v: &[f64], n: usize, s: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for b in 0..n {
        for k in 0..s {
            for t in 0..l {
                out[(b * s + k) * l + t] = v[(b * l + t) * s + k];
            }
        }
    }
    out
}

/// Runs the recurrence for one `(batch, channel)` row. `bm`/`cm` are
/// time-major. When `trace` is given it receives `h_t` and `exp(delta_t A)`
/// for every step, row-major `(L, N)` each.
#[allow(clippy::too_many_arguments)]
fn scan_row(
    dims: &ScanDims,
    b: usize,
    d: usize,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    bm: &[f64],
    cm: &[f64],
    dskip: f64,
    y: &mut [f64],
    mut trace: Option<(&mut [f64], &mut [f64])>,
) {
    let ScanDims { d: dd, s, l } = *dims;
    let row = (b * dd + d) * l;
    let a = &a[d * s..(d + 1) * s];
    let mut h = [0.0; 64];
    let mut h_vec;
    let h: &mut [f64] = if s <= 64 {
        &mut h[..s]
    } else {
        h_vec = vec![0.0; s];
        &mut h_vec
    };
    for t in 0..l {
        let xt = x[row + t];
        let dl = delta[row + t];
        let base = (b * l + t) * s;
        let (bt, ct) = (&bm[base..base + s], &cm[base..base + s]);
        let mut acc = 0.0;
        match trace.as_mut() {
            Some((st, decay)) => {
                let (st, decay) = (&mut st[t * s..(t + 1) * s], &mut decay[t * s..(t + 1) * s]);
                for k in 0..s {
                    let da = (dl * a[k]).exp();
                    h[k] = da * h[k] + dl * bt[k] * xt;
                    acc += ct[k] * h[k];
                    st[k] = h[k];
                    decay[k] = da;
                }
            }
            None => {
                for k in 0..s {
                    h[k] = (dl * a[k]).exp() * h[k] + dl * bt[k] * xt;
                    acc += ct[k] * h[k];
                }
            }
        }
        y[row + t] = acc + dskip * xt;
    }
}

/// Selective scan over sequences laid out as `(n, D, 1, L)`.
///
/// For every batch item and channel `d`, starting from `h_0 = 0`:
///
/// ```text
/// delta_t = softplus(dt_logit[d, t] + dt_bias[d])
/// h_t     = exp(delta_t * A[d]) * h_{t-1} + delta_t * B_t * x[d, t]
/// y[d, t] = <C_t, h_t> + d_skip[d] * x[d, t]
/// ```
///
/// with `A = -exp(a_log)`. Shapes: `x`, `dt_logit`: `(n, D, 1, L)`;
/// `dt_bias`, `d_skip`: `D` elements; `a_log`: `(D, N, 1, 1)`;
/// `b`, `c`: `(n, N, 1, L)`, shared by all channels.
pub fn selective_scan<'t, T: Float>(
    x: &Var<'t, T>,
    dt_logit: &Var<'t, T>,
    dt_bias: &Var<'t, T>,
    a_log: &Var<'t, T>,
    b: &Var<'t, T>,
    c: &Var<'t, T>,
    d_skip: &Var<'t, T>,
) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let (n, dd, l) = (xs.n(), xs.c(), xs.w());
    let s = a_log.shape().c();
    let bcs = Shape::new(n, s, 1, l);
    if xs.h() != 1 || l == 0 {
        return Err(Error::dim(format!("selective_scan: expected (n, D, 1, L) with L >= 1, got {xs}")));
    }
    if dt_logit.shape() != xs
        || a_log.shape() != Shape::new(dd, s, 1, 1)
        || b.shape() != bcs
        || c.shape() != bcs
        || dt_bias.shape().numel() != dd
        || d_skip.shape().numel() != dd
    {
        return Err(Error::dim(format!(
            "selective_scan: inconsistent shapes x {xs}, dt {}, bias {}, A {}, B {}, C {}, D {}",
            dt_logit.shape(),
            dt_bias.shape(),
            a_log.shape(),
            b.shape(),
            c.shape(),
            d_skip.shape()
        )));
    }
    let dims = ScanDims { d: dd, s, l };
    let xv = Rc::new(as_f64(x.value()));
    let biasv = as_f64(dt_bias.value());
    let delta: Rc<Vec<f64>> = Rc::new(
        dt_logit
            .value()
            .data()
            .iter()
            .enumerate()
            .map(|(i, z)| softplus(z.as_f64() + biasv[(i / l) % dd]))
            .collect(),
    );
    let av: Rc<Vec<f64>> = Rc::new(a_log.value().data().iter().map(|v| -v.as_f64().exp()).collect());
    let bv = Rc::new(to_time_major(&as_f64(b.value()), n, s, l));
    let cv = Rc::new(to_time_major(&as_f64(c.value()), n, s, l));
    let dv = Rc::new(as_f64(d_skip.value()));
    let mut y = vec![0.0; xs.numel()];
    for bi in 0..n {
        for d in 0..dd {
            scan_row(&dims, bi, d, &xv, &delta, &av, &bv, &cv, dv[d], &mut y, None);
        }
    }
    let (bias_shape, skip_shape) = (dt_bias.shape(), d_skip.shape());
    x.tape().record(
        "selective_scan",
        to_tensor(xs, &y),
        &[x, dt_logit, dt_bias, a_log, b, c, d_skip],
        Box::new(move |g, _| {
            let g = as_f64(g);
            let dims = ScanDims { d: dd, s, l };
            let mut gx = vec![0.0; xv.len()];
            let mut glogit = vec![0.0; xv.len()];
            let mut gbias = vec![0.0; dd];
            let mut ga = vec![0.0; dd * s];
            let mut gb = vec![0.0; bv.len()];
            let mut gc = vec![0.0; cv.len()];
            let mut gd = vec![0.0; dd];
            let mut states = vec![0.0; l * s];
            let mut decay = vec![0.0; l * s];
            let mut scratch = vec![0.0; xv.len()];
            let mut hbar = vec![0.0; s];
            for bi in 0..n {
                for d in 0..dd {
                    scan_row(
                        &dims,
                        bi,
                        d,
                        &xv,
                        &delta,
                        &av,
                        &bv,
                        &cv,
                        dv[d],
                        &mut scratch,
                        Some((&mut states, &mut decay)),
                    );
                    let row = (bi * dd + d) * l;
                    let a = &av[d * s..(d + 1) * s];
                    let ga = &mut ga[d * s..(d + 1) * s];
                    hbar.iter_mut().for_each(|v| *v = 0.0);
                    for t in (0..l).rev() {
                        let gy = g[row + t];
                        let xt = xv[row + t];
                        let dl = delta[row + t];
                        gd[d] += gy * xt;
                        let mut gxt = gy * dv[d];
                        let mut gdelta = 0.0;
                        let base = (bi * l + t) * s;
                        let (bt, ct) = (&bv[base..base + s], &cv[base..base + s]);
                        let (gbt, gct) = (&mut gb[base..base + s], &mut gc[base..base + s]);
                        let ht = &states[t * s..(t + 1) * s];
                        let dat = &decay[t * s..(t + 1) * s];
                        let hprev = if t > 0 { &states[(t - 1) * s..t * s] } else { &[][..] };
                        for k in 0..s {
                            let hp = if t > 0 { hprev[k] } else { 0.0 };
                            gct[k] += gy * ht[k];
                            let hb = hbar[k] + gy * ct[k];
                            let da = dat[k];
                            gdelta += hb * (a[k] * da * hp + bt[k] * xt);
                            ga[k] += hb * da * dl * hp;
                            gbt[k] += hb * dl * xt;
                            gxt += hb * dl * bt[k];
                            hbar[k] = hb * da;
                        }
                        gx[row + t] = gxt;
                        // softplus' = sigmoid = 1 - exp(-softplus)
                        let gz = gdelta * -(-dl).exp_m1();
                        glogit[row + t] = gz;
                        gbias[d] += gz;
                    }
                }
            }
            // d/d a_log of A = -exp(a_log) is A itself
            for (g, a) in ga.iter_mut().zip(av.iter()) {
                *g *= a;
            }
            vec![
                Some(to_tensor(xs, &gx)),
                Some(to_tensor(xs, &glogit)),
                Some(to_tensor(bias_shape, &gbias)),
                Some(to_tensor(Shape::new(dd, s, 1, 1), &ga)),
                Some(to_tensor(bcs, &from_time_major(&gb, n, s, l))),
                Some(to_tensor(bcs, &from_time_major(&gc, n, s, l))),
                Some(to_tensor(skip_shape, &gd)),
            ]
        }),
    )
}

/// Pixel orderings used to flatten a feature map into a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDirection {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowForward,
        ScanDirection::RowBackward,
        ScanDirection::ColForward,
        ScanDirection::ColBackward,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanDirection::RowForward => "row_fwd",
            ScanDirection::RowBackward => "row_bwd",
            ScanDirection::ColForward => "col_fwd",
            ScanDirection::ColBackward => "col_bwd",
        }
    }

    /// `order[t]` is the row-major pixel index visited at step `t`.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let row_major: Vec<usize> = (0..h * w).collect();
        let col_major: Vec<usize> = (0..h * w).map(|t| (t % h) * w + t / h).collect();
        match self {
            ScanDirection::RowForward => row_major,
            ScanDirection::RowBackward => row_major.into_iter().rev().collect(),
            ScanDirection::ColForward => col_major,
            ScanDirection::ColBackward => col_major.into_iter().rev().collect(),
        }
    }

    /// `inverse[p]` is the step at which pixel `p` is visited.
    pub fn inverse_order(self, h: usize, w: usize) -> Vec<usize> {
        let order = self.order(h, w);
        let mut inv = vec![0; order.len()];
        for (t, &p) in order.iter().enumerate() {
            inv[p] = t;
        }
        inv
    }

    /// `(n, D, h, w) -> (n, D, 1, h*w)` in this direction's order.
    pub fn flatten<'t, T: Float>(self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        ops::permute_spatial(x, &self.order(s.h(), s.w()), 1, s.plane())
    }

    /// Inverse of [`ScanDirection::flatten`].
    pub fn unflatten<'t, T: Float>(self, seq: &Var<'t, T>, h: usize, w: usize) -> Result<Var<'t, T>> {
        ops::permute_spatial(seq, &self.inverse_order(h, w), h, w)
    }
}

/// Parameters of one scan direction: the input-dependent projections that
/// produce `(dt, B, C)` plus the state matrix, step bias and skip.
#[derive(Clone, Debug)]
pub struct ScanParams {
    /// `(R + 2N, D, 1, 1)`, no bias.
    pub x_proj: ParamId,
    /// `(D, R, 1, 1)`, no bias.
    pub dt_proj: ParamId,
    pub dt_bias: ParamId,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub rank: usize,
    pub state: usize,
}

impl ScanParams {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        state: usize,
        rank: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = channels;
        let x_proj = store.add(
            join(prefix, "x_proj"),
            uniform(Shape::new(rank + 2 * state, d, 1, 1), (d as f64).sqrt().recip(), rng),
            true,
        )?;
        let dt_proj = store.add(
            join(prefix, "dt_proj"),
            uniform(Shape::new(d, rank, 1, 1), (rank as f64).sqrt().recip(), rng),
            true,
        )?;
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        let bias = Tensor::from_fn(Shape::new(1, d, 1, 1), |_| {
            T::of(inverse_softplus(rng.random_range(lo..hi).exp()))
        });
        let dt_bias = store.add(join(prefix, "dt_bias"), bias, false)?;
        let a_log = store.add(
            join(prefix, "a_log"),
            Tensor::from_fn(Shape::new(d, state, 1, 1), |[_, k, _, _]| T::of(((k + 1) as f64).ln())),
            false,
        )?;
        let d_skip = store.add(
            join(prefix, "d_skip"),
            Tensor::full(Shape::new(1, d, 1, 1), T::one()),
            false,
        )?;
        Ok(ScanParams {
            x_proj,
            dt_proj,
            dt_bias,
            a_log,
            d_skip,
            rank,
            state,
        })
    }

    /// Projects a flattened sequence `(n, D, 1, L)` and runs the scan.
    pub fn scan<'t, T: Float>(&self, ctx: &Ctx<'t, T>, seq: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (r, s) = (self.rank, self.state);
        let proj = ops::conv2d(seq, &ctx.param(self.x_proj), None, 1, Padding::Zero(0))?;
        let dt_low = ops::narrow_channels(&proj, 0, r)?;
        let b = ops::narrow_channels(&proj, r, s)?;
        let c = ops::narrow_channels(&proj, r + s, s)?;
        let logit = ops::conv2d(&dt_low, &ctx.param(self.dt_proj), None, 1, Padding::Zero(0))?;
        selective_scan(
            seq,
            &logit,
            &ctx.param(self.dt_bias),
            &ctx.param(self.a_log),
            &b,
            &c,
            &ctx.param(self.d_skip),
        )
    }
}

/// Four-direction scan: flatten in each [`ScanDirection`], scan with that
/// direction's parameters, restore the layout and sum.
pub fn ss2d<'t, T: Float>(ctx: &Ctx<'t, T>, x: &Var<'t, T>, dirs: &[ScanParams; 4]) -> Result<Var<'t, T>> {
    let s = x.shape();
    let mut out: Option<Var<'t, T>> = None;
    for (dir, params) in ScanDirection::ALL.iter().zip(dirs) {
        let seq = dir.flatten(x)?;
        let y = dir.unflatten(&params.scan(ctx, &seq)?, s.h(), s.w())?;
        out = Some(match out {
            None => y,
            Some(acc) => ops::add(&acc, &y)?,
        });
    }
    Ok(out.unwrap())
}

/// Hyperparameters of a [`Vssm`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VssmConfig {
    pub channels: usize,
    pub expand: usize,
    pub state: usize,
    /// Rank of the step-size projection.
    pub dt_rank: usize,
}

impl VssmConfig {
    pub fn new(channels: usize, state: usize) -> Self {
        VssmConfig {
            channels,
            expand: 2,
            state,
            dt_rank: channels.div_ceil(16),
        }
    }

    pub fn inner(&self) -> usize {
        self.expand * self.channels
    }

    /// Trainable scalars, in closed form.
    pub fn param_count(&self) -> usize {
        let (c, d, n, r) = (self.channels, self.inner(), self.state, self.dt_rank);
        let in_proj = c * 2 * d + 2 * d;
        let dw = 9 * d + d;
        let per_dir = (r + 2 * n) * d + d * r + d + d * n + d;
        let norm = 2 * d;
        let out_proj = d * c + c;
        in_proj + dw + 4 * per_dir + norm + out_proj
    }
}

/// Gated vision state space module: a `1x1` projection to `2 * E * C`
/// channels split into a main path (depth-wise `3x3`, SiLU, [`ss2d`], layer
/// norm) and a SiLU gate, their product projected back to `C`.
#[derive(Clone, Debug)]
pub struct Vssm {
    pub config: VssmConfig,
    in_proj: Conv,
    dwconv: Conv,
    dirs: [ScanParams; 4],
    norm: LayerNorm,
    out_proj: Conv,
}

impl Vssm {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: VssmConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (c, d) = (config.channels, config.inner());
        let in_proj = Conv::pointwise(store, &join(prefix, "in_proj"), c, 2 * d, rng)?;
        let dwconv = Conv::depthwise(store, &join(prefix, "dwconv"), d, 3, rng)?;
        let mut dirs = Vec::with_capacity(4);
        for dir in ScanDirection::ALL {
            dirs.push(ScanParams::new(
                store,
                &join(prefix, &format!("scan.{}", dir.name())),
                d,
                config.state,
                config.dt_rank,
                rng,
            )?);
        }
        let norm = LayerNorm::new(store, &join(prefix, "norm"), d)?;
        let out_proj = Conv::pointwise(store, &join(prefix, "out_proj"), d, c, rng)?;
        Ok(Vssm {
            config,
            in_proj,
            dwconv,
            dirs: dirs.try_into().unwrap(),
            norm,
            out_proj,
        })
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let d = self.config.inner();
        let proj = self.in_proj.forward(ctx, x)?;
        let main = ops::narrow_channels(&proj, 0, d)?;
        let gate = ops::silu(&ops::narrow_channels(&proj, d, d)?)?;
        let main = ops::silu(&self.dwconv.forward(ctx, &main)?)?;
        let main = self.norm.forward(ctx, &ss2d(ctx, &main, &self.dirs)?)?;
        self.out_proj.forward(ctx, &ops::mul(&main, &gate)?)
    }
}
