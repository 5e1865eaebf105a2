//! Parameterized layers shared by the blocks: each registers its tensors in a
//! [`ParamStore`] under a dotted prefix and reads them back through a [`Ctx`].

use rand::Rng;

use crate::error::Result;
use crate::tensor::ops::{self, Padding, LN_EPS};
use crate::tensor::{Ctx, Float, ParamId, ParamStore, Shape, Tensor, Var};

/// Tensor with entries drawn from `U(-bound, bound)`.
pub fn uniform<T: Float>(shape: Shape, bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)))
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// 2D convolution with optional bias. Weights are `U(±1/sqrt(fan_in))`,
/// biases start at zero.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub padding: Padding,
    pub stride: usize,
    pub depthwise: bool,
}

impl Conv {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cin: usize,
        cout: usize,
        k: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = (cin * k * k) as f64;
        let weight = store.add(
            join(prefix, "weight"),
            uniform(Shape::new(cout, cin, k, k), fan_in.sqrt().recip(), rng),
            true,
        )?;
        let bias = if bias {
            Some(store.add(join(prefix, "bias"), Tensor::zeros(Shape::new(1, cout, 1, 1)), false)?)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            padding: Padding::same(k),
            stride: 1,
            depthwise: false,
        })
    }

    /// `1x1` convolution with bias.
    pub fn pointwise<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Conv::new(store, prefix, cin, cout, 1, true, rng)
    }

    /// Depth-wise `k x k` convolution with bias.
    pub fn depthwise<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c: usize,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut conv = Conv::new(store, prefix, 1, c, k, true, rng)?;
        conv.depthwise = true;
        Ok(conv)
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|id| ctx.param(id));
        if self.depthwise {
            ops::dwconv2d(x, &w, b.as_ref(), self.padding)
        } else {
            ops::conv2d(x, &w, b.as_ref(), self.stride, self.padding)
        }
    }
}

/// Channel-axis layer norm with affine `gamma = 1`, `beta = 0` at init.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, c: usize) -> Result<Self> {
        let shape = Shape::new(1, c, 1, 1);
        Ok(LayerNorm {
            gamma: store.add(join(prefix, "weight"), Tensor::full(shape, T::one()), false)?,
            beta: store.add(join(prefix, "bias"), Tensor::zeros(shape), false)?,
        })
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        ops::layer_norm(x, &ctx.param(self.gamma), &ctx.param(self.beta), LN_EPS)
    }
}

/// Learnable per-channel scale `(1, c, 1, 1)` initialized to one.
pub fn channel_scale<T: Float>(store: &mut ParamStore<T>, name: String, c: usize) -> Result<ParamId> {
    store.add(name, Tensor::full(Shape::new(1, c, 1, 1), T::one()), false)
}
