//! Differentiable operations. Every function records itself on the tape of its
//! first input and returns the new [`Var`].

mod activation;
mod conv;
mod elementwise;
mod layout;
mod norm;

pub use activation::{activation, gelu, relu, sigmoid, silu, softplus, Activation};
pub use conv::{conv2d, crop, dwconv2d, pad, PadMode, Padding};
pub use elementwise::{add, mean, mul, scale, sub, sum};
pub use layout::{
    concat_channels, global_avg_pool, narrow_channels, permute_spatial, pixel_shuffle,
    pixel_unshuffle,
};
pub use norm::{layer_norm, LN_EPS};
