//! Single-image deraining with a frequency-enhanced state space U-Net.
//!
//! The crate is self-contained: a rank-4 tensor type with reverse-mode
//! autodiff ([`tensor`]), a real 2D FFT ([`fft`]), the selective-scan state
//! space kernel and its four-direction 2D scan ([`ssm`]), the network blocks
//! ([`blocks`]) and the assembled U-Net ([`network`]), losses and the AdamW
//! training loop ([`train`]), synthetic rain data and Y-channel metrics
//! ([`data`], [`metrics`]), and the command-line front end ([`cli`]).

pub mod blocks;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fft;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Ctx, Float, ParamId, ParamStore, Shape, Tape, Tensor, Var};
