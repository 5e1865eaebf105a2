//! The gradient-check suite: every differentiable operation, each composite
//! block and the reduced network, at double precision (per-tensor error) and
//! single precision (norm-wise error over all sampled coordinates).
//!
//! State space modules are checked at a conditioned point: step sizes near
//! one and enlarged scan projections. At initialization their scan-parameter
//! gradients sit below finite-difference noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_inputs, check_model, project, Options, Report};
use crate::blocks::{BlockConfig, ChannelAttention, ConvBlockKind, ConvLayer, Fftm, FftmMode, Fssb, Mgcb, Ssb};
use crate::error::{Error, Result};
use crate::fft;
use crate::network::{Model, ModelConfig};
use crate::ssm::{self, ScanParams, Vssm, VssmConfig};
use crate::tensor::ops::{self, Activation, PadMode, Padding, LN_EPS};
use crate::tensor::{Ctx, Float, ParamStore, Shape, Tensor, Var};
use crate::train;

pub const TOL_F64: f64 = 1e-4;
pub const TOL_F32: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Ops,
    Fft,
    Losses,
    Ssm,
    Blocks,
    Network,
}

impl Group {
    pub const ALL: [Group; 6] = [Group::Ops, Group::Fft, Group::Losses, Group::Ssm, Group::Blocks, Group::Network];

    pub fn name(self) -> &'static str {
        match self {
            Group::Ops => "ops",
            Group::Fft => "fft",
            Group::Losses => "losses",
            Group::Ssm => "ssm",
            Group::Blocks => "blocks",
            Group::Network => "network",
        }
    }

    /// `all` selects every group.
    pub fn parse(s: &str) -> Result<Vec<Group>> {
        if s == "all" {
            return Ok(Group::ALL.to_vec());
        }
        Group::ALL
            .iter()
            .find(|g| g.name() == s)
            .map(|g| vec![*g])
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown gradcheck module {s:?} (all, ops, fft, losses, ssm, blocks, network)"
                ))
            })
    }
}

/// Worst result over the seeds of one check at one precision.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub precision: &'static str,
    pub seeds: usize,
    pub error: f64,
    pub tolerance: f64,
    /// The tensor with the largest error, for per-tensor checks.
    pub worst_input: Option<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.error.is_finite() && self.error < self.tolerance
    }
}

fn random<T: Float>(shape: Shape, rng: &mut ChaCha8Rng, scale: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(scale * rng.random_range(-1.0..1.0)))
}

/// Moves state space parameters to a point where every gradient is well
/// above finite-difference noise, and perturbs the rest off their
/// initial symmetric values.
pub fn condition<T: Float>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        if p.name.ends_with("x_proj") || p.name.ends_with("dt_proj") {
            p.tensor = p.tensor.map(|v| v * T::of(3.0));
        }
        let reset = p.name.ends_with("dt_bias");
        for v in p.tensor.data_mut() {
            let e = rng.random_range(-1.0..1.0);
            *v = if reset { T::of(0.5 * e) } else { *v + T::of(0.1 * e) };
        }
    }
}

type InputFn<T> = for<'t> fn(&[Var<'t, T>]) -> Result<Var<'t, T>>;

/// An elementary operation checked on random inputs.
struct OpCase<T: 'static> {
    name: &'static str,
    shapes: &'static [[usize; 4]],
    /// Inputs are drawn from `[-scale, scale]`.
    scale: f64,
    f: InputFn<T>,
}

macro_rules! op_cases {
    ($t:ty) => {{
        let cases: Vec<OpCase<$t>> = vec![
            OpCase { name: "conv2d", shapes: &[[2, 3, 5, 6], [4, 3, 3, 3], [1, 4, 1, 1]], scale: 1.0,
                f: |v| ops::conv2d(&v[0], &v[1], Some(&v[2]), 1, Padding::Zero(1)) },
            OpCase { name: "conv2d_strided_reflect", shapes: &[[1, 2, 7, 6], [3, 2, 3, 3]], scale: 1.0,
                f: |v| ops::conv2d(&v[0], &v[1], None, 2, Padding::Reflect(1)) },
            OpCase { name: "conv2d_pointwise", shapes: &[[2, 4, 3, 3], [5, 4, 1, 1], [1, 5, 1, 1]], scale: 1.0,
                f: |v| ops::conv2d(&v[0], &v[1], Some(&v[2]), 1, Padding::Zero(0)) },
            OpCase { name: "dwconv2d_3x3", shapes: &[[2, 3, 5, 5], [3, 1, 3, 3], [1, 3, 1, 1]], scale: 1.0,
                f: |v| ops::dwconv2d(&v[0], &v[1], Some(&v[2]), Padding::Zero(1)) },
            OpCase { name: "dwconv2d_5x5", shapes: &[[1, 2, 6, 7], [2, 1, 5, 5]], scale: 1.0,
                f: |v| ops::dwconv2d(&v[0], &v[1], None, Padding::Zero(2)) },
            OpCase { name: "pad_reflect", shapes: &[[1, 2, 4, 5]], scale: 1.0,
                f: |v| ops::pad(&v[0], [1, 3, 2, 6], PadMode::Reflect) },
            OpCase { name: "pad_zero", shapes: &[[1, 2, 3, 3]], scale: 1.0,
                f: |v| ops::pad(&v[0], [2, 0, 1, 1], PadMode::Zero) },
            OpCase { name: "crop", shapes: &[[2, 2, 5, 6]], scale: 1.0, f: |v| ops::crop(&v[0], 1, 2, 3, 3) },
            OpCase { name: "add_broadcast", shapes: &[[2, 3, 4, 5], [1, 3, 1, 1]], scale: 1.0, f: |v| ops::add(&v[0], &v[1]) },
            OpCase { name: "sub", shapes: &[[2, 3, 2, 2], [2, 3, 2, 2]], scale: 1.0, f: |v| ops::sub(&v[0], &v[1]) },
            OpCase { name: "mul_broadcast", shapes: &[[2, 3, 4, 5], [2, 3, 1, 1]], scale: 1.0, f: |v| ops::mul(&v[0], &v[1]) },
            OpCase { name: "scale", shapes: &[[1, 2, 3, 4]], scale: 1.0, f: |v| ops::scale(&v[0], 0.37) },
            OpCase { name: "sum", shapes: &[[2, 2, 3, 3]], scale: 1.0, f: |v| ops::sum(&v[0]) },
            OpCase { name: "mean", shapes: &[[2, 2, 3, 3]], scale: 1.0, f: |v| ops::mean(&v[0]) },
            OpCase { name: "silu", shapes: &[[1, 3, 4, 4]], scale: 3.0, f: |v| ops::activation(&v[0], Activation::Silu) },
            OpCase { name: "gelu", shapes: &[[1, 3, 4, 4]], scale: 3.0, f: |v| ops::activation(&v[0], Activation::Gelu) },
            OpCase { name: "sigmoid", shapes: &[[1, 3, 4, 4]], scale: 3.0, f: |v| ops::activation(&v[0], Activation::Sigmoid) },
            OpCase { name: "softplus", shapes: &[[1, 3, 4, 4]], scale: 3.0, f: |v| ops::activation(&v[0], Activation::Softplus) },
            OpCase { name: "relu", shapes: &[[1, 3, 4, 4]], scale: 3.0, f: |v| ops::activation(&v[0], Activation::Relu) },
            OpCase { name: "concat_channels", shapes: &[[2, 2, 3, 3], [2, 3, 3, 3]], scale: 1.0,
                f: |v| ops::concat_channels(&[&v[0], &v[1]]) },
            OpCase { name: "narrow_channels", shapes: &[[2, 5, 3, 3]], scale: 1.0, f: |v| ops::narrow_channels(&v[0], 1, 3) },
            OpCase { name: "permute_spatial", shapes: &[[2, 2, 3, 4]], scale: 1.0,
                f: |v| ops::permute_spatial(&v[0], &[5, 0, 11, 3, 7, 1, 9, 2, 10, 4, 8, 6], 4, 3) },
            OpCase { name: "pixel_shuffle", shapes: &[[1, 8, 2, 3]], scale: 1.0, f: |v| ops::pixel_shuffle(&v[0], 2) },
            OpCase { name: "pixel_unshuffle", shapes: &[[1, 2, 4, 6]], scale: 1.0, f: |v| ops::pixel_unshuffle(&v[0], 2) },
            OpCase { name: "global_avg_pool", shapes: &[[2, 3, 4, 5]], scale: 1.0, f: |v| ops::global_avg_pool(&v[0]) },
            OpCase { name: "layer_norm", shapes: &[[2, 5, 3, 3], [1, 5, 1, 1], [1, 5, 1, 1]], scale: 1.0,
                f: |v| ops::layer_norm(&v[0], &v[1], &v[2], LN_EPS) },
        ];
        cases
    }};
}

macro_rules! fft_cases {
    ($t:ty) => {{
        let cases: Vec<OpCase<$t>> = vec![
            OpCase { name: "rfft2_even", shapes: &[[1, 2, 4, 6]], scale: 1.0, f: |v| fft::rfft2_stacked(&v[0]) },
            OpCase { name: "rfft2_odd", shapes: &[[2, 1, 5, 7]], scale: 1.0, f: |v| fft::rfft2_stacked(&v[0]) },
            OpCase { name: "irfft2_even", shapes: &[[1, 4, 4, 4]], scale: 1.0, f: |v| fft::irfft2_stacked(&v[0], 6) },
            OpCase { name: "irfft2_odd", shapes: &[[1, 2, 5, 4]], scale: 1.0, f: |v| fft::irfft2_stacked(&v[0], 7) },
            OpCase { name: "complex_abs", shapes: &[[1, 4, 3, 3]], scale: 1.0, f: |v| fft::complex_abs(&v[0]) },
            OpCase { name: "fft_round_trip", shapes: &[[1, 2, 6, 5]], scale: 1.0,
                f: |v| fft::irfft2_stacked(&fft::rfft2_stacked(&v[0])?, 5) },
        ];
        cases
    }};
}

macro_rules! loss_cases {
    ($t:ty) => {{
        let cases: Vec<OpCase<$t>> = vec![
            OpCase { name: "l1_loss", shapes: &[[2, 3, 4, 4], [2, 3, 4, 4]], scale: 1.0, f: |v| train::l1_loss(&v[0], &v[1]) },
            OpCase { name: "freq_loss", shapes: &[[1, 3, 5, 6], [1, 3, 5, 6]], scale: 1.0, f: |v| train::freq_loss(&v[0], &v[1]) },
            OpCase { name: "total_loss", shapes: &[[1, 3, 4, 6], [1, 3, 4, 6]], scale: 1.0,
                f: |v| Ok(train::total_loss(&v[0], &v[1], 0.01)?.total) },
            OpCase { name: "selective_scan", shapes: &[[2, 3, 1, 9], [2, 3, 1, 9], [1, 3, 1, 1], [3, 4, 1, 1], [2, 4, 1, 9], [2, 4, 1, 9], [1, 3, 1, 1]],
                scale: 1.0, f: |v| ssm::selective_scan(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5], &v[6]) },
        ];
        cases
    }};
}

fn run_op<T: Float>(case: &OpCase<T>, seed: u64) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919).wrapping_add(case.name.len() as u64));
    let inputs: Vec<Tensor<T>> = case.shapes.iter().map(|&s| random(Shape(s), &mut rng, case.scale)).collect();
    let f = case.f;
    check_inputs(
        &inputs,
        move |_, v| project(&f(v)?, seed),
        &Options::for_precision::<T>().with_coords(Some(16)),
    )
}

/// A module built into a fresh store, checked on one random input.
struct ModuleCase {
    name: &'static str,
    input: [usize; 4],
    coords: usize,
}

trait Forward {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>>;
}

macro_rules! forward_impl {
    ($($ty:ty),*) => {$(
        impl Forward for $ty {
            fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
                <$ty>::forward(self, ctx, x)
            }
        }
    )*};
}
forward_impl!(ChannelAttention, Fftm, Ssb, Fssb, Mgcb, ConvLayer, Vssm);

struct ScanOnly(Box<[ScanParams; 4]>);

impl Forward for ScanOnly {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        ssm::ss2d(ctx, x, &self.0)
    }
}

impl<U: Float> Forward for Model<U> {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        Model::forward(self, ctx, x)
    }
}

fn check_module<T: Float, M: Forward>(
    module: &M,
    mut store: ParamStore<T>,
    case: &ModuleCase,
    seed: u64,
    conditioned: bool,
) -> Result<Report> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(104_729).wrapping_add(case.name.len() as u64));
    if conditioned {
        condition(&mut store, &mut rng);
    }
    let x = random::<T>(Shape(case.input), &mut rng, 1.0);
    check_model(
        &mut store,
        &[x],
        |ctx, v| project(&module.forward(ctx, &v[0])?, seed),
        &Options::for_precision::<T>().with_coords(Some(case.coords)),
    )
}

fn block_cfg(c: usize) -> BlockConfig {
    BlockConfig {
        channels: c,
        state: 3,
        expand: 2,
        gamma: 1.5,
        fftm: FftmMode::Full,
        conv_block: ConvBlockKind::Mgcb,
    }
}

fn module_reports<T: Float>(group: Group, seed: u64) -> Result<Vec<(&'static str, bool, Report)>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    macro_rules! module {
        ($name:expr, $input:expr, $coords:expr, $conditioned:expr, |$s:ident, $r:ident| $build:expr) => {{
            let mut $s = ParamStore::<T>::new();
            let $r = &mut rng;
            let m = $build?;
            let case = ModuleCase { name: $name, input: $input, coords: $coords };
            out.push(($name, true, check_module(&m, $s, &case, seed, $conditioned)?));
        }};
    }
    match group {
        Group::Ssm => {
            module!("ss2d", [1, 4, 3, 4], 8, true, |s, r| {
                let dirs: Result<Vec<ScanParams>> = (0..4)
                    .map(|i| ScanParams::new(&mut s, &format!("scan.{i}"), 4, 3, 1, r))
                    .collect();
                dirs.map(|d| ScanOnly(Box::new(d.try_into().unwrap())))
            });
            module!("vssm", [1, 4, 3, 4], 6, true, |s, r| Vssm::new(&mut s, "vssm", VssmConfig::new(4, 3), r));
        }
        Group::Blocks => {
            module!("channel_attention", [2, 6, 3, 3], 8, true, |s, r| ChannelAttention::new(&mut s, "ca", 6, r));
            for (name, mode) in [("fftm", FftmMode::Full), ("fftm_no_fft", FftmMode::NoFft), ("fftm_no_spatial", FftmMode::NoSpatial)] {
                module!(name, [1, 4, 4, 5], 8, true, |s, r| Fftm::new(&mut s, "fftm", 4, mode, r));
            }
            module!("ssb", [1, 4, 3, 4], 6, true, |s, r| Ssb::new(&mut s, "ssb", &block_cfg(4), r));
            module!("fssb", [1, 4, 3, 4], 6, true, |s, r| Fssb::new(&mut s, "fssb", &block_cfg(4), r));
            module!("mgcb", [1, 4, 5, 5], 8, true, |s, r| Mgcb::new(&mut s, "mgcb", &block_cfg(4), r));
            module!("conv_layer", [1, 6, 4, 4], 8, true, |s, r| ConvLayer::new(&mut s, "conv", &block_cfg(6), r));
        }
        Group::Network => {
            let model = Model::<T>::new(ModelConfig::preset("micro")?, seed)?;
            let case = ModuleCase { name: "micro_network", input: [1, 3, 6, 5], coords: 3 };
            out.push(("micro_network", true, check_module(&model, model.params.clone(), &case, seed, true)?));
        }
        _ => {}
    }
    Ok(out)
}

fn op_reports<T: Float>(group: Group, seed: u64) -> Result<Vec<(&'static str, bool, Report)>>
where
    Vec<OpCase<T>>: OpCasesFor<T>,
{
    let cases = <Vec<OpCase<T>> as OpCasesFor<T>>::cases(group);
    cases
        .iter()
        .map(|c| Ok((c.name, false, run_op(c, seed)?)))
        .collect()
}

trait OpCasesFor<T: 'static> {
    fn cases(group: Group) -> Vec<OpCase<T>>;
}

macro_rules! cases_for {
    ($t:ty) => {
        impl OpCasesFor<$t> for Vec<OpCase<$t>> {
            fn cases(group: Group) -> Vec<OpCase<$t>> {
                match group {
                    Group::Ops => op_cases!($t),
                    Group::Fft => fft_cases!($t),
                    Group::Losses => loss_cases!($t),
                    _ => Vec::new(),
                }
            }
        }
    };
}
cases_for!(f32);
cases_for!(f64);

fn collect<T: Float>(groups: &[Group], seeds: u64, out: &mut Vec<Outcome>) -> Result<()>
where
    Vec<OpCase<T>>: OpCasesFor<T>,
{
    let double = std::mem::size_of::<T>() == 8;
    let mut merged: Vec<Outcome> = Vec::new();
    for &g in groups {
        for seed in 0..seeds {
            let mut reports = op_reports::<T>(g, seed)?;
            reports.extend(module_reports::<T>(g, seed)?);
            for (name, composite, r) in reports {
                // composites at single precision are judged jointly over all
                // sampled coordinates
                let (error, worst) = if !double && composite {
                    (r.overall(), None)
                } else {
                    (r.worst(), r.worst_input().map(str::to_string))
                };
                match merged.iter_mut().find(|o| o.name == name) {
                    Some(o) => {
                        o.seeds += 1;
                        if !(error <= o.error) {
                            o.error = error;
                            o.worst_input = worst;
                        }
                    }
                    None => merged.push(Outcome {
                        name: name.to_string(),
                        precision: T::NAME,
                        seeds: 1,
                        error,
                        tolerance: if double { TOL_F64 } else { TOL_F32 },
                        worst_input: worst,
                    }),
                }
            }
        }
    }
    out.extend(merged);
    Ok(())
}

/// Runs the selected groups over `seeds` seeds at both precisions.
pub fn run(groups: &[Group], seeds: u64) -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    collect::<f64>(groups, seeds, &mut out)?;
    collect::<f32>(groups, seeds, &mut out)?;
    Ok(out)
}
