//! The U-Net: an embedding conv, encoder stages at four resolution levels,
//! decoder stages with skip concatenation, a full-resolution refinement stage,
//! an output conv and a global residual from the input image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockConfig, ConvBlockKind, FftmMode, Group};
use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::ssm::VssmConfig;
use crate::tensor::ops::{self, PadMode};
use crate::tensor::{Ctx, Float, ParamStore, Tape, Tensor, Var};

/// Architectural hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Base width `C`.
    pub channels: usize,
    /// SSGs per stage.
    pub n_ssg: usize,
    /// FSSGs per stage.
    pub n_fssg: usize,
    /// MGCB expansion rate.
    pub gamma: f64,
    /// SSM state dimension `N`.
    pub state: usize,
    /// VSSM expansion `E`.
    pub expand: usize,
    pub conv_block: ConvBlockKind,
    pub fftm: FftmMode,
    /// Resolution levels, 1 to 4.
    pub levels: usize,
    pub use_freq_loss: bool,
    pub lambda_f: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset("dfssm").unwrap()
    }
}

impl ModelConfig {
    pub const PRESETS: [&'static str; 4] = ["dfssm", "dfssm-s", "toy", "micro"];

    /// `dfssm`: C=48, (1, 3); `dfssm-s`: C=32, (1, 2); `toy`: C=8, (1, 1),
    /// N=4; `micro`: C=4, (1, 1), N=2, two levels.
    pub fn preset(name: &str) -> Result<Self> {
        let base = ModelConfig {
            channels: 48,
            n_ssg: 1,
            n_fssg: 3,
            gamma: 2.0,
            state: 16,
            expand: 2,
            conv_block: ConvBlockKind::Mgcb,
            fftm: FftmMode::Full,
            levels: 4,
            use_freq_loss: true,
            lambda_f: 0.01,
        };
        Ok(match name {
            "dfssm" => base,
            "dfssm-s" => ModelConfig {
                channels: 32,
                n_fssg: 2,
                ..base
            },
            "toy" => ModelConfig {
                channels: 8,
                n_fssg: 1,
                state: 4,
                ..base
            },
            "micro" => ModelConfig {
                channels: 4,
                n_fssg: 1,
                state: 2,
                levels: 2,
                ..base
            },
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset {name:?} (expected one of {})",
                    Self::PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_ssg + self.n_fssg < 1 {
            return fail("n_ssg + n_fssg must be at least 1".into());
        }
        if self.channels < 4 || self.channels % 2 != 0 {
            return fail(format!("channels must be even and at least 4, got {}", self.channels));
        }
        if !(1..=4).contains(&self.levels) {
            return fail(format!("levels must be in 1..=4, got {}", self.levels));
        }
        if self.state < 1 || self.expand < 1 {
            return fail("state and expand must be at least 1".into());
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return fail(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.lambda_f.is_finite() && self.lambda_f >= 0.0) {
            return fail(format!("lambda_f must be non-negative, got {}", self.lambda_f));
        }
        for spec in StagePlan::new(self).stages {
            self.block_config(spec.width).gated_width()?;
        }
        Ok(())
    }

    pub fn block_config(&self, width: usize) -> BlockConfig {
        BlockConfig {
            channels: width,
            state: self.state,
            expand: self.expand,
            gamma: self.gamma,
            fftm: self.fftm,
            conv_block: self.conv_block,
        }
    }

    /// Spatial sizes are padded to a multiple of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// Weight of the frequency loss actually applied.
    pub fn effective_lambda_f(&self) -> f64 {
        if self.use_freq_loss {
            self.lambda_f
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageRole {
    Encoder,
    Decoder,
    Refinement,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub name: String,
    pub role: StageRole,
    /// 1 is full resolution.
    pub level: usize,
    pub width: usize,
    /// `false` for an SSG, `true` for an FSSG, in execution order.
    pub groups: Vec<bool>,
}

/// Stage layout in execution order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePlan {
    pub stages: Vec<StageSpec>,
}

impl StagePlan {
    pub fn new(cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        let groups: Vec<bool> = std::iter::repeat_n(false, cfg.n_ssg)
            .chain(std::iter::repeat_n(true, cfg.n_fssg))
            .collect();
        let spec = |name: String, role, level: usize, width| StageSpec {
            name,
            role,
            level,
            width,
            groups: groups.clone(),
        };
        let mut stages = Vec::new();
        for i in 0..cfg.levels {
            stages.push(spec(format!("enc.{i}"), StageRole::Encoder, i + 1, c << i));
        }
        // the level-1 skip concatenation is not halved
        let top = if cfg.levels > 1 { 2 * c } else { c };
        for i in (0..cfg.levels - 1).rev() {
            let width = if i == 0 { top } else { c << i };
            stages.push(spec(format!("dec.{i}"), StageRole::Decoder, i + 1, width));
        }
        stages.push(spec("refine".into(), StageRole::Refinement, 1, top));
        StagePlan { stages }
    }
}

struct Stage {
    groups: Vec<Group>,
}

impl Stage {
    fn new<T: Float>(store: &mut ParamStore<T>, cfg: &ModelConfig, spec: &StageSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bc = cfg.block_config(spec.width);
        let (mut ns, mut nf) = (0, 0);
        let mut groups = Vec::with_capacity(spec.groups.len());
        for &freq in &spec.groups {
            let prefix = if freq {
                nf += 1;
                format!("{}.fssg.{}", spec.name, nf - 1)
            } else {
                ns += 1;
                format!("{}.ssg.{}", spec.name, ns - 1)
            };
            groups.push(Group::new(store, &prefix, &bc, freq, rng)?);
        }
        Ok(Stage { groups })
    }

    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let mut y = x.clone();
        for g in &self.groups {
            y = g.forward(ctx, &y)?;
        }
        Ok(y)
    }
}

/// Layer structure without parameter values.
struct Network {
    embed: Conv,
    encoders: Vec<Stage>,
    downs: Vec<Conv>,
    ups: Vec<Conv>,
    /// Indexed by level - 1; `None` at level 1.
    reduces: Vec<Option<Conv>>,
    /// Indexed by level - 1.
    decoders: Vec<Stage>,
    refine: Stage,
    head: Conv,
}

/// A network together with its parameters.
pub struct Model<T> {
    pub config: ModelConfig,
    pub plan: StagePlan,
    pub params: ParamStore<T>,
    net: Network,
}

impl<T: Float> Model<T> {
    /// Builds the network with parameters drawn from a stream seeded by `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let plan = StagePlan::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.channels;
        let levels = config.levels;
        let s = &mut store;
        let r = &mut rng;

        let embed = Conv::new(s, "embed", 3, c, 3, true, r)?;
        let mut specs = plan.stages.iter();
        let mut encoders = Vec::new();
        let mut downs = Vec::new();
        for i in 0..levels {
            encoders.push(Stage::new(s, &config, specs.next().unwrap(), r)?);
            if i + 1 < levels {
                let w = c << i;
                downs.push(Conv::pointwise(s, &format!("down.{i}"), 4 * w, 2 * w, r)?);
            }
        }
        let mut ups: Vec<Option<Conv>> = (0..levels.saturating_sub(1)).map(|_| None).collect();
        let mut reduces: Vec<Option<Conv>> = (0..levels.saturating_sub(1)).map(|_| None).collect();
        let mut decoders: Vec<Option<Stage>> = (0..levels.saturating_sub(1)).map(|_| None).collect();
        for i in (0..levels.saturating_sub(1)).rev() {
            // incoming width from level i + 2 (1-based), becomes c << i after shuffle
            let from = c << (i + 1);
            ups[i] = Some(Conv::pointwise(s, &format!("up.{i}"), from, 2 * from, r)?);
            if i > 0 {
                let w = c << i;
                reduces[i] = Some(Conv::pointwise(s, &format!("reduce.{i}"), 2 * w, w, r)?);
            }
            decoders[i] = Some(Stage::new(s, &config, specs.next().unwrap(), r)?);
        }
        let refine_spec = specs.next().unwrap();
        let refine = Stage::new(s, &config, refine_spec, r)?;
        let head = Conv::new(s, "head", refine_spec.width, 3, 3, true, r)?;
        Ok(Model {
            plan,
            params: store,
            net: Network {
                embed,
                encoders,
                downs,
                ups: ups.into_iter().map(Option::unwrap).collect(),
                reduces,
                decoders: decoders.into_iter().map(Option::unwrap).collect(),
                refine,
                head,
            },
            config,
        })
    }

    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// Restores an image batch `(n, 3, h, w)`. Sizes that are not a multiple
    /// of [`ModelConfig::size_multiple`] are reflect-padded at the bottom and
    /// right and the output is cropped back.
    pub fn forward<'t, U: Float>(&self, ctx: &Ctx<'t, U>, image: &Var<'t, U>) -> Result<Var<'t, U>> {
        let s = image.shape();
        if s.c() != 3 || s.n() == 0 || s.h() == 0 || s.w() == 0 {
            return Err(Error::dim(format!("model input must be (n >= 1, 3, h >= 1, w >= 1), got {s}")));
        }
        let m = self.config.size_multiple();
        let (ph, pw) = ((m - s.h() % m) % m, (m - s.w() % m) % m);
        let x = if ph + pw > 0 {
            ops::pad(image, [0, ph, 0, pw], PadMode::Reflect)?
        } else {
            image.clone()
        };
        let net = &self.net;
        let levels = self.config.levels;
        let mut f = net.embed.forward(ctx, &x)?;
        let mut skips = Vec::with_capacity(levels);
        for i in 0..levels {
            f = net.encoders[i].forward(ctx, &f)?;
            if i + 1 < levels {
                skips.push(f.clone());
                f = net.downs[i].forward(ctx, &ops::pixel_unshuffle(&f, 2)?)?;
            }
        }
        for i in (0..levels.saturating_sub(1)).rev() {
            let up = ops::pixel_shuffle(&net.ups[i].forward(ctx, &f)?, 2)?;
            f = ops::concat_channels(&[&up, &skips[i]])?;
            if let Some(reduce) = &net.reduces[i] {
                f = reduce.forward(ctx, &f)?;
            }
            f = net.decoders[i].forward(ctx, &f)?;
        }
        f = net.refine.forward(ctx, &f)?;
        let out = ops::add(&net.head.forward(ctx, &f)?, &x)?;
        if ph + pw > 0 {
            ops::crop(&out, 0, 0, s.h(), s.w())
        } else {
            Ok(out)
        }
    }

    /// Forward pass without gradient bookkeeping for the caller.
    pub fn infer(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params);
        let x = ctx.input(image.clone());
        Ok(self.forward(&ctx, &x)?.value().clone())
    }
}

/// Multiply-accumulate counts of one forward pass, by category.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlopReport {
    /// Dense, pointwise and depth-wise convolutions.
    pub conv: f64,
    /// Selective-scan state updates and readouts.
    pub scan: f64,
    /// `5 * P * log2(P)` per transformed plane of `P` pixels.
    pub fft: f64,
    /// Activations, norms, products, sums.
    pub elementwise: f64,
}

impl FlopReport {
    pub fn total(&self) -> f64 {
        self.conv + self.scan + self.fft + self.elementwise
    }
}

fn conv_macs(p: f64, cin: usize, cout: usize, k: usize) -> f64 {
    p * (cin * cout * k * k) as f64
}

fn dw_macs(p: f64, c: usize, k: usize) -> f64 {
    p * (c * k * k) as f64
}

/// Analytic cost of a forward pass on an `h x w` image, after padding to the
/// size multiple.
pub fn estimate_flops(cfg: &ModelConfig, h: usize, w: usize) -> FlopReport {
    let m = cfg.size_multiple();
    let (h, w) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let mut r = FlopReport::default();
    let full = (h * w) as f64;
    r.conv += conv_macs(full, 3, cfg.channels, 3);
    for spec in StagePlan::new(cfg).stages {
        let scale = 1usize << (spec.level - 1);
        let (sh, sw) = (h / scale, w / scale);
        let p = (sh * sw) as f64;
        let c = spec.width;
        let v = VssmConfig {
            expand: cfg.expand,
            ..VssmConfig::new(c, cfg.state)
        };
        let (d, n, rk) = (v.inner(), v.state, v.dt_rank);
        for &freq in &spec.groups {
            // state block: LN, VSSM, scaled skip
            r.elementwise += p * (5 * c + c + c) as f64;
            r.conv += conv_macs(p, c, 2 * d, 1) + dw_macs(p, d, 3) + conv_macs(p, d, c, 1);
            r.conv += 4.0 * (conv_macs(p, d, rk + 2 * n, 1) + conv_macs(p, rk, d, 1));
            r.scan += 4.0 * p * (d * (3 * n + 1)) as f64;
            r.elementwise += p * (2 * d + d + 5 * d + d + 4 * d) as f64;
            if freq {
                let half = c / 2;
                let bins = (sh * (sw / 2 + 1)) as f64;
                let (fin, fout) = match cfg.fftm {
                    FftmMode::Full => (c, c),
                    FftmMode::NoFft => (half, half),
                    FftmMode::NoSpatial => (2 * c, 2 * c),
                };
                if cfg.fftm != FftmMode::NoSpatial {
                    r.conv += conv_macs(p, c, half, 1) + conv_macs(p, half, c, 1);
                    r.elementwise += p * half as f64;
                }
                if cfg.fftm == FftmMode::NoFft {
                    r.conv += conv_macs(p, fin, fout, 1);
                    r.elementwise += p * fout as f64;
                } else {
                    let planes = if cfg.fftm == FftmMode::NoSpatial { c } else { half };
                    r.fft += 2.0 * planes as f64 * 5.0 * p * p.log2().max(1.0);
                    r.conv += conv_macs(bins, fin, fout, 1);
                    r.elementwise += bins * fout as f64;
                }
                r.elementwise += p * c as f64;
            }
            // conv block
            match cfg.conv_block {
                ConvBlockKind::Mgcb => {
                    let g = (cfg.gamma * c as f64).round() as usize;
                    r.conv += conv_macs(p, c, g, 1) + dw_macs(p, g, 3);
                    r.conv += 2.0 * conv_macs(p, c, g / 2, 1) + dw_macs(p, g / 2, 3) + dw_macs(p, g / 2, 5);
                    r.conv += conv_macs(p, g, c, 1);
                    r.elementwise += p * (5 * c + g + g + 3 * c) as f64;
                }
                ConvBlockKind::ConvLayer => {
                    let mid = crate::blocks::ConvLayer::hidden(c);
                    r.conv += conv_macs(p, c, mid, 3) + conv_macs(p, mid, c, 3);
                    r.elementwise += p * (5 * c + mid + 3 * c) as f64;
                }
            }
        }
    }
    for i in 0..cfg.levels.saturating_sub(1) {
        let wdt = cfg.channels << i;
        let coarse = full / (4usize << (2 * i)) as f64;
        r.conv += conv_macs(coarse, 4 * wdt, 2 * wdt, 1);
        r.conv += conv_macs(coarse, 2 * wdt, 4 * wdt, 1);
        if i > 0 {
            r.conv += conv_macs(full / (1usize << (2 * i)) as f64, 2 * wdt, wdt, 1);
        }
    }
    let top = StagePlan::new(cfg).stages.last().unwrap().width;
    r.conv += conv_macs(full, top, 3, 3);
    r.elementwise += full * 3.0;
    r
}
