//! Composite blocks of the network: the state space block and its
//! frequency-enhanced variant, the FFT module, the mixed-scale gated
//! convolution block, its plain convolutional baseline, and channel attention.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fft;
use crate::nn::{channel_scale, join, Conv, LayerNorm};
use crate::ssm::{Vssm, VssmConfig};
use crate::tensor::ops;
use crate::tensor::{Ctx, Float, ParamId, ParamStore, Var};

/// `x * s` with `s` a per-channel scale.
fn scaled<'t, T: Float>(ctx: &Ctx<'t, T>, s: ParamId, x: &Var<'t, T>) -> Result<Var<'t, T>> {
    ops::mul(x, &ctx.param(s))
}

/// Squeeze-and-excitation: `x * sigmoid(W2 relu(W1 gap(x)))`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    down: Conv,
    up: Conv,
}

impl ChannelAttention {
    pub fn reduction(c: usize) -> usize {
        c.clamp(1, 16)
    }

    pub fn bottleneck(c: usize) -> usize {
        (c / Self::reduction(c)).max(1)
    }

    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, c: usize, rng: &mut impl Rng) -> Result<Self> {
        let m = Self::bottleneck(c);
        Ok(ChannelAttention {
            down: Conv::pointwise(store, &join(prefix, "down"), c, m, rng)?,
            up: Conv::pointwise(store, &join(prefix, "up"), m, c, rng)?,
        })
    }

    /// Per-channel weights in `(0, 1)`, shaped `(n, c, 1, 1)`.
    pub fn weights<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let z = ops::relu(&self.down.forward(ctx, &ops::global_avg_pool(x)?)?)?;
        ops::sigmoid(&self.up.forward(ctx, &z)?)
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        ops::mul(x, &self.weights(ctx, x)?)
    }
}

/// Variants of the FFT module used for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FftmMode {
    /// Spatial reduce, frequency-domain `1x1` conv, spatial expand.
    Full,
    /// The frequency-domain conv applied in the spatial domain (no transform).
    NoFft,
    /// Frequency-domain conv only, at full width.
    NoSpatial,
}

impl FftmMode {
    pub fn name(self) -> &'static str {
        match self {
            FftmMode::Full => "full",
            FftmMode::NoFft => "no_fft",
            FftmMode::NoSpatial => "no_spatial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(FftmMode::Full),
            "no_fft" => Ok(FftmMode::NoFft),
            "no_spatial" => Ok(FftmMode::NoSpatial),
            _ => Err(Error::Config(format!("unknown fftm mode {s:?} (full, no_fft, no_spatial)"))),
        }
    }
}

/// FFT module:
/// `conv1x1(irfft2(SiLU(conv1x1(rfft2(SiLU(conv1x1(z)))))))`, with the
/// spectrum carried as stacked real and imaginary channels.
#[derive(Clone, Debug)]
pub struct Fftm {
    pub mode: FftmMode,
    reduce: Option<Conv>,
    freq: Conv,
    expand: Option<Conv>,
}

impl Fftm {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c: usize,
        mode: FftmMode,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if c % 2 != 0 {
            return Err(Error::Config(format!("fftm: channel count {c} must be even")));
        }
        let half = c / 2;
        let spatial = mode != FftmMode::NoSpatial;
        let reduce = spatial
            .then(|| Conv::pointwise(store, &join(prefix, "reduce"), c, half, rng))
            .transpose()?;
        let width = match mode {
            FftmMode::Full => c,
            FftmMode::NoFft => half,
            FftmMode::NoSpatial => 2 * c,
        };
        let freq = Conv::pointwise(store, &join(prefix, "freq"), width, width, rng)?;
        let expand = spatial
            .then(|| Conv::pointwise(store, &join(prefix, "expand"), half, c, rng))
            .transpose()?;
        Ok(Fftm {
            mode,
            reduce,
            freq,
            expand,
        })
    }

    /// The final `1x1` convolution, if the mode has one.
    pub fn expand(&self) -> Option<&Conv> {
        self.expand.as_ref()
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, z: &Var<'t, T>) -> Result<Var<'t, T>> {
        let w = z.shape().w();
        let zh = match &self.reduce {
            Some(conv) => ops::silu(&conv.forward(ctx, z)?)?,
            None => z.clone(),
        };
        let zf = match self.mode {
            FftmMode::NoFft => ops::silu(&self.freq.forward(ctx, &zh)?)?,
            _ => {
                let spec = fft::rfft2_stacked(&zh)?;
                let spec = ops::silu(&self.freq.forward(ctx, &spec)?)?;
                fft::irfft2_stacked(&spec, w)?
            }
        };
        match &self.expand {
            Some(conv) => conv.forward(ctx, &zf),
            None => Ok(zf),
        }
    }
}

/// Shared hyperparameters of the blocks inside one stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    pub channels: usize,
    pub state: usize,
    pub expand: usize,
    /// MGCB expansion rate.
    pub gamma: f64,
    pub fftm: FftmMode,
    pub conv_block: ConvBlockKind,
}

impl BlockConfig {
    pub fn vssm(&self) -> VssmConfig {
        VssmConfig {
            expand: self.expand,
            ..VssmConfig::new(self.channels, self.state)
        }
    }

    /// `gamma * C`, which must be an even integer.
    pub fn gated_width(&self) -> Result<usize> {
        let g = self.gamma * self.channels as f64;
        let r = g.round();
        if (g - r).abs() > 1e-9 || r < 2.0 || r as usize % 2 != 0 {
            return Err(Error::Config(format!(
                "mgcb: gamma * C = {g} must be an even integer >= 2 (gamma {}, C {})",
                self.gamma, self.channels
            )));
        }
        Ok(r as usize)
    }
}

/// State space block: `VSSM(LN(x)) + s * x`.
#[derive(Clone, Debug)]
pub struct Ssb {
    pub norm: LayerNorm,
    pub vssm: Vssm,
    pub scale: ParamId,
}

impl Ssb {
    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, cfg: &BlockConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Ssb {
            norm: LayerNorm::new(store, &join(prefix, "norm"), cfg.channels)?,
            vssm: Vssm::new(store, &join(prefix, "vssm"), cfg.vssm(), rng)?,
            scale: channel_scale(store, join(prefix, "scale"), cfg.channels)?,
        })
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.vssm.forward(ctx, &self.norm.forward(ctx, x)?)?;
        ops::add(&y, &scaled(ctx, self.scale, x)?)
    }
}

/// Frequency-enhanced state space block:
/// `VSSM(LN(x)) + FFTM(LN(x)) + s * x`, both branches reading one LN output.
#[derive(Clone, Debug)]
pub struct Fssb {
    pub norm: LayerNorm,
    pub vssm: Vssm,
    pub scale: ParamId,
    pub fftm: Fftm,
}

impl Fssb {
    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, cfg: &BlockConfig, rng: &mut impl Rng) -> Result<Self> {
        // registered in the same order as Ssb, so equal seeds give equal shared weights
        let Ssb { norm, vssm, scale } = Ssb::new(store, prefix, cfg, rng)?;
        let fftm = Fftm::new(store, &join(prefix, "fftm"), cfg.channels, cfg.fftm, rng)?;
        Ok(Fssb {
            norm,
            vssm,
            scale,
            fftm,
        })
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let ln = self.norm.forward(ctx, x)?;
        let base = ops::add(&self.vssm.forward(ctx, &ln)?, &scaled(ctx, self.scale, x)?)?;
        ops::add(&base, &self.fftm.forward(ctx, &ln)?)
    }
}

/// Mixed-scale gated convolution block:
/// `CA(conv1x1(gate * [dw3x3(..), dw5x5(..)])) + s * x` on a layer-normalized input.
#[derive(Clone, Debug)]
pub struct Mgcb {
    pub norm: LayerNorm,
    pub gate_proj: Conv,
    pub gate_dw: Conv,
    pub proj3: Conv,
    pub dw3: Conv,
    pub proj5: Conv,
    pub dw5: Conv,
    pub out: Conv,
    pub attention: ChannelAttention,
    pub scale: ParamId,
}

impl Mgcb {
    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, cfg: &BlockConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = cfg.channels;
        let g = cfg.gated_width()?;
        let p = |name: &str| join(prefix, name);
        Ok(Mgcb {
            norm: LayerNorm::new(store, &p("norm"), c)?,
            gate_proj: Conv::pointwise(store, &p("gate_proj"), c, g, rng)?,
            gate_dw: Conv::depthwise(store, &p("gate_dw"), g, 3, rng)?,
            proj3: Conv::pointwise(store, &p("proj3"), c, g / 2, rng)?,
            dw3: Conv::depthwise(store, &p("dw3"), g / 2, 3, rng)?,
            proj5: Conv::pointwise(store, &p("proj5"), c, g / 2, rng)?,
            dw5: Conv::depthwise(store, &p("dw5"), g / 2, 5, rng)?,
            out: Conv::pointwise(store, &p("out"), g, c, rng)?,
            attention: ChannelAttention::new(store, &p("ca"), c, rng)?,
            scale: channel_scale(store, p("scale"), c)?,
        })
    }

    /// Gate branch output and the concatenated dconv branches.
    pub fn branches<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let ln = self.norm.forward(ctx, x)?;
        let gate = ops::gelu(&self.gate_dw.forward(ctx, &self.gate_proj.forward(ctx, &ln)?)?)?;
        let x3 = self.dw3.forward(ctx, &self.proj3.forward(ctx, &ln)?)?;
        let x5 = self.dw5.forward(ctx, &self.proj5.forward(ctx, &ln)?)?;
        Ok((gate, ops::concat_channels(&[&x3, &x5])?))
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (gate, mixed) = self.branches(ctx, x)?;
        let y = self.out.forward(ctx, &ops::mul(&gate, &mixed)?)?;
        ops::add(&self.attention.forward(ctx, &y)?, &scaled(ctx, self.scale, x)?)
    }
}

/// Baseline convolution block: `CA(conv3x3(GELU(conv3x3(LN(x))))) + s * x`,
/// with a bottleneck of `max(C/3, 1)` channels between the convolutions.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub norm: LayerNorm,
    pub conv1: Conv,
    pub conv2: Conv,
    pub attention: ChannelAttention,
    pub scale: ParamId,
}

impl ConvLayer {
    pub fn hidden(c: usize) -> usize {
        (c / 3).max(1)
    }

    pub fn new<T: Float>(store: &mut ParamStore<T>, prefix: &str, cfg: &BlockConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = cfg.channels;
        let m = Self::hidden(c);
        Ok(ConvLayer {
            norm: LayerNorm::new(store, &join(prefix, "norm"), c)?,
            conv1: Conv::new(store, &join(prefix, "conv1"), c, m, 3, true, rng)?,
            conv2: Conv::new(store, &join(prefix, "conv2"), m, c, 3, true, rng)?,
            attention: ChannelAttention::new(store, &join(prefix, "ca"), c, rng)?,
            scale: channel_scale(store, join(prefix, "scale"), c)?,
        })
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let h = ops::gelu(&self.conv1.forward(ctx, &self.norm.forward(ctx, x)?)?)?;
        let y = self.conv2.forward(ctx, &h)?;
        ops::add(&self.attention.forward(ctx, &y)?, &scaled(ctx, self.scale, x)?)
    }
}

/// Which convolution block follows the state space block in each group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvBlockKind {
    Mgcb,
    ConvLayer,
}

impl ConvBlockKind {
    pub fn name(self) -> &'static str {
        match self {
            ConvBlockKind::Mgcb => "mgcb",
            ConvBlockKind::ConvLayer => "conv_layer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mgcb" => Ok(ConvBlockKind::Mgcb),
            "conv_layer" => Ok(ConvBlockKind::ConvLayer),
            _ => Err(Error::Config(format!("unknown conv block {s:?} (mgcb, conv_layer)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum StateBlock {
    Ssb(Ssb),
    Fssb(Fssb),
}

#[derive(Clone, Debug)]
pub enum ConvBlock {
    Mgcb(Mgcb),
    ConvLayer(ConvLayer),
}

/// One group: a state space block followed by a convolution block. With an
/// [`Ssb`] this is an SSG, with an [`Fssb`] an FSSG.
#[derive(Clone, Debug)]
pub struct Group {
    pub state: StateBlock,
    pub conv: ConvBlock,
}

impl Group {
    /// Registers parameters under `prefix.ssb` / `prefix.fssb` and
    /// `prefix.mgcb` / `prefix.conv_layer`.
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &BlockConfig,
        frequency: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let state = if frequency {
            StateBlock::Fssb(Fssb::new(store, &join(prefix, "fssb"), cfg, rng)?)
        } else {
            StateBlock::Ssb(Ssb::new(store, &join(prefix, "ssb"), cfg, rng)?)
        };
        let name = join(prefix, cfg.conv_block.name());
        let conv = match cfg.conv_block {
            ConvBlockKind::Mgcb => ConvBlock::Mgcb(Mgcb::new(store, &name, cfg, rng)?),
            ConvBlockKind::ConvLayer => ConvBlock::ConvLayer(ConvLayer::new(store, &name, cfg, rng)?),
        };
        Ok(Group { state, conv })
    }

    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let y = match &self.state {
            StateBlock::Ssb(b) => b.forward(ctx, x)?,
            StateBlock::Fssb(b) => b.forward(ctx, x)?,
        };
        match &self.conv {
            ConvBlock::Mgcb(b) => b.forward(ctx, &y),
            ConvBlock::ConvLayer(b) => b.forward(ctx, &y),
        }
    }
}
