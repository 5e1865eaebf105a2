//! Losses, AdamW, the cosine schedule, paired augmentation and the training loop.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::data::{self, Dataset, ImagePair};
use crate::error::{Error, Result};
use crate::fft;
use crate::metrics;
use crate::network::Model;
use crate::tensor::ops;
use crate::tensor::{Ctx, Float, ParamStore, Shape, Tape, Tensor, Var};

pub const ADAM_EPS: f64 = 1e-8;
pub const CSV_HEADER: &str = "iter,loss_total,loss_l1,loss_freq,lr,psnr_val";

fn check_pair<T: Float>(op: &str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("{op}: prediction {} and target {} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference. The subgradient at ties is zero.
pub fn l1_loss<'t, T: Float>(pred: &Var<'t, T>, target: &Var<'t, T>) -> Result<Var<'t, T>> {
    check_pair("l1_loss", pred, target)?;
    let shape = pred.shape();
    let diff: Vec<T> = pred
        .value()
        .data()
        .iter()
        .zip(target.value().data())
        .map(|(&p, &t)| p - t)
        .collect();
    let total: f64 = diff.iter().map(|d| d.abs().as_f64()).sum();
    let inv = 1.0 / shape.numel() as f64;
    pred.tape().record(
        "l1_loss",
        Tensor::scalar(T::of(total * inv)),
        &[pred, target],
        Box::new(move |g, need| {
            let k = T::of(g.data()[0].as_f64() * inv);
            let sign = |neg: bool| {
                let data = diff
                    .iter()
                    .map(|&d| {
                        let s = if d > T::zero() {
                            k
                        } else if d < T::zero() {
                            -k
                        } else {
                            T::zero()
                        };
                        if neg {
                            -s
                        } else {
                            s
                        }
                    })
                    .collect();
                Tensor::from_vec(shape, data).unwrap()
            };
            vec![need[0].then(|| sign(false)), need[1].then(|| sign(true))]
        }),
    )
}

/// Mean over channels and half-plane bins of `|F(pred) - F(target)|`.
pub fn freq_loss<'t, T: Float>(pred: &Var<'t, T>, target: &Var<'t, T>) -> Result<Var<'t, T>> {
    check_pair("freq_loss", pred, target)?;
    let d = ops::sub(pred, target)?;
    let spectrum = fft::rfft2_stacked(&d)?;
    ops::mean(&fft::complex_abs(&spectrum)?)
}

/// The objective and its two components.
pub struct Losses<'t, T> {
    pub total: Var<'t, T>,
    pub l1: f64,
    pub freq: f64,
}

/// `l1 + lambda_f * freq`. With `lambda_f = 0` the total is the L1 term
/// itself; the frequency term is still evaluated for reporting.
pub fn total_loss<'t, T: Float>(pred: &Var<'t, T>, target: &Var<'t, T>, lambda_f: f64) -> Result<Losses<'t, T>> {
    if !(lambda_f >= 0.0) {
        return Err(Error::Config(format!("lambda_f must be non-negative, got {lambda_f}")));
    }
    let l1 = l1_loss(pred, target)?;
    let freq = freq_loss(pred, target)?;
    let (l1v, fv) = (l1.value().data()[0].as_f64(), freq.value().data()[0].as_f64());
    let total = if lambda_f == 0.0 {
        l1
    } else {
        ops::add(&l1, &ops::scale(&freq, T::of(lambda_f))?)?
    };
    Ok(Losses { total, l1: l1v, freq: fv })
}

/// `lr_final + (lr_init - lr_final) (1 + cos(pi t / T)) / 2`.
pub fn cosine_lr(t: usize, total: usize, lr_init: f64, lr_final: f64) -> f64 {
    if total == 0 {
        return lr_init;
    }
    let frac = t.min(total) as f64 / total as f64;
    lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: ADAM_EPS,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moments per parameter, in store order.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> OptimizerState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        OptimizerState { step: 0, m: zeros(), v: zeros() }
    }
}

impl AdamW {
    /// One update from the gradients held in `store`. Decay is decoupled and
    /// applied first, only to parameters registered with `decay = true`.
    pub fn step<T: Float>(&self, store: &mut ParamStore<T>, state: &mut OptimizerState<T>, lr: f64) -> Result<()> {
        if state.m.len() != store.len() {
            return Err(Error::Mismatch(format!(
                "optimizer holds {} moment buffers for {} parameters",
                state.m.len(),
                store.len()
            )));
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
            if m.shape() != p.tensor.shape() {
                return Err(Error::Mismatch(format!(
                    "{}: moment shape {} vs parameter {}",
                    p.name,
                    m.shape(),
                    p.tensor.shape()
                )));
            }
            let shrink = if p.decay { 1.0 - lr * self.weight_decay } else { 1.0 };
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let gi = g[i].as_f64();
                let mi = self.beta1 * md[i].as_f64() + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * vd[i].as_f64() + (1.0 - self.beta2) * gi * gi;
                md[i] = T::of(mi);
                vd[i] = T::of(vi);
                let update = (mi / c1) / ((vi / c2).sqrt() + self.eps);
                *w = T::of(w.as_f64() * shrink - lr * update);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Float>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = store
        .iter()
        .flat_map(|p| p.grad.data().iter().map(|g| g.as_f64().powi(2)))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = T::of(max_norm / norm);
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
        }
    }
    norm
}

/// A crop window and flip decisions shared by both images of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub hflip: bool,
    pub vflip: bool,
}

impl Augmentation {
    pub fn sample(h: usize, w: usize, patch: usize, rng: &mut impl Rng) -> Result<Self> {
        if patch == 0 || patch > h || patch > w {
            return Err(Error::Config(format!("patch {patch} does not fit a {w}x{h} image")));
        }
        Ok(Augmentation {
            top: rng.random_range(0..=h - patch),
            left: rng.random_range(0..=w - patch),
            size: patch,
            hflip: rng.random_bool(0.5),
            vflip: rng.random_bool(0.5),
        })
    }

    /// Applies the window and flips to every sample of `x`.
    pub fn apply<T: Float>(&self, x: &Tensor<T>) -> Tensor<T> {
        let p = self.size;
        let s = x.shape();
        Tensor::from_fn(Shape::new(s.n(), s.c(), p, p), |[n, c, y, xx]| {
            let sy = if self.vflip { p - 1 - y } else { y };
            let sx = if self.hflip { p - 1 - xx } else { xx };
            x.at([n, c, self.top + sy, self.left + sx])
        })
    }
}

/// Crops and flips `(rainy, clean)` identically.
pub fn augment<T: Float>(
    rainy: &Tensor<T>,
    clean: &Tensor<T>,
    patch: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if rainy.shape() != clean.shape() {
        return Err(Error::dim(format!("augment: {} and {} differ", rainy.shape(), clean.shape())));
    }
    let s = rainy.shape();
    let a = Augmentation::sample(s.h(), s.w(), patch, rng)?;
    Ok((a.apply(rainy), a.apply(clean)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Metrics row every this many iterations (0: only the last).
    pub log_every: usize,
    /// Checkpoint every this many iterations (0: only the final one).
    pub ckpt_every: usize,
    /// Global gradient-norm limit; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            batch: 4,
            patch: 128,
            lr_init: 3e-4,
            lr_final: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            seed: 0,
            log_every: 50,
            ckpt_every: 0,
            clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch == 0 || self.patch == 0 {
            return fail("batch and patch must be positive".into());
        }
        if !(self.lr_init > 0.0 && self.lr_final > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if self.lr_final >= self.lr_init {
            return fail(format!("lr_final {} must be below lr_init {}", self.lr_final, self.lr_init));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return fail("betas must lie in [0, 1)".into());
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative".into());
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return fail(format!("clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: ADAM_EPS,
            weight_decay: self.weight_decay,
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub total: f64,
    pub l1: f64,
    pub freq: f64,
    pub lr: f64,
    pub psnr_val: Option<f64>,
}

impl LogRow {
    pub fn csv(&self) -> String {
        let psnr = self.psnr_val.map(|p| format!("{p:.4}")).unwrap_or_default();
        format!(
            "{},{:.8},{:.8},{:.8},{:.6e},{psnr}",
            self.iter, self.total, self.l1, self.freq, self.lr
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub rows: Vec<LogRow>,
    pub seconds: f64,
}

/// Seed of the batch drawn at iteration `iter`.
pub fn batch_seed(seed: u64, iter: usize) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ (iter as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct PairTensors {
    rainy: Tensor<f32>,
    clean: Tensor<f32>,
}

fn pair_tensors(p: &ImagePair) -> Result<PairTensors> {
    Ok(PairTensors {
        rainy: data::to_tensor(&[&p.rainy])?,
        clean: data::to_tensor(&[&p.clean])?,
    })
}

/// Assembles the batch of iteration `iter`: pair indices and augmentation
/// both come from [`batch_seed`].
fn draw_batch(pairs: &[PairTensors], cfg: &TrainConfig, seed: u64) -> Result<(Tensor<f32>, Tensor<f32>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.patch;
    let mut rainy = Vec::with_capacity(cfg.batch * 3 * p * p);
    let mut clean = Vec::with_capacity(cfg.batch * 3 * p * p);
    let mut picked = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let i = rng.random_range(0..pairs.len());
        let (r, c) = augment(&pairs[i].rainy, &pairs[i].clean, p, &mut rng)?;
        rainy.extend_from_slice(r.data());
        clean.extend_from_slice(c.data());
        picked.push(i);
    }
    let shape = Shape::new(cfg.batch, 3, p, p);
    Ok((Tensor::from_vec(shape, rainy)?, Tensor::from_vec(shape, clean)?, picked))
}

/// Trains `model` in place. With `out` set, writes `metrics.csv`, periodic
/// `ckpt_<iter>.dfsm` files and `final.dfsm` there.
pub fn train_loop(
    model: &mut Model<f32>,
    train: &Dataset,
    val: Option<&ImagePair>,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let start = Instant::now();
    let pairs = train.pairs.iter().map(pair_tensors).collect::<Result<Vec<_>>>()?;
    let lambda_f = model.config.effective_lambda_f();
    let opt = cfg.optimizer();
    let mut state = OptimizerState::new(&model.params);

    let mut csv = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("metrics.csv");
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            writeln!(f, "{CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };

    let augment_seed = crate::config::substream(cfg.seed, "augment");
    let mut rows = Vec::new();
    for it in 0..cfg.iterations {
        let seed = batch_seed(augment_seed, it);
        let (rainy, clean, picked) = draw_batch(&pairs, cfg, seed)?;
        let lr = cosine_lr(it, cfg.iterations, cfg.lr_init, cfg.lr_final);
        let (total, l1, freq, grads) = {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &model.params);
            let x = ctx.input(rainy);
            let y = ctx.input(clean);
            let pred = model.forward(&ctx, &x)?;
            let losses = total_loss(&pred, &y, lambda_f)?;
            let total = losses.total.value().data()[0].as_f64();
            if !total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at iteration {it} (batch seed {seed}, pairs {picked:?})"
                )));
            }
            (total, losses.l1, losses.freq, tape.backward(&losses.total)?)
        };
        model.params.zero_grad();
        model.params.accumulate(&grads);
        if let Some(c) = cfg.clip {
            clip_grad_norm(&mut model.params, c);
        }
        opt.step(&mut model.params, &mut state, lr)?;

        let done = it + 1;
        let last = done == cfg.iterations;
        if last || (cfg.log_every > 0 && done % cfg.log_every == 0) {
            let psnr_val = val.map(|p| evaluate_pair(model, p).map(|e| e.psnr)).transpose()?;
            let row = LogRow { iter: done, total, l1, freq, lr, psnr_val };
            log::info!("{}", row.csv());
            if let Some((f, path)) = csv.as_mut() {
                writeln!(f, "{}", row.csv()).map_err(|e| Error::io(path.as_path(), e))?;
            }
            rows.push(row);
        }
        if let Some(dir) = out {
            if cfg.ckpt_every > 0 && done % cfg.ckpt_every == 0 && !last {
                checkpoint::save(&dir.join(format!("ckpt_{done:06}.dfsm")), &model.params)?;
            }
        }
    }
    if let Some(dir) = out {
        checkpoint::save(&dir.join("final.dfsm"), &model.params)?;
    }
    Ok(TrainReport {
        rows,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Quality of one restored pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEval {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub freq: f64,
}

/// Derains `p.rainy` and compares the quantised result with `p.clean`. The
/// losses are taken before quantisation.
pub fn evaluate_pair<T: Float>(model: &Model<T>, p: &ImagePair) -> Result<PairEval> {
    let x: Tensor<T> = data::to_tensor(&[&p.rainy])?;
    let target: Tensor<T> = data::to_tensor(&[&p.clean])?;
    let y = model.infer(&x)?;
    let (l1, freq) = {
        let tape = Tape::new();
        let (a, b) = (tape.constant(y.clone()), tape.constant(target));
        let l = total_loss(&a, &b, 0.0)?;
        (l.l1, l.freq)
    };
    let restored = data::from_tensor(&y, 0)?;
    Ok(PairEval {
        psnr: metrics::psnr_y(&restored, &p.clean)?,
        ssim: metrics::ssim_y(&restored, &p.clean)?,
        l1,
        freq,
    })
}

/// Dataset means of the restored quality and of the untouched rainy input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub freq: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

pub fn evaluate<T: Float>(model: &Model<T>, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::Usage("evaluation set is empty".into()));
    }
    let n = ds.len() as f64;
    let mut r = EvalReport {
        psnr: 0.0,
        ssim: 0.0,
        l1: 0.0,
        freq: 0.0,
        baseline_psnr: 0.0,
        baseline_ssim: 0.0,
    };
    for p in &ds.pairs {
        let e = evaluate_pair(model, p)?;
        r.psnr += e.psnr / n;
        r.ssim += e.ssim / n;
        r.l1 += e.l1 / n;
        r.freq += e.freq / n;
        r.baseline_psnr += metrics::psnr_y(&p.rainy, &p.clean)? / n;
        r.baseline_ssim += metrics::ssim_y(&p.rainy, &p.clean)? / n;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_seeds_do_not_repeat() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| batch_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(batch_seed(7, 0), batch_seed(8, 0));
    }

    #[test]
    fn csv_rows_match_header() {
        let row = LogRow { iter: 5, total: 0.5, l1: 0.25, freq: 25.0, lr: 3e-4, psnr_val: None };
        assert_eq!(row.csv(), "5,0.50000000,0.25000000,25.00000000,3.000000e-4,");
        let row = LogRow { psnr_val: Some(30.123456), ..row };
        assert_eq!(row.csv().split(',').count(), CSV_HEADER.split(',').count());
        assert!(row.csv().ends_with(",30.1235"));
    }
}
