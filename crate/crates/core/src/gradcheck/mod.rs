//! Central finite-difference gradient checks.
//!
//! The analytic gradient of a scalar function comes from one backward pass;
//! the numeric estimate perturbs individual coordinates by `±step` and
//! re-evaluates the function from scratch. Agreement is measured as the
//! norm-wise relative error `|a - n| / max(|a|, |n|)` over the sampled
//! coordinates of each input.

pub mod suite;

use std::rc::Rc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Ctx, Float, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Options {
    pub step: f64,
    /// Coordinates sampled per input tensor; `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Options {
    /// Step size matched to the precision of `T`.
    pub fn for_precision<T: Float>() -> Self {
        let step = if std::mem::size_of::<T>() == 4 { 1e-3 } else { 1e-5 };
        Options {
            step,
            max_coords: Some(24),
            seed: 0,
        }
    }

    pub fn with_coords(mut self, n: Option<usize>) -> Self {
        self.max_coords = n;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    /// `(label, relative error)` per checked input.
    pub errors: Vec<(String, f64)>,
    /// Every sampled analytic derivative, in check order.
    pub analytic: Vec<f64>,
    /// The matching finite-difference estimates.
    pub numeric: Vec<f64>,
}

impl Report {
    pub fn worst(&self) -> f64 {
        self.errors.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    /// Norm-wise relative error over all sampled coordinates together.
    pub fn overall(&self) -> f64 {
        relative_error(&self.analytic, &self.numeric)
    }

    pub fn worst_input(&self) -> Option<&str> {
        self.errors
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(l, _)| l.as_str())
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn coords(len: usize, opts: &Options, salt: u64) -> Vec<usize> {
    match opts.max_coords {
        Some(k) if k < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut idx = sample(&mut rng, len, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Fixed pseudo-random weights in `[-1, 1)`, so that `sum(w * y)` exercises
/// every output element with a distinct sensitivity.
pub fn projection<T: Float>(shape: crate::tensor::Shape, seed: u64) -> Tensor<T> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xD1B5_4A32_D192_ED03));
    let data = (0..shape.numel())
        .map(|_| T::of(rng.random_range(-1.0..1.0)))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// `sum(w * y)` for the fixed projection `w` of [`projection`].
/// The sum is accumulated in double precision so that rounding in the loss
/// itself does not swamp single-precision finite differences.
pub fn project<'t, T: Float>(y: &Var<'t, T>, seed: u64) -> Result<Var<'t, T>> {
    let w = Rc::new(projection::<T>(y.shape(), seed));
    let total: f64 = y
        .value()
        .data()
        .iter()
        .zip(w.data())
        .map(|(&a, &b)| a.as_f64() * b.as_f64())
        .sum();
    y.tape().record(
        "project",
        Tensor::scalar(T::of(total)),
        &[y],
        Box::new(move |g, _| vec![Some(w.map(|v| v * g.data()[0]))]),
    )
}

/// Checks the gradient of `f` with respect to each tensor in `inputs`.
pub fn check_inputs<T, F>(inputs: &[Tensor<T>], f: F, opts: &Options) -> Result<Report>
where
    T: Float,
    F: for<'t> Fn(&'t Tape<T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(&loss)?;

    let eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.value().data()[0].as_f64())
    };

    let mut errors = Vec::new();
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic_full = grads.wrt(var);
        let picked = coords(inputs[k].numel(), opts, k as u64);
        let mut analytic = Vec::with_capacity(picked.len());
        let mut numeric = Vec::with_capacity(picked.len());
        for &i in &picked {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = T::of(orig.as_f64() + opts.step);
            let up = eval(&work)?;
            work[k].data_mut()[i] = T::of(orig.as_f64() - opts.step);
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * opts.step));
            analytic.push(analytic_full.data()[i].as_f64());
        }
        errors.push((format!("input{k}"), relative_error(&analytic, &numeric)));
        all_a.extend(analytic);
        all_n.extend(numeric);
    }
    Ok(Report {
        errors,
        analytic: all_a,
        numeric: all_n,
    })
}

/// Checks the gradient of `f` with respect to every parameter in `store`.
pub fn check_params<T, F>(store: &mut ParamStore<T>, f: F, opts: &Options) -> Result<Report>
where
    T: Float,
    F: for<'t> Fn(&Ctx<'t, T>) -> Result<Var<'t, T>>,
{
    check_model(store, &[], |ctx, _| f(ctx), opts)
}

/// Checks the gradient of `f` with respect to every parameter in `store` and
/// every tensor in `inputs`.
pub fn check_model<T, F>(store: &mut ParamStore<T>, inputs: &[Tensor<T>], f: F, opts: &Options) -> Result<Report>
where
    T: Float,
    F: for<'t> Fn(&Ctx<'t, T>, &[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let (analytic_params, analytic_inputs): (Vec<Tensor<T>>, Vec<Tensor<T>>) = {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = f(&ctx, &vars)?;
        let grads = tape.backward(&loss)?;
        let mut out: Vec<Tensor<T>> = store.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        for (id, g) in grads.params() {
            out[id.index()] = g.clone();
        }
        (out, vars.iter().map(|v| grads.wrt(v)).collect())
    };

    let eval = |store: &ParamStore<T>, xs: &[Tensor<T>]| -> Result<f64> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let vars: Vec<_> = xs.iter().map(|t| ctx.input(t.clone())).collect();
        Ok(f(&ctx, &vars)?.value().data()[0].as_f64())
    };

    let ids: Vec<_> = store.ids().collect();
    let mut errors = Vec::new();
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for id in ids {
        let len = store.get(id).tensor.numel();
        let picked = coords(len, opts, id.index() as u64);
        let mut analytic = Vec::with_capacity(picked.len());
        let mut numeric = Vec::with_capacity(picked.len());
        for &i in &picked {
            let orig = store.get(id).tensor.data()[i];
            store.get_mut(id).tensor.data_mut()[i] = T::of(orig.as_f64() + opts.step);
            let up = eval(store, &work)?;
            store.get_mut(id).tensor.data_mut()[i] = T::of(orig.as_f64() - opts.step);
            let down = eval(store, &work)?;
            store.get_mut(id).tensor.data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * opts.step));
            analytic.push(analytic_params[id.index()].data()[i].as_f64());
        }
        errors.push((store.get(id).name.clone(), relative_error(&analytic, &numeric)));
        all_a.extend(analytic);
        all_n.extend(numeric);
    }
    for k in 0..inputs.len() {
        let picked = coords(inputs[k].numel(), opts, 0xABCD + k as u64);
        let mut analytic = Vec::with_capacity(picked.len());
        let mut numeric = Vec::with_capacity(picked.len());
        for &i in &picked {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = T::of(orig.as_f64() + opts.step);
            let up = eval(store, &work)?;
            work[k].data_mut()[i] = T::of(orig.as_f64() - opts.step);
            let down = eval(store, &work)?;
            work[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * opts.step));
            analytic.push(analytic_inputs[k].data()[i].as_f64());
        }
        errors.push((format!("input{k}"), relative_error(&analytic, &numeric)));
        all_a.extend(analytic);
        all_n.extend(numeric);
    }
    Ok(Report {
        errors,
        analytic: all_a,
        numeric: all_n,
    })
}
