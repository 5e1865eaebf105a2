//! Command-line front end. Every command echoes its resolved settings and
//! maps errors to exit codes through [`Error::exit_code`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint;
use crate::config::{substream, RunConfig};
use crate::data::{self, Dataset, RainParams};
use crate::error::{Error, Result};
use crate::fft;
use crate::gradcheck::suite::{self, Group};
use crate::network::{estimate_flops, Model, StagePlan};
use crate::tensor::Tensor;
use crate::train;

#[derive(Debug, Parser)]
#[command(name = "dfssm", version, about = "Frequency-enhanced state space deraining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic rain over clean images and write a paired dataset.
    MakeData(MakeDataArgs),
    /// Train a model on a paired dataset.
    Train(TrainArgs),
    /// Derain one PNG or every PNG in a directory.
    Infer(InferArgs),
    /// Mean Y-channel PSNR and SSIM of a checkpoint over a paired dataset.
    Eval(EvalArgs),
    /// Write the log-amplitude Fourier spectrum of an image as a PNG.
    Spectrum(SpectrumArgs),
    /// Finite-difference gradient checks of the differentiable operations.
    Gradcheck(GradcheckArgs),
    /// Parameter count and per-stage breakdown of a configuration.
    Params(ParamsArgs),
}

#[derive(Debug, Args)]
pub struct MakeDataArgs {
    /// Directory of clean PNGs; procedural scenes are used when absent.
    #[arg(long)]
    pub clean_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pairs (defaults to one per clean image).
    #[arg(long)]
    pub count: Option<usize>,
    /// Side of the procedural scenes.
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    /// Streak angle in degrees from vertical.
    #[arg(long, default_value_t = 15.0, allow_hyphen_values = true)]
    pub theta: f64,
    #[arg(long, default_value_t = 12)]
    pub length: usize,
    #[arg(long, default_value_t = 0.004)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.6)]
    pub intensity: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration file; a preset is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset used without a config file.
    #[arg(long, default_value = "toy")]
    pub preset: String,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Held-out pairs for the logged PSNR; defaults to the last training pair
    /// when the set has more than one.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured iteration count.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Overrides the configured crop size.
    #[arg(long)]
    pub patch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Defaults to `config.txt` next to the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// A PNG file or a directory of PNGs.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output file for a single input, output directory otherwise.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Render the spectrum of `in - diff` instead.
    #[arg(long)]
    pub diff: Option<PathBuf>,
    /// Keep DC at the corner instead of the centre.
    #[arg(long)]
    pub no_shift: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// all, ops, fft, losses, ssm, blocks or network.
    #[arg(long, default_value = "all")]
    pub module: String,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "dfssm")]
    pub preset: String,
    /// Image size for the multiply-accumulate estimate.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeData(a) => make_data(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Infer(a) => infer(&a),
        Command::Eval(a) => eval(&a),
        Command::Spectrum(a) => spectrum(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Params(a) => params(&a),
    }
}

fn make_data(a: &MakeDataArgs) -> Result<()> {
    let rain = RainParams {
        theta: a.theta,
        length: a.length,
        density: a.rho,
        intensity: a.intensity,
        seed: a.seed,
    };
    rain.validate().map_err(|e| Error::Usage(e.to_string()))?;
    println!("make-data: {rain:?} out={}", a.out.display());
    let ds = match &a.clean_dir {
        Some(dir) => {
            let files = data::list_pngs(dir)?;
            if files.is_empty() {
                return Err(Error::Usage(format!("no PNG files in {}", dir.display())));
            }
            let count = a.count.unwrap_or(files.len());
            let mut ds = Dataset::default();
            for i in 0..count {
                let clean = data::load_png(&files[i % files.len()])?;
                let p = RainParams {
                    seed: rain.seed.wrapping_add(i as u64),
                    ..rain
                };
                ds.push(data::pair_name(i), data::synth_rain(&clean, &p));
            }
            ds
        }
        None => {
            let count = a
                .count
                .ok_or_else(|| Error::Usage("--count is required without --clean-dir".into()))?;
            Dataset::synthetic(count, a.size, &rain)
        }
    };
    ds.save(&a.out)?;
    println!("wrote {ds} to {}", a.out.display());
    Ok(())
}

fn resolve_config(config: Option<&Path>, preset: &str) -> Result<RunConfig> {
    match config {
        Some(p) => RunConfig::load(p),
        None => RunConfig::from_preset(preset),
    }
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg = resolve_config(a.config.as_deref(), &a.preset)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.train.iterations = n;
    }
    if let Some(p) = a.patch {
        cfg.train.patch = p;
    }
    cfg.train.validate()?;
    print!("{}", cfg.to_text());
    let mut ds = Dataset::load(&a.data)?;
    let held_out = match &a.val {
        Some(dir) => Dataset::load(dir)?.pairs.into_iter().next(),
        None if ds.len() > 1 => {
            ds.names.pop();
            ds.pairs.pop()
        }
        None => None,
    };
    println!("training on {ds}");
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    cfg.save(&a.out.join("config.txt"))?;
    let mut model = Model::<f32>::new(cfg.model.clone(), substream(cfg.train.seed, "init"))?;
    println!("model: {} parameters", model.count_params());
    let report = train::train_loop(&mut model, &ds, held_out.as_ref(), &cfg.train, Some(&a.out))?;
    if let Some(last) = report.rows.last() {
        println!("{}\n{}", train::CSV_HEADER, last.csv());
    }
    println!(
        "trained {} iterations in {:.1}s, checkpoint {}",
        cfg.train.iterations,
        report.seconds,
        a.out.join("final.dfsm").display()
    );
    Ok(())
}

/// Builds the model described by the config next to (or given for) `ckpt`
/// and loads the checkpoint into it.
fn load_model(ckpt: &Path, config: Option<&Path>) -> Result<Model<f32>> {
    let cfg_path = match config {
        Some(p) => p.to_path_buf(),
        None => ckpt.parent().unwrap_or(Path::new(".")).join("config.txt"),
    };
    let cfg = RunConfig::load(&cfg_path)?;
    println!("config {}: preset {} ({:?})", cfg_path.display(), cfg.preset, cfg.model);
    let mut model = Model::<f32>::new(cfg.model, 0)?;
    checkpoint::apply(&mut model.params, &checkpoint::load(ckpt)?)?;
    Ok(model)
}

fn infer(a: &InferArgs) -> Result<()> {
    let model = load_model(&a.ckpt, a.config.as_deref())?;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        data::list_pngs(&a.input)?
            .into_iter()
            .map(|f| {
                let out = a.out.join(f.file_name().unwrap());
                (f, out)
            })
            .collect()
    } else {
        vec![(a.input.clone(), a.out.clone())]
    };
    if jobs.is_empty() {
        return Err(Error::Usage(format!("no PNG files in {}", a.input.display())));
    }
    for (src, dst) in jobs {
        let img = data::load_png(&src)?;
        let y = model.infer(&data::to_tensor::<f32>(&[&img])?)?;
        data::save_png(&data::from_tensor(&y, 0)?, &dst)?;
        println!("{} -> {}", src.display(), dst.display());
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.ckpt, a.config.as_deref())?;
    let ds = Dataset::load(&a.data)?;
    let (mut psnr, mut ssim) = (0.0, 0.0);
    for (name, pair) in ds.names.iter().zip(&ds.pairs) {
        let e = train::evaluate_pair(&model, pair)?;
        println!("{name} PSNR={:.4} SSIM={:.6}", e.psnr, e.ssim);
        psnr += e.psnr;
        ssim += e.ssim;
    }
    let n = ds.len() as f64;
    println!("PSNR={:.4} SSIM={:.6}", psnr / n, ssim / n);
    Ok(())
}

fn spectrum(a: &SpectrumArgs) -> Result<()> {
    let img = data::load_png(&a.input)?;
    let mut x: Tensor<f64> = data::to_tensor(&[&img])?;
    if let Some(other) = &a.diff {
        let o = data::load_png(other)?;
        if o.dimensions() != img.dimensions() {
            return Err(Error::Usage(format!(
                "{} is {:?} but {} is {:?}",
                a.input.display(),
                img.dimensions(),
                other.display(),
                o.dimensions()
            )));
        }
        let y: Tensor<f64> = data::to_tensor(&[&o])?;
        for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
            *p -= q;
        }
        let pair = data::ImagePair {
            rainy: img.clone(),
            clean: o,
            params: RainParams::default(),
        };
        println!("dominant orientation {:.1} deg", data::streak_orientation(&pair)?);
    }
    let s = fft::spectrum_image(&x, !a.no_shift)?;
    let (h, w) = (s.shape().h(), s.shape().w());
    let out = image::RgbImage::from_fn(w as u32, h as u32, |xx, yy| {
        let v = (s.at([0, 0, yy as usize, xx as usize]) * 255.0).round() as u8;
        image::Rgb([v, v, v])
    });
    data::save_png(&out, &a.out)?;
    println!("wrote {}x{} spectrum to {}", w, h, a.out.display());
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let groups = Group::parse(&a.module)?;
    println!("gradcheck module={} seeds={}", a.module, a.seeds);
    let outcomes = suite::run(&groups, a.seeds)?;
    let mut failed = 0;
    for o in &outcomes {
        let worst = o.worst_input.as_deref().map(|w| format!(" ({w})")).unwrap_or_default();
        println!(
            "{:<5} {:<4} {:<24} {:.3e} < {:.0e}{worst}",
            if o.passed() { "ok" } else { "FAIL" },
            o.precision,
            o.name,
            o.error,
            o.tolerance
        );
        failed += usize::from(!o.passed());
    }
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} of {} gradient checks failed", outcomes.len())));
    }
    println!("all {} gradient checks passed", outcomes.len());
    Ok(())
}

fn params(a: &ParamsArgs) -> Result<()> {
    let cfg = resolve_config(a.config.as_deref(), &a.preset)?;
    let model = Model::<f32>::new(cfg.model.clone(), 0)?;
    println!("preset {} {:?}", cfg.preset, cfg.model);
    let plan = StagePlan::new(&cfg.model);
    let mut rows: Vec<(String, usize)> = Vec::new();
    for p in model.params.iter() {
        let stage = stage_of(&p.name, &plan);
        match rows.iter_mut().find(|r| r.0 == stage) {
            Some(r) => r.1 += p.tensor.numel(),
            None => rows.push((stage, p.tensor.numel())),
        }
    }
    for (stage, n) in &rows {
        println!("{stage:<12} {n:>10}");
    }
    let total = model.count_params();
    println!("total        {total:>10} ({:.2}M)", total as f64 / 1e6);
    let f = estimate_flops(&cfg.model, a.size, a.size);
    println!("MACs at {0}x{0}: {1:.2}G", a.size, f.total() / 1e9);
    Ok(())
}

/// `enc.0.ssg.0...` -> `enc.0`; anything else groups by its module path.
fn stage_of(name: &str, plan: &StagePlan) -> String {
    plan.stages
        .iter()
        .map(|s| s.name.as_str())
        .find(|s| name.starts_with(&format!("{s}.")))
        .unwrap_or_else(|| name.rsplit_once('.').map_or(name, |(m, _)| m))
        .to_string()
}
