//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::time::Instant;

use common::inventory::four_level_total;
use common::{naive_freq_loss, naive_rfft2, naive_ssim, oracle_scan, oracle_ss2d, random, scan_store, ScanCase};
use dfssm::blocks::{BlockConfig, ConvBlockKind, FftmMode, Fssb, Mgcb, Ssb};
use dfssm::data::{self, Dataset, RainParams};
use dfssm::fft;
use dfssm::gradcheck::suite::{self, Group};
use dfssm::metrics::{self, luma, psnr_planes, psnr_y, rgb_to_y, ssim_planes, ssim_y, SSIM_K1};
use dfssm::network::{Model, ModelConfig};
use dfssm::tensor::ops;
use dfssm::train::{evaluate, freq_loss, train_loop, TrainConfig};
use dfssm::{checkpoint, ssm, Ctx, Float, ParamStore, Shape, Tape, Tensor, Var};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg.into()) }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let outcomes = suite::run(&Group::ALL, 3).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<_> = outcomes
        .iter()
        .filter(|o| !o.passed())
        .map(|o| format!("{} {} {:.2e}", o.precision, o.name, o.error))
        .collect();
    ensure(failed.is_empty(), failed.join(", "))?;
    for name in ["ssb", "fssb", "fftm", "mgcb", "vssm", "micro_network"] {
        ensure(outcomes.iter().any(|o| o.name == name), format!("{name} missing from the suite"))?;
    }
    let worst64 = outcomes.iter().filter(|o| o.precision == "f64").map(|o| o.error).fold(0.0, f64::max);
    let worst32 = outcomes.iter().filter(|o| o.precision == "f32").map(|o| o.error).fold(0.0, f64::max);
    ensure(secs < 300.0, format!("took {secs:.0}s"))?;
    Ok(format!(
        "{} checks x 3 seeds, worst f64 {worst64:.1e}, worst f32 {worst32:.1e}, {secs:.0}s",
        outcomes.len()
    ))
}

fn oracles() -> Check {
    let mut scan_err = 0.0f64;
    for (i, &(n, d, s, l)) in [(1, 4, 8, 16), (2, 3, 2, 7), (2, 5, 16, 33)].iter().enumerate() {
        let case = ScanCase::random(n, d, s, l, 7 + i as u64);
        let tape = Tape::<f64>::new();
        let v: Vec<_> = case.inputs().into_iter().map(|t| tape.constant(t)).collect();
        let got = ssm::selective_scan(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5], &v[6]).map_err(|e| e.to_string())?;
        scan_err = scan_err.max(max_abs(got.value().data(), &oracle_scan(&case)));
    }
    ensure(scan_err < 1e-5, format!("selective_scan {scan_err:.2e}"))?;

    let mut ss2d_err = 0.0f64;
    for (i, &(n, d, h, w)) in [(1, 2, 4, 4), (2, 3, 3, 5)].iter().enumerate() {
        let (store, dirs) = scan_store(d, 4, 1, 60 + i as u64);
        let x = random::<f64>(Shape::new(n, d, h, w), 70 + i as u64, 1.0);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let got = ssm::ss2d(&ctx, &ctx.input(x.clone()), &dirs).map_err(|e| e.to_string())?;
        ss2d_err = ss2d_err.max(max_abs(got.value().data(), &oracle_ss2d(&x, &store, &dirs)));
    }
    ensure(ss2d_err < 1e-5, format!("ss2d {ss2d_err:.2e}"))?;

    let mut dft_err = 0.0f64;
    for (i, &(h, w)) in [(8, 8), (5, 6), (3, 7)].iter().enumerate() {
        let x = random::<f64>(Shape::new(1, 1, h, w), 80 + i as u64, 1.0);
        let want = naive_rfft2(x.data(), h, w);
        let s = fft::rfft2(&x);
        for (k, v) in want.iter().enumerate() {
            dft_err = dft_err.max((s.re[k] - v.re).abs()).max((s.im[k] - v.im).abs());
        }
        let mut naive = fft::ComplexSpectrum::<f64>::zeros(1, 1, h, w);
        for (k, v) in want.iter().enumerate() {
            naive.re[k] = v.re;
            naive.im[k] = v.im;
        }
        let back = fft::irfft2(&naive).map_err(|e| e.to_string())?;
        dft_err = dft_err.max(max_abs(back.data(), x.data()));
    }
    ensure(dft_err < 1e-4, format!("rfft2/irfft2 {dft_err:.2e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let a = RgbImage::from_fn(23, 17, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
    let b = RgbImage::from_fn(23, 17, |x, y| {
        let p = a.get_pixel(x, y).0;
        Rgb(p.map(|c| (c as i32 + rng.random_range(-30..=30)).clamp(0, 255) as u8))
    });
    let (ya, yb) = (rgb_to_y(&a), rgb_to_y(&b));
    let ssim_err = (ssim_planes(&ya, &yb, 17, 23).map_err(|e| e.to_string())? - naive_ssim(&ya, &yb, 17, 23)).abs();
    ensure(ssim_err < 1e-5, format!("ssim_y {ssim_err:.2e}"))?;

    let mut freq_rel = 0.0f64;
    for (seed, shape) in [(91, Shape::new(1, 3, 8, 8)), (92, Shape::new(2, 1, 5, 7))] {
        let p = random::<f64>(shape, seed, 1.0);
        let t = random::<f64>(shape, seed + 1, 1.0);
        let tape = Tape::new();
        let got = freq_loss(&tape.constant(p.clone()), &tape.constant(t.clone())).map_err(|e| e.to_string())?;
        let want = naive_freq_loss(&p, &t);
        freq_rel = freq_rel.max((got.value().data()[0] - want).abs() / want);
    }
    ensure(freq_rel < 1e-4, format!("freq_loss {freq_rel:.2e}"))?;
    Ok(format!(
        "scan {scan_err:.1e}, ss2d {ss2d_err:.1e}, dft {dft_err:.1e}, ssim {ssim_err:.1e}, freq_loss {freq_rel:.1e} (rel)"
    ))
}

fn block_config(c: usize) -> BlockConfig {
    BlockConfig { channels: c, state: 4, expand: 2, gamma: 2.0, fftm: FftmMode::Full, conv_block: ConvBlockKind::Mgcb }
}

fn eval_block<T: Float>(
    store: &ParamStore<T>,
    x: &Tensor<T>,
    f: impl for<'t> Fn(&Ctx<'t, T>, &Var<'t, T>) -> dfssm::Result<Var<'t, T>>,
) -> Result<Tensor<T>, String> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store);
    Ok(f(&ctx, &ctx.input(x.clone())).map_err(|e| e.to_string())?.value().clone())
}

fn identities() -> Check {
    let e = |r: dfssm::Error| r.to_string();
    let rng = ChaCha8Rng::seed_from_u64;

    let c = block_config(8);
    let mut ssb_store = ParamStore::<f32>::new();
    let ssb = Ssb::new(&mut ssb_store, "blk", &c, &mut rng(5)).map_err(e)?;
    let mut fssb_store = ParamStore::<f32>::new();
    let fssb = Fssb::new(&mut fssb_store, "blk", &c, &mut rng(5)).map_err(e)?;
    let expand = fssb.fftm.expand().ok_or("FFTM has no expansion conv")?.clone();
    for id in [expand.weight, expand.bias.ok_or("expansion conv has no bias")?] {
        let p = fssb_store.get_mut(id);
        p.tensor = Tensor::zeros(p.tensor.shape());
    }
    let x = random::<f32>(Shape::new(2, 8, 16, 16), 6, 1.0);
    ensure(
        eval_block(&ssb_store, &x, |c, v| ssb.forward(c, v))? == eval_block(&fssb_store, &x, |c, v| fssb.forward(c, v))?,
        "FSSB with zeroed FFTM differs from SSB",
    )?;

    let mut store = ParamStore::<f32>::new();
    let m = Mgcb::new(&mut store, "m", &c, &mut rng(3)).map_err(e)?;
    store.get_mut(m.scale).tensor = Tensor::full(store.get(m.scale).tensor.shape(), 0.7);
    let gate = store.get_mut(m.gate_proj.weight);
    gate.tensor = Tensor::zeros(gate.tensor.shape());
    let x = random::<f32>(Shape::new(2, 8, 6, 6), 4, 1.0);
    ensure(eval_block(&store, &x, |c, v| m.forward(c, v))? == x.map(|v| v * 0.7), "MGCB with zeroed gate is not s*x")?;

    let tape = Tape::<f32>::new();
    let input = random::<f32>(Shape::new(2, 3, 8, 8), 8, 1.0);
    let up = ops::pixel_shuffle(&ops::pixel_unshuffle(&tape.constant(input.clone()), 2).map_err(e)?, 2).map_err(e)?;
    ensure(up.value() == &input, "pixel shuffle does not invert unshuffle")?;

    let cfg = ModelConfig::preset("micro").map_err(e)?;
    let mut model = Model::<f32>::new(cfg.clone(), 5).map_err(e)?;
    for p in model.params.iter_mut() {
        p.tensor = p.tensor.map(|v| v + 0.01);
    }
    let img = random::<f32>(Shape::new(1, 3, 8, 8), 9, 1.0).map(|v| 0.5 + 0.5 * v);
    let before = model.infer(&img).map_err(e)?;
    let dir = tempfile::tempdir().map_err(|err| err.to_string())?;
    let path = dir.path().join("m.dfsm");
    checkpoint::save(&path, &model.params).map_err(e)?;
    let mut fresh = Model::<f32>::new(cfg, 99).map_err(e)?;
    checkpoint::apply(&mut fresh.params, &checkpoint::load(&path).map_err(e)?).map_err(e)?;
    ensure(fresh.infer(&img).map_err(e)? == before, "checkpoint round trip changed the output")?;

    for name in ["head.weight", "head.bias"] {
        let head = model.params.by_name_mut(name).ok_or(format!("no {name}"))?;
        head.tensor = Tensor::zeros(head.tensor.shape());
    }
    let img = random::<f32>(Shape::new(2, 3, 9, 6), 10, 1.0).map(|v| 0.5 + 0.5 * v);
    ensure(model.infer(&img).map_err(e)? == img, "zeroed head is not the identity")?;
    Ok("FSSB/SSB, MGCB gate, shuffle pair, checkpoint, global skip all bitwise equal".into())
}

fn fft_properties() -> Check {
    let (mut trip, mut parseval, mut linear) = (0.0f64, 0.0f64, 0.0f64);
    for (i, &(h, w)) in [(8, 8), (6, 7), (5, 6), (1, 9), (16, 12)].iter().enumerate() {
        let x = random::<f64>(Shape::new(1, 2, h, w), 100 + i as u64, 1.0);
        let y = random::<f64>(Shape::new(1, 2, h, w), 200 + i as u64, 1.0);
        let back = fft::irfft2(&fft::rfft2(&x)).map_err(|e| e.to_string())?;
        trip = trip.max(back.max_abs_diff(&x));

        let s = fft::rfft2(&x);
        let wh = w / 2 + 1;
        let energy: f64 = (0..s.re.len())
            .map(|k| {
                let l = k % wh;
                let c = if l == 0 || (w % 2 == 0 && l == w / 2) { 1.0 } else { 2.0 };
                c * (s.re[k] * s.re[k] + s.im[k] * s.im[k])
            })
            .sum::<f64>()
            / (h * w) as f64;
        let direct: f64 = x.data().iter().map(|v| v * v).sum();
        parseval = parseval.max((energy - direct).abs() / direct);

        let (a, b) = (1.7, -0.6);
        let mix = Tensor::from_vec(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect())
            .map_err(|e| e.to_string())?;
        let (sm, sx, sy) = (fft::rfft2(&mix), fft::rfft2(&x), fft::rfft2(&y));
        for k in 0..sm.re.len() {
            linear = linear
                .max((sm.re[k] - (a * sx.re[k] + b * sy.re[k])).abs())
                .max((sm.im[k] - (a * sx.im[k] + b * sy.im[k])).abs());
        }
    }
    ensure(trip < 1e-5, format!("round trip {trip:.2e}"))?;
    ensure(parseval < 1e-3, format!("Parseval {parseval:.2e}"))?;
    ensure(linear < 1e-5, format!("linearity {linear:.2e}"))?;
    Ok(format!("round trip {trip:.1e}, Parseval {parseval:.1e} (rel), linearity {linear:.1e}"))
}

struct Run {
    psnr: f64,
    baseline: f64,
    freq: f64,
    seconds: f64,
}

fn overfit(lambda_f: f64) -> Result<Run, String> {
    let e = |r: dfssm::Error| r.to_string();
    let data = Dataset::synthetic(8, 64, &RainParams { seed: 1, ..Default::default() });
    let mut config = ModelConfig::preset("toy").map_err(e)?;
    config.lambda_f = lambda_f;
    let mut model = Model::<f32>::new(config, 0).map_err(e)?;
    let cfg = TrainConfig {
        iterations: 500,
        batch: 4,
        patch: 32,
        lr_init: 2e-3,
        lr_final: 1e-5,
        log_every: 100,
        ..Default::default()
    };
    let report = train_loop(&mut model, &data, None, &cfg, None).map_err(e)?;
    let ev = evaluate(&model, &data).map_err(e)?;
    Ok(Run { psnr: ev.psnr, baseline: ev.baseline_psnr, freq: ev.freq, seconds: report.seconds })
}

fn overfit_smoke() -> Check {
    let with = overfit(0.01)?;
    let without = overfit(0.0)?;
    let gain = with.psnr - with.baseline;
    let summary = format!(
        "lambda_f=0.01: {:.2} -> {:.2} dB ({gain:+.2}) in {:.0}s, freq loss {:.4}; lambda_f=0: {:+.2} dB in {:.0}s, freq loss {:.4}",
        with.baseline,
        with.psnr,
        with.seconds,
        with.freq,
        without.psnr - without.baseline,
        without.seconds,
        without.freq
    );
    ensure(gain >= 3.0, format!("gain below 3 dB: {summary}"))?;
    ensure(with.seconds < 900.0 && without.seconds < 900.0, format!("too slow: {summary}"))?;
    ensure(with.freq < without.freq, format!("frequency loss did not drop: {summary}"))?;
    Ok(summary)
}

fn metric_ground_truths() -> Check {
    let e = |r: dfssm::Error| r.to_string();
    let uniform = |v: u8| RgbImage::from_pixel(15, 15, Rgb([v, v, v]));
    let p: Vec<f64> = (0..50).map(|i| 16.0 + i as f64).collect();
    let q: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
    let unit = psnr_planes(&p, &q);
    ensure((unit - 10.0 * (255.0f64 * 255.0).log10()).abs() < 1e-6, format!("unit offset PSNR {unit}"))?;

    let dy = 2.0 * (65.481 + 128.553 + 24.966) / 255.0;
    let two = psnr_y(&uniform(128), &uniform(130)).map_err(e)?;
    ensure((two - 20.0 * (255.0 / dy as f64).log10()).abs() < 1e-6, format!("gray offset PSNR {two}"))?;
    ensure(psnr_y(&uniform(9), &uniform(9)).map_err(e)? == f64::INFINITY, "identical PSNR is finite")?;

    let same = ssim_y(&uniform(77), &uniform(77)).map_err(e)?;
    ensure((same - 1.0).abs() < 1e-6, format!("identical SSIM {same}"))?;
    let (m1, m2) = (luma([90; 3]), luma([140; 3]));
    let c1 = (SSIM_K1 * metrics::PEAK).powi(2);
    let want = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
    let flat = ssim_y(&uniform(90), &uniform(140)).map_err(e)?;
    ensure((flat - want).abs() < 1e-6, format!("flat SSIM {flat} vs {want}"))?;
    Ok(format!("PSNR {unit:.4} / {two:.4} dB, flat SSIM {flat:.6}"))
}

fn spectrum_direction() -> Check {
    let e = |r: dfssm::Error| r.to_string();
    let clean = data::procedural_scene(64, 64, 7);
    let mut found = Vec::new();
    for theta in [0.0, 30.0, 60.0] {
        let pair = data::synth_rain(&clean, &RainParams { theta, seed: 11, ..Default::default() });
        let got = data::streak_orientation(&pair).map_err(e)?;
        let want = data::expected_spectrum_orientation(theta);
        let off = fft::orientation_distance(got, want);
        ensure(off <= 10.0, format!("theta {theta}: peak {got:.1} vs {want:.1}"))?;
        found.push(format!("{theta}: {got:.0} (perpendicular {want:.0})"));
    }
    Ok(found.join(", "))
}

fn accounting() -> Check {
    let e = |r: dfssm::Error| r.to_string();
    let cfg = ModelConfig::preset("toy").map_err(e)?;
    let toy = Model::<f32>::new(cfg, 0).map_err(e)?.count_params();
    let want = four_level_total(8, 4, 1, 1);
    ensure(toy == want, format!("toy {toy} vs inventory {want}"))?;
    let mut report = format!("toy {toy} exact");
    for (preset, reference) in [("dfssm", 19.0), ("dfssm-s", 7.0)] {
        let cfg = ModelConfig::preset(preset).map_err(e)?;
        let n = Model::<f32>::new(cfg.clone(), 0).map_err(e)?.count_params();
        ensure(n == four_level_total(cfg.channels, cfg.state, cfg.n_ssg, cfg.n_fssg), format!("{preset} count"))?;
        report += &format!(
            "; {preset} {:.2}M (reference {reference}M, {:+.1}%)",
            n as f64 / 1e6,
            100.0 * (n as f64 / 1e6 / reference - 1.0)
        );
    }
    Ok(report)
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracles),
        ("structural identities", identities),
        ("fft properties", fft_properties),
        ("overfit smoke test", overfit_smoke),
        ("metric ground truths", metric_ground_truths),
        ("spectrum directionality", spectrum_direction),
        ("parameter accounting", accounting),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("[{}] PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[{}] FAIL {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
