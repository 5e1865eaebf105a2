//! Trains the toy preset on eight synthetic 64x64 rain pairs and reports the
//! PSNR gain over the rainy input.
//!
//! ```text
//! cargo run --release --example overfit_toy -- [iterations] [lambda_f] [patch]
//! ```

use dfssm::data::{Dataset, RainParams};
use dfssm::network::{Model, ModelConfig};
use dfssm::train::{evaluate, train_loop, TrainConfig};

fn main() -> dfssm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(Ok(200), |a| a.parse()).expect("iterations");
    let lambda_f: f64 = args.next().map_or(Ok(0.01), |a| a.parse()).expect("lambda_f");
    let patch = args.next().map_or(Ok(32), |a| a.parse()).expect("patch");

    let data = Dataset::synthetic(8, 64, &RainParams { seed: 1, ..Default::default() });
    let mut config = ModelConfig::preset("toy")?;
    config.lambda_f = lambda_f;
    let mut model = Model::<f32>::new(config, 0)?;
    let cfg = TrainConfig {
        iterations,
        batch: 4,
        patch,
        lr_init: 2e-3,
        lr_final: 1e-5,
        log_every: 25,
        ..Default::default()
    };
    let report = train_loop(&mut model, &data, None, &cfg, None)?;
    let e = evaluate(&model, &data)?;
    println!(
        "{iterations} iterations in {:.1}s: PSNR {:.2} dB (rainy {:.2} dB, gain {:+.2}), SSIM {:.4}, freq loss {:.5}",
        report.seconds,
        e.psnr,
        e.baseline_psnr,
        e.psnr - e.baseline_psnr,
        e.ssim,
        e.freq
    );
    Ok(())
}
