//! Trains the toy model briefly, saves a checkpoint, restores it into a
//! fresh model and derains an unseen image.
//!
//! ```text
//! cargo run --release --example derain_checkpoint -- [out_dir] [iterations]
//! ```

use std::path::PathBuf;

use dfssm::checkpoint;
use dfssm::data::{self, Dataset, RainParams};
use dfssm::metrics;
use dfssm::network::{Model, ModelConfig};
use dfssm::train::{train_loop, TrainConfig};

fn main() -> dfssm::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "derain_out".into()));
    let iterations = args.next().map_or(Ok(60), |a| a.parse()).expect("iterations");

    let rain = RainParams { seed: 5, ..Default::default() };
    let train = Dataset::synthetic(6, 48, &rain);
    let config = ModelConfig::preset("toy")?;
    let mut model = Model::<f32>::new(config.clone(), 1)?;
    let cfg = TrainConfig { iterations, batch: 2, patch: 32, lr_init: 2e-3, log_every: 20, ..Default::default() };
    train_loop(&mut model, &train, None, &cfg, Some(&out))?;

    let mut restored = Model::<f32>::new(config, 99)?;
    checkpoint::apply(&mut restored.params, &checkpoint::load(&out.join("final.dfsm"))?)?;

    let scene = data::procedural_scene(64, 48, 1234);
    let pair = data::synth_rain(&scene, &RainParams { seed: 77, ..rain });
    let y = restored.infer(&data::to_tensor::<f32>(&[&pair.rainy])?)?;
    let derained = data::from_tensor(&y, 0)?;
    data::save_png(&pair.rainy, &out.join("rainy.png"))?;
    data::save_png(&derained, &out.join("derained.png"))?;
    println!(
        "unseen image: rainy {:.2} dB -> derained {:.2} dB",
        metrics::psnr_y(&pair.rainy, &scene)?,
        metrics::psnr_y(&derained, &scene)?
    );
    Ok(())
}
