//! Y-channel PSNR and SSIM of a procedural scene under growing noise and
//! under rain.

use dfssm::data::{self, RainParams};
use dfssm::metrics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dfssm::Result<()> {
    let clean = data::procedural_scene(96, 96, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for amp in [1.0, 4.0, 16.0, 48.0] {
        let mut noisy = clean.clone();
        for p in noisy.pixels_mut() {
            for c in p.0.iter_mut() {
                *c = (f64::from(*c) + rng.random_range(-amp..amp)).clamp(0.0, 255.0).round() as u8;
            }
        }
        println!(
            "noise +-{amp:<4}  PSNR {:6.2} dB  SSIM {:.4}",
            metrics::psnr_y(&noisy, &clean)?,
            metrics::ssim_y(&noisy, &clean)?
        );
    }
    for intensity in [0.2, 0.6, 1.0] {
        let pair = data::synth_rain(&clean, &RainParams { intensity, ..Default::default() });
        println!(
            "rain {intensity:<7}  PSNR {:6.2} dB  SSIM {:.4}",
            metrics::psnr_y(&pair.rainy, &clean)?,
            metrics::ssim_y(&pair.rainy, &clean)?
        );
    }
    Ok(())
}
