//! Estimates the streak direction of synthetic rain from the Fourier
//! amplitude of the rain layer and writes one spectrum image per angle.
//!
//! ```text
//! cargo run --release --example rain_spectrum -- [out_dir]
//! ```

use std::path::PathBuf;

use dfssm::data::{self, RainParams};
use dfssm::fft;
use dfssm::Tensor;

fn main() -> dfssm::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "spectra".into()));
    let clean = data::procedural_scene(128, 128, 7);
    for theta in [0.0, 30.0, 60.0, -45.0] {
        let pair = data::synth_rain(&clean, &RainParams { theta, length: 16, density: 0.01, ..Default::default() });
        let found = data::streak_orientation(&pair)?;
        let want = data::expected_spectrum_orientation(theta);
        println!(
            "theta {theta:>5.1}: spectrum peak {found:>5.1} deg, expected {want:>5.1} (off by {:.1})",
            fft::orientation_distance(found, want)
        );

        let mut diff: Tensor<f64> = data::to_tensor(&[&pair.rainy])?;
        let clean_t: Tensor<f64> = data::to_tensor(&[&pair.clean])?;
        for (d, c) in diff.data_mut().iter_mut().zip(clean_t.data()) {
            *d -= c;
        }
        let s = fft::spectrum_image(&diff, true)?;
        let img = image::RgbImage::from_fn(128, 128, |x, y| {
            let v = (s.at([0, 0, y as usize, x as usize]) * 255.0).round() as u8;
            image::Rgb([v, v, v])
        });
        data::save_png(&img, &out.join(format!("theta_{theta}.png")))?;
    }
    println!("spectra in {}", out.display());
    Ok(())
}
