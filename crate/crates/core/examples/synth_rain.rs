//! Renders streak rain over procedural scenes and writes a paired dataset
//! (`rainy/`, `clean/`, `manifest.txt`).
//!
//! ```text
//! cargo run --release --example synth_rain -- <out_dir> [count] [theta]
//! ```

use std::path::PathBuf;

use dfssm::data::{Dataset, RainParams};
use dfssm::metrics;

fn main() -> dfssm::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "rain_pairs".into()));
    let count = args.next().map_or(Ok(4), |a| a.parse()).expect("count");
    let theta = args.next().map_or(Ok(15.0), |a| a.parse()).expect("theta");

    let rain = RainParams { theta, ..Default::default() };
    let ds = Dataset::synthetic(count, 96, &rain);
    for (name, p) in ds.names.iter().zip(&ds.pairs) {
        println!(
            "{}  PSNR {:.2} dB  SSIM {:.4}",
            p.params.manifest_line(name),
            metrics::psnr_y(&p.rainy, &p.clean)?,
            metrics::ssim_y(&p.rainy, &p.clean)?
        );
    }
    ds.save(&out)?;
    println!("wrote {ds} to {}", out.display());
    Ok(())
}
