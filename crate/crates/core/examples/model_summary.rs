//! Parameter counts and multiply-accumulate estimates for each preset.

use dfssm::network::{estimate_flops, Model, ModelConfig, StagePlan};

fn main() -> dfssm::Result<()> {
    for preset in ["toy", "dfssm"] {
        let cfg = ModelConfig::preset(preset)?;
        let model = Model::<f32>::new(cfg.clone(), 0)?;
        let f = estimate_flops(&cfg, 256, 256);
        println!(
            "{preset}: {} parameters ({:.3}M), {:.2} GMAC at 256x256 (conv {:.2}, scan {:.2}, fft {:.3})",
            model.count_params(),
            model.count_params() as f64 / 1e6,
            f.total() / 1e9,
            f.conv / 1e9,
            f.scan / 1e9,
            f.fft / 1e9
        );
        for s in StagePlan::new(&cfg).stages {
            let n: usize = model
                .params
                .iter()
                .filter(|p| p.name.starts_with(&format!("{}.", s.name)))
                .map(|p| p.tensor.numel())
                .sum();
            println!("  {:<8} level {} width {:>3} groups {:?} params {n}", s.name, s.level, s.width, s.groups);
        }
    }
    Ok(())
}
