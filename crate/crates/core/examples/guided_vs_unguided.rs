//! Trains both modes on the same eight barbells and compares reconstruction
//! distances under both samplers.
//!
//! `cargo run --release --example guided_vs_unguided -- [steps] [seed]`

use pcdiff::cli::reconstruction_scores;
use pcdiff::cloud::{generate_synthetic, ShapeFamily};
use pcdiff::nn::NetConfig;
use pcdiff::noising::Mode;
use pcdiff::sample::{SamplerConfig, SamplerVariant};
use pcdiff::train::{TrainConfig, Trainer};

fn main() -> pcdiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(600, |s| s.parse().expect("steps"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let data = (0..8)
        .map(|i| Ok(generate_synthetic(ShapeFamily::Barbell, 64, seed * 1000 + i)?.normalize().cloud))
        .collect::<pcdiff::Result<Vec<_>>>()?;
    println!("{:<9} {:<13} {:>10} {:>13}  (x1e2)", "mode", "sampler", "global CD", "per-class CD");
    for mode in [Mode::Guided, Mode::Unguided] {
        let cfg = TrainConfig {
            mode,
            batch_size: 8,
            max_steps: steps,
            seed,
            net: NetConfig {
                latent_dim: 32,
                time_dim: 16,
                encoder_widths: vec![64, 128, 128],
                decoder_widths: vec![128, 128, 64],
                ..Default::default()
            },
            ..Default::default()
        };
        let mut trainer = Trainer::new(cfg, 2)?;
        trainer.fit(&data, |_, _| Ok(()))?;
        let ck = trainer.checkpoint();
        for variant in [SamplerVariant::PaperDirect, SamplerVariant::Ancestral] {
            let s = reconstruction_scores(&ck, &data, &SamplerConfig { variant, seed: 1, trace: false })?;
            println!("{:<9} {:<13} {:>10.3} {:>13.3}", mode.as_str(), variant.as_str(), s.global_cd * 1e2, s.per_class_cd * 1e2);
        }
    }
    Ok(())
}
