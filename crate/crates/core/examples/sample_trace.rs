//! Trains briefly, then samples with the trace on and writes a handful of
//! intermediate states as PLY files.
//!
//! `cargo run --release --example sample_trace -- [out_dir]`

use std::path::PathBuf;

use pcdiff::cloud::{generate_synthetic, save_ply, ShapeFamily, PALETTE};
use pcdiff::nn::NetConfig;
use pcdiff::noising::DiffusedCloud;
use pcdiff::sample::{sample_guided, LabelSpec, SamplerConfig, SamplerVariant};
use pcdiff::train::{TrainConfig, Trainer};

fn main() -> pcdiff::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "trace_out".into()));
    std::fs::create_dir_all(&out)?;

    let shape = generate_synthetic(ShapeFamily::Barbell, 64, 7)?.normalize().cloud;
    let cfg = TrainConfig {
        batch_size: 8,
        max_steps: 300,
        seed: 3,
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
    trainer.fit(std::slice::from_ref(&shape), |_, _| Ok(()))?;

    let state = DiffusedCloud::from_cloud(&shape, trainer.config().mode, trainer.config().encoding);
    let z = trainer.model().encode(&state.state, None)?.mu;
    let sampler = SamplerConfig { variant: SamplerVariant::Ancestral, seed: 5, trace: true };
    let spec = LabelSpec::Ratios(vec![0.5, 0.5]);
    let sample = sample_guided(trainer.model(), trainer.schedule(), &z, 512, 2, &spec, trainer.config().encoding, &sampler)?;
    println!("{} states, labels {:?}", sample.trace.len(), sample.cloud.label_counts());

    for s in sample.trace.iter().filter(|s| s.t % 50 == 0) {
        let cloud = s.to_cloud(2, trainer.config().encoding)?;
        let path = out.join(format!("sample_t{}.ply", s.t));
        save_ply(&cloud, &path, &PALETTE)?;
        println!("t={:<3} -> {}", s.t, path.display());
    }
    Ok(())
}
