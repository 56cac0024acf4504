//! Overfits a compact guided model on one barbell and saves a checkpoint.
//!
//! `cargo run --release --example train_guided -- [steps] [checkpoint path]`

use pcdiff::cloud::{generate_synthetic, ShapeFamily};
use pcdiff::nn::NetConfig;
use pcdiff::train::{log_line, TrainConfig, Trainer, LOG_HEADER};

fn main() -> pcdiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(500, |s| s.parse().expect("steps"));
    let out = args.next().unwrap_or_else(|| "guided.ckpt".into());

    let shape = generate_synthetic(ShapeFamily::Barbell, 64, 7)?.normalize().cloud;
    let cfg = TrainConfig {
        batch_size: 8,
        max_steps: steps,
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
    let mut trainer = Trainer::new(cfg, shape.num_classes())?;
    println!("probe before: {}", trainer.probe(&shape, 16)?);
    println!("{LOG_HEADER}");
    trainer.fit(std::slice::from_ref(&shape), |tr, loss| {
        if tr.step() % 50 == 0 {
            println!("{}", log_line(tr.step(), loss));
        }
        Ok(())
    })?;
    println!("probe after:  {}", trainer.probe(&shape, 16)?);
    trainer.checkpoint().save(&out)?;
    println!("saved {out}");
    Ok(())
}
