//! Compares taped gradients of the full guided training loss against central
//! finite differences for every parameter of a small network.

use pcdiff::cloud::{generate_synthetic, ShapeFamily};
use pcdiff::grad::{finite_diff_check, Tape, Tensor, Var};
use pcdiff::nn::{Model, NetConfig};
use pcdiff::train::{loss_on, ItemDraws, TrainConfig};

fn main() -> pcdiff::Result<()> {
    let net = NetConfig {
        latent_dim: 8,
        time_dim: 8,
        encoder_widths: vec![16, 32],
        decoder_widths: vec![32, 16],
        ..Default::default()
    };
    let cfg = TrainConfig { net: net.clone(), ..Default::default() };
    let schedule = cfg.schedule.build()?;
    let cloud = generate_synthetic(ShapeFamily::Barbell, 8, 1)?.normalize().cloud;
    let model = Model::new(net, 0)?;
    let draws = ItemDraws::new(&cfg, &schedule, 0, 0, cloud.len());
    println!("t = {}, labels {:?}", draws.t, cloud.labels());

    let program = |tape: &mut Tape, vars: &[Var]| {
        let bound = model.bound_from(vars)?;
        Ok(loss_on(tape, &model, &bound, &cloud, &draws, &cfg, &schedule)?.total)
    };
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let report = finite_diff_check(program, &params, 1e-6)?;
    println!("checked {} coordinates, max relative error {:.3e}", report.checked, report.max_rel_error);
    if let Some((tensor, index)) = report.worst {
        println!("worst at tensor {tensor}, element {index}");
    }
    Ok(())
}
