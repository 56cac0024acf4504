//! Forward diffusion of one chair: how fast each mode forgets the shape.
//! Guided noising leaves the label channel alone, unguided noises it too.

use pcdiff::cloud::{generate_synthetic, ShapeFamily};
use pcdiff::noising::{noise_guided, noise_unguided, DiffusedCloud, LabelEncoding, Mode, NoiseField};
use pcdiff::rng::{self, Purpose};
use pcdiff::schedule::VarianceSchedule;

fn stats(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64)
}

fn main() -> pcdiff::Result<()> {
    let schedule = VarianceSchedule::default();
    let cloud = generate_synthetic(ShapeFamily::Chair, 4096, 0)?.normalize().cloud;
    println!("{:>4} {:>9} {:>16} {:>16} {:>16}", "t", "alpha_bar", "guided x var", "guided label var", "unguided label var");
    for t in [1, 10, 25, 50, 100, 150, 200] {
        let mut r = rng::stream(0, Purpose::Noise, &[t as u64]);
        let guided = {
            let x0 = DiffusedCloud::from_cloud(&cloud, Mode::Guided, LabelEncoding::Centered);
            noise_guided(&x0, &schedule, t, &NoiseField::sample(&mut r, x0.len(), Mode::Guided))?
        };
        let unguided = {
            let x0 = DiffusedCloud::from_cloud(&cloud, Mode::Unguided, LabelEncoding::Centered);
            noise_unguided(&x0, &schedule, t, &NoiseField::sample(&mut r, x0.len(), Mode::Unguided))?
        };
        let (_, gx) = stats(guided.state.iter().map(|v| v[0]));
        let (_, gl) = stats(guided.label_channel().into_iter());
        let (_, ul) = stats(unguided.label_channel().into_iter());
        println!("{t:>4} {:>9.4} {gx:>16.4} {gl:>16.4} {ul:>16.4}", schedule.alpha_bar(t)?);
    }
    Ok(())
}
