//! Generation metrics between synthetic sets: two barbell populations look
//! alike, barbells against chairs do not.

use pcdiff::cloud::{generate_synthetic, LabeledPointCloud, ShapeFamily};
use pcdiff::metrics::{build_report, DEFAULT_JSD_RESOLUTION};

fn set(family: ShapeFamily, count: u64, offset: u64) -> pcdiff::Result<Vec<LabeledPointCloud>> {
    (0..count).map(|i| Ok(generate_synthetic(family, 256, offset + i)?.normalize().cloud)).collect()
}

fn main() -> pcdiff::Result<()> {
    let reference = set(ShapeFamily::Barbell, 32, 0)?;
    for (name, gen) in [
        ("barbell vs barbell", set(ShapeFamily::Barbell, 32, 100)?),
        ("chair vs barbell", set(ShapeFamily::Chair, 32, 100)?),
    ] {
        println!("{name}");
        print!("{}", build_report(&gen, &reference, DEFAULT_JSD_RESOLUTION)?.to_text());
        println!();
    }
    Ok(())
}
