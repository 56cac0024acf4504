//! Generates a small labeled dataset, writes it as LPCD and one shape as PLY.
//!
//! `cargo run --example synth_export -- [out_dir]`

use std::path::PathBuf;

use pcdiff::cloud::{generate_synthetic, load_dataset, save_dataset, save_ply, Dataset, ShapeFamily, PALETTE};

fn main() -> pcdiff::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_out".into()));
    std::fs::create_dir_all(&out)?;

    for family in [ShapeFamily::Barbell, ShapeFamily::Chair] {
        let shapes = (0..16).map(|s| generate_synthetic(family, 1024, s)).collect::<pcdiff::Result<Vec<_>>>()?;
        let ds = Dataset::new(shapes, family.num_classes())?;
        let name = format!("{family:?}").to_lowercase();
        let path = out.join(format!("{name}.lpcd"));
        save_dataset(&path, &ds)?;
        let back = load_dataset(&path)?;
        println!("{}: {} shapes, label counts of first {:?}", path.display(), back.len(), back.shapes[0].label_counts());
        save_ply(&back.shapes[0], out.join(format!("{name}_0.ply")), &PALETTE)?;
    }
    Ok(())
}
