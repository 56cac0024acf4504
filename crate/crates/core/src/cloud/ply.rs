use std::fs;
use std::io::Write;
use std::path::Path;

use super::LabeledPointCloud;
use crate::error::{Error, Result};

/// Part colors, indexed by label.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [128, 0, 0],
    [128, 128, 0],
    [0, 0, 128],
];

/// ASCII PLY with `x y z` (float), `red green blue` (uchar) and `label` (uchar).
pub fn write_ply<W: Write>(mut w: W, cloud: &LabeledPointCloud, palette: &[[u8; 3]]) -> Result<()> {
    if cloud.num_classes() as usize > palette.len() {
        return Err(Error::invalid(format!(
            "{} classes but the palette has {} colors",
            cloud.num_classes(),
            palette.len()
        )));
    }
    let mut out = String::with_capacity(64 * cloud.len() + 256);
    out.push_str("ply\nformat ascii 1.0\ncomment labeled point cloud\n");
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    for p in ["x", "y", "z"] {
        out.push_str(&format!("property float {p}\n"));
    }
    for p in ["red", "green", "blue", "label"] {
        out.push_str(&format!("property uchar {p}\n"));
    }
    out.push_str("end_header\n");
    for (p, &l) in cloud.points().iter().zip(cloud.labels()) {
        let [r, g, b] = palette[l as usize];
        out.push_str(&format!(
            "{} {} {} {r} {g} {b} {l}\n",
            p[0] as f32, p[1] as f32, p[2] as f32
        ));
    }
    w.write_all(out.as_bytes())?;
    Ok(())
}

pub fn save_ply(cloud: &LabeledPointCloud, path: impl AsRef<Path>, palette: &[[u8; 3]]) -> Result<()> {
    let mut buf = Vec::new();
    write_ply(&mut buf, cloud, palette)?;
    fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_header() {
        let c = LabeledPointCloud::new(vec![[0.5, -1.0, 2.0]], vec![0], 1).unwrap();
        let mut buf = Vec::new();
        write_ply(&mut buf, &c, &PALETTE).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l == "element vertex 1"));
        assert_eq!(text.lines().last().unwrap(), "0.5 -1 2 230 25 75 0");
    }

    #[test]
    fn too_many_classes_for_palette() {
        let c = LabeledPointCloud::new(vec![[0.0; 3]], vec![0], 17).unwrap();
        assert!(write_ply(Vec::new(), &c, &PALETTE).is_err());
        let c = LabeledPointCloud::new(vec![[0.0; 3]], vec![0], 3).unwrap();
        assert!(write_ply(Vec::new(), &c, &PALETTE[..2]).is_err());
    }
}
