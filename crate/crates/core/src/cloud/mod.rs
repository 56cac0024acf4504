//! Labeled point clouds and their on-disk forms.

mod lpcd;
mod ply;
mod split;
mod synth;

pub use lpcd::{load_dataset, read_lpcd, save_dataset, write_lpcd, Dataset, SplitTag, LPCD_MAGIC, LPCD_VERSION};
pub use ply::{save_ply, write_ply, PALETTE};
pub use split::{random_tags, split_dataset, SplitMode};
pub use synth::{generate_synthetic, ShapeFamily, CHAIR_FRACTIONS};

use crate::error::{Error, Result};

/// Shipped default point count per cloud.
pub const DEFAULT_POINTS: usize = 2048;

/// `n` points with an integer part label each, labels in `0..num_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPointCloud {
    points: Vec<[f64; 3]>,
    labels: Vec<u32>,
    num_classes: u32,
}

impl AsRef<[[f64; 3]]> for LabeledPointCloud {
    fn as_ref(&self) -> &[[f64; 3]] {
        &self.points
    }
}

impl LabeledPointCloud {
    pub fn new(points: Vec<[f64; 3]>, labels: Vec<u32>, num_classes: u32) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("a point cloud needs at least one point"));
        }
        if points.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} not below K = {num_classes}")));
        }
        Ok(Self {
            points,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    /// Per-label point counts, indexed by label.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes as usize];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        let n = self.points.len() as f64;
        c.map(|v| v / n)
    }

    /// Applies `f` to every coordinate triple, keeping labels.
    pub fn map_points(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        Self {
            points: self.points.iter().map(|p| f(*p)).collect(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
        }
    }

    /// Centers on the centroid and scales to unit max norm. A cloud whose
    /// points all coincide is only shifted (scale 1).
    pub fn normalize(&self) -> Normalized {
        let centroid = self.centroid();
        let centered = self.map_points(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]]);
        let max_norm = centered
            .points
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0, f64::max);
        let scale = if max_norm > 0.0 { max_norm } else { 1.0 };
        let cloud = if scale == 1.0 {
            centered
        } else {
            centered.map_points(|p| p.map(|v| v / scale))
        };
        Normalized { cloud, centroid, scale }
    }

    pub fn denormalize(&self, centroid: [f64; 3], scale: f64) -> Self {
        self.map_points(|p| {
            [
                p[0] * scale + centroid[0],
                p[1] * scale + centroid[1],
                p[2] * scale + centroid[2],
            ]
        })
    }
}

/// Output of [`LabeledPointCloud::normalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub cloud: LabeledPointCloud,
    pub centroid: [f64; 3],
    pub scale: f64,
}
