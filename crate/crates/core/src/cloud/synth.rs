//! Procedural part-labeled shapes used in place of a scanned corpus.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::LabeledPointCloud;
use crate::apportion::largest_remainder;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Point share of seat, legs and back.
pub const CHAIR_FRACTIONS: [f64; 3] = [0.4, 0.3, 0.3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFamily {
    /// Two spheres joined by nothing: labels 0 (left) and 1 (right).
    Barbell,
    /// Seat slab (0), four legs (1), back slab (2).
    Chair,
    /// A ring cut into `parts` equal arcs, labeled in order.
    Ring { parts: u32 },
}

impl ShapeFamily {
    pub fn num_classes(self) -> u32 {
        match self {
            ShapeFamily::Barbell => 2,
            ShapeFamily::Chair => 3,
            ShapeFamily::Ring { parts } => parts,
        }
    }

    pub fn fractions(self) -> Vec<f64> {
        match self {
            ShapeFamily::Barbell => vec![0.5, 0.5],
            ShapeFamily::Chair => CHAIR_FRACTIONS.to_vec(),
            ShapeFamily::Ring { parts } => vec![1.0 / parts as f64; parts as usize],
        }
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapeFamily::Barbell => f.write_str("barbell"),
            ShapeFamily::Chair => f.write_str("chair"),
            ShapeFamily::Ring { parts } => write!(f, "ring:{parts}"),
        }
    }
}

impl FromStr for ShapeFamily {
    type Err = Error;

    /// `barbell`, `chair`, or `ring:K`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "barbell" | "two-part-barbell" => Ok(ShapeFamily::Barbell),
            "chair" | "three-part-chair" => Ok(ShapeFamily::Chair),
            _ => {
                let parts = s
                    .strip_prefix("ring:")
                    .and_then(|k| k.parse::<u32>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| Error::invalid(format!("unknown shape family {s:?}")))?;
                Ok(ShapeFamily::Ring { parts })
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn sphere_surface(rng: &mut ChaCha8Rng, center: [f64; 3], radius: f64) -> [f64; 3] {
    let z = uniform(rng, -1.0, 1.0);
    let phi = uniform(rng, 0.0, 2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [
        center[0] + radius * r * phi.cos(),
        center[1] + radius * r * phi.sin(),
        center[2] + radius * z,
    ]
}

fn in_box(rng: &mut ChaCha8Rng, lo: [f64; 3], hi: [f64; 3]) -> [f64; 3] {
    [
        uniform(rng, lo[0], hi[0]),
        uniform(rng, lo[1], hi[1]),
        uniform(rng, lo[2], hi[2]),
    ]
}

/// Deterministic under `seed`; every label in `0..K` occurs at least once.
pub fn generate_synthetic(family: ShapeFamily, n: usize, seed: u64) -> Result<LabeledPointCloud> {
    let k = family.num_classes();
    if k == 0 || n < k as usize {
        return Err(Error::invalid(format!("{family} needs at least {k} points, got {n}")));
    }
    let counts = largest_remainder(n, &family.fractions())?;
    let mut rng = rng::stream(seed, Purpose::Synth, &[]);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);

    match family {
        ShapeFamily::Barbell => {
            let half_gap = uniform(&mut rng, 0.55, 0.75);
            let radii = [uniform(&mut rng, 0.2, 0.35), uniform(&mut rng, 0.2, 0.35)];
            for (label, &count) in counts.iter().enumerate() {
                let x = if label == 0 { -half_gap } else { half_gap };
                for _ in 0..count {
                    points.push(sphere_surface(&mut rng, [x, 0.0, 0.0], radii[label]));
                    labels.push(label as u32);
                }
            }
        }
        ShapeFamily::Chair => {
            let w = 0.5 * uniform(&mut rng, 0.85, 1.15);
            let leg = uniform(&mut rng, 0.5, 0.7);
            let back = uniform(&mut rng, 0.6, 0.9);
            let (seat_t, leg_r, back_t) = (0.08, 0.04, 0.06);
            for _ in 0..counts[0] {
                points.push(in_box(&mut rng, [-w, 0.0, -w], [w, seat_t, w]));
                labels.push(0);
            }
            let corners = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)];
            for i in 0..counts[1] {
                let (sx, sz) = corners[i % 4];
                let (cx, cz) = (sx * (w - leg_r), sz * (w - leg_r));
                points.push(in_box(
                    &mut rng,
                    [cx - leg_r, -leg, cz - leg_r],
                    [cx + leg_r, -0.02, cz + leg_r],
                ));
                labels.push(1);
            }
            for _ in 0..counts[2] {
                points.push(in_box(
                    &mut rng,
                    [-w, seat_t + 0.02, -w - back_t],
                    [w, seat_t + 0.02 + back, -w],
                ));
                labels.push(2);
            }
        }
        ShapeFamily::Ring { parts } => {
            let radius = uniform(&mut rng, 0.8, 1.2);
            let tube = 0.08;
            let arc = 2.0 * PI / parts as f64;
            for (label, &count) in counts.iter().enumerate() {
                for _ in 0..count {
                    // Leave the last tenth of every arc empty so parts stay apart.
                    let theta = arc * (label as f64 + uniform(&mut rng, 0.0, 0.9));
                    let around = uniform(&mut rng, 0.0, 2.0 * PI);
                    let r = radius + tube * around.cos();
                    points.push([r * theta.cos(), r * theta.sin(), tube * around.sin()]);
                    labels.push(label as u32);
                }
            }
        }
    }
    LabeledPointCloud::new(points, labels, k)
}
