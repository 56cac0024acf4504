//! Training objectives.
//!
//! Guided: spatial noise MSE + label-channel penalty toward zero + per-class
//! Chamfer between the one-step reconstruction and the clean cloud, plus the
//! weighted KL of the latent. Unguided: four-channel noise MSE plus weighted KL.
//!
//! Every loss has a plain `f64` form and a taped form; the training loop uses
//! the taped forms and the tests hold the two together.

use std::fmt;

use crate::chamfer::{dist2, per_class_cd, PerClassCd};
use crate::error::{Error, Result};
use crate::grad::{Tape, Var};
use crate::noising::{NoiseField, CHANNELS, LABEL_CHANNEL};

/// Default weight of the KL term.
pub const DEFAULT_KL_WEIGHT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub spatial_mse: f64,
    pub label_mse: f64,
    pub per_class_cd: f64,
    pub kl: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.spatial_mse, self.label_mse, self.per_class_cd, self.kl, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Component-wise mean, reduced in slice order.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.spatial_mse += b.spatial_mse;
            acc.label_mse += b.label_mse;
            acc.per_class_cd += b.per_class_cd;
            acc.kl += b.kl;
            acc.total += b.total;
        }
        LossBreakdown {
            spatial_mse: acc.spatial_mse / n,
            label_mse: acc.label_mse / n,
            per_class_cd: acc.per_class_cd / n,
            kl: acc.kl / n,
            total: acc.total / n,
        }
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "spatial_mse={} label_mse={} per_class_cd={} kl={} total={}",
            self.spatial_mse, self.label_mse, self.per_class_cd, self.kl, self.total
        )
    }
}

fn shape_err(op: &'static str, a: usize, b: usize) -> Error {
    Error::Shape {
        op,
        lhs: vec![a],
        rhs: vec![b],
    }
}

/// `((1/n) sum |e_xyz - e_rand|^2, (1/n) sum e_c^2)`.
pub fn guided_mse(e_theta: &NoiseField, e_rand: &[[f64; 3]]) -> Result<(f64, f64)> {
    if e_theta.len() != e_rand.len() || e_rand.is_empty() {
        return Err(shape_err("guided_mse", e_theta.len(), e_rand.len()));
    }
    let n = e_rand.len() as f64;
    let mut spatial = 0.0;
    let mut label = 0.0;
    for (e, r) in e_theta.values.iter().zip(e_rand) {
        for c in 0..3 {
            spatial += (e[c] - r[c]) * (e[c] - r[c]);
        }
        label += e[LABEL_CHANNEL] * e[LABEL_CHANNEL];
    }
    Ok((spatial / n, label / n))
}

/// `(1/n) sum |e_theta - e_rand|^2` over all four channels.
pub fn unguided_mse(e_theta: &NoiseField, e_rand: &NoiseField) -> Result<f64> {
    if e_theta.len() != e_rand.len() || e_rand.is_empty() {
        return Err(shape_err("unguided_mse", e_theta.len(), e_rand.len()));
    }
    let s: f64 = e_theta
        .values
        .iter()
        .zip(&e_rand.values)
        .map(|(a, b)| (0..CHANNELS).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(s / e_rand.len() as f64)
}

/// Inputs of one guided loss evaluation in plain form.
pub struct GuidedTerms<'a> {
    pub e_theta: &'a NoiseField,
    pub e_rand: &'a [[f64; 3]],
    /// Spatial channels of the noised state.
    pub noised_xyz: &'a [[f64; 3]],
    pub x0: &'a [[f64; 3]],
    pub labels: &'a [u32],
    pub kl: f64,
}

/// Reconstructs `noised_xyz - e_theta[:, :3]`, compares it class-by-class with
/// `x0` under the original labels, and sums all terms.
pub fn guided_total(terms: &GuidedTerms, kl_weight: f64) -> Result<LossBreakdown> {
    let (spatial_mse, label_mse) = guided_mse(terms.e_theta, terms.e_rand)?;
    if terms.noised_xyz.len() != terms.e_theta.len() {
        return Err(shape_err("guided_total", terms.noised_xyz.len(), terms.e_theta.len()));
    }
    let recon: Vec<[f64; 3]> = terms
        .noised_xyz
        .iter()
        .zip(&terms.e_theta.values)
        .map(|(x, e)| [x[0] - e[0], x[1] - e[1], x[2] - e[2]])
        .collect();
    let cd = per_class_cd(&recon, terms.labels, terms.x0, terms.labels)?.value;
    Ok(LossBreakdown {
        spatial_mse,
        label_mse,
        per_class_cd: cd,
        kl: terms.kl,
        total: spatial_mse + label_mse + cd + kl_weight * terms.kl,
    })
}

/// Unguided objective. The four-channel MSE is reported split into its
/// spatial and label parts; `per_class_cd` is zero.
pub fn unguided_total(e_theta: &NoiseField, e_rand: &NoiseField, kl: f64, kl_weight: f64) -> Result<LossBreakdown> {
    let mse = unguided_mse(e_theta, e_rand)?;
    let n = e_rand.len() as f64;
    let label_mse = e_theta
        .values
        .iter()
        .zip(&e_rand.values)
        .map(|(a, b)| (a[LABEL_CHANNEL] - b[LABEL_CHANNEL]).powi(2))
        .sum::<f64>()
        / n;
    Ok(LossBreakdown {
        spatial_mse: mse - label_mse,
        label_mse,
        per_class_cd: 0.0,
        kl,
        total: mse + kl_weight * kl,
    })
}

// Taped forms.

/// Taped [`guided_mse`]: `e_theta` is `[n, 4]`, `e_rand` a row-major `n x 3`.
pub fn guided_mse_on(tape: &mut Tape, e_theta: Var, e_rand: &[f64]) -> Result<(Var, Var)> {
    let n = tape.shape(e_theta)[0];
    if e_rand.len() != n * 3 {
        return Err(shape_err("guided_mse", n * 3, e_rand.len()));
    }
    let xyz = tape.select_columns(e_theta, &[0, 1, 2], 1.0)?;
    let diff = tape.sub_const(xyz, e_rand)?;
    let sq = tape.square(diff);
    let s = tape.sum(sq);
    let spatial = tape.scale(s, 1.0 / n as f64)?;
    let c = tape.select_columns(e_theta, &[LABEL_CHANNEL], 1.0)?;
    let csq = tape.square(c);
    let cs = tape.sum(csq);
    let label = tape.scale(cs, 1.0 / n as f64)?;
    Ok((spatial, label))
}

/// Taped four-channel MSE, returned as `(spatial part, label part)`.
pub fn unguided_mse_on(tape: &mut Tape, e_theta: Var, e_rand: &[f64]) -> Result<(Var, Var)> {
    let n = tape.shape(e_theta)[0];
    if e_rand.len() != n * CHANNELS {
        return Err(shape_err("unguided_mse", n * CHANNELS, e_rand.len()));
    }
    let diff = tape.sub_const(e_theta, e_rand)?;
    let xyz = tape.select_columns(diff, &[0, 1, 2], 1.0)?;
    let sq = tape.square(xyz);
    let s = tape.sum(sq);
    let spatial = tape.scale(s, 1.0 / n as f64)?;
    let c = tape.select_columns(diff, &[LABEL_CHANNEL], 1.0)?;
    let csq = tape.square(c);
    let cs = tape.sum(csq);
    let label = tape.scale(cs, 1.0 / n as f64)?;
    Ok((spatial, label))
}

/// Taped per-class Chamfer between `recon` (`[n, 3]`, differentiable) with
/// `labels` and a constant target cloud.
///
/// Nearest neighbors are found on the current values; the distance terms
/// are then rebuilt from primitives so gradients flow through the matched
/// pairs, exactly as the derivative of a min does.
pub fn per_class_cd_on(
    tape: &mut Tape,
    recon: Var,
    labels: &[u32],
    target: &[[f64; 3]],
    target_labels: &[u32],
) -> Result<(Var, PerClassCd)> {
    let n = tape.shape(recon)[0];
    if labels.len() != n || target.len() != target_labels.len() {
        return Err(shape_err("per_class_cd", n, labels.len()));
    }
    let r: Vec<[f64; 3]> = tape.value(recon).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let report = per_class_cd(&r, labels, target, target_labels)?;
    let shared: Vec<u32> = report.per_class.iter().map(|(c, _)| *c).collect();
    let inv_classes = 1.0 / shared.len() as f64;

    let members = |ls: &[u32], c: u32| -> Vec<usize> { (0..ls.len()).filter(|&i| ls[i] == c).collect() };

    // recon -> target: one constant target row and weight per recon row.
    let mut t1 = vec![0.0; n * 3];
    let mut w1 = vec![0.0; n * 3];
    // target -> recon: gather matrix selecting the matched recon row.
    let mut rows2: Vec<(usize, usize, f64)> = Vec::new();
    for &c in &shared {
        let (pi, qi) = (members(labels, c), members(target_labels, c));
        let w_p = inv_classes / pi.len() as f64;
        for &i in &pi {
            let best = nearest_in(&r[i], target, &qi);
            t1[i * 3..i * 3 + 3].copy_from_slice(&target[best]);
            w1[i * 3..i * 3 + 3].fill(w_p);
        }
        let w_q = inv_classes / qi.len() as f64;
        for &j in &qi {
            let best = nearest_in(&target[j], &r, &pi);
            rows2.push((j, best, w_q));
        }
    }
    for i in 0..n {
        if w1[i * 3] == 0.0 {
            t1[i * 3..i * 3 + 3].copy_from_slice(&r[i]);
        }
    }

    let d1 = tape.sub_const(recon, &t1)?;
    let sq1 = tape.square(d1);
    let w1v = tape.constant(vec![n, 3], w1)?;
    let weighted1 = tape.mul(sq1, w1v)?;
    let term1 = tape.sum(weighted1);

    let m = rows2.len();
    let mut gather = vec![0.0; m * n];
    let mut q_rows = vec![0.0; m * 3];
    let mut w2 = vec![0.0; m * 3];
    for (row, &(j, i, w)) in rows2.iter().enumerate() {
        gather[row * n + i] = 1.0;
        q_rows[row * 3..row * 3 + 3].copy_from_slice(&target[j]);
        w2[row * 3..row * 3 + 3].fill(w);
    }
    let g = tape.constant(vec![m, n], gather)?;
    let picked = tape.matmul(g, recon)?;
    let d2 = tape.sub_const(picked, &q_rows)?;
    let sq2 = tape.square(d2);
    let w2v = tape.constant(vec![m, 3], w2)?;
    let weighted2 = tape.mul(sq2, w2v)?;
    let term2 = tape.sum(weighted2);

    let total = tape.add(term1, term2)?;
    Ok((total, report))
}

fn nearest_in(p: &[f64; 3], pool: &[[f64; 3]], candidates: &[usize]) -> usize {
    let mut best = (candidates[0], f64::INFINITY);
    for &j in candidates {
        let d = dist2(p, &pool[j]);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Loss vars produced on a tape along with their values.
#[derive(Clone, Copy, Debug)]
pub struct TapedLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// Taped guided objective. `noised_xyz` and `x0` are row-major `n x 3`.
#[allow(clippy::too_many_arguments)]
pub fn guided_total_on(
    tape: &mut Tape,
    e_theta: Var,
    e_rand: &[f64],
    noised_xyz: &[f64],
    x0: &[[f64; 3]],
    labels: &[u32],
    kl: Var,
    kl_weight: f64,
) -> Result<TapedLoss> {
    let (spatial, label) = guided_mse_on(tape, e_theta, e_rand)?;
    let neg_eps = tape.select_columns(e_theta, &[0, 1, 2], -1.0)?;
    let n = tape.shape(e_theta)[0];
    let base = tape.constant(vec![n, 3], noised_xyz.to_vec())?;
    let recon = tape.add(neg_eps, base)?;
    let (cd, _) = per_class_cd_on(tape, recon, labels, x0, labels)?;
    let s = tape.add(spatial, label)?;
    let s = tape.add(s, cd)?;
    let wkl = tape.scale(kl, kl_weight)?;
    let total = tape.add(s, wkl)?;
    let breakdown = LossBreakdown {
        spatial_mse: tape.scalar(spatial),
        label_mse: tape.scalar(label),
        per_class_cd: tape.scalar(cd),
        kl: tape.scalar(kl),
        total: tape.scalar(total),
    };
    Ok(TapedLoss { total, breakdown })
}

/// Taped unguided objective. `e_rand` is row-major `n x 4`.
pub fn unguided_total_on(tape: &mut Tape, e_theta: Var, e_rand: &[f64], kl: Var, kl_weight: f64) -> Result<TapedLoss> {
    let (spatial, label) = unguided_mse_on(tape, e_theta, e_rand)?;
    let mse = tape.add(spatial, label)?;
    let wkl = tape.scale(kl, kl_weight)?;
    let total = tape.add(mse, wkl)?;
    let breakdown = LossBreakdown {
        spatial_mse: tape.scalar(spatial),
        label_mse: tape.scalar(label),
        per_class_cd: 0.0,
        kl: tape.scalar(kl),
        total: tape.scalar(total),
    };
    Ok(TapedLoss { total, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{finite_diff_check, Tensor};
    use crate::rng::{self, Purpose};

    fn field(seed: u64, n: usize) -> NoiseField {
        let mut r = rng::stream(seed, Purpose::Noise, &[]);
        NoiseField::sample(&mut r, n, crate::noising::Mode::Unguided)
    }

    fn xyz(f: &NoiseField) -> Vec<[f64; 3]> {
        f.values.iter().map(|v| [v[0], v[1], v[2]]).collect()
    }

    #[test]
    fn guided_mse_hand_values() {
        let rand = field(1, 6);
        let mut perfect = rand.clone();
        perfect.values.iter_mut().for_each(|v| v[3] = 0.0);
        assert_eq!(guided_mse(&perfect, &xyz(&rand)).unwrap(), (0.0, 0.0));
        let e = NoiseField {
            values: vec![[1.0; 4]],
        };
        assert_eq!(guided_mse(&e, &[[0.0; 3]]).unwrap(), (3.0, 1.0));
    }

    #[test]
    fn guided_mse_matches_double_loop() {
        let (e, r) = (field(2, 37), field(3, 37));
        let rx = xyz(&r);
        let (s, l) = guided_mse(&e, &rx).unwrap();
        let (mut s2, mut l2) = (0.0, 0.0);
        for (v, r) in e.values.iter().zip(&rx) {
            for c in 0..3 {
                s2 += (v[c] - r[c]).powi(2);
            }
            l2 += v[3].powi(2);
        }
        assert!((s - s2 / 37.0).abs() < 1e-12 && (l - l2 / 37.0).abs() < 1e-12);

        let mut tape = Tape::new();
        let ev = tape.constant(vec![37, 4], e.flat()).unwrap();
        let (sv, lv) = guided_mse_on(&mut tape, ev, &r.spatial_flat()).unwrap();
        assert!((tape.scalar(sv) - s).abs() < 1e-12);
        assert!((tape.scalar(lv) - l).abs() < 1e-12);
    }

    #[test]
    fn unguided_values() {
        let r = field(4, 9);
        assert_eq!(unguided_total(&r, &r, 2.0, 0.5).unwrap().total, 1.0);
        let a = NoiseField {
            values: vec![[1.0; 4]],
        };
        let b = NoiseField::zeros(1);
        let lb = unguided_total(&a, &b, 7.0, 0.0).unwrap();
        assert_eq!(lb.total, 4.0);
        assert_eq!((lb.spatial_mse, lb.label_mse, lb.per_class_cd), (3.0, 1.0, 0.0));

        let e = field(5, 21);
        let want = {
            let mut s = 0.0;
            for i in 0..21 {
                for c in 0..4 {
                    s += (0.5 * e.values[i][c]).powi(2);
                }
            }
            s / 21.0
        };
        let half = NoiseField {
            values: e.values.iter().map(|v| v.map(|x| x * 0.5)).collect(),
        };
        assert!((unguided_mse(&e, &half).unwrap() - want).abs() < 1e-12);

        let mut tape = Tape::new();
        let ev = tape.constant(vec![21, 4], e.flat()).unwrap();
        let kl = tape.constant_scalar(0.25);
        let tl = unguided_total_on(&mut tape, ev, &half.flat(), kl, 2.0).unwrap();
        assert!((tl.breakdown.total - (want + 0.5)).abs() < 1e-12);
    }

    fn labels(n: usize, k: u32, seed: u64) -> Vec<u32> {
        use rand::Rng;
        let mut r = rng::stream(seed, Purpose::Labels, &[]);
        (0..n).map(|_| r.random_range(0..k)).collect()
    }

    #[test]
    fn taped_per_class_cd_value_matches_plain() {
        for seed in 0..10 {
            let (p, q) = (xyz(&field(seed, 40)), xyz(&field(seed + 100, 33)));
            let (lp, lq) = (labels(40, 3, seed), labels(33, 4, seed + 7));
            let plain = per_class_cd(&p, &lp, &q, &lq).unwrap();
            let mut tape = Tape::new();
            let pv = tape.constant(vec![40, 3], p.iter().flatten().copied().collect()).unwrap();
            let (v, rep) = per_class_cd_on(&mut tape, pv, &lp, &q, &lq).unwrap();
            assert!((tape.scalar(v) - plain.value).abs() < 1e-12);
            assert_eq!(rep, plain);
        }
    }

    #[test]
    fn taped_per_class_cd_gradient() {
        let p = xyz(&field(11, 12));
        let q = xyz(&field(12, 10));
        let (lp, lq) = (labels(12, 2, 1), labels(10, 2, 2));
        let x = Tensor::matrix(12, 3, p.iter().flatten().copied().collect()).unwrap().requiring_grad();
        let report = finite_diff_check(
            |tape, v| Ok(per_class_cd_on(tape, v[0], &lp, &q, &lq)?.0),
            &[x],
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn guided_total_composes_components() {
        let n = 8;
        let e = field(20, n);
        let er = xyz(&field(21, n));
        let noised = xyz(&field(22, n));
        let x0 = xyz(&field(23, n));
        let lab = labels(n, 2, 5);
        let terms = GuidedTerms {
            e_theta: &e,
            e_rand: &er,
            noised_xyz: &noised,
            x0: &x0,
            labels: &lab,
            kl: 3.5,
        };
        let b = guided_total(&terms, 0.1).unwrap();
        let (s, l) = guided_mse(&e, &er).unwrap();
        let recon: Vec<[f64; 3]> = noised.iter().zip(&e.values).map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]]).collect();
        let cd = per_class_cd(&recon, &lab, &x0, &lab).unwrap().value;
        assert!((b.total - (s + l + cd + 0.35)).abs() < 1e-12);
        let b0 = guided_total(&terms, 0.0).unwrap();
        assert_eq!(b0.total, b0.spatial_mse + b0.label_mse + b0.per_class_cd);

        let mut tape = Tape::new();
        let ev = tape.constant(vec![n, 4], e.flat()).unwrap();
        let kl = tape.constant_scalar(3.5);
        let flat = |v: &[[f64; 3]]| v.iter().flatten().copied().collect::<Vec<_>>();
        let tl = guided_total_on(&mut tape, ev, &flat(&er), &flat(&noised), &x0, &lab, kl, 0.1).unwrap();
        assert!((tl.breakdown.total - b.total).abs() < 1e-12);
        assert!((tl.breakdown.per_class_cd - b.per_class_cd).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_leaves_only_kl() {
        let n = 6;
        let er = xyz(&field(30, n));
        let x0 = xyz(&field(31, n));
        let e = NoiseField {
            values: er.iter().map(|v| [v[0], v[1], v[2], 0.0]).collect(),
        };
        let noised: Vec<[f64; 3]> = x0.iter().zip(&er).map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]).collect();
        let lab = labels(n, 2, 9);
        let b = guided_total(
            &GuidedTerms {
                e_theta: &e,
                e_rand: &er,
                noised_xyz: &noised,
                x0: &x0,
                labels: &lab,
                kl: 2.0,
            },
            0.25,
        )
        .unwrap();
        assert!((b.total - 0.5).abs() < 1e-12, "{b}");
    }
}
