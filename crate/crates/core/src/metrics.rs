//! Set-level generative metrics over Chamfer distance: JSD of pooled
//! occupancy, MMD, coverage and 1-NNA.
//!
//! Every argmin breaks ties toward the lowest index, so results are
//! reproducible bit for bit.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::chamfer::global_cd;
use crate::error::{Error, Result};

pub const DEFAULT_JSD_RESOLUTION: usize = 28;

type Pts = [[f64; 3]];

fn nonempty<P: AsRef<Pts>>(set: &[P], what: &str) -> Result<()> {
    if set.is_empty() || set.iter().any(|c| c.as_ref().is_empty()) {
        return Err(Error::invalid(format!("{what} set is empty or holds an empty cloud")));
    }
    Ok(())
}

/// Occupancy counts of all points of `set` over an `r^3` grid spanning
/// `[-1, 1]^3`; points outside are clamped to the border cells.
pub fn occupancy<P: AsRef<Pts>>(set: &[P], r: usize) -> Vec<f64> {
    let mut grid = vec![0.0; r * r * r];
    let cell = |x: f64| (((x + 1.0) * 0.5 * r as f64).floor().max(0.0) as usize).min(r - 1);
    for p in set.iter().flat_map(|c| c.as_ref()) {
        grid[(cell(p[0]) * r + cell(p[1])) * r + cell(p[2])] += 1.0;
    }
    let total: f64 = grid.iter().sum();
    grid.iter_mut().for_each(|g| *g /= total);
    grid
}

/// Jensen-Shannon divergence (natural log) of two distributions on the same
/// support; `0 log 0 = 0`. Symmetric bit for bit.
pub fn jsd_distributions(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::Shape {
            op: "jsd",
            lhs: vec![p.len()],
            rhs: vec![q.len()],
        });
    }
    let term = |a: f64, m: f64| if a > 0.0 { a * (a / m).ln() } else { 0.0 };
    Ok(p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = (a + b) * 0.5;
            0.5 * (term(a, m) + term(b, m))
        })
        .sum())
}

/// JSD between the pooled point occupancies of two sets on an `r^3` grid.
pub fn jsd<P: AsRef<Pts>, Q: AsRef<Pts>>(gen: &[P], reference: &[Q], r: usize) -> Result<f64> {
    nonempty(gen, "generated")?;
    nonempty(reference, "reference")?;
    if r < 2 {
        return Err(Error::invalid(format!("grid resolution {r} must be at least 2")));
    }
    jsd_distributions(&occupancy(gen, r), &occupancy(reference, r))
}

/// `d[i][j] = global_cd(rows[i], cols[j])`, computed in parallel.
pub fn cd_matrix<P: AsRef<Pts> + Sync, Q: AsRef<Pts> + Sync>(rows: &[P], cols: &[Q]) -> Result<Vec<Vec<f64>>> {
    rows.par_iter()
        .map(|a| cols.iter().map(|b| global_cd(a.as_ref(), b.as_ref())).collect())
        .collect()
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &d) in row.iter().enumerate() {
        if d < row[best] {
            best = j;
        }
    }
    best
}

/// Mean over reference clouds of the smallest Chamfer distance to any
/// generated cloud.
pub fn mmd_cd<P: AsRef<Pts> + Sync, Q: AsRef<Pts> + Sync>(gen: &[P], reference: &[Q]) -> Result<f64> {
    nonempty(gen, "generated")?;
    nonempty(reference, "reference")?;
    mmd_from(&cd_matrix(reference, gen)?)
}

fn mmd_from(ref_by_gen: &[Vec<f64>]) -> Result<f64> {
    let s: f64 = ref_by_gen.iter().map(|row| row[argmin(row)]).sum();
    Ok(s / ref_by_gen.len() as f64)
}

/// Fraction of reference clouds that are the nearest reference of at least
/// one generated cloud.
pub fn coverage<P: AsRef<Pts> + Sync, Q: AsRef<Pts> + Sync>(gen: &[P], reference: &[Q]) -> Result<f64> {
    nonempty(gen, "generated")?;
    nonempty(reference, "reference")?;
    coverage_from(&cd_matrix(gen, reference)?, reference.len())
}

fn coverage_from(gen_by_ref: &[Vec<f64>], n_ref: usize) -> Result<f64> {
    let mut hit = vec![false; n_ref];
    for row in gen_by_ref {
        hit[argmin(row)] = true;
    }
    Ok(hit.iter().filter(|&&h| h).count() as f64 / n_ref as f64)
}

/// Leave-one-out 1-NN accuracy over `gen ++ reference`; 0.5 is ideal.
pub fn one_nna<P: AsRef<Pts> + Sync, Q: AsRef<Pts> + Sync>(gen: &[P], reference: &[Q]) -> Result<f64> {
    nonempty(gen, "generated")?;
    nonempty(reference, "reference")?;
    let all: Vec<&Pts> = gen.iter().map(|c| c.as_ref()).chain(reference.iter().map(|c| c.as_ref())).collect();
    let n = all.len();
    let d: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if i == j { Ok(f64::INFINITY) } else { global_cd(all[i], all[j]) }).collect())
        .collect::<Result<_>>()?;
    Ok(one_nna_from(&d, gen.len()))
}

fn one_nna_from(d: &[Vec<f64>], n_gen: usize) -> f64 {
    let correct = d
        .iter()
        .enumerate()
        .filter(|(i, row)| (argmin(row) < n_gen) == (*i < n_gen))
        .count();
    correct as f64 / d.len() as f64
}

/// Raw metric values plus the set sizes and grid they were computed with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub jsd: f64,
    pub mmd: f64,
    pub cov: f64,
    pub one_nna: f64,
    pub n_gen: usize,
    pub n_ref: usize,
    pub resolution: usize,
}

/// Rounds to two decimals, ties to even.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round_ties_even() / 100.0
}

impl MetricsReport {
    /// `(jsd x 1e2, mmd x 1e3, cov x 1e2, 1-nna x 1e2)`, each rounded to two
    /// decimals.
    pub fn scaled(&self) -> [f64; 4] {
        [
            round2(self.jsd * 1e2),
            round2(self.mmd * 1e3),
            round2(self.cov * 1e2),
            round2(self.one_nna * 1e2),
        ]
    }

    pub fn to_text(&self) -> String {
        let s = self.scaled();
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>10} {:>22}", "metric", "scaled", "raw");
        for (name, scaled, raw) in [
            ("JSD", s[0], self.jsd),
            ("MMD-CD", s[1], self.mmd),
            ("COV-CD", s[2], self.cov),
            ("1-NNA", s[3], self.one_nna),
        ] {
            let _ = writeln!(out, "{name:<8} {scaled:>10.2} {raw:>22}");
        }
        let _ = writeln!(
            out,
            "gen={} ref={} grid={}  (JSD, COV, 1-NNA x1e2; MMD x1e3)",
            self.n_gen, self.n_ref, self.resolution
        );
        out
    }

    pub fn to_key_values(&self) -> String {
        let s = self.scaled();
        format!(
            "jsd={}\nmmd={}\ncov={}\none_nna={}\njsd_x100={:.2}\nmmd_x1000={:.2}\ncov_x100={:.2}\none_nna_x100={:.2}\nn_gen={}\nn_ref={}\ngrid={}\n",
            self.jsd, self.mmd, self.cov, self.one_nna, s[0], s[1], s[2], s[3], self.n_gen, self.n_ref, self.resolution
        )
    }
}

/// All four metrics. The pairwise distances are computed once over the
/// merged set and shared.
pub fn build_report<P: AsRef<Pts> + Sync, Q: AsRef<Pts> + Sync>(gen: &[P], reference: &[Q], resolution: usize) -> Result<MetricsReport> {
    let jsd = jsd(gen, reference, resolution)?;
    let all: Vec<&Pts> = gen.iter().map(|c| c.as_ref()).chain(reference.iter().map(|c| c.as_ref())).collect();
    let (ng, n) = (gen.len(), all.len());
    let mut d = cd_matrix(&all, &all)?;
    let ref_by_gen: Vec<Vec<f64>> = (ng..n).map(|r| d[r][..ng].to_vec()).collect();
    let gen_by_ref: Vec<Vec<f64>> = (0..ng).map(|g| d[g][ng..].to_vec()).collect();
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = f64::INFINITY;
    }
    Ok(MetricsReport {
        jsd,
        mmd: mmd_from(&ref_by_gen)?,
        cov: coverage_from(&gen_by_ref, n - ng)?,
        one_nna: one_nna_from(&d, ng),
        n_gen: ng,
        n_ref: n - ng,
        resolution,
    })
}
