//! Chamfer distances over squared Euclidean nearest-neighbor distances, and
//! the 3-d k-d tree that accelerates them.

use crate::error::{Error, Result};

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// Static k-d tree over borrowed points. Nodes are implicit: each index
/// range stores its median at the middle, split on `depth % 3`.
pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    order: Vec<usize>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        Self::build(points, &mut order, 0);
        Self { points, order }
    }

    fn build(points: &[[f64; 3]], idx: &mut [usize], depth: usize) {
        if idx.len() <= 1 {
            return;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let (left, right) = idx.split_at_mut(mid);
        Self::build(points, left, depth + 1);
        Self::build(points, &mut right[1..], depth + 1);
    }

    /// Index and squared distance of the point closest to `q`; ties go to the
    /// lowest index. `None` for an empty tree.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.order.len(), 0, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, depth: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let i = self.order[mid];
        let p = &self.points[i];
        let d = dist2(q, p);
        if d < best.1 || (d == best.1 && i < best.0) {
            *best = (i, d);
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, depth + 1, best);
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, depth + 1, best);
        }
    }
}

const BRUTE_FORCE_LIMIT: usize = 32;

/// For every point of `from`, the index in `to` of its nearest neighbor and
/// the squared distance.
pub fn nearest_neighbors(from: &[[f64; 3]], to: &[[f64; 3]]) -> Vec<(usize, f64)> {
    if to.len() <= BRUTE_FORCE_LIMIT {
        return from
            .iter()
            .map(|p| {
                let mut best = (usize::MAX, f64::INFINITY);
                for (j, q) in to.iter().enumerate() {
                    let d = dist2(p, q);
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best
            })
            .collect();
    }
    let tree = KdTree::new(to);
    from.iter().map(|p| tree.nearest(p).expect("non-empty target")).collect()
}

fn one_sided(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    nearest_neighbors(from, to).iter().map(|(_, d)| d).sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance with squared distances, each direction
/// averaged over its own point count.
pub fn global_cd(p: &[[f64; 3]], q: &[[f64; 3]]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("Chamfer distance of an empty cloud"));
    }
    Ok(one_sided(p, q) + one_sided(q, p))
}

/// Per-class Chamfer result.
#[derive(Clone, Debug, PartialEq)]
pub struct PerClassCd {
    /// Mean of the per-class distances over shared classes.
    pub value: f64,
    /// `(class, CD_c)` for each class present in both clouds, ascending.
    pub per_class: Vec<(u32, f64)>,
    /// Classes present in exactly one of the clouds; excluded from the mean.
    pub unmatched: Vec<u32>,
}

fn classes(labels: &[u32]) -> Vec<u32> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

fn subset(points: &[[f64; 3]], labels: &[u32], class: u32) -> Vec<[f64; 3]> {
    points
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == class)
        .map(|(p, _)| *p)
        .collect()
}

/// Chamfer distance restricted to same-label pairs, averaged over the
/// classes both clouds contain.
pub fn per_class_cd(p: &[[f64; 3]], p_labels: &[u32], q: &[[f64; 3]], q_labels: &[u32]) -> Result<PerClassCd> {
    if p.len() != p_labels.len() || q.len() != q_labels.len() {
        return Err(Error::invalid("point and label counts differ"));
    }
    let (cp, cq) = (classes(p_labels), classes(q_labels));
    let shared: Vec<u32> = cp.iter().copied().filter(|c| cq.binary_search(c).is_ok()).collect();
    if shared.is_empty() {
        return Err(Error::NoSharedClass { left: cp, right: cq });
    }
    let mut unmatched: Vec<u32> = cp
        .iter()
        .chain(&cq)
        .copied()
        .filter(|c| shared.binary_search(c).is_err())
        .collect();
    unmatched.sort_unstable();
    unmatched.dedup();
    let per_class: Vec<(u32, f64)> = shared
        .iter()
        .map(|&c| {
            let (pc, qc) = (subset(p, p_labels, c), subset(q, q_labels, c));
            (c, one_sided(&pc, &qc) + one_sided(&qc, &pc))
        })
        .collect();
    let value = per_class.iter().map(|(_, d)| d).sum::<f64>() / per_class.len() as f64;
    Ok(PerClassCd {
        value,
        per_class,
        unmatched,
    })
}
