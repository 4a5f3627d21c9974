//! Farthest point sampling, exact kNN and dilated neighbor selection.
//!
//! All distances are squared Euclidean. Every routine breaks ties by the
//! lower point index so results are reproducible.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::config::SamplingSpace;
use crate::error::{invalid, Error, Result};

/// Borrowed row-major N×D array of points.
#[derive(Clone, Copy, Debug)]
pub struct Points<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(invalid("point array length is not a multiple of its dimension"));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the K sampled seed points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSet {
    pub indices: Vec<usize>,
    pub space: SamplingSpace,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Greedy maximin sampling of `k` rows starting from `start`.
pub fn fps(points: Points<'_>, k: usize, start: usize, space: SamplingSpace) -> Result<SampleSet> {
    let n = points.len();
    if k == 0 {
        return Err(invalid("farthest point sampling needs K >= 1"));
    }
    if k > n {
        return Err(invalid(alloc::format!(
            "cannot sample K={k} points from a cloud of {n}"
        )));
    }
    if start >= n {
        return Err(Error::IndexOutOfRange { index: start, len: n });
    }
    let mut selected = alloc::vec![false; n];
    let mut min_d = alloc::vec![f64::INFINITY; n];
    let mut indices = Vec::with_capacity(k);
    let mut current = start;
    loop {
        selected[current] = true;
        indices.push(current);
        if indices.len() == k {
            break;
        }
        let anchor = points.row(current);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d = sq_dist(points.row(i), anchor);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if best.is_none_or(|(_, bd)| min_d[i] > bd) {
                best = Some((i, min_d[i]));
            }
        }
        current = best.expect("k <= n leaves a candidate").0;
    }
    Ok(SampleSet { indices, space })
}

/// Per-query neighbor lists, ascending by distance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    indices: Vec<usize>,
    k: usize,
}

impl NeighborIndex {
    pub fn from_lists(lists: &[Vec<usize>]) -> Result<Self> {
        let k = lists.first().map_or(0, Vec::len);
        if lists.iter().any(|l| l.len() != k) {
            return Err(invalid("neighbor lists must have equal length"));
        }
        Ok(Self {
            indices: lists.iter().flatten().copied().collect(),
            k,
        })
    }

    /// Neighbors stored per query.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn queries(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }

    /// All lists concatenated in query order.
    pub fn flat(&self) -> &[usize] {
        &self.indices
    }
}

/// Exact k nearest neighbors of each query among `base`.
pub fn knn(queries: Points<'_>, base: Points<'_>, k: usize) -> Result<NeighborIndex> {
    let n = base.len();
    if k > n {
        return Err(invalid(alloc::format!(
            "kNN with k={k} exceeds the {n} available base points"
        )));
    }
    if queries.dim() != base.dim() {
        return Err(Error::Shape {
            op: "knn",
            left: alloc::vec![queries.len(), queries.dim()],
            right: alloc::vec![n, base.dim()],
        });
    }
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    for q in 0..queries.len() {
        let qp = queries.row(q);
        scratch.clear();
        scratch.extend((0..n).map(|i| (sq_dist(base.row(i), qp), i)));
        if k > 0 && k < n {
            scratch.select_nth_unstable_by(k - 1, cmp);
        }
        let head = &mut scratch[..k];
        head.sort_unstable_by(cmp);
        indices.extend(head.iter().map(|&(_, i)| i));
    }
    Ok(NeighborIndex { indices, k })
}

/// Keeps ranks `d-1, 2d-1, ..., kd-1` of every list; `d = 1` is plain kNN.
pub fn dilated_select(nbrs: &NeighborIndex, d: usize, k: usize) -> Result<NeighborIndex> {
    if d == 0 {
        return Err(invalid("dilation factor must be >= 1"));
    }
    let needed = k * d;
    if nbrs.k() < needed {
        return Err(Error::InsufficientNeighbors {
            needed,
            stored: nbrs.k(),
        });
    }
    let mut indices = Vec::with_capacity(nbrs.queries() * k);
    for q in 0..nbrs.queries() {
        let row = nbrs.row(q);
        indices.extend((1..=k).map(|j| row[j * d - 1]));
    }
    Ok(NeighborIndex { indices, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn fps_square_picks_opposite_corner() {
        let pts = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let s = fps(Points::new(&pts, 2).unwrap(), 2, 0, SamplingSpace::Coordinates).unwrap();
        assert_eq!(s.indices, vec![0, 3]);
    }

    #[test]
    fn fps_exhausts_all_points() {
        let pts = [0.0, 1.0, 2.0, 5.0, 3.0];
        for start in 0..5 {
            let s = fps(
                Points::new(&pts, 1).unwrap(),
                5,
                start,
                SamplingSpace::Coordinates,
            )
            .unwrap();
            let mut idx = s.indices.clone();
            idx.sort();
            assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn fps_rejects_bad_k() {
        let pts = [0.0, 1.0];
        let p = Points::new(&pts, 1).unwrap();
        assert!(fps(p, 0, 0, SamplingSpace::Coordinates).is_err());
        assert!(fps(p, 3, 0, SamplingSpace::Coordinates).is_err());
        assert!(fps(p, 1, 2, SamplingSpace::Coordinates).is_err());
    }

    #[test]
    fn fps_on_duplicates_never_repeats() {
        let pts = [0.0, 0.0, 0.0, 0.0];
        let s = fps(Points::new(&pts, 1).unwrap(), 4, 0, SamplingSpace::Features).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn knn_small_cases() {
        let base = [0.0, 1.0, 2.0, 10.0];
        let q = [1.4];
        let nb = knn(Points::new(&q, 1).unwrap(), Points::new(&base, 1).unwrap(), 2).unwrap();
        assert_eq!(nb.row(0), &[1, 2]);
        let q = [10.0];
        let nb = knn(Points::new(&q, 1).unwrap(), Points::new(&base, 1).unwrap(), 1).unwrap();
        assert_eq!(nb.row(0), &[3]);
        assert!(knn(Points::new(&q, 1).unwrap(), Points::new(&base, 1).unwrap(), 5).is_err());
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let base = [1.0, -1.0, 1.0];
        let q = [0.0];
        let nb = knn(Points::new(&q, 1).unwrap(), Points::new(&base, 1).unwrap(), 3).unwrap();
        assert_eq!(nb.row(0), &[0, 1, 2]);
    }

    #[test]
    fn dilated_index_arithmetic() {
        let nb = NeighborIndex::from_lists(&[(0..8).collect()]).unwrap();
        assert_eq!(dilated_select(&nb, 2, 4).unwrap().row(0), &[1, 3, 5, 7]);
        assert_eq!(dilated_select(&nb, 1, 4).unwrap().row(0), &[0, 1, 2, 3]);
        let nb = NeighborIndex::from_lists(&[(0..32).collect()]).unwrap();
        assert_eq!(dilated_select(&nb, 8, 4).unwrap().row(0), &[7, 15, 23, 31]);
        let short = NeighborIndex::from_lists(&[(0..31).collect()]).unwrap();
        assert_eq!(
            dilated_select(&short, 8, 4).unwrap_err(),
            Error::InsufficientNeighbors {
                needed: 32,
                stored: 31
            }
        );
    }
}
