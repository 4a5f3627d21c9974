//! Mask assembly: `Y = sigmoid(C · Pᵀ)`, thresholding, greedy NMS over the
//! overcomplete candidate set, and orphan attachment.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::eval::iou;
use crate::geometry::sq_dist;
use crate::tensor::{Graph, Var};

/// Graph outputs of [`assemble`].
#[derive(Clone, Copy, Debug)]
pub struct Assembled {
    /// K×N pre-sigmoid mask logits.
    pub raw: Var,
    /// K×N mask probabilities.
    pub scores: Var,
}

/// Combines a K×M coefficient matrix with an N×M prototype matrix.
pub fn assemble(g: &mut Graph, coeffs: Var, protos: Var) -> Result<Assembled> {
    let (cs, ps) = (g.shape(coeffs).to_vec(), g.shape(protos).to_vec());
    if cs.len() != 2 || ps.len() != 2 || cs[1] != ps[1] {
        return Err(Error::Shape {
            op: "assemble",
            left: cs,
            right: ps,
        });
    }
    let pt = g.transpose(protos)?;
    let raw = g.matmul(coeffs, pt)?;
    let scores = g.sigmoid(raw);
    Ok(Assembled { raw, scores })
}

/// A point belongs to the mask iff its score is strictly above `threshold`.
pub fn binarize(row: &[f64], threshold: f64) -> Vec<bool> {
    row.iter().map(|&s| s > threshold).collect()
}

/// Candidate kept by NMS.
#[derive(Clone, Debug, PartialEq)]
pub struct Retained {
    pub row: usize,
    pub confidence: f64,
}

/// The K×N candidate masks of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    k: usize,
    n: usize,
    scores: Vec<f64>,
    /// Sampled point that produced each row.
    pub sample_origin: Vec<usize>,
    pub retained: Vec<Retained>,
}

impl MaskSet {
    pub fn new(k: usize, n: usize, scores: Vec<f64>, sample_origin: Vec<usize>) -> Result<Self> {
        if scores.len() != k * n || sample_origin.len() != k {
            return Err(Error::Shape {
                op: "mask_set",
                left: vec![k, n],
                right: vec![scores.len(), sample_origin.len()],
            });
        }
        Ok(Self {
            k,
            n,
            scores,
            sample_origin,
            retained: Vec::new(),
        })
    }

    pub fn rows(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.scores[r * self.n..(r + 1) * self.n]
    }

    pub fn binary(&self, r: usize, threshold: f64) -> Vec<bool> {
        binarize(self.row(r), threshold)
    }

    /// Mean in-mask probability; 0 for an empty mask.
    pub fn confidence(&self, r: usize, threshold: f64) -> f64 {
        let (sum, count) = self
            .row(r)
            .iter()
            .filter(|&&s| s > threshold)
            .fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Sub-set holding only `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut scores = Vec::with_capacity(rows.len() * self.n);
        for &r in rows {
            scores.extend_from_slice(self.row(r));
        }
        Self {
            k: rows.len(),
            n: self.n,
            scores,
            sample_origin: rows.iter().map(|&r| self.sample_origin[r]).collect(),
            retained: Vec::new(),
        }
    }

    /// Binary masks of the retained rows, in retention order.
    pub fn retained_masks(&self, threshold: f64) -> Vec<Vec<bool>> {
        self.retained
            .iter()
            .map(|r| self.binary(r.row, threshold))
            .collect()
    }
}

/// Greedy NMS. Candidates are ranked by confidence (ties: lower sample
/// origin, then lower row); a kept mask suppresses every remaining mask with
/// IoU >= `iou_threshold`. Empty masks are never kept.
pub fn nms(masks: &MaskSet, threshold: f64, iou_threshold: f64) -> Vec<Retained> {
    let binaries: Vec<Vec<bool>> = (0..masks.rows()).map(|r| masks.binary(r, threshold)).collect();
    let mut order: Vec<(usize, f64)> = (0..masks.rows())
        .filter(|&r| binaries[r].iter().any(|&b| b))
        .map(|r| (r, masks.confidence(r, threshold)))
        .collect();
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(masks.sample_origin[a.0].cmp(&masks.sample_origin[b.0]))
            .then(a.0.cmp(&b.0))
    });
    let mut kept: Vec<Retained> = Vec::new();
    let mut suppressed = vec![false; masks.rows()];
    for (pos, &(r, conf)) in order.iter().enumerate() {
        if suppressed[r] {
            continue;
        }
        kept.push(Retained {
            row: r,
            confidence: conf,
        });
        for &(other, _) in &order[pos + 1..] {
            if !suppressed[other] && iou(&binaries[r], &binaries[other]) >= iou_threshold {
                suppressed[other] = true;
            }
        }
    }
    kept
}

/// Per-point instance ids from retained masks: a point takes the first
/// (most confident) retained mask that covers it, otherwise -1.
pub fn label_points(retained_masks: &[Vec<bool>], n: usize) -> Vec<i32> {
    let mut labels = vec![-1; n];
    for (id, mask) in retained_masks.iter().enumerate() {
        for (l, &m) in labels.iter_mut().zip(mask) {
            if m && *l < 0 {
                *l = id as i32;
            }
        }
    }
    labels
}

/// Assigns every unlabeled point to the instance owning its nearest member
/// point of the same semantic class, falling back to the globally nearest
/// member. Distance ties go to the lower instance id. With no instance at
/// all, every point becomes instance 0.
pub fn attach_orphans(labels: &[i32], coords: &[f64], semantic: &[i32]) -> Vec<i32> {
    let n = labels.len();
    let members: Vec<usize> = (0..n).filter(|&i| labels[i] >= 0).collect();
    if members.is_empty() {
        return vec![0; n];
    }
    let xyz = |i: usize| &coords[i * 3..i * 3 + 3];
    let better = |cand: (f64, i32), best: Option<(f64, i32)>| match best {
        None => true,
        Some((d, id)) => cand.0 < d || (cand.0 == d && cand.1 < id),
    };
    let mut out = labels.to_vec();
    for i in 0..n {
        if labels[i] >= 0 {
            continue;
        }
        let mut same: Option<(f64, i32)> = None;
        let mut any: Option<(f64, i32)> = None;
        for &j in &members {
            let cand = (sq_dist(xyz(i), xyz(j)), labels[j]);
            if semantic[j] == semantic[i] && better(cand, same) {
                same = Some(cand);
            }
            if better(cand, any) {
                any = Some(cand);
            }
        }
        out[i] = same.or(any).expect("members is non-empty").1;
    }
    out
}
