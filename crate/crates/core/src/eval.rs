//! Instance-segmentation metrics and block merging.
//!
//! Masks are boolean point vectors. Coverage is the (size-weighted) mean over
//! ground-truth instances of the best IoU achieved by any prediction.
//! Precision and recall use one-to-one matching at an IoU threshold, greedy by
//! descending IoU, per semantic class. mAP@0.5 is the all-point interpolated
//! area under each category's precision/recall curve.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

/// |a ∧ b| / |a ∨ b|; two empty masks give 0.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Converts per-point ids into one mask per id `0..=max`, skipping negatives.
pub fn masks_from_labels(labels: &[i32]) -> Vec<Vec<bool>> {
    let count = labels
        .iter()
        .copied()
        .max()
        .map_or(0, |m| (m + 1).max(0) as usize);
    let mut masks = vec![vec![false; labels.len()]; count];
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            masks[l as usize][i] = true;
        }
    }
    masks.retain(|m| m.iter().any(|&b| b));
    masks
}

/// (mCov, mWCov). Both are 0 without predictions.
pub fn coverage_metrics(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> (f64, f64) {
    if pred.is_empty() || gt.is_empty() {
        return (0.0, 0.0);
    }
    let total: usize = gt.iter().map(|g| g.iter().filter(|&&b| b).count()).sum();
    let (mut cov, mut weighted) = (0.0, 0.0);
    for g in gt {
        let best = pred.iter().map(|p| iou(p, g)).fold(0.0, f64::max);
        cov += best;
        weighted += best * g.iter().filter(|&&b| b).count() as f64;
    }
    let wcov = if total == 0 { 0.0 } else { weighted / total as f64 };
    (cov / gt.len() as f64, wcov)
}

/// Number of one-to-one matches with IoU >= `iou_t`, greedy by descending
/// IoU (ties: lower prediction index, then lower GT index).
pub fn greedy_matches(pred: &[Vec<bool>], gt: &[Vec<bool>], iou_t: f64) -> usize {
    let mut pairs = Vec::new();
    for (p, pm) in pred.iter().enumerate() {
        for (g, gm) in gt.iter().enumerate() {
            let v = iou(pm, gm);
            if v >= iou_t {
                pairs.push((v, p, g));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut tp = 0;
    for (_, p, g) in pairs {
        if !used_p[p] && !used_g[g] {
            used_p[p] = true;
            used_g[g] = true;
            tp += 1;
        }
    }
    tp
}

/// An instance mask with its semantic class.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub mask: Vec<bool>,
    pub class: i32,
}

/// Most frequent semantic label among the mask's points (ties: lower label).
pub fn majority_class(mask: &[bool], semantic: &[i32]) -> i32 {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for (&m, &s) in mask.iter().zip(semantic) {
        if m {
            *counts.entry(s).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .fold((-1, 0), |(bc, bn), (c, n)| if n > bn { (c, n) } else { (bc, bn) })
        .0
}

/// Per-class true-positive, prediction and GT counts, summable across scenes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrecRecCounts {
    classes: BTreeMap<i32, (usize, usize, usize)>,
}

impl PrecRecCounts {
    pub fn add_scene(&mut self, pred: &[Instance], gt: &[Instance], iou_t: f64) {
        let mut classes: Vec<i32> = pred.iter().chain(gt).map(|i| i.class).collect();
        classes.sort_unstable();
        classes.dedup();
        for c in classes {
            let p: Vec<Vec<bool>> = pred
                .iter()
                .filter(|i| i.class == c)
                .map(|i| i.mask.clone())
                .collect();
            let g: Vec<Vec<bool>> = gt
                .iter()
                .filter(|i| i.class == c)
                .map(|i| i.mask.clone())
                .collect();
            let tp = greedy_matches(&p, &g, iou_t);
            let e = self.classes.entry(c).or_default();
            e.0 += tp;
            e.1 += p.len();
            e.2 += g.len();
        }
    }

    /// (class, true positives, predictions, GT instances) in class order.
    pub fn classes(&self) -> Vec<(i32, usize, usize, usize)> {
        self.classes
            .iter()
            .map(|(&c, &(tp, p, g))| (c, tp, p, g))
            .collect()
    }

    pub fn true_positives(&self) -> usize {
        self.classes.values().map(|c| c.0).sum()
    }

    /// (mPrec, mRec). Precision averages over classes with predictions or
    /// GT (no predictions counts as 0); recall over classes with GT.
    pub fn mean(&self) -> (f64, f64) {
        let (mut prec, mut np) = (0.0, 0usize);
        let (mut rec, mut nr) = (0.0, 0usize);
        for &(tp, npred, ngt) in self.classes.values() {
            if npred > 0 || ngt > 0 {
                prec += if npred > 0 { tp as f64 / npred as f64 } else { 0.0 };
                np += 1;
            }
            if ngt > 0 {
                rec += tp as f64 / ngt as f64;
                nr += 1;
            }
        }
        let avg = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        (avg(prec, np), avg(rec, nr))
    }
}

/// (mPrec, mRec) of one scene.
pub fn prec_rec(pred: &[Instance], gt: &[Instance], iou_t: f64) -> (f64, f64) {
    let mut c = PrecRecCounts::default();
    c.add_scene(pred, gt, iou_t);
    c.mean()
}

/// A scored prediction for mAP.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub scene: usize,
    pub category: i32,
    pub mask: Vec<bool>,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtInstance {
    pub scene: usize,
    pub category: i32,
    pub mask: Vec<bool>,
}

/// Average precision of one category: detections ranked by confidence
/// (stable for ties), each matched to its best-IoU GT in the same scene; a
/// match needs IoU >= `iou_t` and an unclaimed GT. Returns `None` without GT.
pub fn average_precision(dets: &[&Detection], gts: &[&GtInstance], iou_t: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut claimed = vec![false; gts.len()];
    let mut hits = Vec::with_capacity(order.len());
    for &d in &order {
        let det = dets[d];
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts.iter().enumerate() {
            if g.scene != det.scene {
                continue;
            }
            let v = iou(&det.mask, &g.mask);
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, j));
            }
        }
        let hit = match best {
            Some((v, j)) if v >= iou_t && !claimed[j] => {
                claimed[j] = true;
                true
            }
            _ => false,
        };
        hits.push(hit);
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    for (i, &h) in hits.iter().enumerate() {
        tp += h as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / gts.len() as f64);
    }
    // precision envelope from the right
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    Some(ap)
}

/// Mean AP over categories that have ground truth.
pub fn map50(dets: &[Detection], gts: &[GtInstance]) -> f64 {
    let mut cats: Vec<i32> = gts.iter().map(|g| g.category).collect();
    cats.sort_unstable();
    cats.dedup();
    let aps: Vec<f64> = cats
        .iter()
        .filter_map(|&c| {
            let d: Vec<&Detection> = dets.iter().filter(|d| d.category == c).collect();
            let g: Vec<&GtInstance> = gts.iter().filter(|g| g.category == c).collect();
            average_precision(&d, &g, 0.5)
        })
        .collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Point membership of overlapping blocks within a room.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayout {
    pub size: f64,
    pub stride: f64,
    pub blocks: Vec<Vec<usize>>,
}

/// Merges per-block labelings into one room labeling.
///
/// Blocks are visited in order. Each block instance looks at the points of
/// the block that already carry a global label; it joins the global instance
/// it shares the most of those points with (ties: lower id) when the IoU
/// between its labeled points and that instance's points inside the block is
/// at least `merge_t`, and registers a new instance otherwise. Its points
/// then take the chosen id, overwriting earlier assignments. Output ids are
/// compacted to `0..count` in order of first appearance.
pub fn block_merge(room_points: usize, layout: &BlockLayout, labels: &[Vec<i32>], merge_t: f64) -> Vec<i32> {
    let mut global = vec![-1i32; room_points];
    let mut next = 0i32;
    for (block, block_labels) in layout.blocks.iter().zip(labels) {
        let mut ids: Vec<i32> = block_labels.iter().copied().filter(|&l| l >= 0).collect();
        ids.sort_unstable();
        ids.dedup();
        // decisions use the state before this block is written
        let snapshot = global.clone();
        let mut assignments = Vec::with_capacity(ids.len());
        for id in ids {
            let members: Vec<usize> = block
                .iter()
                .zip(block_labels)
                .filter(|(_, &l)| l == id)
                .map(|(&p, _)| p)
                .collect();
            let mut overlap: BTreeMap<i32, usize> = BTreeMap::new();
            let mut labeled = 0usize;
            for &p in &members {
                if snapshot[p] >= 0 {
                    labeled += 1;
                    *overlap.entry(snapshot[p]).or_default() += 1;
                }
            }
            let best = overlap
                .into_iter()
                .fold(None, |acc: Option<(i32, usize)>, (g, c)| match acc {
                    Some((_, bc)) if bc >= c => acc,
                    _ => Some((g, c)),
                });
            let target = best.and_then(|(g, shared)| {
                let in_block = block.iter().filter(|&&p| snapshot[p] == g).count();
                let union = labeled + in_block - shared;
                let v = if union == 0 {
                    0.0
                } else {
                    shared as f64 / union as f64
                };
                (v >= merge_t).then_some(g)
            });
            let target = target.unwrap_or_else(|| {
                next += 1;
                next - 1
            });
            assignments.push((members, target));
        }
        for (members, target) in assignments {
            for p in members {
                global[p] = target;
            }
        }
    }
    compact(&global)
}

/// Renumbers non-negative ids to `0..count` by first appearance.
pub fn compact(labels: &[i32]) -> Vec<i32> {
    let mut map: BTreeMap<i32, i32> = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                let n = map.len() as i32;
                *map.entry(l).or_insert(n)
            }
        })
        .collect()
}

/// True when two labelings induce the same partition (up to renaming).
pub fn same_partition(a: &[i32], b: &[i32]) -> bool {
    a.len() == b.len() && compact(a) == compact(b)
}
