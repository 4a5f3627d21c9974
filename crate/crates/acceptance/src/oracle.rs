//! Definitional re-implementations. Each favors the most literal reading
//! over speed and shares no code with the crates under test.

/// Farthest point sampling recomputing every distance to the chosen set
/// from scratch at each step. Ties go to the lowest index.
pub fn fps(points: &[f64], dim: usize, k: usize, start: usize) -> Vec<usize> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut chosen = vec![start];
    while chosen.len() < k {
        let mut best = None;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| d2(row(i), row(c)))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

/// k nearest neighbors by fully sorting (distance, index) pairs.
pub fn knn(queries: &[f64], base: &[f64], dim: usize, k: usize) -> Vec<Vec<usize>> {
    queries
        .chunks(dim)
        .map(|q| {
            let mut all: Vec<(f64, usize)> = base
                .chunks(dim)
                .enumerate()
                .map(|(i, b)| (b.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum(), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|p| p.1).collect()
        })
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// K×N scores `sigmoid(Σ_m C[k][m] · P[n][m])` by a triple loop, plus the
/// pre-activation values.
pub fn assemble(coeffs: &[f64], protos: &[f64], k: usize, n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut raw = vec![0.0; k * n];
    for r in 0..k {
        for p in 0..n {
            let mut acc = 0.0;
            for j in 0..m {
                acc += coeffs[r * m + j] * protos[p * m + j];
            }
            raw[r * n + p] = acc;
        }
    }
    let scores = raw.iter().map(|&v| sigmoid(v)).collect();
    (raw, scores)
}

fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Greedy NMS as a work-list: repeatedly take the most confident remaining
/// candidate, keep it, and drop everything overlapping it. Confidence is the
/// mean score over the mask; ties go to the lower sample origin, then row.
pub fn nms(scores: &[f64], k: usize, n: usize, origins: &[usize], threshold: f64, iou_t: f64) -> Vec<usize> {
    let masks: Vec<Vec<bool>> = (0..k)
        .map(|r| {
            scores[r * n..(r + 1) * n]
                .iter()
                .map(|&s| s > threshold)
                .collect()
        })
        .collect();
    let conf = |r: usize| {
        let inside: Vec<f64> = scores[r * n..(r + 1) * n]
            .iter()
            .copied()
            .filter(|&s| s > threshold)
            .collect();
        inside.iter().sum::<f64>() / inside.len() as f64
    };
    let mut remaining: Vec<usize> = (0..k).filter(|&r| masks[r].contains(&true)).collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut top = remaining[0];
        for &r in &remaining[1..] {
            let (cr, ct) = (conf(r), conf(top));
            if cr > ct || (cr == ct && (origins[r], r) < (origins[top], top)) {
                top = r;
            }
        }
        kept.push(top);
        remaining.retain(|&r| r != top && iou(&masks[r], &masks[top]) < iou_t);
    }
    kept
}

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
pub fn bce(pred: &[f64], target: &[f64]) -> f64 {
    let eps = 1e-7;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / pred.len() as f64
}

fn gt_masks(labels: &[i32]) -> Vec<Vec<f64>> {
    let count = labels.iter().copied().max().unwrap_or(-1) + 1;
    (0..count)
        .map(|j| labels.iter().map(|&l| if l == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Loss terms of a K×N score matrix against per-point instance labels,
/// computed by nested loops.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub spatial: f64,
    pub nearest: f64,
    pub gt_to_pr: f64,
}

impl LossTerms {
    pub fn total(&self, lambda: f64) -> f64 {
        self.spatial + lambda * self.gt_to_pr
    }
}

pub fn loss_terms(scores: &[f64], k: usize, n: usize, labels: &[i32], samples: &[usize]) -> LossTerms {
    let gt = gt_masks(labels);
    let row = |r: usize| &scores[r * n..(r + 1) * n];
    let mut spatial = 0.0;
    for (r, &s) in samples.iter().enumerate() {
        if labels[s] >= 0 {
            spatial += bce(row(r), &gt[labels[s] as usize]);
        }
    }
    let nearest = (0..k)
        .map(|r| gt.iter().map(|g| bce(row(r), g)).fold(f64::INFINITY, f64::min))
        .sum();
    let gt_to_pr = gt
        .iter()
        .map(|g| (0..k).map(|r| bce(row(r), g)).fold(f64::INFINITY, f64::min))
        .sum();
    LossTerms {
        spatial,
        nearest,
        gt_to_pr,
    }
}

/// (mCov, mWCov) straight from the definitions.
pub fn coverage(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> (f64, f64) {
    if pred.is_empty() || gt.is_empty() {
        return (0.0, 0.0);
    }
    let best: Vec<f64> = gt
        .iter()
        .map(|g| pred.iter().map(|p| iou(p, g)).fold(0.0, f64::max))
        .collect();
    let sizes: Vec<f64> = gt
        .iter()
        .map(|g| g.iter().filter(|&&b| b).count() as f64)
        .collect();
    let total: f64 = sizes.iter().sum();
    let cov = best.iter().sum::<f64>() / gt.len() as f64;
    let wcov = best.iter().zip(&sizes).map(|(b, s)| b * s / total).sum();
    (cov, wcov)
}

/// Largest one-to-one matching with IoU >= `iou_t`, by exhaustive search.
/// For partitions (disjoint masks) at `iou_t = 0.5` every prediction can
/// reach the threshold with at most one GT, so this equals any greedy count.
pub fn max_matching(pred: &[Vec<bool>], gt: &[Vec<bool>], iou_t: f64) -> usize {
    fn go(p: usize, pred: &[Vec<bool>], gt: &[Vec<bool>], used: &mut Vec<bool>, iou_t: f64) -> usize {
        if p == pred.len() {
            return 0;
        }
        let mut best = go(p + 1, pred, gt, used, iou_t);
        for g in 0..gt.len() {
            if !used[g] && iou(&pred[p], &gt[g]) >= iou_t {
                used[g] = true;
                best = best.max(1 + go(p + 1, pred, gt, used, iou_t));
                used[g] = false;
            }
        }
        best
    }
    go(0, pred, gt, &mut vec![false; gt.len()], iou_t)
}

/// (mPrec, mRec) over classes; precision averages over classes with any
/// prediction or GT, recall over classes with GT.
pub fn prec_rec(pred: &[(Vec<bool>, i32)], gt: &[(Vec<bool>, i32)], iou_t: f64) -> (f64, f64) {
    let mut classes: Vec<i32> = pred.iter().chain(gt).map(|x| x.1).collect();
    classes.sort_unstable();
    classes.dedup();
    let (mut ps, mut rs, mut nr) = (0.0, 0.0, 0);
    for &c in &classes {
        let p: Vec<Vec<bool>> = pred.iter().filter(|x| x.1 == c).map(|x| x.0.clone()).collect();
        let g: Vec<Vec<bool>> = gt.iter().filter(|x| x.1 == c).map(|x| x.0.clone()).collect();
        let tp = max_matching(&p, &g, iou_t) as f64;
        if !p.is_empty() {
            ps += tp / p.len() as f64;
        }
        if !g.is_empty() {
            rs += tp / g.len() as f64;
            nr += 1;
        }
    }
    let np = classes.len();
    (
        if np == 0 { 0.0 } else { ps / np as f64 },
        if nr == 0 { 0.0 } else { rs / nr as f64 },
    )
}

/// Interpolated AP from a ranked hit list: the mean over GT instances of the
/// best precision reached at or after each true positive's rank.
pub fn average_precision(hits: &[bool], gt_count: usize) -> f64 {
    let precision: Vec<f64> = (0..hits.len())
        .map(|i| hits[..=i].iter().filter(|&&h| h).count() as f64 / (i + 1) as f64)
        .collect();
    let mut sum = 0.0;
    for i in 0..hits.len() {
        if hits[i] {
            sum += precision[i..].iter().copied().fold(0.0, f64::max);
        }
    }
    sum / gt_count as f64
}

/// Orphan attachment by scanning instances: for each instance, the distance
/// to its closest member of the orphan's class (or of any class when no
/// instance has one); the closest instance wins, lower id on ties.
pub fn attach_orphans(labels: &[i32], coords: &[f64], semantic: &[i32]) -> Vec<i32> {
    let count = labels.iter().copied().max().unwrap_or(-1) + 1;
    if count == 0 {
        return vec![0; labels.len()];
    }
    let d2 = |i: usize, j: usize| {
        (0..3)
            .map(|a| (coords[i * 3 + a] - coords[j * 3 + a]).powi(2))
            .sum::<f64>()
    };
    let nearest = |i: usize, same_class: bool| -> Option<i32> {
        let mut best: Option<(f64, i32)> = None;
        for id in 0..count {
            let d = (0..labels.len())
                .filter(|&j| labels[j] == id && (!same_class || semantic[j] == semantic[i]))
                .map(|j| d2(i, j))
                .fold(f64::INFINITY, f64::min);
            if d.is_finite() && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, id));
            }
        }
        best.map(|b| b.1)
    };
    (0..labels.len())
        .map(|i| {
            if labels[i] >= 0 {
                labels[i]
            } else {
                nearest(i, true).or_else(|| nearest(i, false)).unwrap()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_on_a_line() {
        let pts = [0.0, 1.0, 2.0, 10.0];
        assert_eq!(fps(&pts, 1, 3, 0), vec![0, 3, 2]);
    }

    #[test]
    fn fps_ties_take_lower_index() {
        let pts = [0.0, -1.0, 1.0];
        assert_eq!(fps(&pts, 1, 2, 0), vec![0, 1]);
    }

    #[test]
    fn knn_orders_by_distance_then_index() {
        let base = [0.0, 2.0, 1.0, -1.0];
        assert_eq!(knn(&[0.0], &base, 1, 3), vec![vec![0, 2, 3]]);
    }

    #[test]
    fn hand_computed_ap() {
        // precisions at the hits: 1, 2/3, 3/5
        let ap = average_precision(&[true, false, true, false, true], 3);
        assert!((ap - (1.0 + 2.0 / 3.0 + 0.6) / 3.0).abs() < 1e-12);
        assert!((ap - 0.755556).abs() < 1e-6);
    }

    #[test]
    fn nms_suppresses_overlap() {
        // rows 0 and 1 identical, row 1 more confident
        let s = [0.6, 0.6, 0.0, 0.9, 0.9, 0.0, 0.0, 0.0, 0.8];
        assert_eq!(nms(&s, 3, 3, &[0, 1, 2], 0.3, 0.5), vec![1, 2]);
    }

    #[test]
    fn perfect_scores_have_tiny_loss() {
        let labels = [0, 0, 1, -1];
        let s = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let t = loss_terms(&s, 2, 4, &labels, &[0, 2]);
        assert!(t.total(1.0) < 1e-5);
    }

    #[test]
    fn exhaustive_matching_beats_a_bad_greedy_order() {
        let m = |b: &[u8]| b.iter().map(|&x| x == 1).collect::<Vec<bool>>();
        let pred = vec![m(&[1, 1, 0]), m(&[1, 0, 0])];
        let gt = vec![m(&[1, 0, 0]), m(&[0, 1, 0])];
        assert_eq!(max_matching(&pred, &gt, 0.5), 2);
    }
}
