//! Reciprocal loss.
//!
//! `J = J_pr→gt + λ · J_gt→pr` where the first term trains each candidate
//! against the ground-truth instance that contains its sampled point and the
//! second trains each ground-truth instance against its best candidate. The
//! unconstrained nearest-match variant of the first term is kept for
//! ablations. Every pairwise term is a per-point mean BCE.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::SampleSet;
use crate::tensor::{Graph, Var};

/// Binary ground-truth masks, one per instance id `0..I_GT`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    n: usize,
    masks: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    labels: Vec<i32>,
}

impl GroundTruth {
    /// Builds masks from per-point instance ids; `-1` marks unlabeled points.
    pub fn from_labels(labels: &[i32]) -> Result<Self> {
        let count = labels.iter().copied().max().unwrap_or(-1) + 1;
        if count <= 0 {
            return Err(invalid("ground truth needs at least one labeled instance"));
        }
        let count = count as usize;
        let n = labels.len();
        let mut masks = vec![vec![0.0; n]; count];
        let mut sizes = vec![0; count];
        for (i, &l) in labels.iter().enumerate() {
            if l < -1 {
                return Err(invalid("instance labels must be >= -1"));
            }
            if l >= 0 {
                masks[l as usize][i] = 1.0;
                sizes[l as usize] += 1;
            }
        }
        Ok(Self {
            n,
            masks,
            sizes,
            labels: labels.to_vec(),
        })
    }

    pub fn instances(&self) -> usize {
        self.masks.len()
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn mask(&self, j: usize) -> &[f64] {
        &self.masks[j]
    }

    pub fn label(&self, point: usize) -> i32 {
        self.labels[point]
    }

    fn tiled(&self, order: impl Iterator<Item = usize>) -> Vec<f64> {
        order.flat_map(|j| self.masks[j].iter().copied()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda: f64,
    pub use_spatial_matching: bool,
    pub use_gt_to_pr: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            use_spatial_matching: true,
            use_gt_to_pr: true,
        }
    }
}

fn check(g: &Graph, scores: Var, gt: &GroundTruth) -> Result<(usize, usize)> {
    let s = g.shape(scores);
    if s.len() != 2 || s[1] != gt.points() {
        return Err(Error::Shape {
            op: "loss",
            left: s.to_vec(),
            right: vec![gt.instances(), gt.points()],
        });
    }
    Ok((s[0], s[1]))
}

/// K×I_GT table of mean BCE between every candidate row and every GT mask.
fn bce_table(g: &mut Graph, scores: Var, gt: &GroundTruth) -> Result<Var> {
    let (k, _) = check(g, scores, gt)?;
    let m = gt.instances();
    let rows: Vec<usize> = (0..k).flat_map(|r| core::iter::repeat_n(r, m)).collect();
    let target = gt.tiled((0..k).flat_map(|_| 0..m));
    let repeated = g.gather_rows(scores, &rows)?;
    let per_pair = g.bce_rows(repeated, &target)?;
    g.reshape(per_pair, vec![k, m])
}

/// Unconstrained variant: each candidate against its closest GT mask.
pub fn loss_pr_to_gt_nearest(g: &mut Graph, scores: Var, gt: &GroundTruth) -> Result<Var> {
    let table = bce_table(g, scores, gt)?;
    let best = g.min(table, 1)?;
    g.sum_all(best)
}

/// Spatially matched prediction→GT term and the number of skipped samples
/// (those lying on unlabeled points).
pub fn loss_pr_to_gt(
    g: &mut Graph,
    scores: Var,
    gt: &GroundTruth,
    samples: &SampleSet,
) -> Result<(Var, usize)> {
    let (k, _) = check(g, scores, gt)?;
    if samples.len() != k {
        return Err(Error::Shape {
            op: "loss_pr_to_gt",
            left: vec![k],
            right: vec![samples.len()],
        });
    }
    let mut rows = Vec::with_capacity(k);
    let mut owners = Vec::with_capacity(k);
    for (r, &s) in samples.indices.iter().enumerate() {
        let l = gt.label(s);
        if l >= 0 {
            rows.push(r);
            owners.push(l as usize);
        }
    }
    let skipped = k - rows.len();
    if rows.is_empty() {
        return Ok((g.constant(Vec::new(), vec![0.0])?, skipped));
    }
    let picked = g.gather_rows(scores, &rows)?;
    let target = gt.tiled(owners.into_iter());
    let per_row = g.bce_rows(picked, &target)?;
    Ok((g.sum_all(per_row)?, skipped))
}

/// GT→prediction coverage term: each GT mask against its best candidate.
pub fn loss_gt_to_pr(g: &mut Graph, scores: Var, gt: &GroundTruth) -> Result<Var> {
    let table = bce_table(g, scores, gt)?;
    let best = g.min(table, 0)?;
    g.sum_all(best)
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub j_pr_gt: f64,
    pub j_gt_pr: f64,
    pub skipped_samples: usize,
}

pub fn reciprocal_loss(
    g: &mut Graph,
    scores: Var,
    gt: &GroundTruth,
    samples: &SampleSet,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    if !(cfg.lambda >= 0.0) {
        return Err(invalid("lambda must be non-negative"));
    }
    let (first, skipped) = if cfg.use_spatial_matching {
        loss_pr_to_gt(g, scores, gt, samples)?
    } else {
        (loss_pr_to_gt_nearest(g, scores, gt)?, 0)
    };
    let j_pr_gt = g.value(first).item()?;
    if !cfg.use_gt_to_pr || cfg.lambda == 0.0 {
        return Ok(LossTerms {
            total: first,
            j_pr_gt,
            j_gt_pr: 0.0,
            skipped_samples: skipped,
        });
    }
    let second = loss_gt_to_pr(g, scores, gt)?;
    let j_gt_pr = g.value(second).item()?;
    let weighted = g.scale(second, cfg.lambda);
    let total = g.add(first, weighted)?;
    Ok(LossTerms {
        total,
        j_pr_gt,
        j_gt_pr,
        skipped_samples: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SamplingSpace;
    use crate::tensor::Tensor;

    fn samples(idx: &[usize]) -> SampleSet {
        SampleSet {
            indices: idx.to_vec(),
            space: SamplingSpace::Coordinates,
        }
    }

    fn scores(g: &mut Graph, rows: &[&[f64]]) -> Var {
        g.leaf(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn gt_masks_partition_labeled_points() {
        let gt = GroundTruth::from_labels(&[0, 1, -1, 1]).unwrap();
        assert_eq!(gt.instances(), 2);
        assert_eq!(gt.mask(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(gt.mask(1), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(gt.sizes, vec![1, 2]);
        assert!(GroundTruth::from_labels(&[-1, -1]).is_err());
    }

    #[test]
    fn exact_prediction_has_near_zero_terms() {
        let gt = GroundTruth::from_labels(&[0, 0, 1, 1]).unwrap();
        let mut g = Graph::new();
        let y = scores(&mut g, &[&[1.0, 1.0, 0.0, 0.0]]);
        let (l, skipped) = loss_pr_to_gt(&mut g, y, &gt, &samples(&[1])).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-6);
        assert_eq!(skipped, 0);
        let l = loss_pr_to_gt_nearest(&mut g, y, &gt).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-6);
    }

    #[test]
    fn mismatched_owner_is_maximal() {
        let gt = GroundTruth::from_labels(&[0, 0, 1, 1]).unwrap();
        let mut g = Graph::new();
        let y = scores(&mut g, &[&[0.0, 0.0, 1.0, 1.0]]);
        let (l, _) = loss_pr_to_gt(&mut g, y, &gt, &samples(&[0])).unwrap();
        let expected = -(1e-7f64).ln();
        assert!((g.value(l).item().unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn half_predictions_cost_ln2() {
        let gt = GroundTruth::from_labels(&[0, -1, 0, 0]).unwrap();
        let mut g = Graph::new();
        let y = scores(&mut g, &[&[0.5; 4], &[0.5; 4]]);
        let l = loss_gt_to_pr(&mut g, y, &gt).unwrap();
        assert!((g.value(l).item().unwrap() - core::f64::consts::LN_2).abs() < 1e-12);
        let l = loss_pr_to_gt_nearest(&mut g, y, &gt).unwrap();
        assert!((g.value(l).item().unwrap() - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn unlabeled_samples_are_skipped() {
        let gt = GroundTruth::from_labels(&[0, -1, 0]).unwrap();
        let mut g = Graph::new();
        let y = scores(&mut g, &[&[0.5; 3], &[0.5; 3]]);
        let (_, skipped) = loss_pr_to_gt(&mut g, y, &gt, &samples(&[1, 0])).unwrap();
        assert_eq!(skipped, 1);
        let (l, skipped) = loss_pr_to_gt(&mut g, y, &gt, &samples(&[1, 1])).unwrap();
        assert_eq!(skipped, 2);
        assert_eq!(g.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn lambda_zero_is_first_term_only() {
        let gt = GroundTruth::from_labels(&[0, 1, 1]).unwrap();
        let mut g = Graph::new();
        let y = scores(&mut g, &[&[0.7, 0.2, 0.4]]);
        let s = samples(&[2]);
        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let t = reciprocal_loss(&mut g, y, &gt, &s, &cfg).unwrap();
        let (first, _) = loss_pr_to_gt(&mut g, y, &gt, &s).unwrap();
        assert_eq!(g.value(t.total).item().unwrap(), g.value(first).item().unwrap());
        let bad = LossConfig {
            lambda: -1.0,
            ..LossConfig::default()
        };
        assert!(reciprocal_loss(&mut g, y, &gt, &s, &bad).is_err());
    }
}
