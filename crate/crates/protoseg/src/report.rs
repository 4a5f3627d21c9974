//! Per-scene evaluation reports and their aggregate.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use protoseg_core::eval::{
    coverage_metrics, majority_class, map50, masks_from_labels, Detection, GtInstance, Instance,
    PrecRecCounts,
};
use protoseg_core::model::Inference;
use protoseg_core::{PointCloud, ProtoSeg};
use rayon::prelude::*;

use crate::bench::StageTimings;
use crate::error::{Error, Result};

pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: i32,
    pub precision: f64,
    pub recall: f64,
    pub predictions: usize,
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub m_cov: f64,
    pub m_wcov: f64,
    pub m_prec: f64,
    pub m_rec: f64,
    pub per_class: Vec<ClassMetrics>,
    pub predicted_instances: usize,
    pub gt_instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub metrics: SceneMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

/// Non-empty instances of a labeling, each with its majority semantic class
/// and the confidence stored at its id (1.0 when none is known).
pub fn labeled_instances(
    labels: &[i32],
    semantic: &[i32],
    confidences: Option<&[f64]>,
) -> Vec<(Instance, f64)> {
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
    masks
        .into_iter()
        .enumerate()
        .filter(|(_, m)| m.iter().any(|&b| b))
        .map(|(id, mask)| {
            let class = majority_class(&mask, semantic);
            let conf = confidences.and_then(|c| c.get(id).copied()).unwrap_or(1.0);
            (Instance { mask, class }, conf)
        })
        .collect()
}

fn gt_of(cloud: &PointCloud) -> Result<(&[i32], &[i32])> {
    let inst = cloud
        .instance_labels
        .as_deref()
        .ok_or_else(|| Error::Data("evaluation scene has no instance labels".into()))?;
    let sem = cloud
        .semantic_labels
        .as_deref()
        .ok_or_else(|| Error::Data("evaluation scene has no semantic labels".into()))?;
    Ok((inst, sem))
}

fn class_metrics(counts: &PrecRecCounts) -> Vec<ClassMetrics> {
    counts
        .classes()
        .into_iter()
        .map(|(class, tp, p, g)| ClassMetrics {
            class,
            precision: if p == 0 { 0.0 } else { tp as f64 / p as f64 },
            recall: if g == 0 { 0.0 } else { tp as f64 / g as f64 },
            predictions: p,
            instances: g,
        })
        .collect()
}

/// Metrics of one predicted labeling against the cloud's ground truth.
pub fn scene_metrics(cloud: &PointCloud, pred_labels: &[i32]) -> Result<SceneMetrics> {
    let (inst, sem) = gt_of(cloud)?;
    if pred_labels.len() != cloud.len() {
        return Err(Error::Data(format!(
            "prediction has {} labels for {} points",
            pred_labels.len(),
            cloud.len()
        )));
    }
    let pred: Vec<Instance> = labeled_instances(pred_labels, sem, None)
        .into_iter()
        .map(|p| p.0)
        .collect();
    let gt: Vec<Instance> = labeled_instances(inst, sem, None)
        .into_iter()
        .map(|p| p.0)
        .collect();
    let pm: Vec<Vec<bool>> = pred.iter().map(|p| p.mask.clone()).collect();
    let (m_cov, m_wcov) = coverage_metrics(&pm, &masks_from_labels(inst));
    let mut counts = PrecRecCounts::default();
    counts.add_scene(&pred, &gt, IOU_THRESHOLD);
    let (m_prec, m_rec) = counts.mean();
    Ok(SceneMetrics {
        m_cov,
        m_wcov,
        m_prec,
        m_rec,
        per_class: class_metrics(&counts),
        predicted_instances: pred.len(),
        gt_instances: gt.len(),
    })
}

/// Dataset-level numbers: mean coverage over scenes, precision/recall from
/// counts pooled across scenes, and mAP@0.5.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenes: usize,
    pub m_cov: f64,
    pub m_wcov: f64,
    pub m_prec: f64,
    pub m_rec: f64,
    pub map50: f64,
    pub per_class: Vec<ClassMetrics>,
}

#[derive(Clone, Debug, Default)]
pub struct Evaluator {
    counts: PrecRecCounts,
    detections: Vec<Detection>,
    gts: Vec<GtInstance>,
    cov: f64,
    wcov: f64,
    scenes: usize,
}

impl Evaluator {
    /// Adds a scene; `confidences[id]` ranks predicted instance `id` for mAP.
    pub fn add(
        &mut self,
        cloud: &PointCloud,
        pred_labels: &[i32],
        confidences: Option<&[f64]>,
    ) -> Result<SceneMetrics> {
        let metrics = scene_metrics(cloud, pred_labels)?;
        let (inst, sem) = gt_of(cloud)?;
        let scene = self.scenes;
        let pred = labeled_instances(pred_labels, sem, confidences);
        let gt = labeled_instances(inst, sem, None);
        let p: Vec<Instance> = pred.iter().map(|x| x.0.clone()).collect();
        let g: Vec<Instance> = gt.iter().map(|x| x.0.clone()).collect();
        self.counts.add_scene(&p, &g, IOU_THRESHOLD);
        self.detections
            .extend(pred.into_iter().map(|(i, confidence)| Detection {
                scene,
                category: i.class,
                mask: i.mask,
                confidence,
            }));
        self.gts.extend(gt.into_iter().map(|(i, _)| GtInstance {
            scene,
            category: i.class,
            mask: i.mask,
        }));
        self.cov += metrics.m_cov;
        self.wcov += metrics.m_wcov;
        self.scenes += 1;
        Ok(metrics)
    }

    pub fn finish(&self) -> Aggregate {
        let (m_prec, m_rec) = self.counts.mean();
        let n = self.scenes.max(1) as f64;
        Aggregate {
            scenes: self.scenes,
            m_cov: self.cov / n,
            m_wcov: self.wcov / n,
            m_prec,
            m_rec,
            map50: map50(&self.detections, &self.gts),
            per_class: class_metrics(&self.counts),
        }
    }
}

/// Per-instance confidences of an inference, indexed by instance id.
pub fn confidences(inf: &Inference) -> Vec<f64> {
    inf.masks.retained.iter().map(|r| r.confidence).collect()
}

/// Runs `model` on every scene (in parallel) and evaluates the predictions.
pub fn evaluate_model(model: &ProtoSeg, scenes: &[PointCloud]) -> Result<(Vec<SceneMetrics>, Aggregate)> {
    let inferences: Vec<Result<Inference>> = scenes
        .par_iter()
        .map(|c| model.infer(c).map_err(Error::from))
        .collect();
    let mut eval = Evaluator::default();
    let mut per_scene = Vec::with_capacity(scenes.len());
    for (cloud, inf) in scenes.iter().zip(inferences) {
        let inf = inf?;
        per_scene.push(eval.add(cloud, &inf.labels, Some(&confidences(&inf)))?);
    }
    Ok((per_scene, eval.finish()))
}

/// One CSV row per scene: id, metrics, instance counts and stage timings.
pub fn reports_csv(reports: &[SceneReport]) -> String {
    let mut out = String::from(
        "scene_id,m_cov,m_wcov,m_prec,m_rec,predicted_instances,gt_instances,\
         feature_ms,sample_ms,coeff_ms,proto_ms,assemble_ms,nms_ms,total_ms\n",
    );
    for r in reports {
        let m = &r.metrics;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.scene_id, m.m_cov, m.m_wcov, m.m_prec, m.m_rec, m.predicted_instances, m.gt_instances
        );
        match &r.timings {
            Some(t) => {
                let _ = writeln!(
                    out,
                    ",{},{},{},{},{},{},{}",
                    t.feature_ms, t.sample_ms, t.coeff_ms, t.proto_ms, t.assemble_ms, t.nms_ms, t.total_ms
                );
            }
            None => out.push_str(",,,,,,,\n"),
        }
    }
    out
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
