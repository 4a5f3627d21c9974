//! Per-stage inference timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use protoseg_core::assembly::{assemble, label_points, nms, MaskSet};
use protoseg_core::tensor::OpStats;
use protoseg_core::{Graph, PointCloud, ProtoSeg};

use crate::error::Result;
use crate::synth::{generate_scene, SynthConfig};

/// Wall time of each pipeline stage in milliseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub feature_ms: f64,
    pub sample_ms: f64,
    pub coeff_ms: f64,
    pub proto_ms: f64,
    pub assemble_ms: f64,
    pub nms_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    /// Everything before NMS.
    pub fn network_ms(&self) -> f64 {
        self.feature_ms + self.sample_ms + self.coeff_ms + self.proto_ms + self.assemble_ms
    }

    fn stages(&self) -> [f64; 7] {
        [
            self.feature_ms,
            self.sample_ms,
            self.coeff_ms,
            self.proto_ms,
            self.assemble_ms,
            self.nms_ms,
            self.total_ms,
        ]
    }
}

/// Output of one timed run.
#[derive(Clone, Debug)]
pub struct TimedRun {
    pub labels: Vec<i32>,
    pub masks: MaskSet,
    pub timings: StageTimings,
    /// Graph cost of everything before NMS.
    pub ops: OpStats,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs the inference pipeline stage by stage under a monotonic clock.
pub fn timed_inference(model: &ProtoSeg, cloud: &PointCloud) -> Result<TimedRun> {
    model.check_cloud(cloud)?;
    let start = Instant::now();
    let mut g = Graph::new();

    let t = Instant::now();
    let features = model.features(&mut g, cloud)?;
    let feature_ms = ms(t);

    let t = Instant::now();
    let samples = model.sample(&g, features, cloud)?;
    let coords = model.local_coords(cloud);
    let neighbors = model.coeffnet.neighborhoods(&samples, &coords)?;
    let sample_ms = ms(t);

    let t = Instant::now();
    let coeffs =
        model
            .coeffnet
            .dpi_coefficients(&mut g, &model.params, &samples, &neighbors, features, &coords)?;
    let coeff_ms = ms(t);

    let t = Instant::now();
    let protos = model.protoscore.prototypes(&mut g, &model.params, features)?;
    let proto_ms = ms(t);

    let t = Instant::now();
    let a = assemble(&mut g, coeffs, protos)?;
    let assemble_ms = ms(t);
    let ops = g.stats();

    let t = Instant::now();
    let s = g.value(a.scores);
    let mut masks = MaskSet::new(s.rows(), s.cols(), s.values().to_vec(), samples.indices)?;
    masks.retained = nms(&masks, model.config.threshold, model.config.nms_iou);
    let labels = label_points(&masks.retained_masks(model.config.threshold), cloud.len());
    let nms_ms = ms(t);

    let timings = StageTimings {
        feature_ms,
        sample_ms,
        coeff_ms,
        proto_ms,
        assemble_ms,
        nms_ms,
        total_ms: ms(start),
    };
    Ok(TimedRun {
        labels,
        masks,
        timings,
        ops,
    })
}

/// `count` synthetic scenes of `n_points` whose instance counts cycle
/// through 2..=10.
pub fn bench_scenes(seed: u64, count: usize, n_points: usize) -> Result<Vec<PointCloud>> {
    (0..count)
        .map(|i| {
            let k = 2 + i % 9;
            let cfg = SynthConfig {
                seed,
                n_points,
                instances_range: [k, k],
                ..SynthConfig::default()
            };
            generate_scene(&cfg, i as u64)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

impl Summary {
    /// Population statistics; an empty slice gives zeros.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        };
        Self { mean, std, median }
    }

    /// Coefficient of variation, std / mean.
    pub fn cv(&self) -> f64 {
        if self.mean == 0.0 {
            0.0
        } else {
            self.std / self.mean
        }
    }
}

/// One timed scene repetition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub scene: usize,
    pub instances: usize,
    pub points: usize,
    pub rep: usize,
    pub timings: StageTimings,
    pub ops: OpStats,
}

/// Table of per-stage statistics over scenes × repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    #[serde(rename = "Network")]
    pub network: Summary,
    #[serde(rename = "NMS")]
    pub nms: Summary,
    #[serde(rename = "Total")]
    pub total: Summary,
    pub stages: StageSummaries,
    /// CV over all scene × repetition samples.
    pub total_cv: f64,
    /// CV across scenes of each scene's median total time; repetitions
    /// absorb scheduler spikes so this isolates scene-to-scene variation.
    pub scene_median_cv: f64,
    pub scenes: usize,
    pub repetitions: usize,
    /// True when every scene of equal N recorded the same pre-NMS cost.
    pub ops_identical: bool,
    pub samples: Vec<BenchSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummaries {
    pub feature_ms: Summary,
    pub sample_ms: Summary,
    pub coeff_ms: Summary,
    pub proto_ms: Summary,
    pub assemble_ms: Summary,
    pub nms_ms: Summary,
    pub total_ms: Summary,
}

/// Times `repetitions` runs of every scene after `warmup` untimed runs of the
/// first one. Runs on the calling thread only.
pub fn bench(
    model: &ProtoSeg,
    scenes: &[PointCloud],
    repetitions: usize,
    warmup: usize,
) -> Result<BenchTable> {
    if let Some(first) = scenes.first() {
        for _ in 0..warmup {
            timed_inference(model, first)?;
        }
    }
    let mut samples = Vec::with_capacity(scenes.len() * repetitions);
    for rep in 0..repetitions {
        for (i, cloud) in scenes.iter().enumerate() {
            let run = timed_inference(model, cloud)?;
            samples.push(BenchSample {
                scene: i,
                instances: cloud.instance_count(),
                points: cloud.len(),
                rep,
                timings: run.timings,
                ops: run.ops,
            });
        }
    }
    let ops_identical = samples.iter().all(|a| {
        samples
            .iter()
            .filter(|b| b.points == a.points)
            .all(|b| b.ops == a.ops)
    });
    let column = |k: usize| -> Vec<f64> { samples.iter().map(|s| s.timings.stages()[k]).collect() };
    let network: Vec<f64> = samples.iter().map(|s| s.timings.network_ms()).collect();
    let stages = StageSummaries {
        feature_ms: Summary::of(&column(0)),
        sample_ms: Summary::of(&column(1)),
        coeff_ms: Summary::of(&column(2)),
        proto_ms: Summary::of(&column(3)),
        assemble_ms: Summary::of(&column(4)),
        nms_ms: Summary::of(&column(5)),
        total_ms: Summary::of(&column(6)),
    };
    let scene_medians: Vec<f64> = (0..scenes.len())
        .map(|i| {
            let t: Vec<f64> = samples
                .iter()
                .filter(|s| s.scene == i)
                .map(|s| s.timings.total_ms)
                .collect();
            Summary::of(&t).median
        })
        .collect();
    Ok(BenchTable {
        scene_median_cv: Summary::of(&scene_medians).cv(),
        network: Summary::of(&network),
        nms: stages.nms_ms,
        total: stages.total_ms,
        total_cv: stages.total_ms.cv(),
        stages,
        scenes: scenes.len(),
        repetitions,
        ops_identical,
        samples,
    })
}
