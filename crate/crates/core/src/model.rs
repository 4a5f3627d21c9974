//! The assembled network and its inference pipeline.

use alloc::vec::Vec;

use crate::assembly::{assemble, label_points, nms, MaskSet, Retained};
use crate::backbone::{normalized_input, Backbone};
use crate::cloud::PointCloud;
use crate::coeffnet::CoeffNet;
use crate::config::{ModelConfig, SamplingSpace};
use crate::error::{invalid, Result};
use crate::geometry::{fps, NeighborIndex, Points, SampleSet};
use crate::loss::{reciprocal_loss, GroundTruth, LossConfig};
use crate::nn::rng_for;
use crate::protoscore::ProtoScoreNet;
use crate::tensor::{Graph, OpStats, ParamStore, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ProtoSeg {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub backbone: Backbone,
    pub protoscore: ProtoScoreNet,
    pub coeffnet: CoeffNet,
}

/// Graph handles and side products of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub features: Var,
    pub samples: SampleSet,
    pub neighbors: NeighborIndex,
    pub coeffs: Var,
    pub protos: Var,
    pub raw: Var,
    pub scores: Var,
    /// Cost of everything recorded up to and including assembly.
    pub stats: OpStats,
}

/// Loss values of one training scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub loss: f64,
    pub j_pr_gt: f64,
    pub j_gt_pr: f64,
    pub skipped_samples: usize,
}

/// Result of running the full pipeline on one cloud.
#[derive(Clone, Debug)]
pub struct Inference {
    pub masks: MaskSet,
    /// Per-point instance id (index into `masks.retained`), -1 if uncovered.
    pub labels: Vec<i32>,
    /// K×M coefficients, row-major.
    pub coeffs: Vec<f64>,
    /// N×M prototype scores, row-major.
    pub protos: Vec<f64>,
    pub stats: OpStats,
}

impl Inference {
    /// Coefficient rows of the candidates kept by NMS.
    pub fn retained_coefficients(&self, m: usize) -> Vec<f64> {
        self.masks
            .retained
            .iter()
            .flat_map(|r| self.coeffs[r.row * m..(r.row + 1) * m].iter().copied())
            .collect()
    }
}

impl ProtoSeg {
    /// Freshly initialised network; weights depend only on `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let backbone = Backbone::new(&mut params, &mut rng_for(config.init_seed, 1), &config);
        let protoscore = ProtoScoreNet::new(&mut params, &mut rng_for(config.init_seed, 2), &config);
        let coeffnet = CoeffNet::new(&mut params, &mut rng_for(config.init_seed, 3), &config);
        Ok(Self {
            config,
            params,
            backbone,
            protoscore,
            coeffnet,
        })
    }

    pub fn check_cloud(&self, cloud: &PointCloud) -> Result<()> {
        if cloud.len() < self.config.samples {
            return Err(invalid(alloc::format!(
                "cloud has {} points but K = {}; lower `samples` for clouds this small",
                cloud.len(),
                self.config.samples
            )));
        }
        if cloud.len() < self.config.k_base() {
            return Err(invalid(alloc::format!(
                "cloud has {} points but the neighbor index needs {}; lower `k` or the widest dilation",
                cloud.len(),
                self.config.k_base()
            )));
        }
        Ok(())
    }

    pub fn features(&self, g: &mut Graph, cloud: &PointCloud) -> Result<Var> {
        self.backbone.extract_features(g, &self.params, cloud)
    }

    /// Farthest point sampling from index 0 in the configured space.
    pub fn sample(&self, g: &Graph, features: Var, cloud: &PointCloud) -> Result<SampleSet> {
        let k = self.config.samples;
        match self.config.sampling {
            SamplingSpace::Features => {
                let f = g.value(features);
                fps(Points::new(f.values(), f.cols())?, k, 0, SamplingSpace::Features)
            }
            SamplingSpace::Coordinates => {
                let c = cloud.coords();
                fps(Points::new(&c, 3)?, k, 0, SamplingSpace::Coordinates)
            }
        }
    }

    /// Coordinates fed to the coefficient branch: XYZ shifted to the cloud's
    /// minimum corner, matching the backbone input.
    pub fn local_coords(&self, cloud: &PointCloud) -> Vec<f64> {
        let c = cloud.channels();
        normalized_input(cloud)
            .chunks(c)
            .flat_map(|p| p[..3].iter().copied())
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, cloud: &PointCloud) -> Result<Forward> {
        self.check_cloud(cloud)?;
        let features = self.features(g, cloud)?;
        let samples = self.sample(g, features, cloud)?;
        let coords = self.local_coords(cloud);
        let neighbors = self.coeffnet.neighborhoods(&samples, &coords)?;
        let coeffs =
            self.coeffnet
                .dpi_coefficients(g, &self.params, &samples, &neighbors, features, &coords)?;
        let protos = self.protoscore.prototypes(g, &self.params, features)?;
        let a = assemble(g, coeffs, protos)?;
        Ok(Forward {
            features,
            samples,
            neighbors,
            coeffs,
            protos,
            raw: a.raw,
            scores: a.scores,
            stats: g.stats(),
        })
    }

    /// Candidate masks of a forward pass with NMS applied.
    pub fn mask_set(&self, g: &Graph, fwd: &Forward) -> Result<MaskSet> {
        let s = g.value(fwd.scores);
        let mut masks = MaskSet::new(
            s.rows(),
            s.cols(),
            s.values().to_vec(),
            fwd.samples.indices.clone(),
        )?;
        masks.retained = nms(&masks, self.config.threshold, self.config.nms_iou);
        Ok(masks)
    }

    pub fn infer(&self, cloud: &PointCloud) -> Result<Inference> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, cloud)?;
        let masks = self.mask_set(&g, &fwd)?;
        let labels = label_points(&masks.retained_masks(self.config.threshold), cloud.len());
        Ok(Inference {
            labels,
            coeffs: g.values(fwd.coeffs).to_vec(),
            protos: g.values(fwd.protos).to_vec(),
            stats: fwd.stats,
            masks,
        })
    }

    /// Forward + reciprocal loss + backward on one labeled scene; gradients
    /// accumulate into `grads` (a clone of the parameter store).
    pub fn accumulate_gradients(
        &self,
        cloud: &PointCloud,
        loss_cfg: &LossConfig,
        grads: &mut ParamStore,
    ) -> Result<StepLoss> {
        let labels = cloud
            .instance_labels
            .as_ref()
            .ok_or_else(|| invalid("training scene has no instance labels"))?;
        let gt = GroundTruth::from_labels(labels)?;
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, cloud)?;
        let terms = reciprocal_loss(&mut g, fwd.scores, &gt, &fwd.samples, loss_cfg)?;
        g.backward(terms.total)?;
        grads.accumulate_grads(&g);
        Ok(StepLoss {
            loss: g.value(terms.total).item()?,
            j_pr_gt: terms.j_pr_gt,
            j_gt_pr: terms.j_gt_pr,
            skipped_samples: terms.skipped_samples,
        })
    }

    /// Loss of one labeled scene without touching gradients.
    pub fn loss(&self, cloud: &PointCloud, loss_cfg: &LossConfig) -> Result<StepLoss> {
        let labels = cloud
            .instance_labels
            .as_ref()
            .ok_or_else(|| invalid("scene has no instance labels"))?;
        let gt = GroundTruth::from_labels(labels)?;
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, cloud)?;
        let terms = reciprocal_loss(&mut g, fwd.scores, &gt, &fwd.samples, loss_cfg)?;
        Ok(StepLoss {
            loss: g.value(terms.total).item()?,
            j_pr_gt: terms.j_pr_gt,
            j_gt_pr: terms.j_gt_pr,
            skipped_samples: terms.skipped_samples,
        })
    }
}

/// Candidates kept for a scene, with their binary masks.
pub fn retained_instances(inf: &Inference, threshold: f64) -> Vec<(Retained, Vec<bool>)> {
    inf.masks
        .retained
        .iter()
        .map(|r| (r.clone(), inf.masks.binary(r.row, threshold)))
        .collect()
}
