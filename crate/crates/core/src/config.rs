use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Space in which the K seed points are drawn by farthest point sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingSpace {
    Coordinates,
    Features,
}

/// Network widths and inference thresholds.
///
/// Prototype count, feature width, sample count, sampling space and the
/// mask threshold default to the published settings; the remaining widths
/// are the smallest that train on synthetic scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub backbone_hidden: usize,
    pub features: usize,
    pub prototypes: usize,
    pub proto_hidden: usize,
    pub samples: usize,
    pub sampling: SamplingSpace,
    pub dilations: Vec<usize>,
    pub k: usize,
    pub kernel_hidden: usize,
    pub branch_width: usize,
    pub fusion_width: usize,
    /// Multiplier applied to neighbor offsets (meters) before the kernel MLP.
    pub offset_scale: f64,
    pub threshold: f64,
    pub nms_iou: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            backbone_hidden: 64,
            features: 64,
            prototypes: 128,
            proto_hidden: 128,
            samples: 64,
            sampling: SamplingSpace::Features,
            dilations: vec![1, 2, 4, 8],
            k: 16,
            kernel_hidden: 16,
            branch_width: 32,
            fusion_width: 128,
            offset_scale: 10.0,
            threshold: 0.3,
            nms_iou: 0.5,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Neighbors stored per sampled point so every branch can be served
    /// from one shared kNN query.
    pub fn k_base(&self) -> usize {
        self.k * self.dilations.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels < 3 {
            return Err(invalid("in_channels must include XYZ"));
        }
        let widths = [
            self.backbone_hidden,
            self.features,
            self.prototypes,
            self.proto_hidden,
            self.samples,
            self.k,
            self.kernel_hidden,
            self.branch_width,
            self.fusion_width,
        ];
        if widths.contains(&0) {
            return Err(invalid("network widths, K and k must be positive"));
        }
        if self.dilations.first() != Some(&1) {
            return Err(invalid("dilations must start at 1"));
        }
        if self.dilations.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("dilations must be strictly increasing"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid("mask threshold must lie in (0, 1)"));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(invalid("NMS IoU threshold must lie in (0, 1]"));
        }
        Ok(())
    }
}
