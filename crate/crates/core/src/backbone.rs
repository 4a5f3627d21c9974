//! Shared PointNet-style feature extractor.
//!
//! Per-point MLP `I -> hidden -> hidden`, a global max-pool over points, the
//! pooled vector appended to every point, then a fusion layer
//! `2*hidden -> F`. Shared weights and the symmetric pool make the output
//! permutation-equivariant.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::tensor::{Graph, ParamStore, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub in_channels: usize,
    pub features: usize,
    pub point_mlp: Mlp,
    pub fusion: Mlp,
}

impl Backbone {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let h = cfg.backbone_hidden;
        Self {
            in_channels: cfg.in_channels,
            features: cfg.features,
            point_mlp: Mlp::new(
                store,
                rng,
                "backbone.point",
                &[cfg.in_channels, h, h],
                Activation::Relu,
            ),
            fusion: Mlp::new(
                store,
                rng,
                "backbone.fusion",
                &[2 * h, cfg.features],
                Activation::Relu,
            ),
        }
    }

    /// N×F feature matrix of `cloud`.
    pub fn extract_features(&self, g: &mut Graph, store: &ParamStore, cloud: &PointCloud) -> Result<Var> {
        if cloud.channels() != self.in_channels {
            return Err(Error::Shape {
                op: "extract_features",
                left: vec![cloud.len(), cloud.channels()],
                right: vec![self.in_channels],
            });
        }
        let x = g.constant(vec![cloud.len(), self.in_channels], normalized_input(cloud))?;
        let h = self.point_mlp.forward(g, store, x)?;
        let pooled = g.max(h, 0)?;
        let width = g.value(pooled).len();
        let pooled = g.reshape(pooled, vec![1, width])?;
        let broadcast = g.gather_rows(pooled, &vec![0; cloud.len()])?;
        let joined = g.concat_cols(&[h, broadcast])?;
        self.fusion.forward(g, store, joined)
    }
}

/// Shifts XYZ to the cloud's own minimum corner; other channels pass through.
pub fn normalized_input(cloud: &PointCloud) -> Vec<f64> {
    let c = cloud.channels();
    let mut lo = [f64::INFINITY; 3];
    for i in 0..cloud.len() {
        for (l, v) in lo.iter_mut().zip(cloud.xyz(i)) {
            *l = l.min(v);
        }
    }
    let mut out = cloud.data().to_vec();
    for p in out.chunks_mut(c) {
        for a in 0..3 {
            p[a] -= lo[a];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng_for;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            backbone_hidden: 8,
            features: 6,
            ..ModelConfig::default()
        }
    }

    fn run(b: &Backbone, store: &ParamStore, cloud: &PointCloud) -> Vec<f64> {
        let mut g = Graph::new();
        let f = b.extract_features(&mut g, store, cloud).unwrap();
        g.values(f).to_vec()
    }

    #[test]
    fn output_shape_and_single_point() {
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        let b = Backbone::new(&mut store, &mut rng_for(1, 0), &cfg);
        let one = PointCloud::new(3, vec![0.3, 0.2, 0.1]).unwrap();
        let out = run(&b, &store, &one);
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identical_points_identical_rows() {
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        let b = Backbone::new(&mut store, &mut rng_for(2, 0), &cfg);
        let c = PointCloud::new(3, vec![0.5, 0.5, 0.5, 0.1, 0.9, 0.3, 0.5, 0.5, 0.5]).unwrap();
        let out = run(&b, &store, &c);
        assert_eq!(&out[0..6], &out[12..18]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let cfg = small_cfg();
        let mut store = ParamStore::new();
        let b = Backbone::new(&mut store, &mut rng_for(3, 0), &cfg);
        let c = PointCloud::new(4, vec![0.0; 8]).unwrap();
        let mut g = Graph::new();
        assert!(matches!(
            b.extract_features(&mut g, &store, &c),
            Err(Error::Shape { .. })
        ));
    }
}
