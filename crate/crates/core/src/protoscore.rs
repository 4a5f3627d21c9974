//! Prototype branch: per-point network mapping shared features to M raw
//! prototype scores. Scores are left unsquashed so prototypes can cancel
//! each other once combined.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::tensor::{Graph, ParamStore, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ProtoScoreNet {
    pub features: usize,
    pub prototypes: usize,
    pub mlp: Mlp,
}

impl ProtoScoreNet {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        Self {
            features: cfg.features,
            prototypes: cfg.prototypes,
            mlp: Mlp::new(
                store,
                rng,
                "protoscore.mlp",
                &[cfg.features, cfg.proto_hidden, cfg.prototypes],
                Activation::Linear,
            ),
        }
    }

    /// N×M prototype matrix from the N×F shared features.
    pub fn prototypes(&self, g: &mut Graph, store: &ParamStore, feats: Var) -> Result<Var> {
        let shape = g.shape(feats);
        if shape.len() != 2 || shape[1] != self.features {
            return Err(Error::Shape {
                op: "prototypes",
                left: shape.to_vec(),
                right: alloc::vec![self.features],
            });
        }
        self.mlp.forward(g, store, feats)
    }
}

/// One exported point of a prototype column.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeRecord {
    pub prototype: usize,
    pub xyz: [f64; 3],
    pub score: f64,
}

/// Min-max normalised scores of the requested prototype columns over every
/// point. A constant column maps to all zeros.
pub fn export_prototype_scores(
    protos: &[f64],
    n_prototypes: usize,
    cloud: &PointCloud,
    ids: &[usize],
) -> Result<Vec<PrototypeRecord>> {
    let n = cloud.len();
    if protos.len() != n * n_prototypes {
        return Err(Error::Shape {
            op: "export_prototype_scores",
            left: alloc::vec![protos.len()],
            right: alloc::vec![n, n_prototypes],
        });
    }
    let mut out = Vec::with_capacity(ids.len() * n);
    for &id in ids {
        if id >= n_prototypes {
            return Err(Error::InvalidArgument(format!(
                "prototype id {id} out of range (M = {n_prototypes})"
            )));
        }
        let col = (0..n).map(|i| protos[i * n_prototypes + id]);
        let (lo, hi) = col
            .clone()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        for (i, v) in col.enumerate() {
            let score = if range > 0.0 { (v - lo) / range } else { 0.0 };
            out.push(PrototypeRecord {
                prototype: id,
                xyz: cloud.xyz(i),
                score,
            });
        }
    }
    Ok(out)
}
