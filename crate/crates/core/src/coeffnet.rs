//! Coefficient branch with the Dilated Point Inception module.
//!
//! Around each sampled point, one point-convolution branch per dilation
//! factor reads every d-th of the sorted nearest neighbors. A branch maps each
//! neighbor offset to a per-channel kernel, weights the neighbor's features
//! with it, sums over the neighborhood and lifts the result. Branch outputs
//! are concatenated, fused by an MLP and squashed by `tanh`, so every
//! coefficient lies in (-1, 1).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{invalid, Result};
use crate::geometry::{dilated_select, knn, NeighborIndex, Points, SampleSet};
use crate::nn::{Activation, Dense, Mlp};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct DpiConfig {
    pub dilations: Vec<usize>,
    pub k: usize,
    pub branch_width: usize,
    pub fusion_width: usize,
}

impl DpiConfig {
    pub fn from_model(cfg: &ModelConfig) -> Self {
        Self {
            dilations: cfg.dilations.clone(),
            k: cfg.k,
            branch_width: cfg.branch_width,
            fusion_width: cfg.fusion_width,
        }
    }

    pub fn k_base(&self) -> usize {
        self.k * self.dilations.last().copied().unwrap_or(1)
    }
}

/// One PointConv branch at a fixed dilation.
#[derive(Clone, Debug, PartialEq)]
pub struct PointConvBranch {
    pub dilation: usize,
    pub kernel: Mlp,
    pub lift: Dense,
}

impl PointConvBranch {
    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.kernel.params();
        p.extend(self.lift.params());
        p
    }

    /// Branch features for several samples at once. `rows[s]` lists the
    /// neighbors of `centers[s]`; all rows must have the same length.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        centers: &[usize],
        rows: &[&[usize]],
        feats: Var,
        coords: &[f64],
        offset_scale: f64,
    ) -> Result<Var> {
        let k = rows.first().map_or(0, |r| r.len());
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(invalid(
                "point convolution needs non-empty, equal-length neighbor lists",
            ));
        }
        let width = g.shape(feats)[1];
        let mut offsets = Vec::with_capacity(rows.len() * k * 3);
        let mut flat = Vec::with_capacity(rows.len() * k);
        for (&c, row) in centers.iter().zip(rows) {
            let origin = &coords[c * 3..c * 3 + 3];
            for &j in row.iter() {
                let p = &coords[j * 3..j * 3 + 3];
                offsets.extend((0..3).map(|a| (p[a] - origin[a]) * offset_scale));
                flat.push(j);
            }
        }
        let delta = g.constant(vec![flat.len(), 3], offsets)?;
        let kernel = self.kernel.forward(g, store, delta)?;
        let neighbor_feats = g.gather_rows(feats, &flat)?;
        let weighted = g.mul(kernel, neighbor_feats)?;
        let grouped = g.reshape(weighted, vec![centers.len(), k, width])?;
        let pooled = g.sum(grouped, 1)?;
        self.lift.forward(g, store, pooled)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoeffNet {
    pub cfg: DpiConfig,
    pub prototypes: usize,
    pub offset_scale: f64,
    pub branches: Vec<PointConvBranch>,
    pub fusion: Mlp,
}

impl CoeffNet {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let dpi = DpiConfig::from_model(cfg);
        let branches = dpi
            .dilations
            .iter()
            .map(|&d| PointConvBranch {
                dilation: d,
                kernel: Mlp::new(
                    store,
                    rng,
                    &format!("coeffnet.d{d}.kernel"),
                    &[3, cfg.kernel_hidden, cfg.features],
                    Activation::Linear,
                ),
                lift: Dense::new(
                    store,
                    rng,
                    &format!("coeffnet.d{d}.lift"),
                    cfg.features,
                    cfg.branch_width,
                    Activation::Relu,
                ),
            })
            .collect();
        let fusion = Mlp::new(
            store,
            rng,
            "coeffnet.fusion",
            &[
                dpi.dilations.len() * cfg.branch_width,
                cfg.fusion_width,
                cfg.prototypes,
            ],
            Activation::Tanh,
        );
        Self {
            cfg: dpi,
            prototypes: cfg.prototypes,
            offset_scale: cfg.offset_scale,
            branches,
            fusion,
        }
    }

    /// Shared neighbor lists for the sampled points, long enough for the
    /// widest dilation.
    pub fn neighborhoods(&self, samples: &SampleSet, coords: &[f64]) -> Result<NeighborIndex> {
        let base = Points::new(coords, 3)?;
        let queries: Vec<f64> = samples
            .indices
            .iter()
            .flat_map(|&i| base.row(i).iter().copied())
            .collect();
        knn(Points::new(&queries, 3)?, base, self.cfg.k_base())
    }

    /// K×M coefficient matrix.
    pub fn dpi_coefficients(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        samples: &SampleSet,
        nbrs: &NeighborIndex,
        feats: Var,
        coords: &[f64],
    ) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let sel = dilated_select(nbrs, b.dilation, self.cfg.k)?;
            let rows: Vec<&[usize]> = (0..sel.queries()).map(|q| sel.row(q)).collect();
            outs.push(b.forward(
                g,
                store,
                &samples.indices,
                &rows,
                feats,
                coords,
                self.offset_scale,
            )?);
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        self.fusion.forward(g, store, joined)
    }

    pub fn branch_params(&self, dilation: usize) -> Option<Vec<ParamId>> {
        self.branches
            .iter()
            .find(|b| b.dilation == dilation)
            .map(PointConvBranch::params)
    }
}
