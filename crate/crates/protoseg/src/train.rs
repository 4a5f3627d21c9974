//! Mini-batch training with the reciprocal loss and Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use protoseg_core::model::StepLoss;
use protoseg_core::tensor::{adam_step, AdamState};
use protoseg_core::{ParamStore, PointCloud, ProtoSeg};

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub j_pr_gt: f64,
    pub j_gt_pr: f64,
    pub skipped_samples: usize,
}

pub struct Trainer {
    pub model: ProtoSeg,
    pub config: RunConfig,
    pub adam: AdamState,
}

impl Trainer {
    /// Fresh weights drawn from `config.seed`.
    pub fn new(mut config: RunConfig) -> Result<Self> {
        config.validate()?;
        config.model.init_seed = config.seed;
        let model = ProtoSeg::new(config.model.clone())?;
        Ok(Self::resume(model, config))
    }

    /// Continues from existing weights with a fresh optimizer state.
    pub fn resume(model: ProtoSeg, config: RunConfig) -> Self {
        let adam = AdamState::new(&model.params, config.train.lr);
        Self { model, config, adam }
    }

    fn zeroed(&self) -> ParamStore {
        let mut g = self.model.params.clone();
        g.clear_grads();
        g
    }

    /// Gradient of the mean batch loss, accumulated per scene and summed in
    /// scene order so the result does not depend on the thread count.
    fn batch_gradients(&self, batch: &[&PointCloud]) -> Result<(ParamStore, Vec<StepLoss>)> {
        let per_scene: Vec<Result<(ParamStore, StepLoss)>> = batch
            .par_iter()
            .map(|cloud| {
                let mut grads = self.zeroed();
                let l = self
                    .model
                    .accumulate_gradients(cloud, &self.config.loss, &mut grads)?;
                Ok((grads, l))
            })
            .collect();
        let mut total = self.zeroed();
        let mut losses = Vec::with_capacity(batch.len());
        for r in per_scene {
            let (g, l) = r?;
            total.accumulate_grads_from(&g)?;
            losses.push(l);
        }
        let inv = 1.0 / batch.len() as f64;
        for (_, _, t) in total.iter_mut() {
            if let Some(g) = t.grad() {
                let scaled: Vec<f64> = g.iter().map(|v| v * inv).collect();
                t.clear_grad();
                t.accumulate_grad(&scaled);
            }
        }
        Ok((total, losses))
    }

    /// One optimizer step on `batch`. Aborts on a non-finite loss.
    pub fn step(&mut self, batch: &[&PointCloud]) -> Result<StepLog> {
        let (grads, losses) = self.batch_gradients(batch)?;
        let n = losses.len() as f64;
        let log = StepLog {
            step: self.adam.step + 1,
            loss: losses.iter().map(|l| l.loss).sum::<f64>() / n,
            j_pr_gt: losses.iter().map(|l| l.j_pr_gt).sum::<f64>() / n,
            j_gt_pr: losses.iter().map(|l| l.j_gt_pr).sum::<f64>() / n,
            skipped_samples: losses.iter().map(|l| l.skipped_samples).sum(),
        };
        if !log.loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {} at step {}",
                log.loss, log.step
            )));
        }
        self.model.params.clear_grads();
        self.model.params.accumulate_grads_from(&grads)?;
        adam_step(&mut self.model.params, &mut self.adam)?;
        Ok(log)
    }

    /// One pass over `scenes` in a seeded shuffled order; `on_step` sees every
    /// log line.
    pub fn epoch(
        &mut self,
        scenes: &[PointCloud],
        epoch: usize,
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<Vec<StepLog>> {
        if scenes.is_empty() {
            return Err(Error::Data("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut logs = Vec::new();
        for chunk in order.chunks(self.config.train.batch) {
            let batch: Vec<&PointCloud> = chunk.iter().map(|&i| &scenes[i]).collect();
            let log = self.step(&batch)?;
            on_step(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn fit(&mut self, scenes: &[PointCloud], mut on_step: impl FnMut(usize, &StepLog)) -> Result<()> {
        for e in 0..self.config.train.epochs {
            self.epoch(scenes, e, |l| on_step(e, l))?;
        }
        Ok(())
    }
}
