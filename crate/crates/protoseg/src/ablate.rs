//! Three-arm ablation: the full model, a single-dilation coefficient branch,
//! and training without the GT→prediction term.

use serde::{Deserialize, Serialize};

use protoseg_core::PointCloud;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::report::evaluate_model;
use crate::train::Trainer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub dilations: Vec<usize>,
    pub lambda: f64,
    /// Mean loss over the last epoch.
    pub final_loss: f64,
    pub finite: bool,
    pub m_cov: f64,
    pub m_wcov: f64,
    pub m_prec: f64,
    pub m_rec: f64,
    pub map50: f64,
}

/// The arm configurations derived from `base`.
pub fn arms(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let mut single = base.clone();
    single.model.dilations = vec![1];
    let mut no_gt_to_pr = base.clone();
    no_gt_to_pr.loss.lambda = 0.0;
    vec![
        ("full", base.clone()),
        ("single_dilation", single),
        ("lambda_0", no_gt_to_pr),
    ]
}

/// Trains and evaluates every arm. A non-finite loss ends that arm and is
/// reported in its row rather than aborting the comparison.
pub fn run_ablation(
    base: &RunConfig,
    train: &[PointCloud],
    test: &[PointCloud],
    mut on_epoch: impl FnMut(&str, usize, f64),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, cfg) in arms(base) {
        let mut trainer = Trainer::new(cfg.clone())?;
        let mut final_loss = f64::NAN;
        let mut finite = true;
        for e in 0..cfg.train.epochs {
            match trainer.epoch(train, e, |_| {}) {
                Ok(logs) => {
                    final_loss = logs.iter().map(|l| l.loss).sum::<f64>() / logs.len() as f64;
                    on_epoch(name, e, final_loss);
                }
                Err(Error::Numeric(_)) => {
                    finite = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let agg = if finite {
            evaluate_model(&trainer.model, test)?.1
        } else {
            Default::default()
        };
        rows.push(AblationRow {
            arm: name.to_string(),
            dilations: cfg.model.dilations.clone(),
            lambda: cfg.loss.lambda,
            final_loss,
            finite: finite && final_loss.is_finite(),
            m_cov: agg.m_cov,
            m_wcov: agg.m_wcov,
            m_prec: agg.m_prec,
            m_rec: agg.m_rec,
            map50: agg.map50,
        });
    }
    Ok(rows)
}

/// Fixed-width text table of the rows.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<16} {:<12} {:>6} {:>10} {:>7} {:>7} {:>7} {:>7}\n",
        "arm", "dilations", "lambda", "loss", "mCov", "mPrec", "mRec", "mAP50"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:<12} {:>6.2} {:>10.4} {:>7.3} {:>7.3} {:>7.3} {:>7.3}\n",
            r.arm,
            format!("{:?}", r.dilations),
            r.lambda,
            r.final_loss,
            r.m_cov,
            r.m_prec,
            r.m_rec,
            r.map50
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arms_differ_in_one_setting_each() {
        let base = RunConfig::default();
        let a = arms(&base);
        assert_eq!(a.len(), 3);
        assert_eq!(a[0].1, base);
        assert_eq!(a[1].1.model.dilations, vec![1]);
        assert_eq!(a[1].1.loss, base.loss);
        assert_eq!(a[2].1.loss.lambda, 0.0);
        assert_eq!(a[2].1.model, base.model);
    }
}
