//! Inspection payloads: per-point prototype scores and the coefficient
//! histogram of retained candidates.

use serde::{Deserialize, Serialize};

use protoseg_core::model::Inference;
use protoseg_core::protoscore::export_prototype_scores;
use protoseg_core::PointCloud;

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PrototypeLine {
    prototype: usize,
    x: f64,
    y: f64,
    z: f64,
    score: f64,
}

/// JSON lines `{"prototype", "x", "y", "z", "score"}` for each requested
/// prototype over every point.
pub fn prototype_jsonl(inf: &Inference, m: usize, cloud: &PointCloud, ids: &[usize]) -> Result<String> {
    let records = export_prototype_scores(&inf.protos, m, cloud, ids)?;
    let mut out = String::new();
    for r in records {
        let line = PrototypeLine {
            prototype: r.prototype,
            x: r.xyz[0],
            y: r.xyz[1],
            z: r.xyz[2],
            score: r.score,
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges spanning [-1, 1].
    pub bins: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over [-1, 1]; values outside are clamped to the end
    /// bins and 1.0 falls in the last bin.
    pub fn of(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let edges = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let pos = ((v + 1.0) / 2.0 * bins as f64).floor();
            let b = if pos.is_nan() {
                0
            } else {
                (pos.max(0.0) as usize).min(bins - 1)
            };
            counts[b] += 1;
        }
        Self { bins: edges, counts }
    }
}

/// Histogram of the coefficients of NMS-retained candidates only.
pub fn coefficient_histogram(inf: &Inference, m: usize, bins: usize) -> Histogram {
    Histogram::of(&inf.retained_coefficients(m), bins)
}
