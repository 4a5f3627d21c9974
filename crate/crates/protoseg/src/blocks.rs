//! Slicing a room into overlapping square XY blocks.

use rand::seq::index;
use rand::Rng;

use protoseg_core::eval::BlockLayout;
use protoseg_core::PointCloud;

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    pub size: f64,
    pub stride: f64,
    /// Fixed per-block point count (training mode); `None` keeps every point.
    pub n_sample: Option<usize>,
    /// Append the point's location normalized to the room's bounding box.
    pub room_location: bool,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            size: 1.0,
            stride: 0.5,
            n_sample: Some(4096),
            room_location: true,
        }
    }
}

impl BlockConfig {
    /// All points of every block, as used at inference time.
    pub fn inference() -> Self {
        Self {
            n_sample: None,
            ..Self::default()
        }
    }
}

/// Number of block origins needed to cover `extent`.
fn steps(extent: f64, size: f64, stride: f64) -> usize {
    if extent <= size {
        1
    } else {
        // tolerate rounding noise in room extents such as 2.0000000001
        ((extent - size) / stride - 1e-9).ceil() as usize + 1
    }
}

/// Splits `room` into blocks in row-major order (X fastest). Empty blocks
/// are dropped. Each block cloud keeps the room's channels (plus three
/// normalized room-location channels when configured) and labels.
pub fn slice_blocks(
    room: &PointCloud,
    cfg: &BlockConfig,
    rng: &mut impl Rng,
) -> Result<(BlockLayout, Vec<PointCloud>)> {
    let n = room.len();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for i in 0..n {
        for (a, &v) in room.xyz(i).iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let nx = steps(hi[0] - lo[0], cfg.size, cfg.stride);
    let ny = steps(hi[1] - lo[1], cfg.size, cfg.stride);

    let mut blocks = Vec::new();
    for by in 0..ny {
        for bx in 0..nx {
            let x0 = lo[0] + bx as f64 * cfg.stride;
            let y0 = lo[1] + by as f64 * cfg.stride;
            let inside: Vec<usize> = (0..n)
                .filter(|&i| {
                    let p = room.xyz(i);
                    p[0] >= x0 && p[0] <= x0 + cfg.size && p[1] >= y0 && p[1] <= y0 + cfg.size
                })
                .collect();
            if inside.is_empty() {
                continue;
            }
            let chosen = match cfg.n_sample {
                None => inside,
                Some(m) if inside.len() >= m => {
                    let mut pick = index::sample(rng, inside.len(), m).into_vec();
                    pick.sort_unstable();
                    pick.into_iter().map(|j| inside[j]).collect()
                }
                Some(m) => {
                    let mut all = inside.clone();
                    all.extend((inside.len()..m).map(|_| inside[rng.random_range(0..inside.len())]));
                    all
                }
            };
            blocks.push(chosen);
        }
    }

    let clouds = blocks
        .iter()
        .map(|idx| {
            let sub = room.select(idx);
            if !cfg.room_location {
                return Ok(sub);
            }
            let c = sub.channels();
            let mut data = Vec::with_capacity(idx.len() * (c + 3));
            for (k, &i) in idx.iter().enumerate() {
                data.extend_from_slice(sub.point(k));
                let p = room.xyz(i);
                for a in 0..3 {
                    let span = hi[a] - lo[a];
                    data.push(if span > 0.0 { (p[a] - lo[a]) / span } else { 0.0 });
                }
            }
            Ok(sub.with_channels(c + 3, data)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let layout = BlockLayout {
        size: cfg.size,
        stride: cfg.stride,
        blocks,
    };
    Ok((layout, clouds))
}
