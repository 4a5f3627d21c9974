//! Seeded synthetic scenes of boxes, spheres and planar patches.
//!
//! Every point carries its instance id and a semantic id equal to the shape
//! kind. Coordinates are rounded through `f32` so a scene written to disk
//! reads back bit-identically.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use protoseg_core::PointCloud;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box,
    Sphere,
    Plane,
}

impl Shape {
    pub fn semantic_id(self) -> i32 {
        match self {
            Shape::Box => 0,
            Shape::Sphere => 1,
            Shape::Plane => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_points: usize,
    /// Inclusive range of the instance count.
    pub instances_range: [usize; 2],
    pub shapes: Vec<Shape>,
    pub noise_sigma: f64,
    /// Scene bounding box in meters (a cube by default).
    pub extent: [f64; 3],
    /// Minimum free space between primitives' bounding spheres.
    pub min_gap: f64,
    pub allow_overlap: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_points: 1024,
            instances_range: [2, 10],
            shapes: vec![Shape::Box, Shape::Sphere, Shape::Plane],
            noise_sigma: 0.005,
            extent: [1.0, 1.0, 1.0],
            min_gap: 0.05,
            allow_overlap: false,
        }
    }
}

const MAX_PLACEMENT_TRIES: usize = 500;

#[derive(Clone, Debug)]
struct Primitive {
    shape: Shape,
    center: [f64; 3],
    /// Box half extents, sphere radius in `[0]`, plane half sides in `[0..2]`.
    size: [f64; 3],
    /// Plane normal axis.
    axis: usize,
}

impl Primitive {
    fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere => self.size[0],
            Shape::Box => self.size.iter().map(|s| s * s).sum::<f64>().sqrt(),
            Shape::Plane => (self.size[0].powi(2) + self.size[1].powi(2)).sqrt(),
        }
    }

    fn area(&self) -> f64 {
        let [a, b, c] = self.size;
        match self.shape {
            Shape::Sphere => 4.0 * std::f64::consts::PI * a * a,
            Shape::Box => 8.0 * (a * b + b * c + a * c),
            Shape::Plane => 4.0 * a * b,
        }
    }

    fn sample_surface(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let mut local = match self.shape {
            Shape::Sphere => {
                let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.map(|x| x / norm * self.size[0])
            }
            Shape::Box => {
                let [a, b, c] = self.size;
                let faces = [b * c, a * c, a * b];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (i, f) in faces.iter().enumerate() {
                    if pick < *f {
                        axis = i;
                        break;
                    }
                    pick -= f;
                }
                let mut p: [f64; 3] = std::array::from_fn(|i| rng.random_range(-self.size[i]..self.size[i]));
                p[axis] = if rng.random::<bool>() {
                    self.size[axis]
                } else {
                    -self.size[axis]
                };
                p
            }
            Shape::Plane => {
                let u = rng.random_range(-self.size[0]..self.size[0]);
                let v = rng.random_range(-self.size[1]..self.size[1]);
                match self.axis {
                    0 => [0.0, u, v],
                    1 => [u, 0.0, v],
                    _ => [u, v, 0.0],
                }
            }
        };
        for (l, c) in local.iter_mut().zip(self.center) {
            *l += c;
        }
        local
    }
}

fn random_primitive(rng: &mut ChaCha8Rng, shape: Shape, scale: f64) -> Primitive {
    let mut r = |lo: f64, hi: f64| rng.random_range(lo * scale..hi * scale);
    let size = match shape {
        Shape::Sphere => [r(0.07, 0.13), 0.0, 0.0],
        Shape::Box => [r(0.05, 0.11), r(0.05, 0.11), r(0.05, 0.11)],
        Shape::Plane => [r(0.08, 0.15), r(0.08, 0.15), 0.0],
    };
    Primitive {
        shape,
        center: [0.0; 3],
        size,
        axis: rng.random_range(0..3),
    }
}

/// Splits `total` proportionally to `weights` with largest remainders.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Generates scene `index` of the family described by `cfg`.
pub fn generate_scene(cfg: &SynthConfig, index: u64) -> Result<PointCloud> {
    let [lo, hi] = cfg.instances_range;
    if lo == 0 || lo > hi {
        return Err(Error::Config(
            "instances_range must satisfy 1 <= min <= max".into(),
        ));
    }
    if cfg.shapes.is_empty() || cfg.n_points < hi {
        return Err(Error::Config(
            "need at least one shape and one point per instance".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let count = rng.random_range(lo..=hi);
    let scale = cfg.extent.iter().copied().fold(f64::INFINITY, f64::min);

    let mut placed: Vec<Primitive> = Vec::with_capacity(count);
    for _ in 0..count {
        let shape = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
        let mut prim = random_primitive(&mut rng, shape, scale);
        let radius = prim.bounding_radius();
        let mut ok = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            prim.center = std::array::from_fn(|a| {
                let (min, max) = (radius, cfg.extent[a] - radius);
                if max > min {
                    rng.random_range(min..max)
                } else {
                    cfg.extent[a] / 2.0
                }
            });
            ok = cfg.allow_overlap
                || placed.iter().all(|q| {
                    let d: f64 = (0..3)
                        .map(|a| (q.center[a] - prim.center[a]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    d >= q.bounding_radius() + radius + cfg.min_gap
                });
            if ok {
                break;
            }
        }
        if !ok {
            return Err(Error::Data(format!(
                "could not place {count} separated primitives in scene {index}"
            )));
        }
        placed.push(prim);
    }

    let budget = apportion(
        cfg.n_points,
        &placed.iter().map(Primitive::area).collect::<Vec<_>>(),
    );
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut points: Vec<([f64; 3], i32, i32)> = Vec::with_capacity(cfg.n_points);
    for (id, (prim, &n)) in placed.iter().zip(&budget).enumerate() {
        for _ in 0..n {
            let mut p = prim.sample_surface(&mut rng);
            for v in p.iter_mut() {
                *v = (*v + noise.sample(&mut rng)) as f32 as f64;
            }
            points.push((p, id as i32, prim.shape.semantic_id()));
        }
    }
    points.shuffle(&mut rng);
    let data = points.iter().flat_map(|(p, _, _)| *p).collect();
    let cloud = PointCloud::new(3, data)?
        .with_instance_labels(points.iter().map(|p| p.1).collect())?
        .with_semantic_labels(points.iter().map(|p| p.2).collect())?;
    Ok(cloud)
}
