//! A deterministic geometric segmenter: points closer than a radius belong
//! to the same instance. Labels depend only on the point set, so running it
//! per block and on the whole room must agree wherever the blocks are merged
//! correctly.

use protoseg::synth::{generate_scene, SynthConfig};
use protoseg_core::PointCloud;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of the `radius` graph over XYZ, numbered by first
/// appearance.
pub fn components(cloud: &PointCloud, radius: f64) -> Vec<i32> {
    let n = cloud.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let r2 = radius * radius;
    for i in 0..n {
        let a = cloud.xyz(i);
        for j in i + 1..n {
            let b = cloud.xyz(j);
            let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            if d <= r2 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut ids = vec![-1i32; n];
    let mut labels = Vec::with_capacity(n);
    let mut next = 0;
    for i in 0..n {
        let root = find(&mut parent, i);
        if ids[root] < 0 {
            ids[root] = next;
            next += 1;
        }
        labels.push(ids[root]);
    }
    labels
}

/// A 2 m × 2 m room of well separated objects.
pub fn room_config(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_points: 4096,
        instances_range: [6, 10],
        extent: [2.0, 2.0, 1.0],
        min_gap: 0.1,
        ..SynthConfig::default()
    }
}

pub fn room(seed: u64, index: u64) -> PointCloud {
    generate_scene(&room_config(seed), index).expect("valid room config")
}
