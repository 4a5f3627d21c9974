use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use protoseg::blocks::{slice_blocks, BlockConfig};
use protoseg::format::{decode_checkpoint, decode_cloud, encode_checkpoint, encode_cloud};
use protoseg_core::{PointCloud, Tensor};

fn cloud_strategy() -> impl Strategy<Value = PointCloud> {
    (1usize..40, 3usize..7, any::<bool>(), any::<bool>()).prop_flat_map(|(n, c, inst, sem)| {
        (
            prop::collection::vec(-100.0f32..100.0, n * c),
            prop::collection::vec(-1i32..20, n),
            prop::collection::vec(0i32..5, n),
        )
            .prop_map(move |(data, il, sl)| {
                let mut cloud = PointCloud::new(c, data.into_iter().map(f64::from).collect()).unwrap();
                cloud.instance_labels = inst.then_some(il);
                cloud.semantic_labels = sem.then_some(sl);
                cloud
            })
    })
}

proptest! {
    #[test]
    fn cloud_round_trip(cloud in cloud_strategy()) {
        let bytes = encode_cloud(&cloud);
        prop_assert_eq!(decode_cloud(&bytes).unwrap(), cloud);
    }

    #[test]
    fn checkpoint_round_trip(
        shapes in prop::collection::vec(prop::collection::vec(1usize..4, 0..3), 0..5),
        seed in any::<u64>(),
    ) {
        let mut x = seed;
        let tensors: Vec<(String, Tensor)> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n: usize = s.iter().product();
                let values = (0..n)
                    .map(|_| {
                        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                    })
                    .collect();
                (format!("t{i}"), Tensor::new(s.clone(), values).unwrap())
            })
            .collect();
        let bytes = encode_checkpoint(&tensors).unwrap();
        prop_assert_eq!(decode_checkpoint(&bytes).unwrap(), tensors);
    }

    #[test]
    fn blocks_cover_every_point(
        xy in prop::collection::vec((0.0f64..3.0, 0.0f64..2.5), 1..120),
        seed in any::<u64>(),
    ) {
        let data: Vec<f64> = xy.iter().flat_map(|&(x, y)| [x, y, 0.5]).collect();
        let room = PointCloud::new(3, data).unwrap();
        let cfg = BlockConfig { n_sample: None, room_location: false, ..BlockConfig::default() };
        let (layout, clouds) = slice_blocks(&room, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut seen = vec![false; room.len()];
        for (block, cloud) in layout.blocks.iter().zip(&clouds) {
            prop_assert_eq!(block.len(), cloud.len());
            for &p in block {
                seen[p] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }
}

#[test]
fn checkpoint_bit_flips_fail_the_checksum() {
    let tensors = vec![(
        "w".to_string(),
        Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
    )];
    let bytes = encode_checkpoint(&tensors).unwrap();
    for pos in 0..bytes.len() {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        assert!(decode_checkpoint(&bad).is_err(), "flip at {pos} accepted");
    }
}
