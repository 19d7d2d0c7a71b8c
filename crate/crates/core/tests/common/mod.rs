#![allow(dead_code)]

use c2c::bagdata::{generate_bags, Bag, BagDatasetConfig, Image, Instance, LabeledImage};
use c2c::model::{EncoderKind, ModelConfig};
use c2c::rng::stream;
use rand::Rng;

pub const SIDE: usize = 8;

/// 8×8 images: digits 8 and 9 light the top-left corner, every other digit
/// the bottom-right, over low-level noise.
pub fn corner_pool(n: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = stream(seed, "corner-pool", &[]);
    (0..n)
        .map(|i| {
            let digit = (i % 10) as u8;
            let mut px: Vec<u8> = (0..SIDE * SIDE).map(|_| rng.random_range(0..40)).collect();
            let (r0, c0) = if digit >= 8 { (0, 0) } else { (SIDE - 3, SIDE - 3) };
            for r in r0..r0 + 3 {
                for c in c0..c0 + 3 {
                    px[r * SIDE + c] = rng.random_range(200..=255);
                }
            }
            LabeledImage {
                image: Image::new(SIDE, SIDE, px).unwrap(),
                digit,
            }
        })
        .collect()
}

pub fn corner_bags(n_train: usize, n_test: usize, seed: u64) -> (Vec<Bag>, Vec<Bag>) {
    let cfg = BagDatasetConfig {
        n_train_bags: n_train,
        n_test_bags: n_test,
        mean_bag_size: 12.0,
        bag_size_std: 3.0,
        seed,
        ..Default::default()
    };
    generate_bags(&corner_pool(300, seed), &cfg, &mut stream(seed, "bags", &[])).unwrap()
}

pub fn dense_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderKind::Dense { hidden: vec![16] },
        input_rows: SIDE,
        input_cols: SIDE,
        embed_dim: 8,
        attention_dim: 6,
    }
}

pub fn random_bag<R: Rng>(rng: &mut R, bag_id: u64, n: usize, side: usize) -> Bag {
    Bag {
        bag_id,
        label: rng.random_range(0..2),
        instances: (0..n)
            .map(|i| Instance {
                instance_id: i as u32,
                image: Image::new(side, side, (0..side * side).map(|_| rng.random()).collect()).unwrap(),
                digit: rng.random_range(0..10),
            })
            .collect(),
    }
}
