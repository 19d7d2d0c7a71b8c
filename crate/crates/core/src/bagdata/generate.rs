use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Bag, BagDatasetConfig, DataError, Image, Instance};

/// Minimum bag size; k-means with k ≥ 2 needs at least two points.
pub const MIN_BAG_SIZE: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub image: Image,
    pub digit: u8,
}

/// Generates train and test splits from a single pool.
pub fn generate_bags<R: Rng>(
    pool: &[LabeledImage],
    config: &BagDatasetConfig,
    rng: &mut R,
) -> Result<(Vec<Bag>, Vec<Bag>), DataError> {
    generate_bags_from_pools(pool, pool, config, rng)
}

/// Generates the train split from `train_pool` and the test split from
/// `test_pool`, drawing from one sequential stream (train first).
pub fn generate_bags_from_pools<R: Rng>(
    train_pool: &[LabeledImage],
    test_pool: &[LabeledImage],
    config: &BagDatasetConfig,
    rng: &mut R,
) -> Result<(Vec<Bag>, Vec<Bag>), DataError> {
    config.validate()?;
    let size_dist = Normal::new(config.mean_bag_size, config.bag_size_std)
        .map_err(|e| DataError::Config(format!("bag size distribution: {e}")))?;
    let train = generate_split(train_pool, config.n_train_bags, 0, config, &size_dist, rng)?;
    let test = generate_split(
        test_pool,
        config.n_test_bags,
        config.n_train_bags as u64,
        config,
        &size_dist,
        rng,
    )?;
    Ok((train, test))
}

fn generate_split<R: Rng>(
    pool: &[LabeledImage],
    n_bags: usize,
    first_id: u64,
    config: &BagDatasetConfig,
    size_dist: &Normal<f64>,
    rng: &mut R,
) -> Result<Vec<Bag>, DataError> {
    if n_bags == 0 {
        return Ok(Vec::new());
    }
    if pool.is_empty() {
        return Err(DataError::Config("instance pool is empty".into()));
    }
    let (positives, negatives): (Vec<usize>, Vec<usize>) =
        (0..pool.len()).partition(|&i| config.is_positive_digit(pool[i].digit));

    let nominal: Option<Vec<bool>> = if config.balance {
        let n_pos = n_bags.div_ceil(2);
        let mut labels: Vec<bool> = (0..n_bags).map(|i| i < n_pos).collect();
        labels.shuffle(rng);
        if n_pos > 0 && positives.is_empty() {
            return Err(DataError::Config(format!(
                "pool has no instance of positive digits {:?} but positive bags were requested",
                config.positive_digits
            )));
        }
        if n_bags - n_pos > 0 && negatives.is_empty() {
            return Err(DataError::Config(
                "pool has only positive digits but negative bags were requested".into(),
            ));
        }
        Some(labels)
    } else {
        None
    };

    let mut bags = Vec::with_capacity(n_bags);
    for b in 0..n_bags {
        let size = size_dist.sample(rng).round().max(MIN_BAG_SIZE as f64) as usize;
        let mut picks: Vec<usize> = match nominal.as_ref().map(|l| l[b]) {
            Some(false) => (0..size)
                .map(|_| negatives[rng.random_range(0..negatives.len())])
                .collect(),
            _ => (0..size).map(|_| rng.random_range(0..pool.len())).collect(),
        };
        if nominal.as_ref().map(|l| l[b]) == Some(true)
            && !picks.iter().any(|&i| config.is_positive_digit(pool[i].digit))
        {
            let at = rng.random_range(0..size);
            picks[at] = positives[rng.random_range(0..positives.len())];
        }
        let instances: Vec<Instance> = picks
            .iter()
            .enumerate()
            .map(|(k, &i)| Instance {
                instance_id: k as u32,
                image: pool[i].image.clone(),
                digit: pool[i].digit,
            })
            .collect();
        let label = instances.iter().any(|inst| config.is_positive_digit(inst.digit)) as u8;
        bags.push(Bag {
            bag_id: first_id + b as u64,
            instances,
            label,
        });
    }
    Ok(bags)
}
