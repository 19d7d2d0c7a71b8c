mod common;

use c2c::bagdata::Bag;
use c2c::model::{encode_checkpoint, Checkpoint};
use c2c::trainer::{evaluate, train, SamplingStrategy, TrainConfig};

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        k: 3,
        k_prime: 2,
        n_prime_cap: 5,
        learning_rate: 5e-3,
        epochs: 12,
        seed,
        model: common::dense_config(),
        ..Default::default()
    }
}

#[test]
fn loss_falls_and_corner_bags_are_learned() {
    let (train_bags, test_bags) = common::corner_bags(40, 20, 3);
    let out = train(&train_bags, &quick_config(3)).unwrap();
    let first = out.records.first().unwrap().loss.total;
    let last = out.records.last().unwrap().loss.total;
    assert!(last < first, "{first} -> {last}");
    let test: Vec<&Bag> = test_bags.iter().collect();
    let ev = evaluate(&test, &out.model, c2c::model::Pooling::Attention, None).unwrap();
    assert!(ev.metrics.accuracy >= 0.9, "{:?}", ev.metrics);
}

#[test]
fn same_seed_same_checkpoint_bytes() {
    let (train_bags, _) = common::corner_bags(16, 0, 5);
    let cfg = TrainConfig {
        epochs: 3,
        ..quick_config(5)
    };
    let run = || {
        let out = train(&train_bags, &cfg).unwrap();
        let bytes = encode_checkpoint(&Checkpoint {
            model: out.model,
            train_config: None,
        })
        .unwrap();
        (
            bytes,
            out.records.iter().map(|r| r.without_timing()).collect::<Vec<_>>(),
        )
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let other = train(&train_bags, &TrainConfig { seed: 6, ..cfg.clone() }).unwrap();
    let c = encode_checkpoint(&Checkpoint {
        model: other.model,
        train_config: None,
    })
    .unwrap();
    assert_ne!(a, c);
}

#[test]
fn every_step_respects_the_cap() {
    let (train_bags, _) = common::corner_bags(16, 0, 7);
    for strategy in [
        SamplingStrategy::Cluster,
        SamplingStrategy::Topk,
        SamplingStrategy::Random,
    ] {
        let cfg = TrainConfig {
            epochs: 2,
            sampling_strategy: strategy,
            ..quick_config(7)
        };
        let out = train(&train_bags, &cfg).unwrap();
        for r in &out.records {
            assert!(r.sampling.max_instances_per_step <= cfg.n_prime_cap, "{strategy}");
            if strategy == SamplingStrategy::Cluster {
                assert_eq!(r.sampling.quota_exact_bags + r.sampling.capped_bags, r.sampling.bags);
            }
        }
    }
}

#[test]
fn validation_bags_are_held_out() {
    let (train_bags, _) = common::corner_bags(20, 0, 9);
    let out = train(
        &train_bags,
        &TrainConfig {
            epochs: 1,
            ..quick_config(9)
        },
    )
    .unwrap();
    assert_eq!(out.validation_ids.len(), 3);
    let r = &out.records[0];
    assert_eq!(r.sampling.bags, 17);
    assert!(r.validation.is_some());
}
