use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::evaluate::{bag_probs, predicted_label};
use super::metrics::{compute_metrics, MetricsReport};
use super::{evaluate, SamplingStrategy, TrainConfig, TrainError};
use crate::bagdata::{Bag, Image};
use crate::clustering::{cluster_sample, kmeans, l2_normalize, random_sample, topk_sample, KMeansOptions};
use crate::diffcore::{DiffError, Tape};
use crate::loss::{composite_loss, LossBreakdown};
use crate::model::{encode, forward_bag, instance_predict, Model, ModelError, ModelVars};
use crate::rng::stream;

/// Per-epoch record of what the sampler handed to Phase 2.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingAudit {
    pub bags: usize,
    pub total_instances: usize,
    pub max_instances_per_step: usize,
    /// Bags where every cluster contributed exactly `min(|c|, k′)`.
    pub quota_exact_bags: usize,
    /// Bags whose per-cluster union exceeded the cap and was subsampled.
    pub capped_bags: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Computed in Phase 1 from the parameters at the start of the epoch.
    pub train: MetricsReport,
    pub validation: Option<MetricsReport>,
    pub sampling: SamplingAudit,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn without_timing(&self) -> Self {
        Self {
            seconds: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub records: Vec<EpochRecord>,
    pub validation_ids: Vec<u64>,
}

struct Prepared {
    selected: Vec<usize>,
    groups: Vec<Vec<usize>>,
    probs: [f64; 2],
    quota_exact: bool,
    capped: bool,
}

fn non_finite(epoch: usize, bag_id: u64) -> impl Fn(DiffError) -> TrainError {
    move |e| match e {
        DiffError::NonFinite { .. } => TrainError::NonFinite {
            epoch,
            bag_id,
            detail: e.to_string(),
        },
        other => TrainError::Diff(other),
    }
}

fn model_non_finite(epoch: usize, bag_id: u64) -> impl Fn(ModelError) -> TrainError {
    move |e| match e {
        ModelError::Diff(d) => non_finite(epoch, bag_id)(d),
        other => TrainError::Model(other),
    }
}

/// Phase 1 for one bag: embed everything, cluster, fix the sampling plan.
fn prepare(bag: &Bag, model: &Model, cfg: &TrainConfig, epoch: usize) -> Result<Prepared, TrainError> {
    let images: Vec<&Image> = bag.instances.iter().map(|i| &i.image).collect();
    let h = encode(model, &images).map_err(model_non_finite(epoch, bag.bag_id))?;
    let probs = bag_probs(&h, model, cfg.pooling)?;
    let opts = KMeansOptions {
        k: cfg.k,
        max_iter: cfg.kmeans_max_iter,
        tol: cfg.kmeans_tol,
        restarts: cfg.kmeans_restarts,
    };
    let parts = [bag.bag_id, epoch as u64];
    let assign = kmeans(&l2_normalize(&h), &opts, &mut stream(cfg.seed, "kmeans", &parts))?;
    let plan = match cfg.sampling_strategy {
        SamplingStrategy::Cluster => cluster_sample(
            &assign,
            cfg.k_prime,
            cfg.n_prime_cap,
            &mut stream(cfg.seed, "sample", &parts),
        ),
        SamplingStrategy::Topk => {
            let scores: Vec<f64> = instance_predict(&h, model)?.iter().map(|p| p[1]).collect();
            topk_sample(&scores, cfg.n_prime_cap)
        }
        SamplingStrategy::Random => random_sample(bag.len(), cfg.n_prime_cap, &mut stream(cfg.seed, "sample", &parts)),
    };

    if plan.is_empty() || plan.len() > cfg.n_prime_cap {
        return Err(TrainError::Invariant(format!(
            "bag {} selected {} instances with cap {}",
            bag.bag_id,
            plan.len(),
            cfg.n_prime_cap
        )));
    }
    let (mut quota_exact, mut capped) = (false, false);
    if cfg.sampling_strategy == SamplingStrategy::Cluster {
        let quotas: Vec<usize> = assign.cluster_sizes().iter().map(|&s| s.min(cfg.k_prime)).collect();
        let union: usize = quotas.iter().sum();
        let mut drawn = vec![0usize; assign.k];
        plan.selected.iter().for_each(|&i| drawn[assign.assignment[i]] += 1);
        if union <= cfg.n_prime_cap {
            if drawn != quotas {
                return Err(TrainError::Invariant(format!(
                    "bag {}: per-cluster draws {drawn:?} differ from quotas {quotas:?}",
                    bag.bag_id
                )));
            }
            quota_exact = true;
        } else {
            if plan.len() != cfg.n_prime_cap || drawn.iter().zip(&quotas).any(|(d, q)| d > q) {
                return Err(TrainError::Invariant(format!(
                    "bag {}: capped draws {drawn:?} inconsistent with quotas {quotas:?}",
                    bag.bag_id
                )));
            }
            capped = true;
        }
    }
    let groups = assign.groups_within(&plan.selected);
    Ok(Prepared {
        selected: plan.selected,
        groups,
        probs,
        quota_exact,
        capped,
    })
}

/// One epoch over `bags`: Phase 1 against a frozen snapshot, then one Adam
/// step per bag in a shuffled order.
pub fn run_epoch(
    bags: &[&Bag],
    model: &mut Model,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochRecord, TrainError> {
    let start = Instant::now();
    let prepared: Vec<Prepared> = {
        let frozen: &Model = model;
        bags.par_iter()
            .map(|bag| prepare(bag, frozen, cfg, epoch))
            .collect::<Result<_, _>>()?
    };

    let labels: Vec<u8> = bags.iter().map(|b| b.label).collect();
    let scores: Vec<f64> = prepared.iter().map(|p| p.probs[1]).collect();
    let preds: Vec<u8> = prepared.iter().map(|p| predicted_label(p.probs)).collect();
    let train = compute_metrics(&labels, &preds, &scores);
    let sampling = SamplingAudit {
        bags: bags.len(),
        total_instances: prepared.iter().map(|p| p.selected.len()).sum(),
        max_instances_per_step: prepared.iter().map(|p| p.selected.len()).max().unwrap_or(0),
        quota_exact_bags: prepared.iter().filter(|p| p.quota_exact).count(),
        capped_bags: prepared.iter().filter(|p| p.capped).count(),
    };

    let mut order: Vec<usize> = (0..bags.len()).collect();
    order.shuffle(&mut stream(cfg.seed, "order", &[epoch as u64]));
    let mut losses = Vec::with_capacity(bags.len());
    for &i in &order {
        let (bag, prep) = (bags[i], &prepared[i]);
        let images: Vec<&Image> = prep.selected.iter().map(|&j| &bag.instances[j].image).collect();
        let mut tape = Tape::<f64>::new();
        let vars = ModelVars::register(&mut tape, &model.params)?;
        let fwd = forward_bag(&mut tape, &vars, &model.config, &images, cfg.pooling)
            .map_err(model_non_finite(epoch, bag.bag_id))?;
        let lv = composite_loss(&mut tape, &fwd, bag.label, &prep.groups, &cfg.weights)
            .map_err(non_finite(epoch, bag.bag_id))?;
        let grads = tape.backward(lv.total).map_err(non_finite(epoch, bag.bag_id))?;
        adam_step(&mut model.params, &grads, adam, cfg.learning_rate, &cfg.adam)?;
        if !model.params.all_finite() {
            return Err(TrainError::NonFinite {
                epoch,
                bag_id: bag.bag_id,
                detail: "parameters after the Adam step".into(),
            });
        }
        losses.push(lv.breakdown(&tape));
    }

    Ok(EpochRecord {
        epoch,
        loss: LossBreakdown::mean(&losses),
        train,
        validation: None,
        sampling,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Deterministic hold-out: returns (train, validation) indices, each ascending.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((n as f64) * fraction).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, "validation", &[]));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

pub fn train(bags: &[Bag], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(bags, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch (for streaming logs).
pub fn train_with(
    bags: &[Bag],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let (train_idx, val_idx) = split_validation(bags.len(), cfg.validation_fraction, cfg.seed);
    if train_idx.is_empty() {
        return Err(TrainError::Config(
            "no training bags left after the validation split".into(),
        ));
    }
    let train_bags: Vec<&Bag> = train_idx.iter().map(|&i| &bags[i]).collect();
    let val_bags: Vec<&Bag> = val_idx.iter().map(|&i| &bags[i]).collect();

    let mut model = Model::init(cfg.model.clone(), &mut stream(cfg.seed, "init", &[]))?;
    let mut adam = AdamState::new(&model.params);
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rec = run_epoch(&train_bags, &mut model, &mut adam, cfg, epoch)?;
        if !val_bags.is_empty() {
            let t = Instant::now();
            rec.validation = Some(evaluate(&val_bags, &model, cfg.pooling, None)?.metrics);
            rec.seconds += t.elapsed().as_secs_f64();
        }
        on_epoch(&rec);
        records.push(rec);
    }
    Ok(TrainOutcome {
        model,
        records,
        validation_ids: val_bags.iter().map(|b| b.bag_id).collect(),
    })
}
