use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsReport};
use super::TrainError;
use crate::bagdata::{Bag, Image};
use crate::clustering::{kmeans, l2_normalize, EmbeddingMatrix, KMeansOptions};
use crate::model::{aggregate, attention_weights, bag_predict, encode, mean_aggregate, Model, ModelError, Pooling};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub bag_id: u64,
    pub instance_id: u32,
    pub digit: u8,
    pub cluster_id: Option<usize>,
    pub attention_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BagPrediction {
    pub bag_id: u64,
    pub label: u8,
    pub probs: [f64; 2],
    pub predicted: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub predictions: Vec<BagPrediction>,
    pub attention: Vec<AttentionRecord>,
}

/// Pooling weights for all instances: learned attention or uniform.
pub(crate) fn pooling_weights(h: &EmbeddingMatrix, model: &Model, pooling: Pooling) -> Result<Vec<f64>, ModelError> {
    match pooling {
        Pooling::Attention => attention_weights(h, model),
        Pooling::Mean => Ok(vec![1.0 / h.rows() as f64; h.rows()]),
    }
}

pub(crate) fn bag_probs(h: &EmbeddingMatrix, model: &Model, pooling: Pooling) -> Result<[f64; 2], ModelError> {
    let z = match pooling {
        Pooling::Attention => aggregate(h, &attention_weights(h, model)?)?,
        Pooling::Mean => mean_aggregate(h),
    };
    bag_predict(&z, model)
}

/// Argmax with ties going to the negative class.
pub(crate) fn predicted_label(p: [f64; 2]) -> u8 {
    (p[1] > p[0]) as u8
}

fn evaluate_bag(
    bag: &Bag,
    model: &Model,
    pooling: Pooling,
    clustering: Option<(usize, u64)>,
) -> Result<(BagPrediction, Vec<AttentionRecord>), TrainError> {
    let images: Vec<&Image> = bag.instances.iter().map(|i| &i.image).collect();
    let h = encode(model, &images)?;
    let weights = pooling_weights(&h, model, pooling)?;
    let probs = bag_probs(&h, model, pooling)?;
    let clusters = match clustering {
        Some((k, seed)) => {
            let mut rng = stream(seed, "eval-kmeans", &[bag.bag_id]);
            Some(kmeans(&l2_normalize(&h), &KMeansOptions::new(k), &mut rng)?.assignment)
        }
        None => None,
    };
    let records = bag
        .instances
        .iter()
        .enumerate()
        .map(|(n, inst)| AttentionRecord {
            bag_id: bag.bag_id,
            instance_id: inst.instance_id,
            digit: inst.digit,
            cluster_id: clusters.as_ref().map(|c| c[n]),
            attention_weight: weights[n],
        })
        .collect();
    let pred = BagPrediction {
        bag_id: bag.bag_id,
        label: bag.label,
        probs,
        predicted: predicted_label(probs),
    };
    Ok((pred, records))
}

/// Scores every bag on all of its instances (no sampling). With
/// `clustering = Some((k, seed))` each bag is also clustered so the attention
/// records carry a cluster id.
pub fn evaluate(
    bags: &[&Bag],
    model: &Model,
    pooling: Pooling,
    clustering: Option<(usize, u64)>,
) -> Result<Evaluation, TrainError> {
    let per_bag: Vec<(BagPrediction, Vec<AttentionRecord>)> = bags
        .par_iter()
        .map(|bag| evaluate_bag(bag, model, pooling, clustering))
        .collect::<Result<_, _>>()?;
    let labels: Vec<u8> = per_bag.iter().map(|(p, _)| p.label).collect();
    let preds: Vec<u8> = per_bag.iter().map(|(p, _)| p.predicted).collect();
    let scores: Vec<f64> = per_bag.iter().map(|(p, _)| p.probs[1]).collect();
    let metrics = compute_metrics(&labels, &preds, &scores);
    let (predictions, attention): (Vec<_>, Vec<_>) = per_bag.into_iter().unzip();
    Ok(Evaluation {
        metrics,
        predictions,
        attention: attention.into_iter().flatten().collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformityStats {
    /// `(bag_id, CV)` for positive bags with at least two positive instances.
    pub per_bag: Vec<(u64, f64)>,
    pub median: Option<f64>,
    /// Positive bags skipped because they hold a single positive instance.
    pub excluded: usize,
}

/// Coefficient of variation (population std / mean) of attention over the
/// positive-digit instances of each positive bag, and its median.
pub fn attention_uniformity_stats(records: &[AttentionRecord], positive_digits: &[u8]) -> UniformityStats {
    let mut per_bag = Vec::new();
    let mut excluded = 0;
    let mut start = 0;
    while start < records.len() {
        let id = records[start].bag_id;
        let end = start + records[start..].iter().take_while(|r| r.bag_id == id).count();
        let w: Vec<f64> = records[start..end]
            .iter()
            .filter(|r| positive_digits.contains(&r.digit))
            .map(|r| r.attention_weight)
            .collect();
        match w.len() {
            0 => {}
            1 => excluded += 1,
            n => {
                let mean = w.iter().sum::<f64>() / n as f64;
                let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                per_bag.push((id, var.sqrt() / mean));
            }
        }
        start = end;
    }
    let mut sorted: Vec<f64> = per_bag.iter().map(|p| p.1).collect();
    sorted.sort_by(f64::total_cmp);
    let median = match sorted.len() {
        0 => None,
        n if n % 2 == 1 => Some(sorted[n / 2]),
        n => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    };
    UniformityStats {
        per_bag,
        median,
        excluded,
    }
}
