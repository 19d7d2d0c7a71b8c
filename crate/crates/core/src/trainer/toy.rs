//! A two-bag problem small enough for exhaustive finite-difference checks
//! of the full composite loss through every parameter group.

use rand::Rng;

use super::TrainError;
use crate::bagdata::{Bag, Image, Instance};
use crate::diffcore::{gradient_check, DiffError, GradCheckOptions, GradCheckReport, ParamSet, Real, Tape, Var};
use crate::loss::{composite_loss, LossWeights};
use crate::model::{forward_bag, EncoderKind, Model, ModelConfig, ModelError, ModelVars, Pooling};
use crate::rng::stream;

pub struct ToyProblem {
    pub model: Model,
    pub bags: Vec<Bag>,
    /// Per bag, positions sharing a cluster.
    pub groups: Vec<Vec<Vec<usize>>>,
    pub weights: LossWeights,
}

/// LeNet5 on 16×16 inputs (the smallest size the conv stack accepts), with
/// narrow embedding and attention widths.
pub fn toy_problem(seed: u64) -> Result<ToyProblem, TrainError> {
    let config = ModelConfig {
        encoder: EncoderKind::LeNet5,
        input_rows: 16,
        input_cols: 16,
        embed_dim: 6,
        attention_dim: 5,
    };
    let mut rng = stream(seed, "toy", &[]);
    let mut model = Model::init(config, &mut rng)?;
    // Non-zero biases keep ReLUs away from exact kinks.
    for p in model.params.tensors_mut() {
        if p.name.ends_with(".bias") {
            p.values.iter_mut().for_each(|v| *v = rng.random_range(0.05..0.2));
        }
    }
    let mut bag = |bag_id: u64, label: u8, n: usize| Bag {
        bag_id,
        label,
        instances: (0..n)
            .map(|i| Instance {
                instance_id: i as u32,
                image: Image::new(16, 16, (0..256).map(|_| rng.random::<u8>()).collect()).unwrap(),
                digit: if label == 1 && i == 0 { 9 } else { 1 },
            })
            .collect(),
    };
    let bags = vec![bag(0, 1, 4), bag(1, 0, 3)];
    Ok(ToyProblem {
        model,
        bags,
        groups: vec![vec![vec![0, 2], vec![1, 3]], vec![vec![0, 1, 2]]],
        weights: LossWeights::default(),
    })
}

fn as_diff(e: ModelError) -> DiffError {
    match e {
        ModelError::Diff(d) => d,
        other => DiffError::Contract(other.to_string()),
    }
}

impl ToyProblem {
    /// Sum of the per-bag composite losses.
    pub fn loss<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet) -> Result<Var, DiffError> {
        let vars = ModelVars::register(tape, params).map_err(as_diff)?;
        let mut total = None;
        for (bag, groups) in self.bags.iter().zip(&self.groups) {
            let images: Vec<&Image> = bag.instances.iter().map(|i| &i.image).collect();
            let fwd = forward_bag(tape, &vars, &self.model.config, &images, Pooling::Attention).map_err(as_diff)?;
            let l = composite_loss(tape, &fwd, bag.label, groups, &self.weights)?.total;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        Ok(total.expect("toy problem has bags"))
    }
}

pub fn toy_gradient_check<T: Real>(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport, TrainError> {
    let toy = toy_problem(seed)?;
    Ok(gradient_check::<T, _>(
        &toy.model.params,
        |tape, p| toy.loss(tape, p),
        opts,
    )?)
}
