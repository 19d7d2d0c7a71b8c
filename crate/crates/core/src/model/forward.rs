use crate::bagdata::Image;
use crate::clustering::EmbeddingMatrix;
use crate::diffcore::{softmax, ParamSet, Real, Tape, Tensor, Var};

use super::{EncoderKind, Model, ModelConfig, ModelError, Pooling};

/// Tape handles for every model parameter, looked up by name.
pub struct ModelVars {
    vars: Vec<(String, Var)>,
}

impl ModelVars {
    pub fn register<T: Real>(tape: &mut Tape<T>, params: &ParamSet) -> Result<Self, ModelError> {
        let mut vars = Vec::with_capacity(params.len());
        for p in params.iter() {
            vars.push((p.name.clone(), tape.param(p)?));
        }
        Ok(Self { vars })
    }

    pub fn get(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("parameter {name} was not registered"))
    }

    fn dense<T: Real>(&self, tape: &mut Tape<T>, prefix: &str, x: Var) -> Result<Var, ModelError> {
        let w = self.get(&format!("{prefix}.weight"));
        let b = self.get(&format!("{prefix}.bias"));
        Ok(tape.affine(x, w, Some(b))?)
    }
}

fn input_tensor<T: Real>(cfg: &ModelConfig, images: &[&Image]) -> Result<Tensor<T>, ModelError> {
    if images.is_empty() {
        return Err(ModelError::Shape("cannot encode an empty bag".into()));
    }
    let (rows, cols) = (cfg.input_rows, cfg.input_cols);
    let mut data = Vec::with_capacity(images.len() * rows * cols);
    for img in images {
        if (img.rows, img.cols) != (rows, cols) {
            return Err(ModelError::Shape(format!(
                "encoder expects {rows}x{cols} images, got {}x{}",
                img.rows, img.cols
            )));
        }
        data.extend(img.levels.iter().map(|&v| T::lit(v as f64 / 255.0)));
    }
    let shape = match cfg.encoder {
        EncoderKind::LeNet5 => vec![images.len(), 1, rows, cols],
        EncoderKind::Dense { .. } => vec![images.len(), rows * cols],
    };
    Ok(Tensor::new(shape, data)?)
}

/// `[N, l]` embeddings on the tape.
pub(crate) fn encode_tape<T: Real>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    images: &[&Image],
) -> Result<Var, ModelError> {
    let n = images.len();
    let x = tape.constant(input_tensor(cfg, images)?)?;
    let mut x = match &cfg.encoder {
        EncoderKind::LeNet5 => {
            let mut x = x;
            for conv in ["encoder.conv1", "encoder.conv2"] {
                let k = vars.get(&format!("{conv}.weight"));
                let b = vars.get(&format!("{conv}.bias"));
                x = tape.conv2d_valid(x, k, b)?;
                x = tape.relu(x)?;
                x = tape.maxpool2(x)?;
            }
            let flat = cfg.lenet_flat().expect("validated config");
            x = tape.reshape(x, &[n, flat])?;
            for fc in ["encoder.fc1", "encoder.fc2"] {
                x = vars.dense(tape, fc, x)?;
                x = tape.relu(x)?;
            }
            x
        }
        EncoderKind::Dense { hidden } => {
            let mut x = x;
            for i in 0..hidden.len() {
                x = vars.dense(tape, &format!("encoder.fc{}", i + 1), x)?;
                x = tape.relu(x)?;
            }
            x
        }
    };
    x = vars.dense(tape, "encoder.proj", x)?;
    Ok(tape.relu(x)?)
}

/// `softmax_n(v2ᵀ tanh(v1 h_n))` as a length-N vector.
pub(crate) fn attention_tape<T: Real>(tape: &mut Tape<T>, vars: &ModelVars, h: Var) -> Result<Var, ModelError> {
    let n = tape.value(h).shape()[0];
    let d = tape.value(vars.get("attention.v2")).len();
    let hidden = tape.affine(h, vars.get("attention.v1"), None)?;
    let hidden = tape.tanh(hidden)?;
    let v2 = tape.reshape(vars.get("attention.v2"), &[1, d])?;
    let scores = tape.affine(hidden, v2, None)?;
    let scores = tape.reshape(scores, &[n])?;
    Ok(tape.softmax(scores)?)
}

pub struct BagForward {
    pub h: Var,
    /// Present only for attention pooling.
    pub attention: Option<Var>,
    pub z: Var,
    pub bag_probs: Var,
    pub instance_probs: Var,
}

pub fn forward_bag<T: Real>(
    tape: &mut Tape<T>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    images: &[&Image],
    pooling: Pooling,
) -> Result<BagForward, ModelError> {
    let h = encode_tape(tape, vars, cfg, images)?;
    let (attention, z) = match pooling {
        Pooling::Attention => {
            let a = attention_tape(tape, vars, h)?;
            (Some(a), tape.weighted_rows(a, h)?)
        }
        Pooling::Mean => (None, tape.mean_rows(h)?),
    };
    let bag_logits = vars.dense(tape, "bag_head", z)?;
    let bag_probs = tape.softmax(bag_logits)?;
    let inst_logits = vars.dense(tape, "instance_head", h)?;
    let instance_probs = tape.softmax(inst_logits)?;
    Ok(BagForward {
        h,
        attention,
        z,
        bag_probs,
        instance_probs,
    })
}

pub fn encode(model: &Model, images: &[&Image]) -> Result<EmbeddingMatrix, ModelError> {
    let mut tape = Tape::<f64>::new();
    let vars = ModelVars::register(&mut tape, &model.params)?;
    let h = encode_tape(&mut tape, &vars, &model.config, images)?;
    let out = tape.value(h);
    EmbeddingMatrix::new(out.shape()[0], out.shape()[1], out.data().to_vec())
        .map_err(|e| ModelError::Shape(e.to_string()))
}

fn check_width(h: &EmbeddingMatrix, model: &Model) -> Result<(), ModelError> {
    if h.cols() != model.config.embed_dim {
        return Err(ModelError::Shape(format!(
            "embeddings have width {}, model expects {}",
            h.cols(),
            model.config.embed_dim
        )));
    }
    Ok(())
}

pub fn attention_weights(h: &EmbeddingMatrix, model: &Model) -> Result<Vec<f64>, ModelError> {
    check_width(h, model)?;
    let v1 = model.values("attention.v1");
    let v2 = model.values("attention.v2");
    let l = h.cols();
    let scores: Vec<f64> = (0..h.rows())
        .map(|n| {
            let x = h.row(n);
            v2.iter()
                .enumerate()
                .map(|(j, w)| {
                    w * v1[j * l..(j + 1) * l]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        .tanh()
                })
                .sum()
        })
        .collect();
    Ok(softmax(&scores))
}

pub fn aggregate(h: &EmbeddingMatrix, a: &[f64]) -> Result<Vec<f64>, ModelError> {
    if a.len() != h.rows() {
        return Err(ModelError::Shape(format!(
            "{} attention weights for {} instances",
            a.len(),
            h.rows()
        )));
    }
    let mut z = vec![0.0; h.cols()];
    for (n, &w) in a.iter().enumerate() {
        z.iter_mut().zip(h.row(n)).for_each(|(z, x)| *z += w * x);
    }
    Ok(z)
}

pub fn mean_aggregate(h: &EmbeddingMatrix) -> Vec<f64> {
    let mut z = vec![0.0; h.cols()];
    for n in 0..h.rows() {
        z.iter_mut().zip(h.row(n)).for_each(|(z, x)| *z += x);
    }
    let inv = 1.0 / h.rows() as f64;
    z.iter_mut().for_each(|v| *v *= inv);
    z
}

fn head(model: &Model, prefix: &str, x: &[f64]) -> [f64; 2] {
    let w = model.values(&format!("{prefix}.weight"));
    let b = model.values(&format!("{prefix}.bias"));
    let l = x.len();
    let logits: Vec<f64> = (0..2)
        .map(|o| w[o * l..(o + 1) * l].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[o])
        .collect();
    let p = softmax(&logits);
    [p[0], p[1]]
}

pub fn bag_predict(z: &[f64], model: &Model) -> Result<[f64; 2], ModelError> {
    if z.len() != model.config.embed_dim {
        return Err(ModelError::Shape(format!(
            "bag representation has width {}, model expects {}",
            z.len(),
            model.config.embed_dim
        )));
    }
    Ok(head(model, "bag_head", z))
}

pub fn instance_predict(h: &EmbeddingMatrix, model: &Model) -> Result<Vec<[f64; 2]>, ModelError> {
    check_width(h, model)?;
    Ok((0..h.rows()).map(|n| head(model, "instance_head", h.row(n))).collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffcore::ParamTensor;

    fn toy_config(side: usize, hidden: Vec<usize>, l: usize, d: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderKind::Dense { hidden },
            input_rows: side,
            input_cols: side,
            embed_dim: l,
            attention_dim: d,
        }
    }

    fn set(model: &mut Model, name: &str, values: Vec<f64>) {
        let p = model.params.get_mut(name).unwrap();
        *p = ParamTensor::new(name, p.shape.clone(), values).unwrap();
    }

    #[test]
    fn zero_model_gives_zero_embeddings_and_even_odds() {
        let model = Model::zeros(ModelConfig::default()).unwrap();
        let img = Image::filled(28, 28, 200);
        let h = encode(&model, &[&img, &img, &img]).unwrap();
        assert_eq!((h.rows(), h.cols()), (3, 64));
        assert!(h.data().iter().all(|&v| v == 0.0));
        let z = mean_aggregate(&h);
        assert_eq!(bag_predict(&z, &model).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn scalar_chain_by_hand() {
        let mut model = Model::zeros(toy_config(1, vec![1], 1, 1)).unwrap();
        set(&mut model, "encoder.fc1.weight", vec![2.0]);
        set(&mut model, "encoder.fc1.bias", vec![-0.25]);
        set(&mut model, "encoder.proj.weight", vec![-3.0]);
        set(&mut model, "encoder.proj.bias", vec![1.0]);
        // A level of 51 is 0.2 intensity: relu(2·0.2 − 0.25) = 0.15, relu(−3·0.15 + 1) = 0.55.
        let img = Image::filled(1, 1, 51);
        let h = encode(&model, &[&img]).unwrap();
        assert!((h.row(0)[0] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn head_with_log_three_logit() {
        let mut model = Model::zeros(toy_config(1, vec![], 1, 1)).unwrap();
        set(&mut model, "bag_head.weight", vec![0.0, 3f64.ln()]);
        let p = bag_predict(&[1.0], &model).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn aggregate_examples() {
        let h = EmbeddingMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(aggregate(&h, &[0.25, 0.75]).unwrap(), vec![0.25, 0.75]);
        assert!(aggregate(&h, &[1.0]).is_err());
        let h = EmbeddingMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(mean_aggregate(&h), vec![1.0, 1.0]);
    }

    #[test]
    fn attention_singleton_and_twins() {
        let model = Model::init(toy_config(2, vec![], 3, 5), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let h = EmbeddingMatrix::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap();
        assert_eq!(attention_weights(&h, &model).unwrap(), vec![1.0]);
        let h = EmbeddingMatrix::from_rows(&[vec![0.3, -1.0, 2.0], vec![0.3, -1.0, 2.0]]).unwrap();
        assert_eq!(attention_weights(&h, &model).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn tape_forward_matches_plain_path() {
        let model = Model::init(toy_config(4, vec![6], 5, 3), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let imgs: Vec<Image> = (0..4u8)
            .map(|i| Image::new(4, 4, (0..16).map(|p| p * 13 + i * 10).collect()).unwrap())
            .collect();
        let refs: Vec<&Image> = imgs.iter().collect();
        let mut tape = Tape::<f64>::new();
        let vars = ModelVars::register(&mut tape, &model.params).unwrap();
        let fwd = forward_bag(&mut tape, &vars, &model.config, &refs, Pooling::Attention).unwrap();

        let h = encode(&model, &refs).unwrap();
        let a = attention_weights(&h, &model).unwrap();
        let z = aggregate(&h, &a).unwrap();
        let p = bag_predict(&z, &model).unwrap();
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(a, b)| (a - b).abs() < 1e-12);
        assert!(close(tape.value(fwd.attention.unwrap()).data(), &a));
        assert!(close(tape.value(fwd.bag_probs).data(), &p));
        let inst: Vec<f64> = instance_predict(&h, &model).unwrap().into_iter().flatten().collect();
        assert!(close(tape.value(fwd.instance_probs).data(), &inst));
    }

    #[test]
    fn wrong_image_size_is_a_shape_error() {
        let model = Model::zeros(ModelConfig::default()).unwrap();
        let img = Image::filled(27, 28, 0);
        assert!(matches!(encode(&model, &[&img]), Err(ModelError::Shape(_))));
    }
}
