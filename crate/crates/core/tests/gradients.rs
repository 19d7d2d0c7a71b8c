mod common;

use c2c::bagdata::Image;
use c2c::diffcore::{gradient_check, GradCheckOptions, Tape};
use c2c::loss::{composite_loss, LossWeights};
use c2c::model::{forward_bag, Model, ModelVars, Pooling};
use c2c::rng::stream;
use c2c::trainer::toy_gradient_check;

#[test]
fn composite_loss_gradient_matches_finite_differences() {
    let opts = GradCheckOptions {
        coords_per_tensor: 200,
        ..Default::default()
    };
    let r = toy_gradient_check::<f64>(4, &opts).unwrap();
    assert!(r.passed, "max rel error {} at {:?}", r.max_rel_error, r.worst_param);
    assert!(r.max_rel_error <= 1e-4);
    assert_eq!(r.groups(), ["attention", "bag_head", "encoder", "instance_head"]);
}

#[test]
fn dense_encoder_gradient_matches_finite_differences() {
    let mut rng = stream(2, "dense-gc", &[]);
    let model = Model::init(common::dense_config(), &mut rng).unwrap();
    let bag = common::random_bag(&mut rng, 0, 5, common::SIDE);
    let images: Vec<&Image> = bag.instances.iter().map(|i| &i.image).collect();
    let groups = vec![vec![0, 1, 4], vec![2, 3]];
    let r = gradient_check::<f64, _>(
        &model.params,
        |tape, p| {
            let vars = ModelVars::register(tape, p).map_err(|e| c2c::diffcore::DiffError::Contract(e.to_string()))?;
            let fwd = forward_bag(tape, &vars, &model.config, &images, Pooling::Attention)
                .map_err(|e| c2c::diffcore::DiffError::Contract(e.to_string()))?;
            Ok(composite_loss(tape, &fwd, 1, &groups, &LossWeights::default())?.total)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.passed, "max rel error {}", r.max_rel_error);
}

#[test]
fn mean_pooling_leaves_attention_untouched() {
    let mut rng = stream(8, "mean-pool", &[]);
    let model = Model::init(common::dense_config(), &mut rng).unwrap();
    let bag = common::random_bag(&mut rng, 0, 4, common::SIDE);
    let images: Vec<&Image> = bag.instances.iter().map(|i| &i.image).collect();
    let mut tape = Tape::<f64>::new();
    let vars = ModelVars::register(&mut tape, &model.params).unwrap();
    let fwd = forward_bag(&mut tape, &vars, &model.config, &images, Pooling::Mean).unwrap();
    assert!(fwd.attention.is_none());
    let lv = composite_loss(&mut tape, &fwd, 0, &[vec![0, 1, 2, 3]], &LossWeights::default()).unwrap();
    assert_eq!(lv.breakdown(&tape).l_kld, 0.0);
    let grads = tape.backward(lv.total).unwrap();
    for name in ["attention.v1", "attention.v2"] {
        assert!(grads.get(name).map_or(true, |g| g.iter().all(|&x| x == 0.0)), "{name}");
    }
    assert!(grads.get("encoder.proj.weight").unwrap().iter().any(|&x| x != 0.0));
}
