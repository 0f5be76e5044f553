mod common;

use common::oracles::{conv_params, fc_params, vgg_param_oracle};
use common::{gradient_check_spec, max_gradient_error, random_batch, tiny_spec};
use lesiontl_core::model::{
    apply_freeze_policy, build_model, list_removable_head_layers, BackboneId, FreezePolicy, Layer, ModelError,
    ModelSpec, Network, WeightCache,
};
use lesiontl_core::optim::{make_optimizer, OptimizerKind};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn untrained(backbone: BackboneId) -> ModelSpec {
    ModelSpec { pretrained: false, ..ModelSpec::new(backbone) }
}

fn frozen_params(net: &Network<f32>) -> Vec<(String, Vec<f32>)> {
    params(net, false)
}

fn params(net: &Network<f32>, trainable: bool) -> Vec<(String, Vec<f32>)> {
    net.layers()
        .iter()
        .filter_map(|l| match l {
            Layer::Conv(c) if c.trainable == trainable => {
                Some((c.name.clone(), c.weight.iter().chain(c.bias.iter()).copied().collect()))
            }
            Layer::Dense(d) if d.trainable == trainable => {
                Some((d.name.clone(), d.weight.iter().chain(d.bias.iter()).copied().collect()))
            }
            _ => None,
        })
        .collect()
}

#[test]
fn parameter_counts_match_closed_form() {
    // Published totals of the 1000-class networks, minus the 998 dropped output units.
    let dropped = 4096 * 998 + 998;
    let cases = [
        (BackboneId::Vgg16, vgg_param_oracle(&[2, 2, 3, 3, 3], &[4096, 4096]), 138_357_544 - dropped),
        (BackboneId::Vgg19, vgg_param_oracle(&[2, 2, 4, 4, 4], &[4096, 4096]), 143_667_240 - dropped),
    ];
    for (backbone, (conv, head), published) in cases {
        let (_, summary) = build_model::<f32>(&untrained(backbone.clone()), 0, &WeightCache::new("/nonexistent")).unwrap();
        let conv_total: usize = summary.layers.iter().filter(|l| l.kind == "conv2d").map(|l| l.params).sum();
        let head_total: usize = summary.layers.iter().filter(|l| l.kind != "conv2d").map(|l| l.params).sum();
        assert_eq!(conv_total, conv, "{backbone} backbone");
        assert_eq!(head_total, head, "{backbone} head");
        assert_eq!(summary.total_params, published, "{backbone} total");
    }
}

#[test]
fn alexnet_parameter_count() {
    let (_, summary) = build_model::<f32>(&untrained(BackboneId::AlexnetModified), 0, &WeightCache::new("/x")).unwrap();
    let conv = conv_params(11, 3, 64)
        + conv_params(5, 64, 192)
        + conv_params(3, 192, 384)
        + conv_params(3, 384, 256)
        + conv_params(3, 256, 256);
    let head = fc_params(256 * 6 * 6, 4096) + fc_params(4096, 4096) + fc_params(4096, 2);
    assert_eq!(summary.total_params, conv + head);
    assert_eq!(summary.total_params, 61_100_840 - (4096 * 998 + 998));
}

#[test]
fn default_freeze_leaves_first_three_convs_untrainable() {
    let spec = untrained(BackboneId::Vgg16);
    let (_, summary) = build_model::<f32>(&spec, 0, &WeightCache::new("/x")).unwrap();
    let frozen = conv_params(3, 3, 64) + conv_params(3, 64, 64) + conv_params(3, 64, 128);
    assert_eq!(summary.total_params - summary.trainable_params, frozen);
    let convs: Vec<_> = summary.layers.iter().filter(|l| l.kind == "conv2d").collect();
    assert!(convs[..3].iter().all(|l| !l.trainable));
    assert!(convs[3..].iter().all(|l| l.trainable));
}

#[test]
fn freeze_policy_beyond_backbone_is_rejected() {
    let mut spec = tiny_spec(&[4, 8], &[8], 16, 0.0);
    spec.freeze.freeze_first_n = 3;
    assert!(matches!(Network::<f32>::initialise(&spec, 0), Err(ModelError::Policy { requested: 3, available: 2, .. })));
    let mut net = Network::<f32>::initialise(&tiny_spec(&[4, 8], &[8], 16, 0.0), 0).unwrap();
    let summary = apply_freeze_policy(&mut net, FreezePolicy::whole_backbone()).unwrap();
    assert!(summary.layers.iter().filter(|l| l.kind == "conv2d").all(|l| !l.trainable));
    assert!(apply_freeze_policy(&mut net, FreezePolicy { freeze_first_n: 5, freeze_backbone_rest: false }).is_err());
}

#[test]
fn frozen_layers_survive_optimisation_bit_for_bit() {
    for kind in [OptimizerKind::Adam, OptimizerKind::Sgd] {
        let mut spec = tiny_spec(&[4, 8], &[8], 16, 0.5);
        spec.freeze.freeze_first_n = 1;
        let mut net = Network::<f32>::initialise(&spec, 3).unwrap();
        let frozen_before = frozen_params(&net);
        let trainable_before = params(&net, true);
        assert_eq!(frozen_before.len(), 1);
        let mut opt = make_optimizer::<f32>(kind, 1e-2, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for step in 0..20 {
            let x = Array4::from_shape_simple_fn((4, 3, 16, 16), || rng.random_range(-1.0f32..1.0));
            let y = vec![step % 2, 1, 0, 1];
            let out = net.forward_backward(&x, &y, &mut rng);
            net.apply_gradients(&out.grads, &mut opt);
        }
        assert_eq!(frozen_params(&net), frozen_before, "{kind:?}");
        for ((name, before), (_, after)) in trainable_before.iter().zip(params(&net, true)) {
            assert_ne!(before, &after, "{kind:?}: trainable layer `{name}` never moved");
        }
    }
}

#[test]
fn probabilities_form_a_distribution() {
    let net = Network::<f32>::initialise(&tiny_spec(&[4], &[8], 12, 0.5), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let scale = rng.random_range(0.1f32..50.0);
        let x = Array4::from_shape_simple_fn((5, 3, 12, 12), || rng.random_range(-scale..scale));
        let p = net.predict_proba(&x);
        for row in p.rows() {
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!((row.sum() - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn inference_is_deterministic() {
    let net = Network::<f32>::initialise(&tiny_spec(&[4, 8], &[8], 16, 0.5), 1).unwrap();
    let x = Array4::from_shape_fn((3, 3, 16, 16), |(n, c, h, w)| ((n * 7 + c * 5 + h * 3 + w) % 11) as f32 / 11.0);
    let first = net.predict_proba(&x);
    for _ in 0..5 {
        assert_eq!(net.predict_proba(&x), first);
    }
    let other = Network::<f32>::initialise(&tiny_spec(&[4, 8], &[8], 16, 0.5), 1).unwrap();
    assert_eq!(other.predict_proba(&x), first);
}

#[test]
fn export_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(&[4], &[8, 6], 16, 0.2);
    spec.excluded_head_layers = vec!["fc1".into()];
    spec.freeze.freeze_first_n = 1;
    let net = Network::<f32>::initialise(&spec, 5).unwrap();
    net.export(dir.path()).unwrap();
    let loaded = Network::<f32>::load_export(dir.path()).unwrap();
    assert_eq!(loaded.spec(), net.spec());
    assert_eq!(loaded.summary(), net.summary());
    let x = Array4::from_elem((2, 3, 16, 16), 0.3f32);
    assert_eq!(loaded.predict_proba(&x), net.predict_proba(&x));
}

#[test]
fn ablation_removes_exactly_one_dense_layer() {
    let spec = tiny_spec(&[4], &[12, 6], 16, 0.5);
    let full = Network::<f32>::initialise(&spec, 0).unwrap().summary();
    assert_eq!(list_removable_head_layers(&spec), vec!["fc1", "fc2"]);
    for name in list_removable_head_layers(&spec) {
        let ablated_spec = spec.without_head_layer(&name).unwrap();
        let ablated = Network::<f32>::initialise(&ablated_spec, 0).unwrap().summary();
        assert_eq!(ablated.layers.len(), full.layers.len() - 1);
        assert!(ablated.layers.iter().all(|l| l.name != name));
        let dense = |s: &lesiontl_core::model::ModelSummary| s.layers.iter().filter(|l| l.kind == "dense").count();
        assert_eq!(dense(&ablated), dense(&full) - 1);
        assert_eq!(list_removable_head_layers(&ablated_spec).len(), 1);
    }
    // removing every hidden layer leaves flatten -> output
    let bare = spec.without_head_layer("fc1").unwrap().without_head_layer("fc2").unwrap();
    let bare_summary = Network::<f32>::initialise(&bare, 0).unwrap().summary();
    assert_eq!(bare_summary.layers.last().unwrap().kind, "output");
    assert_eq!(bare_summary.layers[bare_summary.layers.len() - 2].kind, "flatten");
    assert!(list_removable_head_layers(&bare).is_empty());
    assert!(spec.without_head_layer("fc9").is_err());
    assert!(spec.without_head_layer("output").is_err());
}

#[test]
fn restoring_an_ablated_spec_rebuilds_the_baseline() {
    let spec = tiny_spec(&[4], &[12, 6], 16, 0.5);
    let mut restored = spec.without_head_layer("fc2").unwrap();
    restored.excluded_head_layers.clear();
    assert_eq!(restored, spec);
    let a = Network::<f32>::initialise(&spec, 7).unwrap();
    let b = Network::<f32>::initialise(&restored, 7).unwrap();
    assert_eq!(a.summary(), b.summary());
    let x = Array4::from_elem((1, 3, 16, 16), 0.5f32);
    assert_eq!(a.predict_proba(&x), b.predict_proba(&x));
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let net = Network::<f64>::initialise(&gradient_check_spec(0.0), 11).unwrap();
    let (x, y) = random_batch(3, 8, 4);
    let (worst, checked) = max_gradient_error(&net, &x, &y, 0, 1e-4);
    assert!(checked > 100);
    assert!(worst <= 1e-4, "relative gradient error {worst}");
}

#[test]
fn analytic_gradients_match_under_fixed_dropout_masks() {
    let net = Network::<f64>::initialise(&gradient_check_spec(0.5), 11).unwrap();
    let (x, y) = random_batch(3, 8, 4);
    for mask_seed in 0..4 {
        let (worst, _) = max_gradient_error(&net, &x, &y, mask_seed, 1e-4);
        assert!(worst <= 1e-4, "mask {mask_seed}: relative gradient error {worst}");
    }
}
