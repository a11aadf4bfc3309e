mod common;

use common::{backprop_relative_error, gradient_fixture, random_params};
use ndarray::{Array1, Array2};
use pqdbn::dbn::{
    evaluate, pretrain, pretrain_observed, transfer_to_feedforward, DbnArchitecture, DbnModel,
    FineTuneConfig,
};
use pqdbn::rbm::{hidden_probs_batch, train_rbm, TrainConfig};
use pqdbn::LabeledDataset;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn backprop_matches_central_differences() {
    let (worst, name) = backprop_relative_error(1e-5);
    assert!(worst < 1e-4, "{name}: relative error {worst}");
}

/// Two well separated clusters in 4 dimensions.
fn separable(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n * 4);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let class = (k % 2) as u8;
        let center = if class == 0 { [0.9, 0.9, 0.1, 0.1] } else { [0.1, 0.1, 0.9, 0.9] };
        rows.extend(center.iter().map(|c| c + rng.random_range(-0.1..0.1)));
        labels.push(class);
    }
    LabeledDataset::new(Array2::from_shape_vec((n, 4), rows).unwrap(), labels).unwrap()
}

#[test]
fn separable_toy_set_is_learned() {
    let data = separable(400, 3);
    let arch = DbnArchitecture::new(4, vec![8, 8], 2).unwrap();
    let rbm = TrainConfig {
        epochs: 20,
        batch_size: 10,
        seed: 5,
        ..TrainConfig::default()
    };
    let (model, _) = pretrain(data.features().view(), &arch, &rbm).unwrap();
    let mut net = transfer_to_feedforward(model);
    let ft = FineTuneConfig {
        learning_rate: 0.5,
        epochs: 20,
        batch_size: 10,
        seed: 5,
        ..FineTuneConfig::default()
    };
    let losses = net.fine_tune(&data, &ft).unwrap();
    assert_eq!(losses.len(), 20);
    assert!(net.loss(data.features().view(), data.labels()).unwrap() < 0.1, "{losses:?}");
    assert_eq!(evaluate(&net, &data).unwrap(), 0.0);
}

#[test]
fn zero_learning_rate_leaves_model_unchanged() {
    let (net, _, _) = gradient_fixture();
    let data = LabeledDataset::new(
        Array2::from_shape_simple_fn((7, 6), || 0.4),
        vec![1, 2, 3, 4, 5, 6, 7],
    )
    .unwrap();
    let mut tuned = net.clone();
    tuned
        .fine_tune(&data, &FineTuneConfig { learning_rate: 0.0, epochs: 3, ..FineTuneConfig::default() })
        .unwrap();
    assert_eq!(tuned, net);
}

#[test]
fn fine_tuning_without_shuffle_is_reproducible() {
    let data = separable(60, 4);
    let arch = DbnArchitecture::new(4, vec![5], 2).unwrap();
    let (model, _) = pretrain(data.features().view(), &arch, &TrainConfig { epochs: 2, seed: 1, ..Default::default() }).unwrap();
    let ft = FineTuneConfig { epochs: 4, batch_size: 7, shuffle: false, momentum: 0.5, ..Default::default() };
    let mut a = transfer_to_feedforward(model.clone());
    let mut b = transfer_to_feedforward(model);
    assert_eq!(a.fine_tune(&data, &ft).unwrap(), b.fine_tune(&data, &ft).unwrap());
    assert_eq!(a.model().to_bytes().unwrap(), b.model().to_bytes().unwrap());
}

#[test]
fn fine_tune_rejects_bad_labels() {
    let (mut net, x, _) = gradient_fixture();
    let arch_classes = net.model().num_classes();
    assert_eq!(arch_classes, 10);
    let small = DbnModel::new(
        net.model().rbm_layers().to_vec(),
        Array2::zeros((3, 2)),
        Array1::zeros(2),
    )
    .unwrap();
    net = transfer_to_feedforward(small);
    let data = LabeledDataset::new(x, vec![0, 1, 1, 5, 0]).unwrap();
    assert!(net.fine_tune(&data, &FineTuneConfig::default()).is_err());
}

#[test]
fn second_layer_sees_first_layer_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = Array2::from_shape_simple_fn((40, 9), || rng.random_range(0.0..1.0));
    let arch = DbnArchitecture::new(9, vec![6, 4], 10).unwrap();
    let config = TrainConfig { epochs: 3, batch_size: 8, seed: 21, ..Default::default() };
    let mut seen = Vec::new();
    let (model, report) =
        pretrain_observed(data.view(), &arch, &config, |k, x| seen.push((k, x.to_owned()))).unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[0].1, data);
    let expected = hidden_probs_batch(&model.rbm_layers()[0], data.view()).unwrap();
    assert_eq!(seen[1].1, expected);
    assert_eq!(report.layer_errors.len(), 2);

    // Pretraining only one layer is a plain RBM training run.
    let single = DbnArchitecture::new(9, vec![6], 10).unwrap();
    let (one, report) = pretrain(data.view(), &single, &config).unwrap();
    let (params, history) = train_rbm(data.view(), 6, &config, 0).unwrap();
    assert_eq!(one.rbm_layers()[0], params);
    assert_eq!(report.layer_errors[0], history);
}

#[test]
fn transferred_net_reproduces_rbm_probabilities() {
    let (net, x, _) = gradient_fixture();
    let act = net.forward(x.view()).unwrap();
    let h1 = hidden_probs_batch(&net.model().rbm_layers()[0], x.view()).unwrap();
    let h2 = hidden_probs_batch(&net.model().rbm_layers()[1], h1.view()).unwrap();
    assert_eq!(act.hidden[0], h1);
    assert_eq!(act.hidden[1], h2);
    for row in act.probabilities.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_output_layer_is_uniform_and_predicts_first_class() {
    let (net, x, _) = gradient_fixture();
    let mut model = net.into_model();
    model.output_mut().0.fill(0.0);
    model.output_mut().1.fill(0.0);
    let mut net = transfer_to_feedforward(model);
    let probs = net.class_probabilities(x.view()).unwrap();
    assert!(probs.iter().all(|&p| (p - 0.1).abs() < 1e-15));
    assert_eq!(net.predict(x.row(0).as_slice().unwrap()).unwrap(), 0);
    net.model_mut().output_mut().1[7] = 0.3;
    assert_eq!(net.predict_batch(x.view()).unwrap(), vec![7; 5]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(
        seed in any::<u64>(),
        shift in -50.0f64..50.0,
        scale in 0.1f64..20.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = random_params(&mut rng, 6, 4, scale);
        let ow = Array2::from_shape_simple_fn((4, 10), || rng.random_range(-scale..scale));
        let ob = Array1::from_shape_simple_fn(10, || rng.random_range(-scale..scale));
        let x = Array2::from_shape_simple_fn((3, 6), || rng.random_range(0.0..1.0));
        let net = transfer_to_feedforward(DbnModel::new(vec![l1.clone()], ow.clone(), ob.clone()).unwrap());
        let shifted = transfer_to_feedforward(DbnModel::new(vec![l1], ow, ob + shift).unwrap());
        let probs = net.class_probabilities(x.view()).unwrap();
        for row in probs.rows() {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(net.predict_batch(x.view()).unwrap(), shifted.predict_batch(x.view()).unwrap());
    }

    #[test]
    fn model_bytes_round_trip(seed in any::<u64>(), h1 in 1usize..6, h2 in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![random_params(&mut rng, 5, h1, 1.0), random_params(&mut rng, h1, h2, 1.0)];
        let ow = Array2::from_shape_simple_fn((h2, 10), || rng.random_range(-1.0..1.0));
        let model = DbnModel::new(layers, ow, Array1::zeros(10)).unwrap();
        let back = DbnModel::from_bytes(&model.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back, model);
    }
}
