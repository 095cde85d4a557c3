use rand::Rng;

use super::*;
use crate::data::{ClientDataset, Samples};
use crate::error::Error;
use crate::oracle::{gradient_check, random_params};
use crate::pruning::Mask;
use crate::rng::rng_for;

fn toy_spec() -> ArchitectureSpec {
    ArchitectureSpec {
        timesteps: 2,
        channels: 1,
        conv: vec![ConvBlock {
            filters: 1,
            kernel: 1,
            pool: 1,
            dropout: 0.0,
        }],
        dense: vec![],
        num_classes: 2,
    }
}

/// conv kernel, conv bias, output kernel [in, out] row-major, output bias
fn toy_params(net: &Network, values: [f64; 8]) -> ParamSet {
    ParamSet::from_values(net.layout().clone(), values.to_vec()).unwrap()
}

fn random_inputs(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[0x17]);
    (0..len).map(|_| rng.random_range(-1.5..1.5)).collect()
}

#[test]
fn toy_network_matches_hand_logits() {
    let net = Network::new(&toy_spec()).unwrap();
    let params = toy_params(&net, [0.5, 0.1, 1.0, -1.0, 2.0, 0.5, 0.0, 0.2]);
    // conv: (0.6, -0.9) -> relu (0.6, 0); logits (0.6, -0.4)
    let probs = net
        .forward(&params, &Batch::new(&[1.0, -2.0], 2).unwrap(), Mode::Eval)
        .unwrap();
    let p0 = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((probs[0] - p0).abs() < 1e-15);
    assert!((probs[1] - (1.0 - p0)).abs() < 1e-15);
}

#[test]
fn zero_params_give_uniform_probabilities() {
    let spec = ArchitectureSpec::scaled_har(20, 3, 4, 3, 5);
    let net = Network::new(&spec).unwrap();
    let inputs = random_inputs(3 * spec.sample_len(), 1);
    let probs = net
        .forward(
            &net.zero_params(),
            &Batch::new(&inputs, spec.sample_len()).unwrap(),
            Mode::Eval,
        )
        .unwrap();
    assert!(probs.iter().all(|p| (p - 0.25).abs() < 1e-15));
}

#[test]
fn softmax_rows_sum_to_one() {
    let spec = ArchitectureSpec::scaled_har(24, 2, 5, 4, 6);
    let net = Network::new(&spec).unwrap();
    let inputs = random_inputs(7 * spec.sample_len(), 2);
    let batch = Batch::new(&inputs, spec.sample_len()).unwrap();
    for mode in [Mode::Eval, Mode::Train { seed: 3 }] {
        let probs = net.forward(&net.init_params(4), &batch, mode).unwrap();
        for row in probs.chunks(5) {
            assert!(row.iter().all(|p| *p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let spec = ArchitectureSpec::scaled_har(24, 2, 3, 4, 6);
    let net = Network::new(&spec).unwrap();
    let params = net.init_params(9);
    let inputs = random_inputs(4 * spec.sample_len(), 5);
    let batch = Batch::new(&inputs, spec.sample_len()).unwrap();
    for mode in [Mode::Eval, Mode::Train { seed: 11 }] {
        let a = net.forward(&params, &batch, mode).unwrap();
        let b = net.forward(&params, &batch, mode).unwrap();
        assert_eq!(a, b);
    }
    let dropped = net
        .forward(&params, &batch, Mode::Train { seed: 11 })
        .unwrap();
    let clean = net.forward(&params, &batch, Mode::Eval).unwrap();
    assert_ne!(dropped, clean);
}

#[test]
fn wrong_input_width_is_rejected() {
    let net = Network::new(&toy_spec()).unwrap();
    assert!(Batch::new(&[1.0, 2.0, 3.0], 2).is_err());
    let other = Network::new(&ArchitectureSpec::scaled_har(16, 1, 2, 2, 2)).unwrap();
    let batch = Batch::new(&[1.0, 2.0], 2).unwrap();
    assert!(net
        .forward(&other.zero_params(), &batch, Mode::Eval)
        .is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let specs = [
        toy_spec(),
        ArchitectureSpec::scaled_har(18, 2, 3, 3, 4),
        ArchitectureSpec {
            timesteps: 9,
            channels: 2,
            conv: vec![ConvBlock {
                filters: 3,
                kernel: 3,
                pool: 2,
                dropout: 0.3,
            }],
            dense: vec![
                DenseBlock {
                    units: 4,
                    dropout: 0.2,
                },
                DenseBlock {
                    units: 3,
                    dropout: 0.0,
                },
            ],
            num_classes: 3,
        },
    ];
    for (s, spec) in specs.iter().enumerate() {
        let net = Network::new(spec).unwrap();
        for trial in 0..3u64 {
            let seed = 100 * s as u64 + trial;
            let params = random_params(&net, seed);
            let inputs = random_inputs(3 * spec.sample_len(), seed);
            let labels: Vec<usize> = (0..3)
                .map(|i| (i + trial as usize) % spec.num_classes)
                .collect();
            let reference = net.init_params(seed + 50);
            for (prox, mode) in [(None, Mode::Eval), (Some(0.7), Mode::Train { seed })] {
                let proximal = prox.map(|lambda| Proximal {
                    reference: &reference,
                    lambda,
                });
                let err =
                    gradient_check(&net, &params, &inputs, &labels, proximal, mode, 1e-5, 1e-6)
                        .unwrap();
                assert!(err < 1e-4, "spec {s} trial {trial}: relative error {err:e}");
            }
        }
    }
}

#[test]
fn proximal_term_behaviour() {
    let spec = ArchitectureSpec::scaled_har(16, 1, 2, 2, 2);
    let net = Network::new(&spec).unwrap();
    let params = net.init_params(1);
    let inputs = random_inputs(2 * spec.sample_len(), 1);
    let batch = Batch::new(&inputs, spec.sample_len()).unwrap();
    let labels = [0, 1];
    let (plain, g0) = net
        .loss_and_grad(&params, &batch, &labels, None, None, Mode::Eval)
        .unwrap();
    let same = Proximal {
        reference: &params,
        lambda: 0.0,
    };
    let (l0, _) = net
        .loss_and_grad(&params, &batch, &labels, Some(same), None, Mode::Eval)
        .unwrap();
    assert_eq!(l0, plain);
    let anchored = Proximal {
        reference: &params,
        lambda: 5.0,
    };
    let (l1, g1) = net
        .loss_and_grad(&params, &batch, &labels, Some(anchored), None, Mode::Eval)
        .unwrap();
    assert_eq!(l1, plain);
    assert_eq!(g1.values(), g0.values());
    let negative = Proximal {
        reference: &params,
        lambda: -1.0,
    };
    assert!(matches!(
        net.loss_and_grad(&params, &batch, &labels, Some(negative), None, Mode::Eval),
        Err(Error::Config(_))
    ));
}

#[test]
fn masked_gradient_reports_pruned_positions() {
    let spec = ArchitectureSpec::scaled_har(16, 1, 2, 2, 3);
    let net = Network::new(&spec).unwrap();
    let params = net.init_params(3);
    let inputs = random_inputs(4 * spec.sample_len(), 3);
    let batch = Batch::new(&inputs, spec.sample_len()).unwrap();
    let labels = [0, 1, 1, 0];
    let n = net.layout().prunable_len();
    let mask = Mask::from_bits((0..n).map(|i| i % 3 != 0).collect());
    let (_, g) = net
        .loss_and_grad(&params, &batch, &labels, None, Some(&mask), Mode::Eval)
        .unwrap();
    let mut projected = params.clone();
    mask.apply(&mut projected).unwrap();
    let (_, expected) = net
        .loss_and_grad(&projected, &batch, &labels, None, None, Mode::Eval)
        .unwrap();
    assert_eq!(g.values(), expected.values());
    let pruned_nonzero = net
        .layout()
        .prunable_indices()
        .enumerate()
        .filter(|(j, idx)| !mask.is_active(*j) && g.values()[*idx] != 0.0)
        .count();
    assert!(pruned_nonzero > 0);
}

#[test]
fn mask_closure_over_many_steps() {
    let spec = ArchitectureSpec::scaled_har(16, 2, 3, 3, 4);
    let net = Network::new(&spec).unwrap();
    let mut params = net.init_params(5);
    let n = net.layout().prunable_len();
    let mask = Mask::from_bits((0..n).map(|i| i % 2 == 0).collect());
    let mut opt = OptimizerState::new(params.len(), 1e-2);
    let inputs = random_inputs(6 * spec.sample_len(), 6);
    let labels = [0, 1, 2, 0, 1, 2];
    let batch = Batch::new(&inputs, spec.sample_len()).unwrap();
    for step in 0..10u64 {
        let (_, g) = net
            .loss_and_grad(
                &params,
                &batch,
                &labels,
                None,
                Some(&mask),
                Mode::Train { seed: step },
            )
            .unwrap();
        params = adam_step(&params, &g, &mut opt, Some(&mask)).unwrap();
        assert!(mask.is_respected_by(&params));
    }
}

#[test]
fn adam_scalar_first_step() {
    let layout = std::sync::Arc::new(Layout::from_slots(vec![("w".into(), vec![1], false)]));
    let mut w = ParamSet::from_values(layout.clone(), vec![1.0]).unwrap();
    let g = GradientSet::from_values(layout, vec![1.0]).unwrap();
    let mut st = OptimizerState::new(1, 1e-3);
    st.step(&mut w, &g, None).unwrap();
    let expected = 1.0 - 1e-3 * (1.0 / (1.0f64.sqrt() + 1e-8));
    assert!((w.values()[0] - expected).abs() < 1e-15);
    assert!((w.values()[0] - 0.999).abs() < 1e-10);
}

fn toy_dataset(rows: &[([f64; 2], usize)]) -> ClientDataset {
    let mut test = Samples::new(2, 1);
    for (x, y) in rows {
        test.push(x, *y);
    }
    let mut ds = ClientDataset::new(0, test.clone());
    ds.test = test;
    ds
}

#[test]
fn evaluate_examples() {
    let net = Network::new(&toy_spec()).unwrap();
    // logits = (relu(x0), relu(x1))
    let identity = toy_params(&net, [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let ds = toy_dataset(&[
        ([2.0, 1.0], 0),
        ([0.0, 3.0], 1),
        ([1.0, 0.0], 0),
        ([5.0, 1.0], 1),
    ]);
    assert_eq!(net.evaluate(&identity, &ds).unwrap(), 0.75);

    let all_one = toy_dataset(&[([0.0, 3.0], 1), ([1.0, 2.0], 1)]);
    assert_eq!(net.evaluate(&identity, &all_one).unwrap(), 1.0);

    let balanced = toy_dataset(&[
        ([1.0, 0.0], 0),
        ([0.0, 1.0], 1),
        ([2.0, 2.0], 0),
        ([3.0, 1.0], 1),
    ]);
    assert_eq!(net.evaluate(&net.zero_params(), &balanced).unwrap(), 0.5);

    let mut empty = balanced.clone();
    empty.test = Samples::new(2, 1);
    assert!(matches!(
        net.evaluate(&identity, &empty),
        Err(Error::Data(_))
    ));
}

#[test]
fn local_train_is_deterministic_and_respects_mask() {
    let spec = ArchitectureSpec::scaled_har(16, 2, 3, 3, 4);
    let net = Network::new(&spec).unwrap();
    let start = net.init_params(2);
    let inputs = random_inputs(10 * spec.sample_len(), 8);
    let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
    let samples = Samples::from_parts(16, 2, inputs, labels).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        learning_rate: 1e-3,
        dropout: true,
    };
    let n = net.layout().prunable_len();
    let mask = Mask::from_bits((0..n).map(|i| i % 4 != 1).collect());
    let run = || {
        let mut opt = OptimizerState::new(start.len(), cfg.learning_rate);
        local_train(
            &net,
            &start,
            &samples,
            &cfg,
            &mut opt,
            None,
            Some(&mask),
            17,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.params, b.params);
    assert_eq!(a.last_loss.to_bits(), b.last_loss.to_bits());
    assert!(mask.is_respected_by(&a.params));
    assert_ne!(a.params, start);
}
