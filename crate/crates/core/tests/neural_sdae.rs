mod common;

use common::{rel_err, random_matrix};
use ndarray::{s, Array2, Axis};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resilience_core::neural::{mse_gradient, mse_loss, Activation, DenseStack, Sgd, TrainConfig};
use resilience_core::rating::min_max_scale;
use resilience_core::sdae::{encode, encoder_dims, pretrain_layerwise, stack_and_finetune, train_sdae};
use resilience_core::synth::{low_rank, planted_blobs};

fn activation(relu: bool) -> Activation {
    if relu {
        Activation::Relu
    } else {
        Activation::Identity
    }
}

/// Straight loops over the weights, no matrix library.
fn forward_oracle(stack: &DenseStack, x: &Array2<f64>) -> Array2<f64> {
    let mut cur: Vec<Vec<f64>> = x.outer_iter().map(|r| r.to_vec()).collect();
    for layer in stack.layers() {
        cur = cur
            .iter()
            .map(|row| {
                (0..layer.output_dim())
                    .map(|o| {
                        let mut z = layer.bias[o];
                        for (i, v) in row.iter().enumerate() {
                            z += layer.weights[[o, i]] * v;
                        }
                        match layer.activation {
                            Activation::Relu => z.max(0.0),
                            Activation::Identity => z,
                        }
                    })
                    .collect()
            })
            .collect();
    }
    let cols = cur[0].len();
    Array2::from_shape_vec((cur.len(), cols), cur.into_iter().flatten().collect()).unwrap()
}

#[test]
fn forward_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let stack = DenseStack::random(&[3, 4, 2], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
    let x = random_matrix(7, 3, -2.0, 2.0, &mut rng);
    let got = stack.predict(x.view()).unwrap();
    let want = forward_oracle(&stack, &x);
    for (a, b) in got.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Smallest |pre-activation| over all ReLU units and rows.
fn relu_margin(stack: &DenseStack, x: &Array2<f64>) -> f64 {
    let mut cur = x.clone();
    let mut margin = f64::INFINITY;
    for layer in stack.layers() {
        let z = cur.dot(&layer.weights.t()) + &layer.bias;
        if layer.activation == Activation::Relu {
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            cur = z.mapv(|v| v.max(0.0));
        } else {
            cur = z;
        }
    }
    margin
}

fn loss_of(stack: &DenseStack, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    mse_loss(stack.predict(x.view()).unwrap().view(), y.view()).unwrap()
}

/// Largest relative error between backprop and central differences.
fn gradient_check(stack: &DenseStack, x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let eps = 1e-5;
    let cache = stack.forward(x.view(), None).unwrap();
    let g = mse_gradient(cache.output.view(), y.view()).unwrap();
    let grads = stack.backward(&cache, g.view()).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..stack.layers().len() {
        let (rows, cols) = stack.layers()[l].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let mut plus = stack.clone();
                plus.layers_mut()[l].weights[[r, c]] += eps;
                let mut minus = stack.clone();
                minus.layers_mut()[l].weights[[r, c]] -= eps;
                let numeric = (loss_of(&plus, x, y) - loss_of(&minus, x, y)) / (2.0 * eps);
                worst = worst.max(rel_err(grads.layers[l].weights[[r, c]], numeric, 1e-6));
            }
            let mut plus = stack.clone();
            plus.layers_mut()[l].bias[r] += eps;
            let mut minus = stack.clone();
            minus.layers_mut()[l].bias[r] -= eps;
            let numeric = (loss_of(&plus, x, y) - loss_of(&minus, x, y)) / (2.0 * eps);
            worst = worst.max(rel_err(grads.layers[l].bias[r], numeric, 1e-6));
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn backprop_matches_finite_differences(
        seed in any::<u64>(),
        dims in prop::sample::select(vec![vec![3usize, 4, 2], vec![2, 3, 3, 2], vec![4, 5, 4], vec![5, 3, 5], vec![2, 6, 2]]),
        relu_mask in any::<u8>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts: Vec<Activation> = (0..dims.len() - 1).map(|i| activation(relu_mask >> i & 1 == 1)).collect();
        let mut stack = DenseStack::random(&dims, &acts, &mut rng).unwrap();
        // non-zero biases keep pre-activations off the ReLU kink
        for layer in stack.layers_mut() {
            layer.bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        prop_assert!(stack.parameter_count() <= 50);
        let x = random_matrix(6, dims[0], -1.0, 1.0, &mut rng);
        let y = random_matrix(6, *dims.last().unwrap(), -1.0, 1.0, &mut rng);
        // central differences are meaningless across a kink
        prop_assume!(relu_margin(&stack, &x) > 1e-3);
        prop_assert!(gradient_check(&stack, &x, &y) <= 1e-4);
    }
}

#[test]
fn linear_autoencoder_collapses_a_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Array2::from_shape_fn((100, 2), |(i, j)| {
        let t = -1.0 + 2.0 * i as f64 / 99.0;
        t * [0.6, 0.8][j]
    });
    let mut stack = DenseStack::random(&[2, 1, 2], &[Activation::Identity, Activation::Identity], &mut rng).unwrap();
    let initial = loss_of(&stack, &x, &x);
    let mut opt = Sgd::new(0.05, 0.0);
    let mut order: Vec<usize> = (0..100).collect();
    for _ in 0..200 {
        order.shuffle(&mut rng);
        for idx in order.chunks(10) {
            let xb = x.select(Axis(0), idx);
            let cache = stack.forward(xb.view(), None).unwrap();
            let g = mse_gradient(cache.output.view(), xb.view()).unwrap();
            let grads = stack.backward(&cache, g.view()).unwrap();
            opt.step(&mut stack, &grads.layers).unwrap();
        }
    }
    let last = loss_of(&stack, &x, &x);
    assert!(last < 1e-3 * initial, "{initial} -> {last}");
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn pretraining_shrinks_every_reconstruction_on_low_rank_data() {
    let x = low_rank(2000, 12, 4, 8);
    let cfg = small_config(2);
    let dims = encoder_dims(12, &[32, 32, 64], 10);
    let subs = pretrain_layerwise(x.view(), &cfg, &dims).unwrap();
    assert_eq!(subs.len(), 4);
    for (k, s) in subs.iter().enumerate() {
        let (first, last) = (s.losses[0], *s.losses.last().unwrap());
        assert!(last <= 0.8 * first, "sub-autoencoder {k}: {first} -> {last}");
    }
    let deepest = &subs.last().unwrap().losses;
    assert!(*deepest.last().unwrap() <= 0.5 * deepest[0]);
}

#[test]
fn shallow_two_dimensional_case_keeps_improving() {
    let b = planted_blobs(400, 2, 3, 0.05, 1);
    let cfg = small_config(3);
    let subs = pretrain_layerwise(b.x.view(), &cfg, &[2, 2]).unwrap();
    let losses = &subs[0].losses;
    let blocks: Vec<f64> = losses.chunks(50).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(blocks.last().unwrap() < &(0.8 * blocks[0]), "{blocks:?}");
    for w in blocks.windows(2) {
        assert!(w[1] <= w[0] * 1.01, "{blocks:?}");
    }
}

#[test]
fn finetune_curve_is_monotone_when_smoothed() {
    let x = low_rank(2000, 12, 4, 8);
    let model = train_sdae(x.view(), &small_config(4), &[32, 32, 64], 10).unwrap();
    let f = &model.history.finetune;
    assert_eq!(f.len(), 200);
    let smooth: Vec<f64> = f.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    for (i, w) in smooth.windows(2).enumerate() {
        assert!(w[1] <= w[0] * (1.0 + 1e-3), "moving average rose at epoch {}: {} -> {}", i + 5, w[0], w[1]);
    }
}

#[test]
fn training_is_bit_reproducible() {
    let x = low_rank(300, 12, 3, 1);
    let cfg = TrainConfig {
        epochs: 20,
        ..small_config(9)
    };
    let a = train_sdae(x.view(), &cfg, &[16, 16], 4).unwrap();
    let b = train_sdae(x.view(), &cfg, &[16, 16], 4).unwrap();
    assert_eq!(a.encoder, b.encoder);
    assert_eq!(a.decoder, b.decoder);
    assert_eq!(a.history.finetune, b.history.finetune);
}

#[test]
fn embeddings_separate_two_clusters() {
    let b = planted_blobs(600, 12, 2, 0.03, 6);
    let (x, _) = min_max_scale(b.x.view()).unwrap();
    let model = train_sdae(x.view(), &small_config(6), &[32, 32, 64], 10).unwrap();
    let e = encode(&model, x.view()).unwrap();
    let members = |c: usize| -> Vec<usize> { (0..600).filter(|&i| b.labels[i] == c).collect() };
    let centroid = |idx: &[usize]| e.select(Axis(0), idx).mean_axis(Axis(0)).unwrap();
    let (m0, m1) = (members(0), members(1));
    let (c0, c1) = (centroid(&m0), centroid(&m1));
    let between = (&c0 - &c1).mapv(|v| v * v).sum().sqrt();
    let within: f64 = m0
        .iter()
        .map(|&i| (&e.row(i) - &c0).mapv(|v| v * v).sum().sqrt())
        .chain(m1.iter().map(|&i| (&e.row(i) - &c1).mapv(|v| v * v).sum().sqrt()))
        .sum::<f64>()
        / 600.0;
    assert!(between > within, "between {between}, within {within}");
}

#[test]
fn encoding_commutes_with_row_permutation_and_duplicates() {
    let x = low_rank(50, 12, 3, 2);
    let cfg = TrainConfig {
        epochs: 5,
        ..small_config(1)
    };
    let model = train_sdae(x.view(), &cfg, &[16], 3).unwrap();
    let e = encode(&model, x.view()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut perm: Vec<usize> = (0..50).collect();
    perm.shuffle(&mut rng);
    let ep = encode(&model, x.select(Axis(0), &perm).view()).unwrap();
    assert_eq!(ep, e.select(Axis(0), &perm));
    let dup = x.select(Axis(0), &[7, 7, 7]);
    let ed = encode(&model, dup.view()).unwrap();
    assert_eq!(ed.row(0), ed.row(2));
    assert_eq!(ed.slice(s![0, ..]), e.row(7));
}

#[test]
fn zero_epochs_keeps_pretrained_stack() {
    let x = low_rank(100, 12, 3, 3);
    let cfg = TrainConfig {
        epochs: 3,
        ..small_config(5)
    };
    let subs = pretrain_layerwise(x.view(), &cfg, &[12, 8, 4]).unwrap();
    let idle = TrainConfig { epochs: 0, ..cfg };
    let model = stack_and_finetune(&subs, x.view(), &idle).unwrap();
    assert_eq!(model.encoder.layers()[0], subs[0].encoder);
    assert_eq!(model.encoder.layers()[1], subs[1].encoder);
    assert_eq!(model.decoder.layers()[0], subs[1].decoder);
    assert_eq!(model.decoder.layers()[1], subs[0].decoder);
    assert_eq!(model.encoder.dims(), vec![12, 8, 4]);
    assert_eq!(model.decoder.dims(), vec![4, 8, 12]);
}

