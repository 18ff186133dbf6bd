use super::*;
use crate::instances::ChannelScaler;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_arch() -> NetworkArch {
    NetworkArch {
        n_blocks: 2,
        filters: 4,
        kernel_size: 3,
        pool_size: 2,
        dropout_rate: 0.25,
        input_channels: 6,
        input_length: 16,
    }
}

fn random_inputs(arch: &NetworkArch, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..arch.input_size()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

#[test]
fn default_arch_shapes() {
    let arch = NetworkArch::default();
    arch.validate().unwrap();
    assert_eq!(arch.dense_inputs(), 640);
    let lengths: Vec<usize> = (0..=5).map(|b| arch.block_length(b)).collect();
    assert_eq!(lengths, vec![160, 80, 40, 20, 10, 5]);
    let bad = NetworkArch { n_blocks: 6, ..arch };
    assert!(matches!(Network::<f64>::new(bad, 0), Err(Error::Architecture(_))));
    let even = NetworkArch { kernel_size: 4, ..arch };
    assert!(even.validate().is_err());
}

#[test]
fn init_is_seeded() {
    let a = Network::<f64>::new(tiny_arch(), 5).unwrap();
    let b = Network::<f64>::new(tiny_arch(), 5).unwrap();
    let c = Network::<f64>::new(tiny_arch(), 6).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    // Biases start at zero.
    let o = a.layout().blocks[0];
    assert!(a.params()[o.bias..o.bias + 4].iter().all(|&x| x == 0.0));
}

#[test]
fn zero_network_scores_half() {
    let arch = tiny_arch();
    let mut net = Network::<f64>::new(arch, 1).unwrap();
    net.params_mut().iter_mut().for_each(|p| *p = 0.0);
    let x = vec![0.0; arch.input_size()];
    assert_eq!(net.predict(&x).unwrap(), 0.5);
}

#[test]
fn infer_is_deterministic_and_checks_shape() {
    let arch = tiny_arch();
    let net = Network::<f64>::new(arch, 2).unwrap();
    let x = &random_inputs(&arch, 1, 3)[0];
    let a = net.forward(&[x], Mode::Infer, 1).unwrap().scores[0];
    let b = net.forward(&[x], Mode::Infer, 99).unwrap().scores[0];
    assert_eq!(a, b);
    assert!(a > 0.0 && a < 1.0);
    assert!(matches!(net.predict(&x[..10]), Err(Error::Argument(_))));
}

#[test]
fn identity_filter_reproduces_max_pool() {
    let arch = NetworkArch {
        n_blocks: 1,
        filters: 1,
        kernel_size: 3,
        pool_size: 2,
        dropout_rate: 0.0,
        input_channels: 1,
        input_length: 8,
    };
    let x = [3.0, -1.0, 2.0, 5.0, 0.0, 4.0, -2.0, 1.0];
    // Hand evaluation: conv = x, relu = [3,0,2,5,0,4,0,1], pool = [3,5,4,1].
    let pooled = [3.0, 5.0, 4.0, 1.0];
    for j in 0..4 {
        let mut params = vec![0.0, 1.0, 0.0, 0.0];
        let mut dense = vec![0.0; 4];
        dense[j] = 1.0;
        params.extend(dense);
        params.push(0.0);
        let net = Network::from_params(arch, params).unwrap();
        let pass = net.forward(&[&x], Mode::Infer, 0).unwrap();
        assert_eq!(pass.caches[0].flat, pooled.to_vec());
        assert_eq!(pass.caches[0].activations[0], vec![3.0, 0.0, 2.0, 5.0, 0.0, 4.0, 0.0, 1.0]);
        let expect = 1.0 / (1.0 + (-pooled[j] as f64).exp());
        assert!((pass.scores[0] - expect).abs() < 1e-15);
    }
}

#[test]
fn bce_examples() {
    assert!((bce_loss(&[0.5], &[1]) - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(bce_loss(&[1.0, 0.0], &[1, 0]) < 1e-11);
    let l = bce_loss(&[0.9, 0.1], &[1, 0]);
    assert!((l - (-(0.9f64).ln())).abs() < 1e-12);
    assert!((l - 0.1054).abs() < 1e-4);
    // Clamping keeps extreme mistakes finite, also in f32.
    assert!(bce_loss(&[0.0f32], &[1]).is_finite());
    assert!(bce_loss(&[1.0f32], &[0]).is_finite());
}

#[test]
fn dense_bias_gradient_is_mean_residual() {
    let arch = tiny_arch();
    let net = Network::<f64>::new(arch, 4).unwrap();
    let xs = random_inputs(&arch, 5, 8);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let labels = [1, 0, 0, 1, 1];
    let pass = net.forward(&refs, Mode::Train, 17).unwrap();
    let g = net.backward(&pass, &labels).unwrap();
    let mean: f64 = pass.scores.iter().zip(&labels).map(|(p, &y)| p - y as f64).sum::<f64>() / 5.0;
    assert!((g.values[net.layout().dense_bias] - mean).abs() < 1e-15);
}

#[test]
fn gradients_vanish_when_labels_match_scores() {
    // Soft labels are not representable, so use a saturated net instead:
    // huge positive bias drives every score to 1 for label 1.
    let arch = tiny_arch();
    let mut net = Network::<f64>::new(arch, 4).unwrap();
    let bias = net.layout().dense_bias;
    net.params_mut()[bias] = 60.0;
    let xs = random_inputs(&arch, 3, 1);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let pass = net.forward(&refs, Mode::Train, 3).unwrap();
    let g = net.backward(&pass, &[1, 1, 1]).unwrap();
    assert!(g.values.iter().all(|v| v.abs() < 1e-20));
}

/// Central differences of the train-mode loss with a fixed dropout seed.
pub(crate) fn finite_difference_check(arch: NetworkArch, n: usize, seed: u64) -> (f64, usize) {
    let net = Network::<f64>::new(arch, seed).unwrap();
    let xs = random_inputs(&arch, n, seed + 1);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let drop_seed = seed + 2;
    let pass = net.forward(&refs, Mode::Train, drop_seed).unwrap();
    let g = net.backward(&pass, &labels).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..net.n_params() {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        let lp = bce_loss(&plus.forward(&refs, Mode::Train, drop_seed).unwrap().scores, &labels);
        let lm = bce_loss(&minus.forward(&refs, Mode::Train, drop_seed).unwrap().scores, &labels);
        let fd = (lp - lm) / (2.0 * h);
        let rel = (g.values[i] - fd).abs() / g.values[i].abs().max(fd.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    (worst, net.n_params())
}

#[test]
fn backprop_matches_finite_differences() {
    let (worst, n) = finite_difference_check(tiny_arch(), 3, 10);
    assert!(n > 100);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn stale_cache_is_rejected() {
    let arch = tiny_arch();
    let mut net = Network::<f64>::new(arch, 4).unwrap();
    let xs = random_inputs(&arch, 2, 1);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let pass = net.forward(&refs, Mode::Train, 3).unwrap();
    let g = net.backward(&pass, &[0, 1]).unwrap();
    let mut state = AdamState::new(net.n_params(), 1e-3);
    adam_step(&mut net, &g, &mut state).unwrap();
    assert!(matches!(net.backward(&pass, &[0, 1]), Err(Error::Contract(_))));
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut net = Network::<f64>::new(tiny_arch(), 4).unwrap();
    let before = net.params().to_vec();
    let g = Gradients {
        values: vec![0.0; net.n_params()],
    };
    let mut state = AdamState::new(net.n_params(), 1e-3);
    adam_step(&mut net, &g, &mut state).unwrap();
    assert_eq!(net.params(), &before[..]);
    assert_eq!(state.step, 1);
}

#[test]
fn adam_first_step_is_lr_times_sign() {
    let mut net = Network::<f64>::new(tiny_arch(), 4).unwrap();
    let before = net.params().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = Gradients {
        values: (0..net.n_params()).map(|_| rng.random_range(-2.0..2.0)).collect(),
    };
    let mut state = AdamState::new(net.n_params(), 1e-3);
    adam_step(&mut net, &g, &mut state).unwrap();
    for i in 0..net.n_params() {
        let step = before[i] - net.params()[i];
        let expect = 1e-3 * g.values[i].signum();
        assert!((step - expect).abs() < 1e-3 * 1e-6 / g.values[i].abs().min(1.0).max(1e-3));
    }
}

#[test]
fn adam_rejects_non_finite() {
    let mut net = Network::<f64>::new(tiny_arch(), 4).unwrap();
    let before = net.params().to_vec();
    let mut values = vec![0.0; net.n_params()];
    values[7] = f64::NAN;
    let mut state = AdamState::new(net.n_params(), 1e-3);
    let err = adam_step(&mut net, &Gradients { values }, &mut state).unwrap_err();
    assert!(matches!(err, Error::NonFiniteGradient { index: 7, step: 1 }));
    assert_eq!(net.params(), &before[..]);
}

#[test]
fn training_edge_cases() {
    let arch = tiny_arch();
    let xs = random_inputs(&arch, 8, 2);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let labels = [0, 1, 0, 1, 0, 0, 1, 0];
    let mut net = Network::<f64>::new(arch, 1).unwrap();
    let before = net.params().to_vec();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let r = train(&mut net, &refs, &labels, &cfg).unwrap();
    assert!(r.loss_history.is_empty());
    assert_eq!(net.params(), &before[..]);

    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 3,
        ..TrainConfig::default()
    };
    let r = train(&mut net, &refs, &labels, &cfg).unwrap();
    assert_eq!(r.loss_history.len(), 3);
    assert!(matches!(
        train(&mut net, &refs, &[0; 8], &cfg),
        Err(Error::EmptyClass(_))
    ));
}

#[test]
fn training_is_reproducible() {
    let arch = tiny_arch();
    let xs = random_inputs(&arch, 12, 2);
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let labels: Vec<u8> = (0..12).map(|i| (i % 3 == 0) as u8).collect();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let mut a = Network::<f64>::new(arch, 1).unwrap();
    let mut b = Network::<f64>::new(arch, 1).unwrap();
    train(&mut a, &refs, &labels, &cfg).unwrap();
    train(&mut b, &refs, &labels, &cfg).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn inverted_dropout_preserves_expectation() {
    let arch = NetworkArch {
        n_blocks: 1,
        filters: 2,
        kernel_size: 3,
        pool_size: 2,
        dropout_rate: 0.25,
        input_channels: 1,
        input_length: 8,
    };
    let net = Network::<f64>::new(arch, 3).unwrap();
    let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin() + 0.5).collect();
    let infer = net.forward(&[&x], Mode::Infer, 0).unwrap().caches[0].flat.clone();
    let n = 10_000;
    let mut sum = vec![0.0; infer.len()];
    let mut sq = vec![0.0; infer.len()];
    for s in 0..n {
        let flat = &net.forward(&[&x], Mode::Train, s as u64).unwrap().caches[0].flat;
        for (j, &v) in flat.iter().enumerate() {
            sum[j] += v;
            sq[j] += v * v;
        }
    }
    for j in 0..infer.len() {
        let mean = sum[j] / n as f64;
        let var = sq[j] / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - infer[j]).abs() <= 3.0 * se + 1e-12, "unit {j}: {mean} vs {}", infer[j]);
    }
}

#[test]
fn translation_symmetric_net_ignores_pool_aligned_shifts() {
    // Centre-only kernels make every conv pointwise, so a circular shift by
    // the total pooling factor commutes with conv, ReLU and pooling;
    // uniform dense weights make the logit a plain sum.
    let arch = NetworkArch {
        n_blocks: 5,
        filters: 3,
        kernel_size: 3,
        pool_size: 2,
        dropout_rate: 0.25,
        input_channels: 1,
        input_length: 160,
    };
    let mut net = Network::<f64>::new(arch, 7).unwrap();
    let layout = net.layout().clone();
    {
        let p = net.params_mut();
        for b in &layout.blocks {
            for (i, w) in p[b.weights..b.bias].iter_mut().enumerate() {
                if i % 3 != 1 {
                    *w = 0.0;
                } else {
                    *w = w.abs() + 0.1;
                }
            }
        }
        for w in &mut p[layout.dense_weights..layout.dense_bias] {
            *w = 0.05;
        }
    }
    let sine: Vec<f64> = (0..160)
        .map(|i| (std::f64::consts::TAU * i as f64 / 160.0).sin())
        .collect();
    let base = net.predict(&sine).unwrap();
    for shift in [32, 64, 96, 128] {
        let shifted: Vec<f64> = (0..160).map(|i| sine[(i + shift) % 160]).collect();
        assert!((net.predict(&shifted).unwrap() - base).abs() < 1e-6);
    }
}

#[test]
fn folds_partition_groups() {
    let groups: Vec<(u32, bool)> = (0..40).map(|g| (g, g % 4 == 0)).collect();
    let folds = assign_folds(&groups, 5, 3).unwrap();
    assert_eq!(folds.fold_of.len(), 40);
    for f in 0..5 {
        let cases = groups.iter().filter(|g| g.1 && folds.fold(g.0) == Some(f)).count();
        assert_eq!(cases, 2);
    }
    assert!(matches!(assign_folds(&groups[..8], 5, 3), Err(Error::Split(_))));
    assert_eq!(assign_folds(&groups, 5, 3).unwrap(), folds);
}

#[test]
fn kfold_uses_each_sample_once_and_keeps_groups_apart() {
    let arch = NetworkArch {
        n_blocks: 2,
        filters: 2,
        kernel_size: 3,
        pool_size: 2,
        dropout_rate: 0.0,
        input_channels: 1,
        input_length: 8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut samples = Vec::new();
    for g in 0..20u32 {
        for _ in 0..3 {
            let label = (g % 3 == 0 && rng.random::<f64>() < 0.7) as u8;
            let shift = if label == 1 { 1.0 } else { 0.0 };
            samples.push(Sample {
                input: (0..8).map(|_| rng.random_range(-1.0..1.0) + shift).collect::<Vec<f64>>(),
                label,
                group: g,
            });
        }
    }
    let groups: Vec<(u32, bool)> = (0..20)
        .map(|g| (g, samples.iter().any(|s| s.group == g && s.label == 1)))
        .collect();
    let folds = assign_folds(&groups, 3, 0).unwrap();
    let report = kfold_evaluate(
        samples.as_slice(),
        &folds,
        arch,
        &TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let mut seen = vec![0; samples.len()];
    for f in &report.folds {
        for &i in &f.test_indices {
            seen[i] += 1;
            let g = samples[i].group;
            assert_eq!(folds.fold(g), Some(f.fold));
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
    assert_eq!(report.aurocs().len(), 3);
}

#[test]
fn checkpoint_round_trip() {
    let net = Network::<f32>::new(tiny_arch(), 9).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&net, &mut buf).unwrap();
    assert_eq!(&buf[..8], b"DLMCNN01");
    let back: Network<f32> = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back.params(), net.params());
    assert_eq!(back.arch(), net.arch());
    buf[0] = b'X';
    assert!(read_checkpoint::<f32, _>(buf.as_slice()).is_err());
}

#[test]
fn scoring_follows_stride() {
    let arch = NetworkArch {
        filters: 4,
        ..NetworkArch::default()
    };
    let net = Network::<f32>::new(arch, 1).unwrap();
    let cfg = crate::cohortsim::SimConfig {
        n_patients: 1,
        seed: 2,
        ..Default::default()
    };
    let mut p = crate::cohortsim::generate_cohort(&cfg).unwrap().remove(0);
    // Trim to exactly 48 h.
    p.end_time = 48.0;
    for c in p.channels.iter_mut() {
        c.truncate(2880);
    }
    let scaler = ChannelScaler::physiological();
    let scores = score_patient(&net, &p, &ScoringConfig::default(), &scaler).unwrap();
    let ends: Vec<f64> = scores.iter().map(|s| s.0).collect();
    assert_eq!(ends, vec![24.0, 32.0, 40.0, 48.0]);
    assert!(scores.iter().all(|s| s.1 > 0.0 && s.1 < 1.0));
    assert_eq!(scores, score_patient(&net, &p, &ScoringConfig::default(), &scaler).unwrap());

    p.end_time = 20.0;
    for c in p.channels.iter_mut() {
        c.truncate(1200);
    }
    assert!(score_patient(&net, &p, &ScoringConfig::default(), &scaler).unwrap().is_empty());
}
