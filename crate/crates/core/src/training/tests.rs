use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::harness::{gen_phantom, PhantomKind};
use crate::mri::synth_sensitivities;
use crate::rim::{CellKind, RimConfig};

fn image(h: usize, w: usize, seed: u64) -> ComplexImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexImage::from_fn(h, w, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn phantom_sample(size: usize, seed: u64) -> Sample {
    Sample {
        reference: gen_phantom(PhantomKind::Textured, size, seed).unwrap(),
        coils: synth_sensitivities(size, size, 4, seed).unwrap(),
    }
}

#[test]
fn weight_schedule() {
    for t in [2, 8, 16] {
        let w = loss_weights(t);
        assert_eq!(w.len(), t);
        assert_eq!(w[0], 0.1);
        assert_eq!(w[t - 1], 1.0);
        assert!(w.windows(2).all(|p| p[0] < p[1]));
        assert!((w[t - 1] / w[0] - 10.0).abs() < 1e-12);
    }
    assert_eq!(loss_weights(1), vec![1.0]);
}

#[test]
fn loss_arithmetic() {
    let r = ComplexImage::from_vec(1, 1, vec![Complex64::new(0.0, 0.0)]).unwrap();
    let d3 = ComplexImage::from_vec(1, 1, vec![Complex64::new(3.0, 0.0)]).unwrap();
    let d34 = ComplexImage::from_vec(1, 1, vec![Complex64::new(3.0, 4.0)]).unwrap();
    assert_eq!(loss_l2(&[d3.clone()], &r, &[1.0]).unwrap(), 9.0);
    assert_eq!(loss_l1(&[d34], &r, &[1.0]).unwrap(), 5.0);
    let x = image(6, 5, 1);
    let w = loss_weights(3);
    let same = vec![x.clone(); 3];
    assert_eq!(loss_l1(&same, &x, &w).unwrap(), 0.0);
    assert_eq!(loss_l2(&same, &x, &w).unwrap(), 0.0);
    let est: Vec<_> = (0..3).map(|i| image(6, 5, 10 + i)).collect();
    let scaled: Vec<_> = est.iter().map(|e| x.add(&e.sub(&x).unwrap().scale(2.5)).unwrap()).collect();
    let l1 = loss_l1(&est, &x, &w).unwrap();
    assert!(l1 > 0.0);
    assert!((loss_l1(&scaled, &x, &w).unwrap() - 2.5 * l1).abs() < 1e-12);
    assert!(loss_l2(&est[..2], &x, &w).is_err());
    assert!(loss_l2(&[image(5, 5, 0), image(5, 5, 0), image(5, 5, 0)], &x, &w).is_err());
}

#[test]
fn tape_loss_matches_plain_loss() {
    let x = image(7, 6, 2);
    let est: Vec<_> = (0..4).map(|i| image(7, 6, 20 + i)).collect();
    for norm in [LossNorm::L1, LossNorm::L2] {
        let spec = LossSpec::new(norm, 4);
        let mut tape = Tape::new();
        let vars: Vec<_> = est.iter().map(|e| tape.leaf(Tensor::from_complex(e))).collect();
        let root = loss_on_tape(&mut tape, &vars, &x, &spec).unwrap();
        let plain = spec.evaluate(&est, &x).unwrap();
        assert!((tape.value(root).data()[0] - plain).abs() < 1e-12 * plain);
    }
}

#[test]
fn l1_subgradient_is_zero_at_zero_residual() {
    let x = image(3, 3, 4);
    let mut est = image(3, 3, 5);
    est.set(1, 1, x.get(1, 1));
    let spec = LossSpec::new(LossNorm::L1, 1);
    let mut tape = Tape::new();
    let v = tape.leaf(Tensor::from_complex(&est));
    let root = loss_on_tape(&mut tape, &[v], &x, &spec).unwrap();
    let g = tape.backward(root).unwrap().get(v);
    assert_eq!(g.data()[4], 0.0);
    assert_eq!(g.data()[9 + 4], 0.0);
    assert!(g.data()[0] != 0.0);
}

/// Central differences of the eagerly evaluated loss against the tape
/// gradient, on a handful of coordinates per parameter block.
#[test]
fn unrolled_gradient_matches_finite_differences() {
    for kind in [CellKind::Gru, CellKind::Mgu, CellKind::IndRnn] {
        // nonzero biases keep every ReLU away from its kink, where central
        // differences are meaningless
        let mut model = RimModel::init(RimConfig::new(kind, 4, 2).unwrap(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in model.params.iter_mut().filter(|p| p.shape().len() == 1) {
            p.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
        let reference = image(8, 8, 7);
        let coils = synth_sensitivities(8, 8, 2, 1).unwrap();
        let mask = SamplingMask::from_pattern(8, 8, (0..64).map(|i| i % 3 != 1).collect(), 1.5, 0).unwrap();
        let coils = mri::simulate(&reference, &coils, &mask, None).unwrap();
        let spec = LossSpec::new(LossNorm::L2, 2);
        let (_, grads) = loss_gradient(&model, &coils, &mask, &reference, &spec, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (b, g) in grads.iter().enumerate() {
            let picks: Vec<usize> = (0..3).map(|_| rng.random_range(0..g.len())).collect();
            for i in picks {
                let h = 1e-5;
                let probe = |d: f64| {
                    let mut m = model.clone();
                    m.params[b].data_mut()[i] += d;
                    evaluate_loss(&m, &coils, &mask, &reference, &spec, 1.0).unwrap()
                };
                let fd = (probe(h) - probe(-h)) / (2.0 * h);
                let an = g.data()[i];
                assert!(
                    (fd - an).abs() <= 1e-3 * an.abs().max(1e-4),
                    "{kind:?} block {b} index {i}: fd {fd} vs {an}"
                );
            }
        }
    }
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let model = RimModel::init(RimConfig::new(CellKind::IndRnn, 4, 2).unwrap(), 1).unwrap();
    let data = vec![Dataset {
        name: "p".into(),
        samples: vec![phantom_sample(32, 1)],
    }];
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs: 3,
        steps_per_epoch: 2,
        patch_size: 16,
        ..TrainConfig::default()
    };
    let val = vec![phantom_sample(32, 2)];
    let out = train(&model, &data, &val, &LossSpec::new(LossNorm::L1, 2), &config).unwrap();
    assert_eq!(out.last.params, model.params);
    assert!(out.curve.windows(2).all(|p| p[0].val_loss == p[1].val_loss));
    assert_eq!(out.step_losses.len(), 6);
}

#[test]
fn training_is_bit_deterministic() {
    let model = RimModel::init(RimConfig::new(CellKind::Gru, 4, 2).unwrap(), 1).unwrap();
    let data = vec![
        Dataset {
            name: "a".into(),
            samples: vec![phantom_sample(32, 1), phantom_sample(32, 2)],
        },
        Dataset {
            name: "b".into(),
            samples: vec![phantom_sample(32, 3)],
        },
    ];
    let config = TrainConfig {
        epochs: 2,
        steps_per_epoch: 3,
        batch_size: 2,
        patch_size: 20,
        seed: 42,
        noise_fraction: 0.02,
        accelerations: vec![4.0, 6.0],
        ..TrainConfig::default()
    };
    let spec = LossSpec::new(LossNorm::L2, 2);
    let a = train(&model, &data, &[], &spec, &config).unwrap();
    let b = train(&model, &data, &[], &spec, &config).unwrap();
    assert_eq!(
        crate::rim::checkpoint::encode_checkpoint(&a.best),
        crate::rim::checkpoint::encode_checkpoint(&b.best)
    );
    assert_eq!(a.step_losses, b.step_losses);
    assert_ne!(a.last.params, model.params);
}

#[test]
fn one_step_moves_every_block_with_gradient() {
    let model = RimModel::init(RimConfig::new(CellKind::Mgu, 4, 2).unwrap(), 2).unwrap();
    let data = vec![Dataset {
        name: "a".into(),
        samples: vec![phantom_sample(32, 4)],
    }];
    let config = TrainConfig {
        epochs: 1,
        steps_per_epoch: 1,
        patch_size: 16,
        ..TrainConfig::default()
    };
    let out = train(&model, &data, &[], &LossSpec::new(LossNorm::L2, 2), &config).unwrap();
    for (before, after) in model.params.iter().zip(&out.last.params) {
        assert_ne!(before, after);
    }
}

#[test]
fn overfits_a_single_sample() {
    let model = RimModel::init(RimConfig::new(CellKind::IndRnn, 8, 4).unwrap(), 5).unwrap();
    let data = vec![Dataset {
        name: "one".into(),
        samples: vec![phantom_sample(32, 8)],
    }];
    let config = TrainConfig {
        epochs: 1,
        steps_per_epoch: 500,
        patch_size: 32,
        augment: AugmentToggles::NONE,
        resample_masks: false,
        ..TrainConfig::default()
    };
    let out = train(&model, &data, &[], &LossSpec::new(LossNorm::L2, 4), &config).unwrap();
    let first = out.step_losses[0];
    let last = *out.step_losses.last().unwrap();
    assert!(last * 10.0 <= first, "{first} -> {last}");
}

#[test]
fn configuration_errors() {
    let model = RimModel::zeros(RimConfig::new(CellKind::IndRnn, 2, 2).unwrap()).unwrap();
    let data = vec![Dataset {
        name: "a".into(),
        samples: vec![phantom_sample(32, 1)],
    }];
    let bad_weights = TrainConfig {
        dataset_weights: vec![0.5, 0.5],
        ..TrainConfig::default()
    };
    let spec = LossSpec::new(LossNorm::L1, 2);
    assert!(matches!(train(&model, &data, &[], &spec, &bad_weights), Err(TrainError::Rim(RimError::Config(_)))));
    let wrong_t = LossSpec::new(LossNorm::L1, 3);
    assert!(train(&model, &data, &[], &wrong_t, &TrainConfig::default()).is_err());
    let parsed: TrainConfig = toml::from_str("learning_rate = 0.01\nepochs = 2\n").unwrap();
    assert_eq!(parsed.learning_rate, 0.01);
    assert_eq!(parsed.patch_size, DEFAULT_PATCH);
    assert!(toml::from_str::<TrainConfig>("lr = 1").is_err());
}

#[test]
fn curve_csv_layout() {
    let rec = EpochRecord {
        epoch: 0,
        train_loss: 0.5,
        val_loss: 0.25,
        val_ssim: 0.9,
        val_psnr: 30.0,
        learning_rate: 1e-3,
    };
    assert_eq!(curve_to_csv(&[rec]), "epoch,train_loss,val_loss,val_ssim,val_psnr\n0,0.5,0.25,0.9,30\n");
}
