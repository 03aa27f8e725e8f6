use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use stemkit_core::metrics::si_sdr;
use stemkit_model::recon::{loss_op, reconstruct_op};
use stemkit_model::{toy, Example, ModelError, MrxConfig, MrxModel, TrainConfig, Trainer};
use stemkit_neural::{ForwardCtx, ParamId, Tape, Tensor};

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
}

/// Tiny network on 8-sample hops for exhaustive checks.
fn micro() -> MrxConfig {
    MrxConfig {
        window_ms: vec![4.0, 8.0],
        sample_rate: 8000,
        hidden: 16,
        lstm_hidden: 8,
        lstm_layers: 1,
        num_stacks: 2,
        num_sources: 3,
        chunk_s: 0.05,
    }
}

fn small_toy() -> MrxConfig {
    MrxConfig {
        chunk_s: 1.0,
        ..MrxConfig::toy()
    }
}

#[test]
fn default_windows_bins_and_frames_at_16k() {
    let config = MrxConfig::default().with_sample_rate(16000);
    assert_eq!(config.window_samples(), vec![512, 1024, 4096]);
    assert_eq!(config.num_bins(), vec![257, 513, 2049]);
    assert_eq!(config.hop_samples(), 128);
    let model = MrxModel::new(config, 0).unwrap();
    for len in [1usize, 127, 128, 1000, 16000 * 9] {
        let x = noise(len.max(128), len as u64);
        let spec = model.analyze(&x).unwrap();
        let n: Vec<usize> = spec.resolutions.iter().map(|r| r.num_frames).collect();
        assert!(n.iter().all(|&v| v == n[0]), "{n:?}");
    }
}

#[test]
fn default_encoder_features_for_nine_seconds() {
    let config = MrxConfig::default().with_sample_rate(16000);
    let model = MrxModel::new(config, 0).unwrap();
    let x = noise(16000 * 9, 1);
    let spec = model.analyze(&x).unwrap();
    let mut tape = Tape::inference();
    let f = model.encode(&mut tape, &mut ForwardCtx::eval(), &[spec]).unwrap();
    assert_eq!(tape.shape(f), [1126, 512]);
}

#[test]
fn default_model_emits_nine_nonnegative_finite_masks() {
    let config = MrxConfig::default().with_sample_rate(16000);
    let model = MrxModel::new(config.clone(), 3).unwrap();
    let x = noise(4000, 2);
    let mut tape = Tape::inference();
    let fwd = model.forward(&mut tape, &mut ForwardCtx::eval(), &[&x]).unwrap();
    let n = config.num_frames(x.len());
    let mut count = 0;
    let mut positive = false;
    for (m, f) in fwd.masks.iter().zip(config.num_bins()) {
        let t = tape.value(*m);
        assert_eq!(t.shape(), [n, 3 * f]);
        assert!(t.is_finite());
        assert!(t.data().iter().all(|&v| v >= 0.0));
        positive |= t.data().iter().any(|&v| v > 0.0);
        count += config.num_sources;
    }
    assert_eq!(count, 9);
    assert!(positive);
}

#[test]
fn silent_input_gives_frame_constant_features() {
    let model = MrxModel::new(micro(), 0).unwrap();
    let x = vec![0.0; 200];
    let spec = model.analyze(&x).unwrap();
    let mut tape = Tape::inference();
    let f = model.encode(&mut tape, &mut ForwardCtx::eval(), &[spec]).unwrap();
    let t = tape.value(f);
    let (rows, cols) = t.dims2();
    for r in 1..rows {
        assert_eq!(t.data()[r * cols..(r + 1) * cols], t.data()[..cols]);
    }
}

fn uniform_masks(model: &MrxModel, len: usize, value: f64) -> Vec<Vec<f64>> {
    let n = model.config().num_frames(len);
    let s = model.config().num_sources;
    model.config().num_bins().iter().map(|f| vec![value; n * s * f]).collect()
}

#[test]
fn unit_sum_masks_reconstruct_the_mixture() {
    for config in [micro(), small_toy(), MrxConfig::default().with_sample_rate(16000)] {
        let model = MrxModel::new(config.clone(), 0).unwrap();
        let x = noise(5000, 4);
        let i = config.num_resolutions() as f64;
        let masks = uniform_masks(&model, x.len(), 1.0 / i);
        let refs: Vec<&[f64]> = masks.iter().map(Vec::as_slice).collect();
        let est = model.reconstruct_with_masks(&x, &refs).unwrap();
        assert_eq!(est.len(), config.num_sources);
        for e in &est {
            assert_eq!(e.len(), x.len());
            let err = e.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "{err}");
        }
    }
}

#[test]
fn zero_masks_give_silence() {
    let model = MrxModel::new(micro(), 0).unwrap();
    let x = noise(300, 5);
    let masks = uniform_masks(&model, x.len(), 0.0);
    let refs: Vec<&[f64]> = masks.iter().map(Vec::as_slice).collect();
    for e in model.reconstruct_with_masks(&x, &refs).unwrap() {
        assert!(e.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn single_resolution_is_plain_masking() {
    use stemkit_core::dsp::{istft, stft};
    let config = MrxConfig {
        window_ms: vec![8.0],
        ..micro()
    };
    let model = MrxModel::new(config.clone(), 0).unwrap();
    let x = noise(400, 6);
    let n = config.num_frames(x.len());
    let f = config.num_bins()[0];
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mask: Vec<f64> = (0..n * 3 * f).map(|_| rng.random_range(0.0..2.0)).collect();
    let est = model.reconstruct_with_masks(&x, &[&mask]).unwrap();
    let spec = stft(&x, &model.stft_configs()[0]).unwrap();
    for (j, e) in est.iter().enumerate() {
        let mj: Vec<f64> = (0..n).flat_map(|t| mask[t * 3 * f + j * f..t * 3 * f + (j + 1) * f].to_vec()).collect();
        let want = istft(&spec.masked(&mj), x.len());
        let err = e.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }
}

#[test]
fn loss_at_unit_sum_masks_is_mixture_si_sdr() {
    let model = MrxModel::new(micro(), 0).unwrap();
    let scene = toy::scene(0.5, 8000, 3).unwrap();
    let x = &scene.mixture;
    let spec = model.analyze(x).unwrap();
    let mut tape = Tape::inference();
    let masks: Vec<_> = uniform_masks(&model, x.len(), 0.5)
        .into_iter()
        .zip(model.config().num_bins())
        .map(|(m, f)| tape.leaf(Tensor::new(&[m.len() / (3 * f), 3 * f], m).unwrap()))
        .collect();
    let est = reconstruct_op(&mut tape, Arc::new(vec![spec.resolutions]), &masks, 3, x.len()).unwrap();
    let loss = loss_op(&mut tape, est, Arc::new(scene.sources.clone())).unwrap();
    let want = -scene.sources.iter().map(|r| si_sdr(x, r).unwrap()).sum::<f64>() / 3.0;
    assert!((tape.value(loss).item() - want).abs() < 1e-6, "{} vs {want}", tape.value(loss).item());
}

fn loss_value(model: &MrxModel, x: &[f64], refs: &[Vec<f64>]) -> f64 {
    let mut tape = Tape::inference();
    let l = model.loss(&mut tape, &mut ForwardCtx::train(), &[x], &[refs]).unwrap();
    tape.value(l).item()
}

#[test]
fn micro_model_gradients_match_finite_differences() {
    let mut model = MrxModel::new(micro(), 11).unwrap();
    model.store_mut().set_f32_exact(false);
    // 56 samples at hop 8 give 8 frames
    let x = noise(56, 8);
    assert_eq!(model.config().num_frames(x.len()), 8);
    let refs = vec![noise(56, 9), noise(56, 10), noise(56, 12)];
    let mut tape = Tape::new();
    let l = model.loss(&mut tape, &mut ForwardCtx::train(), &[&x], &[&refs]).unwrap();
    let grads = tape.backward(l).unwrap();
    let analytic = grads.param_grads().clone();
    drop(tape);

    let h = 1e-6;
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    let ids: Vec<ParamId> = model.store().ids().filter(|&id| model.store().entry(id).trainable).collect();
    assert!(ids.iter().all(|id| analytic.contains_key(id)), "every trainable parameter receives a gradient");
    for id in ids {
        let numel = model.store().get(id).numel();
        for _ in 0..4 {
            let k = rng.random_range(0..numel);
            let orig = model.store().get(id).data()[k];
            model.store_mut().update(id, |d| d[k] = orig + h);
            let plus = loss_value(&model, &x, &refs);
            model.store_mut().update(id, |d| d[k] = orig - h);
            let minus = loss_value(&model, &x, &refs);
            model.store_mut().update(id, |d| d[k] = orig);
            let num = (plus - minus) / (2.0 * h);
            let ana = analytic[&id].data()[k];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4);
            if rel > worst {
                worst = rel;
                eprintln!("{}[{k}]: analytic {ana:e} numeric {num:e}", model.store().entry(id).name);
            }
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

fn swap_blocks(model: &mut MrxModel, a: usize, b: usize) {
    let decoders = model.decoders().to_vec();
    let bins = model.config().num_bins();
    for (dec, f) in decoders.iter().zip(bins) {
        let w = dec.fc2.input;
        let groups: [(ParamId, usize); 6] = [
            (dec.fc2.weight, w),
            (dec.fc2.bias, 1),
            (dec.bn2.gamma, 1),
            (dec.bn2.beta, 1),
            (dec.bn2.running_mean, 1),
            (dec.bn2.running_var, 1),
        ];
        for (id, width) in groups {
            model.store_mut().update(id, |d| {
                for r in 0..f {
                    for c in 0..width {
                        d.swap((a * f + r) * width + c, (b * f + r) * width + c);
                    }
                }
            });
        }
    }
}

#[test]
fn swapping_decoder_blocks_swaps_stems() {
    let mut model = MrxModel::new(small_toy(), 21).unwrap();
    let scene = toy::scene(1.0, 8000, 2).unwrap();
    let before = model.infer(&scene.mixture).unwrap();
    let count = model.store().entries().iter().map(|e| e.tensor.numel()).sum::<usize>();
    swap_blocks(&mut model, 0, 2);
    let after = model.infer(&scene.mixture).unwrap();
    assert_eq!(after[0], before[2]);
    assert_eq!(after[2], before[0]);
    assert_eq!(after[1], before[1]);
    assert_eq!(model.store().entries().iter().map(|e| e.tensor.numel()).sum::<usize>(), count);
}

fn trained_small(steps: usize) -> (Trainer, toy::ToyScene) {
    let scene = toy::scene(1.0, 8000, 5).unwrap();
    let example = Example {
        mixture: scene.mixture.clone(),
        sources: scene.sources.clone(),
    };
    let mut trainer = Trainer::new(MrxModel::new(small_toy(), 1).unwrap(), TrainConfig::default());
    for _ in 0..steps {
        trainer.step(&[&example]).unwrap();
    }
    (trainer, scene)
}

#[test]
fn checkpoint_round_trip_infers_bit_identically() {
    let (trainer, scene) = trained_small(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    trainer.model.save(&path).unwrap();
    let loaded = MrxModel::load(&path).unwrap();
    assert_eq!(loaded.config(), trainer.model.config());
    let long = [scene.mixture.clone(), scene.mixture[..3000].to_vec()].concat();
    assert_eq!(loaded.infer(&long).unwrap(), trainer.model.infer(&long).unwrap());
}

#[test]
fn chunk_length_inference_is_a_single_pass() {
    let (trainer, scene) = trained_small(1);
    let model = &trainer.model;
    assert_eq!(scene.mixture.len(), model.config().chunk_samples());
    assert_eq!(model.infer(&scene.mixture).unwrap(), model.separate_chunk(&scene.mixture).unwrap());
    assert_eq!(model.infer(&scene.mixture).unwrap(), model.infer(&scene.mixture).unwrap());
}

#[test]
fn long_and_short_inputs_keep_their_length() {
    let model = MrxModel::new(small_toy(), 2).unwrap();
    for len in [0usize, 5, 700, 8000 + 1, 8000 * 3 + 123] {
        let x = noise(len, len as u64);
        let est = model.infer(&x).unwrap();
        assert_eq!(est.len(), 3);
        for e in est {
            assert_eq!(e.len(), len);
            assert!(e.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn resumed_trainer_matches_uninterrupted_run() {
    let scene = toy::scene(1.0, 8000, 6).unwrap();
    let examples = stemkit_model::chunk_examples(&scene.mixture, &scene.sources, 4000);
    let config = TrainConfig {
        seed: 4,
        ..TrainConfig::default()
    };
    let mut straight = Trainer::new(MrxModel::new(small_toy(), 4).unwrap(), config.clone());
    let mut first = Trainer::new(MrxModel::new(small_toy(), 4).unwrap(), config);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trainer.ckpt");
    straight.run_epoch(&examples, &[]).unwrap();
    first.run_epoch(&examples, &[]).unwrap();
    first.save(&path).unwrap();
    let mut resumed = Trainer::resume(&path).unwrap();
    let a = straight.run_epoch(&examples, &[]).unwrap();
    let b = resumed.run_epoch(&examples, &[]).unwrap();
    assert_eq!(a, b);
    assert_eq!(straight.history(), resumed.history());
}

#[test]
fn empty_dataset_is_an_error() {
    let mut trainer = Trainer::new(MrxModel::new(micro(), 0).unwrap(), TrainConfig::default());
    assert!(matches!(trainer.run_epoch(&[], &[]), Err(ModelError::EmptyDataset)));
    assert!(matches!(trainer.step(&[]), Err(ModelError::EmptyDataset)));
}

#[test]
fn flat_losses_halve_the_rate_after_four_epochs() {
    let mut schedule = stemkit_neural::PlateauSchedule::new(1e-3);
    let lrs: Vec<f64> = [1.0; 4].iter().map(|&l| schedule.step(l)).collect();
    assert_eq!(lrs, vec![1e-3, 1e-3, 1e-3, 5e-4]);
}

#[test]
fn silent_reference_uses_energy_penalty() {
    let mut tape = Tape::new();
    let est = tape.variable(Tensor::new(&[2, 4], vec![0.1, -0.2, 0.3, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap());
    let refs = Arc::new(vec![vec![0.0; 4], vec![1.5, 2.0, 2.5, 4.5]]);
    let l = loss_op(&mut tape, est, refs).unwrap();
    let penalty = 10.0 * ((0.01 + 0.04 + 0.09) / 4.0 + stemkit_core::metrics::EPS).log10();
    let si = si_sdr(&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.0, 2.5, 4.5]).unwrap();
    let want = (penalty - si) / 2.0;
    assert!((tape.value(l).item() - want).abs() < 1e-6, "{} vs {want}", tape.value(l).item());
    assert!(tape.backward(l).unwrap().get(est).unwrap().is_finite());
}

#[test]
fn invalid_configs_name_the_field() {
    let bad = MrxConfig {
        window_ms: vec![],
        ..MrxConfig::toy()
    };
    let err = MrxModel::new(bad, 0).err().unwrap().to_string();
    assert!(err.contains("window_ms"), "{err}");
    let bad = MrxConfig {
        hidden: 0,
        ..MrxConfig::toy()
    };
    assert!(MrxModel::new(bad, 0).err().unwrap().to_string().contains("hidden"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unit_sum_masks_are_identity_for_any_length(len in 8usize..1500, seed in 0u64..1000, weight in 0.0f64..1.0) {
        let config = micro();
        let model = MrxModel::new(config.clone(), 0).unwrap();
        let x = noise(len, seed);
        // any split of unit mass across resolutions sums back to the mixture
        let masks: Vec<Vec<f64>> = uniform_masks(&model, len, 1.0)
            .into_iter()
            .zip([weight, 1.0 - weight])
            .map(|(m, w)| m.iter().map(|v| v * w).collect())
            .collect();
        let refs: Vec<&[f64]> = masks.iter().map(Vec::as_slice).collect();
        for e in model.reconstruct_with_masks(&x, &refs).unwrap() {
            prop_assert_eq!(e.len(), len);
            let err = e.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-6, "{}", err);
        }
    }

    #[test]
    fn stems_never_change_length(len in 0usize..600, seed in 0u64..1000) {
        let model = MrxModel::new(micro(), seed).unwrap();
        let x = noise(len, seed);
        for e in model.infer(&x).unwrap() {
            prop_assert_eq!(e.len(), len);
            prop_assert!(e.iter().all(|v| v.is_finite()));
        }
    }
}
