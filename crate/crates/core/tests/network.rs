mod common;

use common::random_vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaforge_core::aes::ByteIndex;
use scaforge_core::math::{log_softmax, log_sum_exp};
use scaforge_core::nn::layers::dropout_mask;
use scaforge_core::nn::{train, train_samples, ConvBlock, ConvBlockSpec, NetConfig, NetModel, RmsPropConfig, Tensor, TrainConfig};
use scaforge_core::sim::{simulate, KeyMode, LeakModel, SimConfig};
use scaforge_core::traces::{apply_scaler, fit_scaler, FeatureIndexList};
use scaforge_core::Matrix;

fn tiny(len: usize, residual: bool) -> NetConfig {
    let mut cfg = NetConfig::with_channels(len, &[4, 4], 32, 0.0, residual);
    for b in &mut cfg.blocks {
        b.kernel = 5;
        b.padding = 2;
    }
    cfg
}

#[test]
fn residual_with_zero_main_path_is_relu() {
    let spec = ConvBlockSpec { in_channels: 3, out_channels: 3, kernel: 5, padding: 2, batch_norm: false, pool: false, residual: true };
    let mut block = ConvBlock::new(spec, &mut ChaCha8Rng::seed_from_u64(0));
    for conv in [&mut block.conv1, block.conv2.as_mut().unwrap()] {
        conv.weight.value.iter_mut().for_each(|w| *w = 0.0);
        conv.bias.value.iter_mut().for_each(|w| *w = 0.0);
    }
    assert!(block.shortcut.is_none());
    let x = Tensor::from_vec(2, 3, 7, random_vec(42, 1));
    let y = block.infer(&x).unwrap();
    let expected: Vec<f64> = x.data.iter().map(|v| v.max(0.0)).collect();
    assert_eq!(y.data, expected);
}

#[test]
fn channel_mismatch_uses_projection_shortcut() {
    let spec = ConvBlockSpec { in_channels: 2, out_channels: 5, kernel: 3, padding: 1, batch_norm: true, pool: false, residual: true };
    let block = ConvBlock::new(spec, &mut ChaCha8Rng::seed_from_u64(0));
    let sc = block.shortcut.as_ref().unwrap();
    assert_eq!((sc.kernel, sc.in_channels, sc.out_channels), (1, 2, 5));
    let y = block.infer(&Tensor::from_vec(1, 2, 6, random_vec(12, 2))).unwrap();
    assert_eq!((y.channels, y.len), (5, 6));
    assert!(block.infer(&Tensor::from_vec(1, 3, 6, random_vec(18, 2))).is_err());
}

#[test]
fn delta_kernel_block_without_pool_or_norm() {
    let spec = ConvBlockSpec { in_channels: 1, out_channels: 1, kernel: 11, padding: 5, batch_norm: false, pool: false, residual: false };
    let mut block = ConvBlock::new(spec, &mut ChaCha8Rng::seed_from_u64(0));
    block.conv1.weight.value = (0..11).map(|k| if k == 5 { 1.0 } else { 0.0 }).collect();
    block.conv1.bias.value[0] = 0.0;
    // non-negative input so the ReLU is transparent
    let x = Tensor::from_vec(1, 1, 20, (0..20).map(|v| v as f64).collect());
    assert_eq!(block.infer(&x).unwrap(), x);
}

#[test]
fn zero_input_with_zero_biases_is_uniform() {
    let mut model = NetModel::new(NetConfig::desk_scale(32, false), 4).unwrap();
    model.blocks.iter_mut().for_each(|b| b.conv1.bias.value.iter_mut().for_each(|v| *v = 0.0));
    model.hidden.bias.value.iter_mut().for_each(|v| *v = 0.0);
    model.output.bias.value.iter_mut().for_each(|v| *v = 0.0);
    let logits = model.forward(&Matrix::zeros(3, 32)).unwrap();
    for r in logits.iter_rows() {
        assert!(r.iter().all(|&v| v == 0.0));
    }
    let lp = model.predict_log_proba(&Matrix::zeros(1, 32)).unwrap();
    assert!(lp.row(0).iter().all(|&v| (v + 256f64.ln()).abs() < 1e-12));
}

#[test]
fn initial_loss_is_near_uniform() {
    for residual in [false, true] {
        let model = NetModel::new(NetConfig::desk_scale(64, residual), 7).unwrap();
        let x = Matrix::from_vec(100, 64, random_vec(6400, 8)).unwrap();
        let labels: Vec<u8> = (0..100).map(|i| (i * 37) as u8).collect();
        let loss = model.loss(&x, &labels).unwrap();
        assert!((loss - 256f64.ln()).abs() < 0.05, "residual={residual}: {loss}");
    }
}

#[test]
fn predict_matches_forward_plus_log_softmax() {
    let model = NetModel::new(tiny(16, true), 1).unwrap();
    let x = Matrix::from_vec(300, 16, random_vec(300 * 16, 9)).unwrap();
    let lp = model.predict_log_proba(&x).unwrap();
    let logits = model.forward(&x).unwrap();
    for i in 0..x.rows() {
        let mut row = logits.row(i).to_vec();
        log_softmax(&mut row);
        assert_eq!(lp.row(i), row.as_slice());
        assert!(log_sum_exp(lp.row(i)).abs() < 1e-9);
        let shifted: Vec<f64> = logits.row(i).iter().map(|v| v + 12.5).collect();
        assert_eq!(scaforge_core::math::argmax(&shifted), scaforge_core::math::argmax(logits.row(i)));
    }
    assert!(model.predict_log_proba(&Matrix::zeros(1, 15)).is_err());
}

#[test]
fn dropout_keeps_expected_activation() {
    let activation: Vec<f64> = random_vec(128, 3).into_iter().map(f64::abs).collect();
    let eval_total: f64 = activation.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000;
    let mean_total = (0..n)
        .map(|_| dropout_mask(activation.len(), 0.5, &mut rng).iter().zip(&activation).map(|(m, a)| m * a).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    assert!((mean_total - eval_total).abs() < 0.02 * eval_total);
}

fn memorize(seed: u64) -> Vec<f64> {
    let x = Matrix::from_vec(20, 16, random_vec(20 * 16, 40)).unwrap();
    let labels: Vec<u8> = (0..20).map(|i| [3u8, 90, 150, 222][i % 4]).collect();
    let mut model = NetModel::new(tiny(16, false), seed).unwrap();
    let cfg = TrainConfig {
        optimizer: RmsPropConfig { lr: 1e-3, weight_decay: 0.0, ..RmsPropConfig::default() },
        batch_size: 20,
        epochs: 500,
        seed,
        validation_fraction: 0.0,
    };
    train_samples(&mut model, &x, &labels, &cfg).unwrap().train_loss
}

#[test]
fn tiny_set_is_memorized_deterministically() {
    let a = memorize(3);
    assert!(*a.last().unwrap() < 0.1, "final loss {}", a.last().unwrap());
    assert_eq!(a, memorize(3));
}

#[test]
fn training_loss_falls_on_noisy_data() {
    let sim = SimConfig {
        trace_len: 32,
        leak_points: FeatureIndexList::new(vec![10, 20], 32).unwrap(),
        leak_model: LeakModel::HammingWeight,
        amplitude: 1.0,
        noise_sigma: 2.0,
        baseline: 0.0,
        key_mode: KeyMode::Variable,
        byte_index: ByteIndex::default(),
        seed: 1,
    };
    let raw = simulate(&sim, 600).unwrap();
    let data = apply_scaler(&fit_scaler(&raw).unwrap(), &raw).unwrap();
    let mut model = NetModel::new(NetConfig::with_channels(32, &[4, 8], 64, 0.5, false), 2).unwrap();
    let cfg = TrainConfig {
        optimizer: RmsPropConfig { lr: 1e-3, ..RmsPropConfig::default() },
        batch_size: 50,
        epochs: 30,
        seed: 3,
        validation_fraction: 0.2,
    };
    let h = train(&mut model, &data, &cfg).unwrap();
    assert_eq!(h.train_loss.len(), 30);
    assert_eq!(h.validation_loss.len(), 30);
    assert!(h.train_loss.last().unwrap() < &h.train_loss[0]);
    // memorizing noise does not generalize: validation ends above training
    assert!(h.validation_loss.last().unwrap() > h.train_loss.last().unwrap());
}

#[test]
fn label_range_and_shape_errors() {
    let mut model = NetModel::new(tiny(16, false), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Matrix::zeros(2, 16);
    assert!(model.loss_and_grad(&x, &[1], &mut rng).is_err());
    assert!(model.forward(&Matrix::zeros(2, 17)).is_err());
}
