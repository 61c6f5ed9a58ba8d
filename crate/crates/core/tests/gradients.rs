//! Finite-difference checks of every differentiable layer, the residual
//! block and whole networks.

mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scaforge_core::nn::layers::{BatchNorm1d, Conv1d, Dense, Param};
use scaforge_core::nn::{ConvBlock, ConvBlockSpec, NetConfig, NetModel, Tensor};
use scaforge_core::Matrix;

/// Central-difference check of every coordinate of the parameters that
/// `params` exposes, against previously computed analytic gradients.
fn check_params<T>(
    target: &mut T,
    params: impl Fn(&mut T) -> Vec<&mut Param>,
    loss: impl Fn(&mut T) -> f64,
    analytic: &[Vec<f64>],
) -> f64 {
    let set = |target: &mut T, pi: usize, j: usize, v: f64| params(target)[pi].value[j] = v;
    let shapes: Vec<usize> = analytic.iter().map(Vec::len).collect();
    let mut worst = 0.0f64;
    for (pi, &len) in shapes.iter().enumerate() {
        for j in 0..len {
            let orig = params(target)[pi].value[j];
            set(target, pi, j, orig + FD_STEP);
            let up = loss(target);
            set(target, pi, j, orig - FD_STEP);
            let down = loss(target);
            set(target, pi, j, orig);
            worst = worst.max(rel_err(analytic[pi][j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn tensor(b: usize, c: usize, l: usize, seed: u64) -> Tensor {
    Tensor::from_vec(b, c, l, random_vec(b * c * l, seed))
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut conv = Conv1d::new(3, 4, 5, 2, &mut rng);
    let x = tensor(2, 3, 9, 2);
    let y = conv.forward_train(&x);
    let r = random_vec(y.data.len(), 3);
    let gx = conv.backward(&Tensor::from_vec(y.batch, y.channels, y.len, r.clone()));

    let mut xs = x.data.clone();
    let mut worst = 0.0f64;
    for i in 0..xs.len() {
        let n = central_diff(&mut xs, i, |v| dot(&conv.infer(&Tensor::from_vec(2, 3, 9, v.to_vec())).data, &r));
        worst = worst.max(rel_err(gx.data[i], n));
    }
    let analytic = vec![conv.weight.grad.clone(), conv.bias.grad.clone()];
    worst = worst.max(check_params(
        &mut conv,
        |c| c.params_mut().into(),
        |c| dot(&c.infer(&x).data, &r),
        &analytic,
    ));
    assert!(worst < FD_TOL, "conv max rel err {worst}");
}

#[test]
fn batch_norm_gradients() {
    let mut bn = BatchNorm1d::new(3);
    bn.gamma.value = vec![1.3, -0.7, 0.4];
    bn.beta.value = vec![0.1, 0.2, -0.3];
    let x = tensor(4, 3, 6, 4);
    let y = bn.forward_train(&x);
    let r = random_vec(y.data.len(), 5);
    let gx = bn.backward(&Tensor::from_vec(4, 3, 6, r.clone()));
    let analytic = vec![bn.gamma.grad.clone(), bn.beta.grad.clone()];

    let mut worst = 0.0f64;
    let mut probe = bn.clone();
    let mut xs = x.data.clone();
    for i in 0..xs.len() {
        let n = central_diff(&mut xs, i, |v| dot(&probe.forward_train(&Tensor::from_vec(4, 3, 6, v.to_vec())).data, &r));
        worst = worst.max(rel_err(gx.data[i], n));
    }
    worst = worst.max(check_params(
        &mut bn,
        |b| b.params_mut().into(),
        |b| dot(&b.forward_train(&x).data, &r),
        &analytic,
    ));
    assert!(worst < FD_TOL, "batch norm max rel err {worst}");
}

#[test]
fn dense_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut dense = Dense::new(7, 5, &mut rng);
    let x = random_vec(3 * 7, 7);
    let y = dense.forward_train(&x, 3);
    let r = random_vec(y.len(), 8);
    let gx = dense.backward(&r);
    let analytic = vec![dense.weight.grad.clone(), dense.bias.grad.clone()];

    let mut worst = 0.0f64;
    let mut xs = x.clone();
    for i in 0..xs.len() {
        let n = central_diff(&mut xs, i, |v| dot(&dense.infer(v, 3), &r));
        worst = worst.max(rel_err(gx[i], n));
    }
    worst = worst.max(check_params(
        &mut dense,
        |d| d.params_mut().into(),
        |d| dot(&d.infer(&x, 3), &r),
        &analytic,
    ));
    assert!(worst < FD_TOL, "dense max rel err {worst}");
}

fn check_block(spec: ConvBlockSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut block = ConvBlock::new(spec, &mut rng);
    let x = tensor(3, spec.in_channels, 12, seed + 1);
    let y = block.forward_train(&x).unwrap();
    let r = random_vec(y.data.len(), seed + 2);
    let gx = block.backward(&Tensor::from_vec(y.batch, y.channels, y.len, r.clone()));
    let analytic: Vec<Vec<f64>> = block.params().iter().map(|p| p.grad.clone()).collect();

    let mut worst = 0.0f64;
    let mut probe = block.clone();
    let mut xs = x.data.clone();
    let shape = (x.batch, x.channels, x.len);
    for i in 0..xs.len() {
        let n = central_diff(&mut xs, i, |v| {
            dot(&probe.forward_train(&Tensor::from_vec(shape.0, shape.1, shape.2, v.to_vec())).unwrap().data, &r)
        });
        worst = worst.max(rel_err(gx.data[i], n));
    }
    worst.max(check_params(
        &mut block,
        |b| b.params_mut(),
        |b| dot(&b.forward_train(&x).unwrap().data, &r),
        &analytic,
    ))
}

#[test]
fn residual_block_gradients() {
    for (cin, cout, pool) in [(2, 4, false), (3, 3, false), (2, 3, true)] {
        let spec = ConvBlockSpec { in_channels: cin, out_channels: cout, kernel: 5, padding: 2, batch_norm: true, pool, residual: true };
        let worst = check_block(spec, 10 + cin as u64);
        assert!(worst < FD_TOL, "residual {cin}->{cout} max rel err {worst}");
    }
}

#[test]
fn plain_block_gradients() {
    let spec = ConvBlockSpec { in_channels: 2, out_channels: 3, kernel: 3, padding: 1, batch_norm: true, pool: true, residual: false };
    let worst = check_block(spec, 20);
    assert!(worst < FD_TOL, "plain block max rel err {worst}");
}

fn tiny_config(residual: bool) -> NetConfig {
    let mut cfg = NetConfig::with_channels(32, &[4, 4], 16, 0.5, residual);
    for b in &mut cfg.blocks {
        b.kernel = 5;
        b.padding = 2;
    }
    cfg
}

fn check_network(residual: bool) -> f64 {
    let mut model = NetModel::new(tiny_config(residual), 3).unwrap();
    let x = Matrix::from_vec(4, 32, random_vec(4 * 32, 30)).unwrap();
    let labels = [3u8, 17, 255, 3];
    let mask_seed = 99;
    model.loss_and_grad(&x, &labels, &mut ChaCha8Rng::seed_from_u64(mask_seed)).unwrap();
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    // reseeding reproduces the dropout mask on every evaluation
    check_params(
        &mut model,
        |m| m.params_mut(),
        |m| m.loss_and_grad(&x, &labels, &mut ChaCha8Rng::seed_from_u64(mask_seed)).unwrap(),
        &analytic,
    )
}

#[test]
fn tiny_cnn_gradients() {
    let worst = check_network(false);
    assert!(worst < FD_TOL, "cnn max rel err {worst}");
}

#[test]
fn tiny_resnet_gradients() {
    let worst = check_network(true);
    assert!(worst < FD_TOL, "resnet max rel err {worst}");
}
