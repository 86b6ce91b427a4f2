//! Spectral norms of the encoder's linear maps, via power iteration on
//! AᵀA using the same im2col/gemm kernels as the forward pass.
//!
//! The product of layer operator norms bounds how far the embedding can
//! move under an input perturbation: ReLU is 1-Lipschitz and flattening is
//! an isometry, so ||e(x+δ) − e(x)|| ≤ (Πσ_l)·||δ||. Estimates converge
//! to σ from below; callers should allow a tiny relative margin.

use super::Model;
use crate::tensor::kernels::{col2im_add, im2col, matmul_nn, matmul_tn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    assert!(n > 0.0, "power iteration collapsed to zero");
    for x in v.iter_mut() {
        *x /= n;
    }
}

fn seeded_unit(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    normalize(&mut v);
    v
}

/// Largest singular value of a dense [out, in] weight matrix.
pub fn linear_operator_norm(w: &[f64], out_dim: usize, in_dim: usize, iters: usize) -> f64 {
    assert_eq!(w.len(), out_dim * in_dim);
    let mut v = seeded_unit(in_dim);
    let mut u = vec![0.0; out_dim];
    for _ in 0..iters {
        u.fill(0.0);
        matmul_nn(w, &v, &mut u, out_dim, in_dim, 1);
        v.fill(0.0);
        matmul_tn(w, &u, &mut v, in_dim, out_dim, 1);
        normalize(&mut v);
    }
    u.fill(0.0);
    matmul_nn(w, &v, &mut u, out_dim, in_dim, 1);
    norm(&u)
}

/// Largest singular value of a 3x3 convolution as a linear map on
/// [c_in, h, w] inputs (zero padding `pad`, stride `stride`).
#[allow(clippy::too_many_arguments)]
pub fn conv_operator_norm(
    w: &[f64],
    c_out: usize,
    c_in: usize,
    h: usize,
    width: usize,
    stride: usize,
    pad: usize,
    iters: usize,
) -> f64 {
    let kk = c_in * 9;
    assert_eq!(w.len(), c_out * kk);
    let oh = (h + 2 * pad - 3) / stride + 1;
    let ow = (width + 2 * pad - 3) / stride + 1;
    let p = oh * ow;

    let mut v = seeded_unit(c_in * h * width);
    let mut col = vec![0.0; kk * p];
    let mut y = vec![0.0; c_out * p];
    let mut dcol = vec![0.0; kk * p];

    let apply = |v: &[f64], col: &mut [f64], y: &mut [f64]| {
        col.fill(0.0);
        im2col(v, c_in, h, width, 3, 3, stride, pad, col);
        y.fill(0.0);
        matmul_nn(w, col, y, c_out, kk, p);
    };
    for _ in 0..iters {
        apply(&v, &mut col, &mut y);
        dcol.fill(0.0);
        matmul_tn(w, &y, &mut dcol, kk, c_out, p);
        v.fill(0.0);
        col2im_add(&dcol, c_in, h, width, 3, 3, stride, pad, &mut v);
        normalize(&mut v);
    }
    apply(&v, &mut col, &mut y);
    norm(&y)
}

/// Lipschitz bound of the frame encoder: product of the five conv norms
/// (on each layer's actual spatial dims) and the projection norm.
pub fn encoder_lipschitz(model: &Model, iters: usize) -> f64 {
    let cfg = &model.cfg;
    let mut h = cfg.image_size;
    let mut c_in = cfg.in_channels();
    let mut product = 1.0;
    for (i, stride) in cfg.strides().into_iter().enumerate() {
        let w = model.params.get(&format!("conv{}.w", i + 1));
        let c_out = w.shape[0];
        product *= conv_operator_norm(&w.data, c_out, c_in, h, h, stride, 1, iters);
        h = (h + 2 - 3) / stride + 1;
        c_in = c_out;
    }
    let proj = model.params.get("proj.w");
    product * linear_operator_norm(&proj.data, proj.shape[0], proj.shape[1], iters)
}
