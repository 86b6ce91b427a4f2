//! Throughput check for the conv/matmul kernels at the shapes the trainers
//! actually use. Prints per-frame forward+backward times for both frame
//! sizes so batch knobs can be chosen against a wall-clock budget.

use std::time::Instant;

use oslab_core::tensor::Graph;

fn bench_cnn(label: &str, c_in: usize, hw: usize, strides: &[usize], batch: usize, reps: usize) {
    let plan = [16usize, 32, 32, 64, 64];
    let mut params: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    let mut c_prev = c_in;
    for (i, &c_out) in plan.iter().enumerate() {
        let w = vec![0.01; c_out * c_prev * 9];
        params.push((w, vec![c_out, c_prev, 3, 3]));
        params.push((vec![0.0; c_out], vec![c_out]));
        let _ = strides[i];
        c_prev = c_out;
    }
    let lin_w = vec![0.01; 64 * 64];
    let lin_b = vec![0.0; 64];

    let image = vec![0.5; batch * c_in * hw * hw];

    let t0 = Instant::now();
    for _ in 0..reps {
        let mut g = Graph::new();
        let x = g.leaf(image.clone(), vec![batch, c_in, hw, hw], false).unwrap();
        let mut h = x;
        for (i, _) in plan.iter().enumerate() {
            let w = g
                .leaf(params[2 * i].0.clone(), params[2 * i].1.clone(), true)
                .unwrap();
            let b = g
                .leaf(params[2 * i + 1].0.clone(), params[2 * i + 1].1.clone(), true)
                .unwrap();
            h = g.conv2d(h, w, b, strides[i], 1).unwrap();
            h = g.relu(h);
        }
        let pooled = g.global_avg_pool(h).unwrap();
        let lw = g.leaf(lin_w.clone(), vec![64, 64], true).unwrap();
        let lb = g.leaf(lin_b.clone(), vec![64], true).unwrap();
        let z = g.matmul(pooled, lw).unwrap();
        let z = g.add_bias(z, lb).unwrap();
        let sq = g.mul(z, z).unwrap();
        let loss = g.mean_all(sq);
        g.backward(loss);
        std::hint::black_box(g.scalar(loss));
    }
    let dt = t0.elapsed().as_secs_f64();
    let frames = (batch * reps) as f64;
    println!(
        "{label}: {:.2} ms/frame fwd+bwd ({} frames in {:.2} s)",
        1e3 * dt / frames,
        batch * reps,
        dt
    );
}

fn main() {
    // Raw gemm throughput reference point.
    let (m, k, n) = (64, 576, 1024);
    let a = vec![0.3; m * k];
    let b = vec![0.7; k * n];
    let mut c = vec![0.0; m * n];
    let reps = 200;
    let t0 = Instant::now();
    for _ in 0..reps {
        c.fill(0.0);
        oslab_core::tensor::kernels::matmul_nn(&a, &b, &mut c, m, k, n);
        std::hint::black_box(&c);
    }
    let dt = t0.elapsed().as_secs_f64();
    let gflops = (2.0 * (m * k * n) as f64 * reps as f64) / dt / 1e9;
    println!("matmul_nn {m}x{k}x{n}: {gflops:.2} GFLOP/s");

    let t0 = Instant::now();
    for _ in 0..reps {
        c.fill(0.0);
        oslab_core::tensor::kernels::matmul_nt(&a, &b, &mut c, m, k, n);
        std::hint::black_box(&c);
    }
    let dt = t0.elapsed().as_secs_f64();
    let gflops = (2.0 * (m * k * n) as f64 * reps as f64) / dt / 1e9;
    println!("matmul_nt {m}x{k}x{n}: {gflops:.2} GFLOP/s");

    bench_cnn("64x64x6 stack, strides 2,2,2,2,1", 6, 64, &[2, 2, 2, 2, 1], 16, 4);
    bench_cnn("16x16x3 stack, strides 2,2,1,1,1", 3, 16, &[2, 2, 1, 1, 1], 64, 8);
}
