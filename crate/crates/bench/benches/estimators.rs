use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;

use tfgmm_core::em::{e_step, m_step, run_em, Covariance, EmInit, EmOptions};
use tfgmm_core::metrics::solve_assignment;
use tfgmm_core::rng::task_rng;
use tfgmm_core::sampler::{sample_gmm_data, sample_params, SamplerConfig};
use tfgmm_core::spectral::{empirical_moments, spectral_estimate, SpectralOptions};
use tfgmm_core::GmmParams;

fn task(d: usize, k: usize, n: usize) -> (GmmParams, Array2<f64>) {
    let mut rng = task_rng(1, (d * 100 + k) as u64);
    let cfg = SamplerConfig {
        d,
        k_set: vec![k],
        ..Default::default()
    };
    let truth = sample_params(d, k, &cfg, &mut rng).unwrap();
    let (x, _) = sample_gmm_data(&truth, n, &mut rng);
    (truth, x)
}

fn em(c: &mut Criterion) {
    let mut group = c.benchmark_group("em");
    for &(d, k) in &[(2, 2), (8, 4), (32, 5)] {
        let (truth, x) = task(d, k, 1024);
        group.bench_with_input(BenchmarkId::new("iteration", format!("d{d}_k{k}")), &x, |b, x| {
            b.iter(|| {
                let resp = e_step(x.view(), &truth).unwrap();
                m_step(x.view(), &resp, Covariance::Isotropic).unwrap()
            })
        });
    }
    let (_, x) = task(8, 4, 128);
    let opts = EmOptions {
        restarts: 1,
        ..Default::default()
    };
    group.bench_function("fit_kmeanspp_d8_k4_n128", |b| {
        b.iter(|| run_em(x.view(), 4, &EmInit::KMeansPlusPlus, &opts, &mut task_rng(0, 0)))
    });
    group.finish();
}

fn spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral");
    for &d in &[8usize, 32] {
        let (_, x) = task(d, 3, 4096);
        group.bench_with_input(BenchmarkId::new("moments", d), &x, |b, x| {
            b.iter(|| empirical_moments(black_box(x.view())).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("estimate", d), &x, |b, x| {
            b.iter(|| spectral_estimate(x.view(), 3, &SpectralOptions::default(), &mut task_rng(0, 0)).unwrap())
        });
    }
    group.finish();
}

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("assignment");
    for &k in &[5usize, 20, 100] {
        let cost = Array2::from_shape_fn((k, k), |(i, j)| ((i * 7919 + j * 104_729) % 1000) as f64);
        group.bench_with_input(BenchmarkId::from_parameter(k), &cost, |b, cost| {
            b.iter(|| solve_assignment(black_box(cost.view())).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, em, spectral, assignment);
criterion_main!(benches);
