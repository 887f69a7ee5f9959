use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::constructions::{
    build_em_tf_weights, build_tensor_power_tf, max_param_deviation, max_relative_deviation, run_tf_em_with,
    run_tf_tensor_power_with, EmTfConfig, PowerMode,
};
use crate::em::{oracle_perturbed_init, run_em, Covariance, EmInit, EmOptions};
use crate::error::Result;
use crate::params::GmmParams;
use crate::rng::{stream_id, task_rng, TaskRng};
use crate::sampler::{sample_gmm_data, sample_params, SamplerConfig};
use crate::tensor::SymTensor3;
use crate::transformer::TfWeights;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub delta: f64,
    /// EM iterations unrolled by the EM construction.
    pub layers: usize,
    /// Capacity of the shared EM weights and of the tensor adaptation check.
    pub d0: usize,
    pub k0: usize,
    pub tensor_d0: usize,
    pub tensor_layers: usize,
    pub tensor_trials: usize,
    pub n: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            delta: 1e-4,
            layers: 10,
            d0: 4,
            k0: 4,
            tensor_d0: 8,
            tensor_layers: 5,
            tensor_trials: 100,
            n: 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// `0` when every check passed, `2` otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            2
        }
    }
}

fn check(name: &str, measured: f64, threshold: f64, detail: String) -> Check {
    Check {
        name: name.into(),
        passed: measured <= threshold,
        measured,
        threshold,
        detail,
    }
}

/// A random symmetric tensor with entries of order one.
pub fn random_symmetric_tensor(d: usize, rng: &mut TaskRng) -> SymTensor3 {
    let raw = SymTensor3::from_fn(d, |_, _, _| rng.random_range(-1.0..1.0));
    SymTensor3::from_fn(d, |i, j, m| {
        (raw.get(i, j, m) + raw.get(i, m, j) + raw.get(j, i, m) + raw.get(j, m, i) + raw.get(m, i, j) + raw.get(m, j, i))
            / 6.0
    })
}

fn power_chain(t: &SymTensor3, v0: &Array1<f64>, steps: usize) -> Vec<Array1<f64>> {
    let mut v = v0.clone();
    (0..steps)
        .map(|_| {
            v = t.ivv(v.view()).expect("matching dims");
            v.clone()
        })
        .collect()
}

fn tensor_deviation(weights: &TfWeights, d0: usize, dims: &[usize], trials: usize, steps: usize, rng: &mut TaskRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let d = dims[t % dims.len()];
        let tensor = random_symmetric_tensor(d, rng);
        let v0: Array1<f64> = Array1::from_shape_fn(d, |_| StandardNormal.sample(rng));
        let v0 = &v0 / v0.dot(&v0).sqrt();
        let got = run_tf_tensor_power_with(weights, d0, &tensor, &v0, PowerMode::Plain)?;
        worst = worst.max(max_relative_deviation(&got, &power_chain(&tensor, &v0, steps)));
    }
    Ok(worst)
}

/// A task with means drawn by the sampler and an initialization inside the
/// contraction ball around them.
pub fn em_tracking_task(d: usize, k: usize, n: usize, seed: u64) -> Result<(Array2<f64>, GmmParams, GmmParams)> {
    let mut rng = task_rng(seed, stream_id(&[d as u64, k as u64, n as u64]));
    let cfg = SamplerConfig {
        d,
        k_set: vec![k],
        ..Default::default()
    };
    let truth = sample_params(d, k, &cfg, &mut rng)?;
    let (x, _) = sample_gmm_data(&truth, n, &mut rng);
    let init = oracle_perturbed_init(&truth, &mut rng);
    Ok((x, truth, init))
}

/// Largest per-iteration deviation between the transformer's snapshots and
/// reference EM started from the same point, over `layers` iterations.
pub fn em_tracking_deviation(
    weights: &TfWeights,
    cfg: &EmTfConfig,
    data: &Array2<f64>,
    init: &GmmParams,
) -> Result<Vec<f64>> {
    let run = run_tf_em_with(weights, cfg, data.view(), init)?;
    let used = data.slice(ndarray::s![..run.n_used, ..]);
    let opts = EmOptions {
        max_iters: cfg.layers.max(1),
        tol: f64::MIN_POSITIVE,
        restarts: 0,
        covariance: Covariance::Isotropic,
    };
    let mut rng = task_rng(0, 0);
    let fit = run_em(used, init.k(), &EmInit::Params(init.clone()), &opts, &mut rng)?;
    Ok(run
        .snapshots
        .iter()
        .zip(&fit.trace.snapshots)
        .map(|(a, b)| max_param_deviation(a, b))
        .collect())
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Exactness of the tensor construction, EM tracking, dimension adaptation
/// of one weight set, the `δ` sweep and the zero-layer identity.
pub fn verify_constructions(cfg: &VerifyConfig) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut rng = task_rng(cfg.seed, 0xC0DE);

    let dims: Vec<usize> = [2, 4, 6, 8].into_iter().filter(|&d| d <= cfg.tensor_d0).collect();
    let dims = if dims.is_empty() { vec![cfg.tensor_d0] } else { dims };
    let w = build_tensor_power_tf(cfg.tensor_d0, cfg.tensor_layers)?;
    let dev = tensor_deviation(&w, cfg.tensor_d0, &dims, cfg.tensor_trials, cfg.tensor_layers, &mut rng)?;
    checks.push(check(
        "tensor-exactness",
        dev,
        1e-9,
        format!("{} tensors, d in {dims:?}, d0 = {}, L = {}", cfg.tensor_trials, cfg.tensor_d0, cfg.tensor_layers),
    ));

    let small: Vec<usize> = [1, 2, cfg.d0].into_iter().filter(|&d| d <= cfg.d0).collect();
    let w = build_tensor_power_tf(cfg.d0, cfg.tensor_layers)?;
    let dev = tensor_deviation(&w, cfg.d0, &small, small.len() * 10, cfg.tensor_layers, &mut rng)?;
    checks.push(check(
        "tensor-adaptation",
        dev,
        1e-9,
        format!("one weight set at d0 = {}, d in {small:?}", cfg.d0),
    ));

    let exact = EmTfConfig {
        d0: 2,
        k0: 2,
        delta: cfg.delta,
        layers: cfg.layers,
        ..Default::default()
    };
    let (x, _, init) = em_tracking_task(2, 2, cfg.n, cfg.seed)?;
    let dev = em_tracking_deviation(&build_em_tf_weights(&exact)?, &exact, &x, &init)?;
    checks.push(check(
        "em-tracking",
        max_of(&dev),
        1e-2,
        format!("d = 2, K = 2, N = {}, delta = {:e}, L = {}", cfg.n, cfg.delta, cfg.layers),
    ));

    let shared = EmTfConfig {
        d0: cfg.d0,
        k0: cfg.k0,
        ..exact.clone()
    };
    let weights = build_em_tf_weights(&shared)?;
    let mut worst: f64 = 0.0;
    let mut tasks = Vec::new();
    for (d, k) in [(1, 2), (2, 2), (2, 3), (4, 4)] {
        if d > cfg.d0 || k > cfg.k0 {
            continue;
        }
        let (x, _, init) = em_tracking_task(d, k, cfg.n, cfg.seed)?;
        worst = worst.max(max_of(&em_tracking_deviation(&weights, &shared, &x, &init)?));
        tasks.push((d, k));
    }
    checks.push(check(
        "em-adaptation",
        worst,
        1e-2,
        format!("one weight set at (d0, k0) = ({}, {}), tasks {tasks:?}", cfg.d0, cfg.k0),
    ));

    let mut sweep = Vec::new();
    for delta in [1e-2, 1e-3, 1e-4] {
        let c = EmTfConfig { delta, ..exact.clone() };
        sweep.push(max_of(&em_tracking_deviation(&build_em_tf_weights(&c)?, &c, &x, &init)?));
    }
    let increases = sweep.windows(2).filter(|w| w[1] >= w[0]).count();
    checks.push(check(
        "em-delta-monotone",
        increases as f64,
        0.0,
        format!("deviation at delta = 1e-2, 1e-3, 1e-4: {sweep:?}"),
    ));

    let zero = EmTfConfig { layers: 0, ..exact };
    let run = run_tf_em_with(&build_em_tf_weights(&zero)?, &zero, x.view(), &init)?;
    checks.push(check(
        "em-zero-layers",
        max_param_deviation(&run.params, &init),
        1e-12,
        "L = 0 returns the initialization".into(),
    ));

    Ok(VerifyReport { checks })
}
