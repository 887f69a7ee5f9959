//! Synthetic mixture tasks: random component count, well-spread means,
//! bounded mixing weights, random sample size, optional per-dimension scales.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::params::{GmmParams, Task};

/// Upper bound on whole-set redraws in [`sample_means`].
pub const MAX_MEAN_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub d: usize,
    pub k_set: Vec<usize>,
    /// Means are uniform on `[-mean_box, mean_box]^d`.
    pub mean_box: f64,
    /// Largest admissible pairwise cosine similarity between means.
    pub cos_threshold: f64,
    pub weight_range: (f64, f64),
    /// Sample sizes are uniform on `ceil(n_max/2) ..= n_max`.
    pub n_max: usize,
    pub anisotropic: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            d: 2,
            k_set: vec![2, 3, 4, 5],
            mean_box: 5.0,
            cos_threshold: 0.8,
            weight_range: (0.2, 0.8),
            n_max: 128,
            anisotropic: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.d == 0 {
            return bad("d must be at least 1");
        }
        if self.k_set.is_empty() || self.k_set.contains(&0) {
            return bad("k_set must be non-empty with entries >= 1");
        }
        if !(self.cos_threshold > 0.0 && self.cos_threshold <= 1.0) {
            return bad("cos_threshold must lie in (0, 1]");
        }
        let (lo, hi) = self.weight_range;
        if !(lo > 0.0 && hi < 1.0 && lo < hi) {
            return bad("weight_range must satisfy 0 < lo < hi < 1");
        }
        if self.n_max < 2 {
            return bad("n_max must be at least 2");
        }
        if !(self.mean_box > 0.0) {
            return bad("mean_box must be positive");
        }
        Ok(())
    }
}

/// Draws one task: `K`, then θ, then `N`, then the data.
pub fn sample_task<R: Rng + ?Sized>(config: &SamplerConfig, rng: &mut R) -> Result<Task> {
    config.validate()?;
    let k = config.k_set[rng.random_range(0..config.k_set.len())];
    let truth = sample_params(config.d, k, config, rng)?;
    let n = rng.random_range(config.n_max.div_ceil(2)..=config.n_max);
    let (data, labels) = sample_gmm_data(&truth, n, rng);
    Task::new(data, truth, Some(labels))
}

/// Draws θ for a fixed `k` (means, weights and, if configured, scales).
pub fn sample_params<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<GmmParams> {
    let means = sample_means(d, k, config, rng)?;
    let weights = sample_mixing(k, config, rng);
    if config.anisotropic {
        let scales = Array2::from_shape_fn((k, d), |_| softplus(rng.random_range(-1.0..=1.0)));
        GmmParams::with_scales(weights, means, scales)
    } else {
        GmmParams::new(weights, means)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `k` means uniform on the cube, redrawn as a whole set until every pair has
/// cosine similarity at most `cos_threshold`.
pub fn sample_means<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if d == 0 || k == 0 {
        return Err(Error::InvalidArgument("sample_means needs d, k >= 1".into()));
    }
    let b = config.mean_box;
    for _ in 0..MAX_MEAN_ATTEMPTS {
        let means = Array2::from_shape_fn((k, d), |_| rng.random_range(-b..=b));
        if max_pairwise_cosine(&means) <= config.cos_threshold {
            return Ok(means);
        }
    }
    Err(Error::SamplingExhausted {
        attempts: MAX_MEAN_ATTEMPTS,
    })
}

/// Largest cosine similarity over distinct rows; `-inf` for a single row.
pub fn max_pairwise_cosine(means: &Array2<f64>) -> f64 {
    let k = means.nrows();
    let norms: Vec<f64> = means.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..k {
        for j in (i + 1)..k {
            let c = means.row(i).dot(&means.row(j)) / (norms[i] * norms[j]);
            // a zero vector has undefined direction; treat it as colliding
            let c = if c.is_nan() { 1.0 } else { c };
            worst = worst.max(c);
        }
    }
    worst
}

/// `k` draws uniform on `weight_range`, normalized to sum to one.
pub fn sample_mixing<R: Rng + ?Sized>(k: usize, config: &SamplerConfig, rng: &mut R) -> Vec<f64> {
    let (lo, hi) = config.weight_range;
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(lo..=hi)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// Shifts every mean by `sigma_p · ε_k`, `ε_k ~ N(0, I)`.
pub fn perturb_means<R: Rng + ?Sized>(
    params: &GmmParams,
    sigma_p: f64,
    rng: &mut R,
) -> Result<GmmParams> {
    if !(sigma_p >= 0.0) {
        return Err(Error::InvalidArgument("sigma_p must be >= 0".into()));
    }
    if sigma_p == 0.0 {
        return Ok(params.clone());
    }
    let mut means = params.means().clone();
    for m in means.iter_mut() {
        let e: f64 = StandardNormal.sample(rng);
        *m += sigma_p * e;
    }
    Ok(params.with_means(means))
}

/// Draws `n` labelled samples `X_i = μ_{y_i} + σ_{y_i} ⊙ Z_i`.
pub fn sample_gmm_data<R: Rng + ?Sized>(
    params: &GmmParams,
    n: usize,
    rng: &mut R,
) -> (Array2<f64>, Vec<usize>) {
    let d = params.dim();
    let k = params.k();
    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for &w in params.weights() {
        acc += w;
        cumulative.push(acc);
    }
    let mut data = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let y = cumulative.iter().position(|&c| u < c).unwrap_or(k - 1);
        labels.push(y);
        let mu = params.mean(y);
        let mut row = data.row_mut(i);
        for r in 0..d {
            let z: f64 = StandardNormal.sample(rng);
            let s = params.scales().map_or(1.0, |s| s[[y, r]]);
            row[r] = mu[r] + s * z;
        }
    }
    (data, labels)
}

/// Smallest pairwise distance between means (`+inf` for one component).
pub fn min_separation(means: &Array2<f64>) -> f64 {
    let k = means.nrows();
    let mut best = f64::INFINITY;
    for i in 0..k {
        for j in (i + 1)..k {
            let diff: Array1<f64> = &means.row(i) - &means.row(j);
            best = best.min(diff.dot(&diff).sqrt());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::validate_params;
    use crate::rng::task_rng;
    use ndarray::array;

    #[test]
    fn two_component_task_follows_setup() {
        let cfg = SamplerConfig {
            k_set: vec![2],
            ..Default::default()
        };
        let mut rng = task_rng(42, 0);
        let t = sample_task(&cfg, &mut rng).unwrap();
        assert_eq!(t.k, 2);
        assert!((64..=128).contains(&t.n()));
        assert!((t.truth.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(validate_params(&t.truth).is_empty());
    }

    #[test]
    fn single_component_skips_filter() {
        let cfg = SamplerConfig {
            k_set: vec![1],
            cos_threshold: 1e-9,
            ..Default::default()
        };
        let t = sample_task(&cfg, &mut task_rng(1, 0)).unwrap();
        assert_eq!(t.k, 1);
        assert_eq!(t.truth.weights(), &[1.0]);
    }

    #[test]
    fn filter_holds_and_accepts() {
        let cfg = SamplerConfig {
            d: 8,
            ..Default::default()
        };
        let mut rng = task_rng(3, 0);
        for _ in 0..1000 {
            let m = sample_means(8, 5, &cfg, &mut rng).unwrap();
            assert!(max_pairwise_cosine(&m) <= 0.8);
        }
        let m = sample_means(2, 2, &SamplerConfig::default(), &mut rng).unwrap();
        assert!(max_pairwise_cosine(&m) <= 0.8);
    }

    #[test]
    fn infeasible_threshold_is_exhausted() {
        // in 1-D two of three means always share a sign, so cosine = 1
        let cfg = SamplerConfig {
            d: 1,
            cos_threshold: 1e-6,
            ..Default::default()
        };
        let r = sample_means(1, 3, &cfg, &mut task_rng(0, 0));
        assert!(matches!(r, Err(Error::SamplingExhausted { .. })));
    }

    #[test]
    fn mixing_bounds() {
        let cfg = SamplerConfig::default();
        let mut rng = task_rng(9, 0);
        assert_eq!(sample_mixing(1, &cfg, &mut rng), vec![1.0]);
        for k in 2..=5 {
            let floor = 0.2 / (0.2 + 0.8 * (k as f64 - 1.0));
            for _ in 0..2000 {
                let w = sample_mixing(k, &cfg, &mut rng);
                assert!(w.iter().all(|&x| x >= floor - 1e-15));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perturbation_statistics() {
        let p = GmmParams::new(vec![0.5, 0.5], Array2::zeros((2, 8))).unwrap();
        let mut rng = task_rng(5, 0);
        assert_eq!(perturb_means(&p, 0.0, &mut rng).unwrap(), p);
        let mut acc = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let q = perturb_means(&p, 1.0, &mut rng).unwrap();
            assert_eq!(q.weights(), p.weights());
            acc += q.mean(0).dot(&q.mean(0));
        }
        let mean_sq = acc / draws as f64;
        assert!((mean_sq - 8.0).abs() < 0.05 * 8.0, "{mean_sq}");
        assert!(perturb_means(&p, -1.0, &mut rng).is_err());
    }

    #[test]
    fn data_moments() {
        let mut rng = task_rng(17, 0);
        let d = 3;
        let n = 100_000;
        let p = GmmParams::new(vec![1.0], Array2::zeros((1, d))).unwrap();
        let (x, _) = sample_gmm_data(&p, n, &mut rng);
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let bound = 3.0 * (d as f64).sqrt() / (n as f64).sqrt();
        assert!(mean.dot(&mean).sqrt() <= bound);

        let p = GmmParams::from_raw(vec![1.0, 0.0], array![[0.0], [5.0]], None);
        let (_, labels) = sample_gmm_data(&p, 1000, &mut rng);
        assert!(labels.iter().all(|&l| l == 0));

        let p = GmmParams::with_scales(vec![1.0], array![[0.0, 0.0]], array![[2.0, 0.5]]).unwrap();
        let (x, _) = sample_gmm_data(&p, n, &mut rng);
        let var = x.var_axis(ndarray::Axis(0), 0.0);
        assert!((var[0] - 4.0).abs() < 0.2);
        assert!((var[1] - 0.25).abs() < 0.0125);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let cfg = SamplerConfig {
            d: 4,
            anisotropic: true,
            ..Default::default()
        };
        let a = sample_task(&cfg, &mut task_rng(99, 7)).unwrap();
        let b = sample_task(&cfg, &mut task_rng(99, 7)).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.truth, b.truth);
        assert!(validate_params(&a.truth).is_empty());
    }
}
