//! Expectation-maximization for isotropic and diagonal Gaussian mixtures.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::params::{log_sum_exp, GmmParams};

/// Column mass below which a component is considered collapsed.
pub const DEGENERATE_MASS: f64 = 1e-12;
/// Lower bound on fitted per-dimension variances.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Posterior membership probabilities, `N × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities(pub Array2<f64>);

impl Responsibilities {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    /// Hard assignment of each row.
    pub fn argmax(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Covariance {
    /// Unit variance in every direction; only weights and means are fitted.
    #[default]
    Isotropic,
    /// Per-component, per-dimension variances are fitted as well.
    Diagonal,
}

/// E-step: `w_ik ∝ π_k φ(x_i; μ_k, σ_k)`, normalized in the log domain.
pub fn e_step(data: ArrayView2<'_, f64>, params: &GmmParams) -> Result<Responsibilities> {
    if data.ncols() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: data.ncols(),
        });
    }
    let k = params.k();
    let mut resp = Array2::zeros((data.nrows(), k));
    for (i, x) in data.rows().into_iter().enumerate() {
        let logs = params.component_log_densities(x);
        let lse = log_sum_exp(&logs);
        for (j, l) in logs.into_iter().enumerate() {
            resp[[i, j]] = (l - lse).exp();
        }
    }
    Ok(Responsibilities(resp))
}

/// M-step: weighted proportions and means (and variances for `Diagonal`).
pub fn m_step(
    data: ArrayView2<'_, f64>,
    resp: &Responsibilities,
    covariance: Covariance,
) -> Result<GmmParams> {
    let n = data.nrows();
    if resp.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: resp.n(),
        });
    }
    let w = &resp.0;
    let mass = w.sum_axis(Axis(0));
    if let Some(component) = mass.iter().position(|&m| !(m >= DEGENERATE_MASS)) {
        return Err(Error::DegenerateComponent { component });
    }
    let weights: Vec<f64> = mass.iter().map(|m| m / n as f64).collect();
    // K × d: rows are Σ_i w_ik x_i / Σ_i w_ik
    let mut means = w.t().dot(&data);
    for (mut row, m) in means.rows_mut().into_iter().zip(mass.iter()) {
        row /= *m;
    }
    let scales = match covariance {
        Covariance::Isotropic => None,
        Covariance::Diagonal => {
            let (k, d) = means.dim();
            let mut s = Array2::zeros((k, d));
            for j in 0..k {
                for r in 0..d {
                    let mu = means[[j, r]];
                    let mut acc = 0.0;
                    for i in 0..n {
                        let z = data[[i, r]] - mu;
                        acc += w[[i, j]] * z * z;
                    }
                    s[[j, r]] = (acc / mass[j]).max(VARIANCE_FLOOR).sqrt();
                }
            }
            Some(s)
        }
    };
    Ok(GmmParams::from_raw(weights, means, scales))
}

/// Average log-likelihood `(1/N) Σ_i log p(x_i | θ)`.
pub fn mean_log_likelihood(data: ArrayView2<'_, f64>, params: &GmmParams) -> f64 {
    let total: f64 = data
        .rows()
        .into_iter()
        .map(|x| log_sum_exp(&params.component_log_densities(x)))
        .sum();
    total / data.nrows() as f64
}

/// `max_k max(‖μ_k − μ'_k‖, |π_k − π'_k| / π'_k)` between matched components.
pub fn parameter_distance(a: &GmmParams, reference: &GmmParams) -> f64 {
    (0..a.k())
        .map(|k| {
            let diff: Array1<f64> = &a.mean(k) - &reference.mean(k);
            let dm = diff.dot(&diff).sqrt();
            let pr = reference.weights()[k];
            let dw = (a.weights()[k] - pr).abs() / pr;
            dm.max(dw)
        })
        .fold(0.0, f64::max)
}

/// How initial parameters are obtained.
#[derive(Debug, Clone)]
pub enum EmInit {
    Params(GmmParams),
    /// k-means++ seeding followed by one hard-assignment M-step.
    KMeansPlusPlus,
    /// `K` distinct data points as means, uniform weights.
    Random,
    /// Ground truth perturbed inside the contraction ball: each mean moves by
    /// a uniform draw from the ball of radius `R_min / 16`, each weight by a
    /// factor in `[0.8, 1.2]` before renormalization.
    OraclePerturbed(GmmParams),
}

#[derive(Debug, Clone)]
pub struct EmOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Extra attempts with a redrawn initialization after a degenerate component.
    pub restarts: usize,
    pub covariance: Covariance,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            restarts: 3,
            covariance: Covariance::Isotropic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct EmTrace {
    /// Parameters after each iteration; `snapshots[0]` is the initialization.
    pub snapshots: Vec<GmmParams>,
    /// Mean log-likelihood of each snapshot.
    pub log_likelihood: Vec<f64>,
    pub termination: Termination,
    /// Initializations discarded because a component collapsed.
    pub restarts_used: usize,
}

impl EmTrace {
    pub fn iterations(&self) -> usize {
        self.snapshots.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: GmmParams,
    pub trace: EmTrace,
}

/// Runs EM until the largest parameter change drops below `tol` or
/// `max_iters` is reached.
pub fn run_em<R: Rng + ?Sized>(
    data: ArrayView2<'_, f64>,
    k: usize,
    init: &EmInit,
    options: &EmOptions,
    rng: &mut R,
) -> Result<EmFit> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if options.max_iters == 0 || !(options.tol > 0.0) {
        return Err(Error::InvalidArgument("need max_iters >= 1 and tol > 0".into()));
    }
    if data.nrows() == 0 {
        return Err(Error::InvalidArgument("no data".into()));
    }
    let mut last_err = None;
    for attempt in 0..=options.restarts {
        let start = initialize(data, k, init, attempt, options.covariance, rng)?;
        match iterate(data, start, options) {
            Ok(mut fit) => {
                fit.trace.restarts_used = attempt;
                return Ok(fit);
            }
            Err(e @ Error::DegenerateComponent { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn iterate(data: ArrayView2<'_, f64>, start: GmmParams, options: &EmOptions) -> Result<EmFit> {
    let mut snapshots = vec![start.clone()];
    let mut log_likelihood = vec![mean_log_likelihood(data, &start)];
    let mut current = start;
    let mut termination = Termination::MaxIters;
    for _ in 0..options.max_iters {
        let resp = e_step(data, &current)?;
        let next = m_step(data, &resp, options.covariance)?;
        let change = parameter_distance(&next, &current);
        log_likelihood.push(mean_log_likelihood(data, &next));
        snapshots.push(next.clone());
        current = next;
        if change < options.tol {
            termination = Termination::Converged;
            break;
        }
    }
    Ok(EmFit {
        params: current,
        trace: EmTrace {
            snapshots,
            log_likelihood,
            termination,
            restarts_used: 0,
        },
    })
}

fn initialize<R: Rng + ?Sized>(
    data: ArrayView2<'_, f64>,
    k: usize,
    init: &EmInit,
    attempt: usize,
    covariance: Covariance,
    rng: &mut R,
) -> Result<GmmParams> {
    let p = match init {
        EmInit::Params(p) => {
            if p.k() != k || p.dim() != data.ncols() {
                return Err(Error::InvalidArgument(format!(
                    "init has K={}, d={}; expected K={k}, d={}",
                    p.k(),
                    p.dim(),
                    data.ncols()
                )));
            }
            if attempt == 0 {
                p.clone()
            } else {
                jitter_means(p, 0.1 * attempt as f64, rng)
            }
        }
        EmInit::KMeansPlusPlus => kmeanspp_init(data, k, rng),
        EmInit::Random => random_init(data, k, rng),
        EmInit::OraclePerturbed(truth) => oracle_perturbed_init(truth, rng),
    };
    Ok(match covariance {
        Covariance::Diagonal if p.scales().is_none() => {
            let ones = Array2::ones(p.means().dim());
            GmmParams::from_raw(p.weights().to_vec(), p.means().clone(), Some(ones))
        }
        _ => p,
    })
}

fn jitter_means<R: Rng + ?Sized>(p: &GmmParams, sd: f64, rng: &mut R) -> GmmParams {
    let mut means = p.means().clone();
    for m in means.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *m += sd * z;
    }
    p.with_means(means)
}

/// k-means++ centers, then one hard-assignment M-step. Empty clusters keep
/// their center and are given a count of one.
pub fn kmeanspp_init<R: Rng + ?Sized>(data: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> GmmParams {
    let n = data.nrows();
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut dist2: Vec<f64> = (0..n).map(|i| sq_dist(data, i, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for (i, d) in dist2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data, i, next));
        }
    }
    let d = data.ncols();
    let mut sums = Array2::<f64>::zeros((k, d));
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, &c) in centers.iter().enumerate() {
            let dd = sq_dist(data, i, c);
            if dd < best_d {
                best_d = dd;
                best = j;
            }
        }
        counts[best] += 1;
        let mut row = sums.row_mut(best);
        row += &data.row(i);
    }
    let mut means = Array2::zeros((k, d));
    for j in 0..k {
        if counts[j] == 0 {
            means.row_mut(j).assign(&data.row(centers[j]));
            counts[j] = 1;
        } else {
            let row = &sums.row(j) / counts[j] as f64;
            means.row_mut(j).assign(&row);
        }
    }
    let total: usize = counts.iter().sum();
    let weights = counts.iter().map(|&c| c as f64 / total as f64).collect();
    GmmParams::from_raw(weights, means, None)
}

/// `K` distinct data points chosen uniformly, equal weights.
pub fn random_init<R: Rng + ?Sized>(data: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> GmmParams {
    let n = data.nrows();
    let idx: Vec<usize> = if k <= n {
        rand::seq::index::sample(rng, n, k).into_vec()
    } else {
        (0..k).map(|_| rng.random_range(0..n)).collect()
    };
    let means = data.select(Axis(0), &idx);
    GmmParams::from_raw(vec![1.0 / k as f64; k], means, None)
}

/// Truth perturbed inside the `R_min / 16` ball (means) and by a factor in
/// `[0.8, 1.2]` (weights, renormalized). Keeps `|π⁰ − π*| ≤ π*/2`.
pub fn oracle_perturbed_init<R: Rng + ?Sized>(truth: &GmmParams, rng: &mut R) -> GmmParams {
    let radius = crate::sampler::min_separation(truth.means()) / 16.0;
    let radius = if radius.is_finite() { radius } else { 1.0 };
    let d = truth.dim();
    let mut means = truth.means().clone();
    for mut row in means.rows_mut() {
        let dir: Array1<f64> = Array1::from_shape_fn(d, |_| StandardNormal.sample(rng));
        let norm = dir.dot(&dir).sqrt().max(f64::MIN_POSITIVE);
        let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
        row.scaled_add(r / norm, &dir);
    }
    let raw: Vec<f64> = truth
        .weights()
        .iter()
        .map(|w| w * rng.random_range(0.8..=1.2))
        .collect();
    let s: f64 = raw.iter().sum();
    let weights = raw.into_iter().map(|w| w / s).collect();
    GmmParams::from_raw(weights, means, truth.scales().cloned())
}

fn sq_dist(data: ArrayView2<'_, f64>, i: usize, j: usize) -> f64 {
    data.row(i)
        .iter()
        .zip(data.row(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}
