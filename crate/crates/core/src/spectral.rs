//! Method-of-moments estimation: whitening of the second moment and robust
//! power iteration on the whitened third moment.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::params::GmmParams;
use crate::tensor::SymTensor3;

pub const DEFAULT_RANK_TOL: f64 = 1e-8;
/// Power-iteration images with norm below this restart the trajectory.
pub const DEGENERATE_NORM: f64 = 1e-14;
const MAX_REDRAWS: usize = 16;

/// `M̂₂ = (1/N) Σ xxᵀ − I` and
/// `M̂₃ = (1/N) Σ x^{⊗3} − Σ_j (m⊗e_j⊗e_j + e_j⊗m⊗e_j + e_j⊗e_j⊗m)` with `m` the sample mean.
pub fn empirical_moments(data: ArrayView2<'_, f64>) -> Result<(Array2<f64>, SymTensor3)> {
    let (n, d) = data.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("no data".into()));
    }
    let nf = n as f64;
    let mut m2 = data.t().dot(&data) / nf;
    for j in 0..d {
        m2[[j, j]] -= 1.0;
    }
    let mean = data.mean_axis(Axis(0)).expect("nonempty");

    let mut entries = vec![0.0; d * d * d];
    for x in data.rows() {
        for i in 0..d {
            for j in i..d {
                let xij = x[i] * x[j];
                let row = &mut entries[(i * d + j) * d..(i * d + j + 1) * d];
                for m in j..d {
                    row[m] += xij * x[m];
                }
            }
        }
    }
    let mut m3 = SymTensor3::zeros(d);
    for i in 0..d {
        for j in i..d {
            for m in j..d {
                let v = entries[(i * d + j) * d + m] / nf;
                for (a, b, c) in [(i, j, m), (i, m, j), (j, i, m), (j, m, i), (m, i, j), (m, j, i)] {
                    m3.set(a, b, c, v);
                }
            }
        }
    }
    for j in 0..d {
        for i in 0..d {
            let mi = mean[i];
            m3.set(i, j, j, m3.get(i, j, j) - mi);
            m3.set(j, i, j, m3.get(j, i, j) - mi);
            m3.set(j, j, i, m3.get(j, j, i) - mi);
        }
    }
    Ok((m2, m3))
}

/// `W = U D^{-1/2}` and `B = U D^{1/2}` from the top-`k` eigenpairs of `M₂`.
#[derive(Debug, Clone)]
pub struct WhiteningPair {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
    pub u: Array2<f64>,
    /// The top `k` eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

/// Rank-`k` whitening of a symmetric matrix via symmetric eigendecomposition.
pub fn whiten(m2: ArrayView2<'_, f64>, k: usize, rank_tol: f64) -> Result<WhiteningPair> {
    let d = m2.nrows();
    if m2.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: m2.ncols(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > d {
        return Err(Error::RankDeficient {
            k,
            value: 0.0,
            rank_tol,
        });
    }
    let sym = DMatrix::from_fn(d, d, |i, j| 0.5 * (m2[[i, j]] + m2[[j, i]]));
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top: Vec<usize> = order[..k].to_vec();
    let kth = eig.eigenvalues[top[k - 1]];
    if !(kth >= rank_tol) {
        return Err(Error::RankDeficient {
            k,
            value: kth,
            rank_tol,
        });
    }
    let u = Array2::from_shape_fn((d, k), |(i, c)| eig.eigenvectors[(i, top[c])]);
    let eigenvalues: Vec<f64> = top.iter().map(|&c| eig.eigenvalues[c]).collect();
    let mut w = u.clone();
    let mut b = u.clone();
    for (c, &lam) in eigenvalues.iter().enumerate() {
        let s = lam.sqrt();
        w.column_mut(c).mapv_inplace(|x| x / s);
        b.column_mut(c).mapv_inplace(|x| x * s);
    }
    Ok(WhiteningPair {
        w,
        b,
        u,
        eigenvalues,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    pub v: Array1<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    /// Random starting vectors per deflation round.
    pub restarts: usize,
    /// Power iterations per trajectory, and again for the polishing phase.
    pub iters: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            iters: 50,
        }
    }
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let v: Array1<f64> = Array1::from_shape_fn(d, |_| StandardNormal.sample(rng));
        let n = v.dot(&v).sqrt();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// Runs `iters` normalized power steps; `None` if an image collapses.
fn power_steps(t: &SymTensor3, mut v: Array1<f64>, iters: usize) -> Option<Array1<f64>> {
    for _ in 0..iters {
        let next = t.ivv(v.view()).expect("dims checked");
        let n = next.dot(&next).sqrt();
        if !(n >= DEGENERATE_NORM) {
            return None;
        }
        v = next / n;
    }
    Some(v)
}

/// Robust tensor power method with deflation, extracting `k` eigenpairs.
/// Eigenvalues are returned nonnegative; the sign is absorbed into `v`.
pub fn robust_tensor_decompose<R: Rng + ?Sized>(
    t: &SymTensor3,
    k: usize,
    options: PowerOptions,
    rng: &mut R,
) -> Result<Vec<EigenPair>> {
    if k == 0 || options.restarts == 0 || options.iters == 0 {
        return Err(Error::InvalidArgument(
            "k, restarts and iters must all be at least 1".into(),
        ));
    }
    let d = t.dim();
    let mut current = t.clone();
    let mut pairs = Vec::with_capacity(k);
    for round in 0..k {
        let mut best: Option<(f64, Array1<f64>)> = None;
        for _ in 0..options.restarts {
            let mut found = None;
            for _ in 0..MAX_REDRAWS {
                if let Some(v) = power_steps(&current, random_unit(d, rng), options.iters) {
                    found = Some(v);
                    break;
                }
            }
            if let Some(v) = found {
                let score = current.vvv(v.view())?;
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((score, v));
                }
            }
        }
        let (_, v) = best.ok_or(Error::DecompositionFailure { round })?;
        let v = power_steps(&current, v, options.iters).ok_or(Error::DecompositionFailure { round })?;
        let mut lambda = current.vvv(v.view())?;
        let v = if lambda < 0.0 {
            lambda = -lambda;
            -v
        } else {
            v
        };
        current = current.deflate(lambda, v.view());
        pairs.push(EigenPair { lambda, v });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy)]
pub struct SpectralOptions {
    pub power: PowerOptions,
    pub rank_tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            power: PowerOptions::default(),
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

/// Moments, whitening, decomposition of `M̂₃(W,W,W)`, then
/// `π_k ∝ λ_k^{-2}` (renormalized) and `μ_k = λ_k B v_k`.
pub fn spectral_estimate<R: Rng + ?Sized>(
    data: ArrayView2<'_, f64>,
    k: usize,
    options: &SpectralOptions,
    rng: &mut R,
) -> Result<GmmParams> {
    let d = data.ncols();
    if k > d {
        return Err(Error::RankDeficient {
            k,
            value: 0.0,
            rank_tol: options.rank_tol,
        });
    }
    let (m2, m3) = empirical_moments(data)?;
    let wp = whiten(m2.view(), k, options.rank_tol)?;
    let tw = m3.transform(wp.w.view())?;
    let pairs = robust_tensor_decompose(&tw, k, options.power, rng)?;
    params_from_pairs(&pairs, wp.b.view())
}

fn params_from_pairs(pairs: &[EigenPair], b: ArrayView2<'_, f64>) -> Result<GmmParams> {
    let k = pairs.len();
    let d = b.nrows();
    let mut raw = Vec::with_capacity(k);
    let mut means = Array2::zeros((k, d));
    for (c, p) in pairs.iter().enumerate() {
        if !(p.lambda > DEGENERATE_NORM) {
            return Err(Error::DecompositionFailure { round: c });
        }
        raw.push(p.lambda.powi(-2));
        means.row_mut(c).assign(&(b.dot(&p.v) * p.lambda));
    }
    let s: f64 = raw.iter().sum();
    let weights = raw.into_iter().map(|w| w / s).collect();
    Ok(GmmParams::from_raw(weights, means, None))
}

/// Population moments `Σ π_k μ_k μ_kᵀ` and `Σ π_k μ_k^{⊗3}` of an isotropic mixture.
pub fn population_moments(params: &GmmParams) -> (Array2<f64>, SymTensor3) {
    let d = params.dim();
    let mut m2 = Array2::zeros((d, d));
    let mut m3 = SymTensor3::zeros(d);
    for (k, &pi) in params.weights().iter().enumerate() {
        let mu: ArrayView1<'_, f64> = params.mean(k);
        for i in 0..d {
            for j in 0..d {
                m2[[i, j]] += pi * mu[i] * mu[j];
            }
        }
        m3.add_rank_one(pi, mu);
    }
    (m2, m3)
}
