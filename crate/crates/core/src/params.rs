//! Mixture parameters, density evaluation and invariant checks.

use std::f64::consts::PI;
use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ π_k = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Parameters θ of a `K`-component Gaussian mixture in `d` dimensions.
///
/// Means are stored as a `K × d` matrix, one component per row. `scales`,
/// when present, holds per-dimension standard deviations in the same layout;
/// absent scales mean unit isotropic variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Array2<f64>,
    scales: Option<Array2<f64>>,
}

/// One violated invariant of [`GmmParams`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoComponents,
    ZeroDimension,
    WeightCount { weights: usize, components: usize },
    WeightSum { sum: f64 },
    WeightOutOfRange { component: usize, value: f64 },
    ScaleShape { rows: usize, cols: usize },
    NonpositiveScale { component: usize, dim: usize, value: f64 },
    NonFinite,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoComponents => write!(f, "no components"),
            Violation::ZeroDimension => write!(f, "zero dimension"),
            Violation::WeightCount {
                weights,
                components,
            } => write!(f, "{weights} weights for {components} components"),
            Violation::WeightSum { sum } => write!(f, "weights sum ≠ 1 (sum = {sum})"),
            Violation::WeightOutOfRange { component, value } => {
                write!(f, "weight {component} = {value} outside (0, 1]")
            }
            Violation::ScaleShape { rows, cols } => {
                write!(f, "scale matrix shape {rows}×{cols} does not match means")
            }
            Violation::NonpositiveScale {
                component,
                dim,
                value,
            } => write!(f, "nonpositive scale {value} at component {component}, dim {dim}"),
            Violation::NonFinite => write!(f, "non-finite entries"),
        }
    }
}

impl GmmParams {
    /// Builds validated isotropic parameters.
    pub fn new(weights: Vec<f64>, means: Array2<f64>) -> Result<Self> {
        Self::from_raw(weights, means, None).checked()
    }

    /// Builds validated diagonal-anisotropic parameters.
    pub fn with_scales(weights: Vec<f64>, means: Array2<f64>, scales: Array2<f64>) -> Result<Self> {
        Self::from_raw(weights, means, Some(scales)).checked()
    }

    /// Assembles parameters without validation. Estimators use this for raw
    /// outputs; call [`validate_params`] to inspect them.
    pub fn from_raw(weights: Vec<f64>, means: Array2<f64>, scales: Option<Array2<f64>>) -> Self {
        Self {
            weights,
            means,
            scales,
        }
    }

    fn checked(self) -> Result<Self> {
        let v = validate_params(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidParams(v))
        }
    }

    pub fn k(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn mean(&self, k: usize) -> ArrayView1<'_, f64> {
        self.means.row(k)
    }

    pub fn scales(&self) -> Option<&Array2<f64>> {
        self.scales.as_ref()
    }

    pub fn is_anisotropic(&self) -> bool {
        self.scales.is_some()
    }

    /// Replaces the means, keeping weights and scales.
    pub fn with_means(&self, means: Array2<f64>) -> Self {
        Self {
            weights: self.weights.clone(),
            means,
            scales: self.scales.clone(),
        }
    }

    /// Reorders components so that new component `i` is old component `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let weights = perm.iter().map(|&p| self.weights[p]).collect();
        let means = self.means.select(Axis(0), perm);
        let scales = self.scales.as_ref().map(|s| s.select(Axis(0), perm));
        Self {
            weights,
            means,
            scales,
        }
    }

    /// `log π_k + log φ(x; μ_k, σ_k)` for every component.
    pub fn component_log_densities(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let d = self.dim() as f64;
        let norm = -0.5 * d * (2.0 * PI).ln();
        (0..self.k())
            .map(|k| {
                let mu = self.means.row(k);
                let (quad, log_det) = match &self.scales {
                    None => {
                        let q: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                        (q, 0.0)
                    }
                    Some(s) => {
                        let s = s.row(k);
                        let mut q = 0.0;
                        let mut ld = 0.0;
                        for ((a, b), sd) in x.iter().zip(mu).zip(s) {
                            let z = (a - b) / sd;
                            q += z * z;
                            ld += sd.ln();
                        }
                        (q, ld)
                    }
                };
                self.weights[k].ln() + norm - log_det - 0.5 * quad
            })
            .collect()
    }
}

/// `log Σ exp(v_i)`, stabilized by the running maximum.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log p(x | θ)` for the mixture.
pub fn gmm_log_density(x: ArrayView1<'_, f64>, params: &GmmParams) -> Result<f64> {
    if x.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: x.len(),
        });
    }
    Ok(log_sum_exp(&params.component_log_densities(x)))
}

/// Lists every violated invariant; empty means valid.
pub fn validate_params(params: &GmmParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let k = params.k();
    let d = params.dim();
    if k == 0 {
        out.push(Violation::NoComponents);
    }
    if d == 0 {
        out.push(Violation::ZeroDimension);
    }
    if params.weights.len() != k {
        out.push(Violation::WeightCount {
            weights: params.weights.len(),
            components: k,
        });
    }
    let finite = params.weights.iter().all(|w| w.is_finite())
        && params.means.iter().all(|m| m.is_finite())
        && params
            .scales
            .as_ref()
            .is_none_or(|s| s.iter().all(|x| x.is_finite()));
    if !finite {
        out.push(Violation::NonFinite);
    }
    let sum: f64 = params.weights.iter().sum();
    if !params.weights.is_empty() && (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        out.push(Violation::WeightSum { sum });
    }
    for (component, &value) in params.weights.iter().enumerate() {
        if !(value > 0.0 && value <= 1.0) {
            out.push(Violation::WeightOutOfRange { component, value });
        }
    }
    if let Some(s) = &params.scales {
        if s.dim() != params.means.dim() {
            out.push(Violation::ScaleShape {
                rows: s.nrows(),
                cols: s.ncols(),
            });
        }
        for ((component, dim), &value) in s.indexed_iter() {
            if !(value > 0.0) {
                out.push(Violation::NonpositiveScale {
                    component,
                    dim,
                    value,
                });
            }
        }
    }
    out
}

/// A benchmarking unit: data drawn from `truth`, to be fit with `k` components.
#[derive(Debug, Clone)]
pub struct Task {
    pub data: Array2<f64>,
    pub truth: GmmParams,
    pub k: usize,
    /// Generating component of each row, when known.
    pub labels: Option<Vec<usize>>,
}

impl Task {
    pub fn new(data: Array2<f64>, truth: GmmParams, labels: Option<Vec<usize>>) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument("task needs at least one sample".into()));
        }
        if data.ncols() != truth.dim() {
            return Err(Error::DimensionMismatch {
                expected: truth.dim(),
                got: data.ncols(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != data.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: data.nrows(),
                    got: l.len(),
                });
            }
        }
        let k = truth.k();
        Ok(Self {
            data,
            truth,
            k,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn to_json(&self) -> TaskJson {
        TaskJson {
            d: self.dim(),
            k: self.k,
            weights: self.truth.weights().to_vec(),
            means: rows_to_vecs(self.truth.means().view()),
            scales: self.truth.scales().map(|s| rows_to_vecs(s.view())),
            data: rows_to_vecs(self.data.view()),
        }
    }
}

/// Wire form of a [`Task`]: `{d, k, weights[], means[][], scales[][]?, data[][]}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskJson {
    pub d: usize,
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<Vec<f64>>>,
    pub data: Vec<Vec<f64>>,
}

impl TaskJson {
    pub fn into_task(self) -> Result<Task> {
        let means = vecs_to_array(&self.means, self.d)?;
        let scales = self
            .scales
            .as_ref()
            .map(|s| vecs_to_array(s, self.d))
            .transpose()?;
        let truth = GmmParams::from_raw(self.weights, means, scales).checked()?;
        if truth.k() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: truth.k(),
            });
        }
        let data = vecs_to_array(&self.data, self.d)?;
        Task::new(data, truth, None)
    }
}

pub(crate) fn rows_to_vecs(m: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub(crate) fn vecs_to_array(rows: &[Vec<f64>], cols: usize) -> Result<Array2<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        if r.len() != cols {
            return Err(Error::DimensionMismatch {
                expected: cols,
                got: r.len(),
            });
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), cols), flat)
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn half_log_two_pi() -> f64 {
        0.5 * (2.0 * PI).ln()
    }

    #[test]
    fn single_standard_gaussian_at_mode() {
        let p = GmmParams::new(vec![1.0], array![[0.0]]).unwrap();
        let v = gmm_log_density(array![0.0].view(), &p).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((v + half_log_two_pi()).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pair_at_midpoint() {
        let p = GmmParams::new(vec![0.5, 0.5], array![[-1.0], [1.0]]).unwrap();
        let v = gmm_log_density(array![0.0].view(), &p).unwrap();
        assert!((v - (-half_log_two_pi() - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let means = Array2::from_shape_fn((3, 2), |_| rng.random_range(-3.0..3.0));
            let p = GmmParams::new(w.clone(), means.clone()).unwrap();
            let x: Array1<f64> = Array1::from_shape_fn(2, |_| rng.random_range(-4.0..4.0));
            // brute force: Σ π_k (2π)^{-d/2} exp(-|x-μ|²/2)
            let mut direct = 0.0;
            for k in 0..3 {
                let q: f64 = (0..2).map(|r| (x[r] - means[[k, r]]).powi(2)).sum();
                direct += w[k] * (-0.5 * q).exp() / (2.0 * PI);
            }
            let v = gmm_log_density(x.view(), &p).unwrap().exp();
            assert!((v - direct).abs() < 1e-12, "{v} vs {direct}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = GmmParams::new(vec![1.0], array![[0.0, 0.0]]).unwrap();
        assert!(matches!(
            gmm_log_density(array![0.0].view(), &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn anisotropic_density_matches_product_form() {
        let p = GmmParams::with_scales(vec![1.0], array![[1.0, -1.0]], array![[2.0, 0.5]]).unwrap();
        let x = array![0.0, 0.0];
        let expected = -(2.0 * PI).ln() - (2.0f64).ln() - (0.5f64).ln() - 0.5 * (0.25 + 4.0);
        assert!((gmm_log_density(x.view(), &p).unwrap() - expected).abs() < 1e-13);
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 1..=5 {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..0.8)).collect();
            let s: f64 = raw.iter().sum();
            let w = raw.iter().map(|x| x / s).collect();
            let means = Array2::from_shape_fn((k, 1), |_| rng.random_range(-5.0..5.0));
            let p = GmmParams::new(w, means).unwrap();
            // trapezoid on [-15, 15]
            let n = 30_000;
            let h = 30.0 / n as f64;
            let mut total = 0.0;
            for i in 0..=n {
                let x = -15.0 + i as f64 * h;
                let f = gmm_log_density(array![x].view(), &p).unwrap().exp();
                total += if i == 0 || i == n { 0.5 * f } else { f };
            }
            assert!((total * h - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn validation_reports_violations() {
        let ok = GmmParams::from_raw(vec![0.5, 0.5], array![[0.0], [1.0]], None);
        assert!(validate_params(&ok).is_empty());

        let bad = GmmParams::from_raw(vec![0.6, 0.6], array![[0.0], [1.0]], None);
        let v = validate_params(&bad);
        assert!(v.iter().any(|x| matches!(x, Violation::WeightSum { .. })));
        assert!(v[0].to_string().contains("weights sum ≠ 1"));

        let zero_scale = GmmParams::from_raw(
            vec![0.5, 0.5],
            array![[0.0], [1.0]],
            Some(array![[1.0], [0.0]]),
        );
        let v = validate_params(&zero_scale);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().contains("nonpositive scale"));
    }

    #[test]
    fn task_json_round_trip() {
        let truth = GmmParams::new(vec![0.25, 0.75], array![[0.0, 1.0], [2.0, 3.0]]).unwrap();
        let task = Task::new(array![[1.0, 2.0], [3.0, 4.0]], truth, None).unwrap();
        let s = serde_json::to_string(&task.to_json()).unwrap();
        assert!(!s.contains("scales"));
        let back: TaskJson = serde_json::from_str(&s).unwrap();
        let t2 = back.into_task().unwrap();
        assert_eq!(t2.data, task.data);
        assert_eq!(t2.truth, task.truth);
    }

    proptest::proptest! {
        #[test]
        fn density_invariant_under_component_permutation(
            seed in 0u64..10_000,
            shift in 0usize..4,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 4;
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..0.8)).collect();
            let s: f64 = raw.iter().sum();
            let w = raw.iter().map(|x| x / s).collect();
            let means = Array2::from_shape_fn((k, 3), |_| rng.random_range(-5.0..5.0));
            let scales = Array2::from_shape_fn((k, 3), |_| rng.random_range(0.3..2.0));
            let p = GmmParams::with_scales(w, means, scales).unwrap();
            let perm: Vec<usize> = (0..k).map(|i| (i + shift) % k).collect();
            let q = p.permuted(&perm);
            let x = Array1::from_shape_fn(3, |_| rng.random_range(-6.0..6.0));
            let a = gmm_log_density(x.view(), &p).unwrap();
            let b = gmm_log_density(x.view(), &q).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
