//! Permutation-aligned scores for estimated mixtures.

mod assignment;

pub use assignment::{solve_assignment, Assignment};

use ndarray::{Array2, ArrayView2};

use crate::em::{e_step, mean_log_likelihood};
use crate::error::{Error, Result};
use crate::params::GmmParams;

/// Estimates below this are clamped before taking logarithms.
pub const WEIGHT_CLAMP: f64 = 1e-12;

fn check_pair(est: &GmmParams, truth: &GmmParams) -> Result<()> {
    if est.k() != truth.k() {
        return Err(Error::InvalidArgument(format!(
            "component counts differ: {} vs {}",
            est.k(),
            truth.k()
        )));
    }
    if est.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            got: est.dim(),
        });
    }
    Ok(())
}

/// Matches truth component `k` to estimate `perm[k]` by minimizing total
/// squared mean distance. Weights and scales play no part.
pub fn align(est: &GmmParams, truth: &GmmParams) -> Result<Assignment> {
    check_pair(est, truth)?;
    let k = truth.k();
    let cost = Array2::from_shape_fn((k, k), |(t, e)| {
        truth
            .mean(t)
            .iter()
            .zip(est.mean(e))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
    });
    solve_assignment(cost.view())
}

fn scale_at(p: &GmmParams, k: usize, r: usize) -> f64 {
    p.scales().map_or(1.0, |s| s[[k, r]])
}

fn aligned_terms(est: &GmmParams, truth: &GmmParams, perm: &[usize]) -> (f64, f64, Option<f64>) {
    let k = truth.k();
    let d = truth.dim() as f64;
    let mut mean_term = 0.0;
    let mut weight_term = 0.0;
    let with_scales = est.is_anisotropic() || truth.is_anisotropic();
    let mut scale_term = 0.0;
    for (t, &e) in perm.iter().enumerate() {
        let dm: f64 = truth
            .mean(t)
            .iter()
            .zip(est.mean(e))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        mean_term += dm / d;
        let dw = est.weights()[e] - truth.weights()[t];
        weight_term += dw * dw;
        if with_scales {
            let ds: f64 = (0..truth.dim())
                .map(|r| {
                    let z = scale_at(est, e, r) - scale_at(truth, t, r);
                    z * z
                })
                .sum();
            scale_term += ds / d;
        }
    }
    let kf = k as f64;
    (
        mean_term / kf,
        weight_term / kf,
        with_scales.then_some(scale_term / kf),
    )
}

/// `(1/K) Σ_k [ (1/d)‖μ̂_{σ(k)} − μ_k‖² + (π̂_{σ(k)} − π_k)² ]`, plus
/// `(1/d)‖σ̂_{σ(k)} − σ_k‖²` inside the sum when either side carries scales.
pub fn l2_error(est: &GmmParams, truth: &GmmParams) -> Result<f64> {
    let a = align(est, truth)?;
    let (m, w, s) = aligned_terms(est, truth, &a.perm);
    Ok(m + w + s.unwrap_or(0.0))
}

/// Fraction of points whose most probable component (under `est`) agrees
/// with their true label after the best relabeling.
pub fn clustering_accuracy(est: &GmmParams, data: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    if labels.len() != data.nrows() {
        return Err(Error::DimensionMismatch {
            expected: data.nrows(),
            got: labels.len(),
        });
    }
    let k = est.k();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for K = {k}"
        )));
    }
    if labels.is_empty() {
        return Ok(1.0);
    }
    let pred = e_step(data, est)?.argmax();
    let mut counts = Array2::<f64>::zeros((k, k));
    for (&t, &p) in labels.iter().zip(&pred) {
        counts[[t, p]] += 1.0;
    }
    let a = solve_assignment((-&counts).view())?;
    Ok(-a.cost / labels.len() as f64)
}

/// Average log density `(1/N) Σ_i log p(x_i | θ)`.
pub fn log_likelihood(data: ArrayView2<'_, f64>, params: &GmmParams) -> Result<f64> {
    if data.ncols() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: data.ncols(),
        });
    }
    if data.nrows() == 0 {
        return Err(Error::InvalidArgument("no data".into()));
    }
    Ok(mean_log_likelihood(data, params))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingLoss {
    /// Mean squared error of aligned means.
    pub means: f64,
    /// Cross-entropy `−Σ_k π_k log π̂_{σ(k)}`.
    pub weights: f64,
    /// Mean squared error of aligned scales, when either side is anisotropic.
    pub scales: Option<f64>,
    /// Whether some aligned estimate was clamped to [`WEIGHT_CLAMP`].
    pub clamped: bool,
}

impl TrainingLoss {
    pub fn total(&self) -> f64 {
        self.means + self.weights + self.scales.unwrap_or(0.0)
    }
}

/// Regression loss on means (and scales) plus cross-entropy on weights, with
/// the same alignment as [`l2_error`].
pub fn training_loss(est: &GmmParams, truth: &GmmParams) -> Result<TrainingLoss> {
    let a = align(est, truth)?;
    let (means, _, scales) = aligned_terms(est, truth, &a.perm);
    let mut clamped = false;
    let mut ce = 0.0;
    for (t, &e) in a.perm.iter().enumerate() {
        let mut p = est.weights()[e];
        if !(p > WEIGHT_CLAMP) {
            p = WEIGHT_CLAMP;
            clamped = true;
        }
        ce -= truth.weights()[t] * p.ln();
    }
    Ok(TrainingLoss {
        means,
        weights: ce,
        scales,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::task_rng;
    use crate::sampler::sample_gmm_data;
    use ndarray::array;
    use proptest::prelude::*;

    fn three() -> GmmParams {
        GmmParams::new(vec![0.2, 0.3, 0.5], array![[0.0, 0.0], [4.0, 1.0], [-3.0, 2.0]]).unwrap()
    }

    #[test]
    fn zero_on_self_and_relabeling() {
        let t = three();
        assert_eq!(l2_error(&t, &t).unwrap(), 0.0);
        assert_eq!(l2_error(&t.permuted(&[1, 2, 0]), &t).unwrap(), 0.0);
    }

    #[test]
    fn hand_case_against_all_orderings() {
        let truth = three();
        let est = GmmParams::new(vec![0.25, 0.25, 0.5], array![[4.5, 1.0], [-3.0, 1.0], [0.5, -0.5]])
            .unwrap();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut best = (f64::INFINITY, 0.0);
        for p in perms {
            let mean_cost: f64 = (0..3)
                .map(|k| {
                    let a = truth.mean(k);
                    let b = est.mean(p[k]);
                    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
                })
                .sum();
            let value: f64 = (0..3)
                .map(|k| {
                    let a = truth.mean(k);
                    let b = est.mean(p[k]);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)) / 2.0
                        + (est.weights()[p[k]] - truth.weights()[k]).powi(2)
                })
                .sum::<f64>()
                / 3.0;
            if mean_cost < best.0 {
                best = (mean_cost, value);
            }
        }
        assert!((l2_error(&est, &truth).unwrap() - best.1).abs() < 1e-12);
        // 0 ↔ est 2, 1 ↔ est 0, 2 ↔ est 1
        assert_eq!(align(&est, &truth).unwrap().perm, vec![2, 0, 1]);
    }

    #[test]
    fn anisotropic_adds_scale_term() {
        let truth = GmmParams::with_scales(vec![1.0], array![[0.0, 0.0]], array![[1.0, 2.0]]).unwrap();
        let est = GmmParams::with_scales(vec![1.0], array![[0.0, 0.0]], array![[1.0, 1.0]]).unwrap();
        assert!((l2_error(&est, &truth).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn k_mismatch_rejected() {
        let a = GmmParams::new(vec![1.0], array![[0.0, 0.0]]).unwrap();
        assert!(l2_error(&a, &three()).is_err());
        assert!(training_loss(&a, &three()).is_err());
    }

    #[test]
    fn accuracy_near_one_when_separated() {
        let truth = GmmParams::new(vec![0.5, 0.5], array![[0.0, 0.0], [50.0, 0.0]]).unwrap();
        let mut rng = task_rng(3, 0);
        let (x, y) = sample_gmm_data(&truth, 10_000, &mut rng);
        assert!(clustering_accuracy(&truth, x.view(), &y).unwrap() >= 0.999);
        let relabeled: Vec<usize> = y.iter().map(|&l| 1 - l).collect();
        assert_eq!(
            clustering_accuracy(&truth, x.view(), &relabeled).unwrap(),
            clustering_accuracy(&truth, x.view(), &y).unwrap()
        );
    }

    #[test]
    fn accuracy_single_component() {
        let p = GmmParams::new(vec![1.0], array![[0.0]]).unwrap();
        let x = array![[1.0], [-2.0], [0.5]];
        assert_eq!(clustering_accuracy(&p, x.view(), &[0, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_at_least_chance_for_random_estimates() {
        let truth = GmmParams::new(vec![0.5, 0.5], array![[-3.0, 0.0], [3.0, 0.0]]).unwrap();
        let mut rng = task_rng(12, 0);
        let (x, y) = sample_gmm_data(&truth, 2000, &mut rng);
        let mut total = 0.0;
        let trials = 50;
        for s in 0..trials {
            let mut r = task_rng(s, 9);
            let est = GmmParams::new(
                vec![0.5, 0.5],
                Array2::from_shape_fn((2, 2), |_| rand::Rng::random_range(&mut r, -5.0..5.0)),
            )
            .unwrap();
            total += clustering_accuracy(&est, x.view(), &y).unwrap();
        }
        assert!(total / trials as f64 >= 0.5);
    }

    #[test]
    fn loglik_single_point_at_mode() {
        let p = GmmParams::new(vec![1.0], array![[2.0]]).unwrap();
        let ll = log_likelihood(array![[2.0]].view(), &p).unwrap();
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn loglik_prefers_truth() {
        let truth = three();
        let far = truth.with_means(truth.means() + 10.0);
        let mut rng = task_rng(13, 0);
        let (x, _) = sample_gmm_data(&truth, 10_000, &mut rng);
        assert!(log_likelihood(x.view(), &far).unwrap() < log_likelihood(x.view(), &truth).unwrap());
    }

    #[test]
    fn loglik_concentrates_on_negative_entropy() {
        // K = 1, d = 2: −h = −(d/2) log(2πe)
        let p = GmmParams::new(vec![1.0], array![[0.0, 0.0]]).unwrap();
        let target = -(2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        let mut rng = task_rng(14, 0);
        let spread = |n: usize, rng: &mut crate::rng::TaskRng| {
            let vals: Vec<f64> = (0..40)
                .map(|_| {
                    let (x, _) = sample_gmm_data(&p, n, rng);
                    log_likelihood(x.view(), &p).unwrap()
                })
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            (m, v)
        };
        let (m1, v1) = spread(100, &mut rng);
        let (m2, v2) = spread(10_000, &mut rng);
        assert!((m2 - target).abs() < 0.02);
        assert!((m1 - target).abs() < 0.2);
        // variance should drop by about 100x
        assert!(v2 < v1 / 30.0);
    }

    #[test]
    fn training_loss_on_truth_is_entropy() {
        let t = three();
        let l = training_loss(&t, &t).unwrap();
        let h: f64 = -t.weights().iter().map(|p| p * p.ln()).sum::<f64>();
        assert_eq!(l.means, 0.0);
        assert!((l.weights - h).abs() < 1e-15);
        assert!(!l.clamped);
    }

    #[test]
    fn training_loss_uniform_estimate() {
        let t = three();
        let est = GmmParams::from_raw(vec![1.0 / 3.0; 3], t.means().clone(), None);
        let l = training_loss(&est, &t).unwrap();
        assert!((l.weights - 3.0f64.ln()).abs() < 1e-12);
        let p = training_loss(&est.permuted(&[2, 0, 1]), &t).unwrap();
        assert_eq!(l, p);
    }

    #[test]
    fn training_loss_clamps() {
        let t = GmmParams::new(vec![0.5, 0.5], array![[0.0], [5.0]]).unwrap();
        let est = GmmParams::from_raw(vec![1.0, 0.0], array![[0.0], [5.0]], None);
        let l = training_loss(&est, &t).unwrap();
        assert!(l.clamped);
        assert!((l.weights - 0.5 * -(1e-12f64).ln()).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn l2_error_is_relabeling_invariant(seed in any::<u64>(), shift in 0usize..5) {
            let mut rng = task_rng(seed, 2);
            let k = 5;
            let mk = |rng: &mut crate::rng::TaskRng| {
                let w: Vec<f64> = (0..k).map(|_| rand::Rng::random_range(rng, 0.2..0.8)).collect();
                let s: f64 = w.iter().sum();
                GmmParams::from_raw(
                    w.into_iter().map(|x| x / s).collect(),
                    Array2::from_shape_fn((k, 3), |_| rand::Rng::random_range(rng, -5.0..5.0)),
                    None,
                )
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let perm: Vec<usize> = (0..k).map(|i| (i + shift) % k).collect();
            let base = l2_error(&a, &b).unwrap();
            prop_assert!((l2_error(&a.permuted(&perm), &b).unwrap() - base).abs() < 1e-12);
            prop_assert!((l2_error(&a, &b.permuted(&perm)).unwrap() - base).abs() < 1e-12);
            prop_assert!((l2_error(&b, &a).unwrap() - base).abs() < 1e-12);
            prop_assert!(base >= 0.0);
        }
    }
}
