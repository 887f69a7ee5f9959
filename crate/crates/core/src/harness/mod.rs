//! Benchmark suites over sampled tasks and self-checks of the weight
//! constructions. Every suite run is reproducible from its seed.

mod config;
mod report;
mod verify;

pub use config::{Solver, SuiteConfig};
pub use report::{CellSummary, Report, ReportRow};
pub use verify::{verify_constructions, Check, VerifyConfig, VerifyReport};

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;

use crate::constructions::{build_em_tf_weights, run_tf_em_with, EmTfConfig};
use crate::em::{kmeanspp_init, run_em, Covariance, EmInit, EmOptions};
use crate::error::{Error, Result};
use crate::metrics::{clustering_accuracy, l2_error, log_likelihood, training_loss};
use crate::params::GmmParams;
use crate::rng::{stream_id, task_rng};
use crate::sampler::{perturb_means, sample_gmm_data, sample_params, SamplerConfig};
use crate::spectral::{spectral_estimate, PowerOptions, SpectralOptions};
use crate::transformer::TfWeights;

/// Metric names in the order they appear in a report.
pub const METRICS: [&str; 4] = ["l2_error", "clustering_accuracy", "log_likelihood", "training_loss"];

/// Solver settings shared by the suite and the command line.
#[derive(Debug, Clone)]
pub struct SolverSettings {
    pub em: EmOptions,
    pub spectral: SpectralOptions,
    pub tf_layers: usize,
    pub tf_delta: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            em: EmOptions {
                restarts: 1,
                ..Default::default()
            },
            spectral: SpectralOptions::default(),
            tf_layers: 10,
            tf_delta: 1e-4,
        }
    }
}

impl SolverSettings {
    pub fn tf_config(&self, d: usize, k: usize) -> EmTfConfig {
        EmTfConfig {
            d0: d,
            k0: k,
            delta: self.tf_delta,
            layers: self.tf_layers,
            ..Default::default()
        }
    }
}

/// Runs one solver on one data set. `truth` is only consulted by the
/// oracle-perturbed initialization; `tf_weights` may carry prebuilt weights
/// for the transformer solver (built on demand otherwise).
pub fn solve<R: Rng + ?Sized>(
    solver: Solver,
    data: ArrayView2<'_, f64>,
    k: usize,
    truth: Option<&GmmParams>,
    settings: &SolverSettings,
    tf_weights: Option<&TfWeights>,
    rng: &mut R,
) -> Result<GmmParams> {
    let em = |init: EmInit, rng: &mut R| run_em(data, k, &init, &settings.em, rng).map(|f| f.params);
    match solver {
        Solver::EmRandom => em(EmInit::Random, rng),
        Solver::EmKmeanspp => em(EmInit::KMeansPlusPlus, rng),
        Solver::EmOracle => {
            let truth = truth.ok_or_else(|| Error::InvalidArgument("oracle init needs the true parameters".into()))?;
            em(EmInit::OraclePerturbed(truth.clone()), rng)
        }
        Solver::Spectral => spectral_estimate(data, k, &settings.spectral, rng),
        Solver::TfEm => {
            let cfg = settings.tf_config(data.ncols(), k);
            let built;
            let weights = match tf_weights {
                Some(w) => w,
                None => {
                    built = build_em_tf_weights(&cfg)?;
                    &built
                }
            };
            let init = kmeanspp_init(data, k, rng);
            run_tf_em_with(weights, &cfg, data, &init).map(|r| r.params)
        }
    }
}

struct Trial {
    rows: Vec<ReportRow>,
}

/// Samples `trials` tasks for every `(σ_p, d, K)` cell, runs every solver on
/// each and records all metrics. Failures become rows with a status tag.
pub fn run_suite(config: &SuiteConfig) -> Result<Report> {
    config.validate()?;
    let settings = SolverSettings {
        em: EmOptions {
            max_iters: config.em_max_iters,
            tol: config.em_tol,
            restarts: config.em_restarts,
            covariance: Covariance::Isotropic,
        },
        spectral: SpectralOptions {
            power: PowerOptions {
                restarts: config.power_restarts,
                iters: config.power_iters,
            },
            ..Default::default()
        },
        tf_layers: config.tf_layers,
        tf_delta: config.tf_delta,
    };
    let mut rows = Vec::new();
    for (si, &sigma_p) in config.sigma_p.iter().enumerate() {
        let suite = if config.sigma_p.len() == 1 && sigma_p == 0.0 {
            config.name.clone()
        } else {
            format!("{}/sigma_p={sigma_p}", config.name)
        };
        for &d in &config.dims {
            for &k in &config.k_values {
                let tf_weights = if config.solvers.contains(&Solver::TfEm) && d <= config.tf_max_dim {
                    Some(build_em_tf_weights(&settings.tf_config(d, k))?)
                } else {
                    None
                };
                let cell = Cell {
                    suite: &suite,
                    sigma_index: si as u64,
                    sigma_p,
                    d,
                    k,
                    tf_weights: tf_weights.as_ref(),
                };
                let trials: Vec<Trial> = (0..config.trials)
                    .into_par_iter()
                    .map(|t| run_trial(config, &settings, &cell, t))
                    .collect();
                for t in trials {
                    rows.extend(t.rows);
                }
            }
        }
    }
    Ok(Report { rows })
}

struct Cell<'a> {
    suite: &'a str,
    sigma_index: u64,
    sigma_p: f64,
    d: usize,
    k: usize,
    tf_weights: Option<&'a TfWeights>,
}

fn run_trial(config: &SuiteConfig, settings: &SolverSettings, cell: &Cell<'_>, trial: usize) -> Trial {
    let seed = stream_id(&[cell.sigma_index, cell.d as u64, cell.k as u64, trial as u64]);
    let mut rng = task_rng(config.seed, seed);
    let sampler = SamplerConfig {
        d: cell.d,
        k_set: vec![cell.k],
        ..Default::default()
    };
    let n = config.n_eval;
    let row = |solver: Solver, metric: &str, value: f64, status: &str| ReportRow {
        suite: cell.suite.to_string(),
        d: cell.d,
        k: cell.k,
        n,
        solver: solver.name().to_string(),
        seed,
        metric: metric.to_string(),
        value,
        status: status.to_string(),
    };
    let task = sample_params(cell.d, cell.k, &sampler, &mut rng)
        .and_then(|p| perturb_means(&p, cell.sigma_p, &mut rng))
        .map(|truth| {
            let (x, y) = sample_gmm_data(&truth, n, &mut rng);
            (truth, x, y)
        });
    let mut rows = Vec::new();
    let (truth, x, labels) = match task {
        Ok(t) => t,
        Err(e) => {
            for &s in &config.solvers {
                for m in METRICS {
                    rows.push(row(s, m, f64::NAN, e.status_tag()));
                }
            }
            return Trial { rows };
        }
    };
    for &solver in &config.solvers {
        let mut srng = task_rng(config.seed, stream_id(&[seed, solver.id()]));
        let too_large = match solver {
            Solver::Spectral => cell.d > config.spectral_max_dim,
            Solver::TfEm => cell.d > config.tf_max_dim,
            _ => false,
        };
        let outcome = if too_large {
            Err("skipped")
        } else {
            solve(solver, x.view(), cell.k, Some(&truth), settings, cell.tf_weights, &mut srng)
                .map_err(|e| e.status_tag())
        };
        match outcome {
            Ok(est) => {
                let values = [
                    l2_error(&est, &truth),
                    clustering_accuracy(&est, x.view(), &labels),
                    log_likelihood(x.view(), &est),
                    training_loss(&est, &truth).map(|l| l.total()),
                ];
                for (m, v) in METRICS.iter().zip(values) {
                    match v {
                        Ok(v) if v.is_finite() => rows.push(row(solver, m, v, "ok")),
                        Ok(_) => rows.push(row(solver, m, f64::NAN, "non-finite")),
                        Err(e) => rows.push(row(solver, m, f64::NAN, e.status_tag())),
                    }
                }
            }
            Err(tag) => {
                for m in METRICS {
                    rows.push(row(solver, m, f64::NAN, tag));
                }
            }
        }
    }
    Trial { rows }
}
