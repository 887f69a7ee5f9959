use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tfgmm_core::constructions::{build_em_tf_weights, build_tensor_power_tf, run_tf_em_with, EmTfConfig};
use tfgmm_core::em::{kmeanspp_init, oracle_perturbed_init, random_init, run_em, EmInit, EmOptions};
use tfgmm_core::harness::{run_suite, verify_constructions, SuiteConfig, VerifyConfig};
use tfgmm_core::metrics::{clustering_accuracy, l2_error, log_likelihood, training_loss};
use tfgmm_core::rng::{stream_id, task_rng};
use tfgmm_core::sampler::{sample_gmm_data, sample_params, sample_task, SamplerConfig};
use tfgmm_core::spectral::{spectral_estimate, PowerOptions, SpectralOptions};
use tfgmm_core::{GmmParams, Result};

#[derive(Parser)]
#[command(name = "tfgmm", version, about = "Gaussian mixture estimation with EM, spectral methods and compiled transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample synthetic mixture tasks and print them as JSON.
    Sample {
        #[arg(long, default_value_t = 2)]
        d: usize,
        /// Component counts to draw from, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [2, 3, 4, 5])]
        k: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Sample sizes are uniform on `ceil(n_max/2) ..= n_max`.
        #[arg(long, default_value_t = 128)]
        n_max: usize,
        #[arg(long)]
        anisotropic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample one task, fit it and print the estimate with its scores.
    Solve {
        #[arg(long, value_enum)]
        solver: SolverArg,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = InitArg::Kmeanspp)]
        init: InitArg,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// EM iterations unrolled by the transformer.
        #[arg(long = "L", default_value_t = 10)]
        layers: usize,
        #[arg(long, default_value_t = 1e-4)]
        delta: f64,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
    },
    /// Run a benchmark suite and write `report.csv` (or `report.json`) and `summary.json`.
    Bench {
        /// Flat `key = value` config file; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Check the compiled transformers against the algorithms they unroll.
    /// Exits with status 2 if any check fails.
    VerifyConstruction {
        #[arg(long, default_value_t = 1e-4)]
        delta: f64,
        #[arg(long = "L", default_value_t = 10)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        d0: usize,
        #[arg(long, default_value_t = 4)]
        k0: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Write compiled weights as JSON.
    ExportWeights {
        #[arg(value_enum)]
        kind: WeightKind,
        #[arg(long, default_value_t = 4)]
        d0: usize,
        #[arg(long, default_value_t = 4)]
        k0: usize,
        #[arg(long = "L", default_value_t = 10)]
        layers: usize,
        #[arg(long, default_value_t = 1e-4)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Em,
    Spectral,
    TfEm,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Kmeanspp,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightKind {
    Em,
    Tensor,
}

#[derive(Serialize)]
struct Mixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
}

impl From<&GmmParams> for Mixture {
    fn from(p: &GmmParams) -> Self {
        Self {
            weights: p.weights().to_vec(),
            means: p.means().rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

#[derive(Serialize)]
struct Scores {
    l2_error: f64,
    clustering_accuracy: f64,
    log_likelihood: f64,
    training_loss: f64,
}

#[derive(Serialize)]
struct SolveOutput {
    solver: &'static str,
    d: usize,
    k: usize,
    n: usize,
    seed: u64,
    truth: Mixture,
    estimate: Mixture,
    scores: Scores,
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Sample {
            d,
            k,
            count,
            n_max,
            anisotropic,
            seed,
            out,
        } => {
            let cfg = SamplerConfig {
                d,
                k_set: k,
                n_max,
                anisotropic,
                seed,
                ..Default::default()
            };
            let tasks = (0..count as u64)
                .map(|i| sample_task(&cfg, &mut task_rng(seed, i)).map(|t| t.to_json()))
                .collect::<Result<Vec<_>>>()?;
            emit(&serde_json::to_string_pretty(&tasks)?, out.as_ref())?;
        }
        Command::Solve {
            solver,
            d,
            k,
            n,
            seed,
            init,
            max_iters,
            tol,
            layers,
            delta,
            restarts,
        } => {
            let mut rng = task_rng(seed, 0);
            let sampler = SamplerConfig {
                d,
                k_set: vec![k],
                ..Default::default()
            };
            let truth = sample_params(d, k, &sampler, &mut rng)?;
            let (x, labels) = sample_gmm_data(&truth, n, &mut rng);
            let mut srng = task_rng(seed, stream_id(&[seed, 1]));
            let (name, est) = match solver {
                SolverArg::Em => {
                    let init = match init {
                        InitArg::Random => EmInit::Random,
                        InitArg::Kmeanspp => EmInit::KMeansPlusPlus,
                        InitArg::Oracle => EmInit::OraclePerturbed(truth.clone()),
                    };
                    let opts = EmOptions {
                        max_iters,
                        tol,
                        ..Default::default()
                    };
                    ("em", run_em(x.view(), k, &init, &opts, &mut srng)?.params)
                }
                SolverArg::Spectral => {
                    let opts = SpectralOptions {
                        power: PowerOptions {
                            restarts,
                            ..Default::default()
                        },
                        ..Default::default()
                    };
                    ("spectral", spectral_estimate(x.view(), k, &opts, &mut srng)?)
                }
                SolverArg::TfEm => {
                    let start = match init {
                        InitArg::Random => random_init(x.view(), k, &mut srng),
                        InitArg::Kmeanspp => kmeanspp_init(x.view(), k, &mut srng),
                        InitArg::Oracle => oracle_perturbed_init(&truth, &mut srng),
                    };
                    let cfg = EmTfConfig {
                        d0: d,
                        k0: k,
                        delta,
                        layers,
                        ..Default::default()
                    };
                    let weights = build_em_tf_weights(&cfg)?;
                    ("tf-em", run_tf_em_with(&weights, &cfg, x.view(), &start)?.params)
                }
            };
            let output = SolveOutput {
                solver: name,
                d,
                k,
                n,
                seed,
                truth: (&truth).into(),
                estimate: (&est).into(),
                scores: Scores {
                    l2_error: l2_error(&est, &truth)?,
                    clustering_accuracy: clustering_accuracy(&est, x.view(), &labels)?,
                    log_likelihood: log_likelihood(x.view(), &est)?,
                    training_loss: training_loss(&est, &truth)?.total(),
                },
            };
            emit(&serde_json::to_string_pretty(&output)?, None)?;
        }
        Command::Bench { config, out, format } => {
            let config = match config {
                Some(path) => SuiteConfig::parse(&fs::read_to_string(path)?)?,
                None => SuiteConfig::default(),
            };
            let report = run_suite(&config)?;
            report.write_dir(&out, matches!(format, Format::Json))?;
            for cell in report.summary().iter().filter(|c| c.metric == "l2_error") {
                let median = cell.median.map_or("-".to_string(), |m| format!("{m:.4}"));
                let failed: usize = cell.failures.values().sum();
                eprintln!(
                    "{:<28} d={:<4} K={:<2} {:<12} median l2 {:>8}  failed {}",
                    cell.suite, cell.d, cell.k, cell.solver, median, failed
                );
            }
            eprintln!("wrote {} rows to {}", report.rows.len(), out.display());
        }
        Command::VerifyConstruction {
            delta,
            layers,
            d0,
            k0,
            seed,
            json,
        } => {
            let cfg = VerifyConfig {
                delta,
                layers,
                d0,
                k0,
                seed,
                ..Default::default()
            };
            let report = verify_constructions(&cfg)?;
            if json {
                emit(&serde_json::to_string_pretty(&report)?, None)?;
            } else {
                for c in &report.checks {
                    println!(
                        "{} {:<18} {:>10.3e} (limit {:.0e})  {}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.measured,
                        c.threshold,
                        c.detail
                    );
                }
            }
            return Ok(ExitCode::from(report.exit_code() as u8));
        }
        Command::ExportWeights {
            kind,
            d0,
            k0,
            layers,
            delta,
            out,
        } => {
            let weights = match kind {
                WeightKind::Em => build_em_tf_weights(&EmTfConfig {
                    d0,
                    k0,
                    delta,
                    layers,
                    ..Default::default()
                })?,
                WeightKind::Tensor => build_tensor_power_tf(d0, layers)?,
            };
            emit(&weights.to_json()?, out.as_ref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(tfgmm_core::Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
