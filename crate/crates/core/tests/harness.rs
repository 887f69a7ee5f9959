use tfgmm_core::harness::{run_suite, verify_constructions, Solver, SuiteConfig, VerifyConfig};

fn small() -> SuiteConfig {
    SuiteConfig {
        name: "small".into(),
        dims: vec![2, 3],
        k_values: vec![2, 3],
        n_eval: 200,
        trials: 4,
        solvers: vec![Solver::EmKmeanspp, Solver::Spectral, Solver::TfEm],
        sigma_p: vec![0.0],
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn suite_is_byte_identical_across_runs() {
    let mut a = Vec::new();
    let mut b = Vec::new();
    run_suite(&small()).unwrap().write_csv(&mut a).unwrap();
    run_suite(&small()).unwrap().write_csv(&mut b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn suite_covers_every_cell_and_metric() {
    let report = run_suite(&small()).unwrap();
    assert_eq!(report.rows.len(), 2 * 2 * 4 * 3 * 4);
    let summary = report.summary();
    assert_eq!(summary.len(), 2 * 2 * 3 * 4);
    let cell = report.cell(2, 2, "em-kmeanspp", "l2_error").unwrap();
    assert_eq!(cell.count, 4);
}

#[test]
fn spectral_with_more_components_than_dims_is_a_rank_error() {
    let config = SuiteConfig {
        dims: vec![2],
        k_values: vec![3],
        solvers: vec![Solver::Spectral],
        trials: 3,
        sigma_p: vec![0.0],
        ..Default::default()
    };
    let report = run_suite(&config).unwrap();
    assert!(report.rows.iter().all(|r| r.status == "rank-error" && r.value.is_nan()));
    let cell = report.cell(2, 3, "spectral", "l2_error").unwrap();
    assert_eq!(cell.failures["rank-error"], 3);
    assert_eq!(cell.median, None);
}

#[test]
fn oversized_cells_are_skipped() {
    let config = SuiteConfig {
        dims: vec![4],
        k_values: vec![2],
        solvers: vec![Solver::Spectral, Solver::EmRandom],
        trials: 2,
        sigma_p: vec![0.0],
        spectral_max_dim: 3,
        ..Default::default()
    };
    let report = run_suite(&config).unwrap();
    for r in &report.rows {
        let expect = if r.solver == "spectral" { "skipped" } else { "ok" };
        assert_eq!(r.status, expect, "{r:?}");
    }
}

#[test]
fn sigma_sweep_names_suites() {
    let config = SuiteConfig {
        dims: vec![2],
        k_values: vec![2],
        solvers: vec![Solver::EmRandom],
        trials: 1,
        sigma_p: vec![0.0, 2.0],
        ..Default::default()
    };
    let report = run_suite(&config).unwrap();
    let suites: Vec<_> = report.summary().into_iter().map(|c| c.suite).collect();
    assert!(suites.contains(&"comparison/sigma_p=0".to_string()));
    assert!(suites.contains(&"comparison/sigma_p=2".to_string()));
}

#[test]
fn constructions_verify() {
    let report = verify_constructions(&VerifyConfig::default()).unwrap();
    for c in &report.checks {
        println!("{:<20} {:<5} {:.3e} <= {:.1e}  {}", c.name, c.passed, c.measured, c.threshold, c.detail);
    }
    assert!(report.passed());
    assert_eq!(report.exit_code(), 0);
}
