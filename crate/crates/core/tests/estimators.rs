use std::path::Path;

use scoreloop::dynamics::{run_naive, EpochConfig, FitKind, HoldoutConfig, ScoreMode};
use scoreloop::estimators::{
    fit_logistic, fit_on_holdout, fit_threshold, oracle_score, select_holdout, LogisticOptions,
};
use scoreloop::evaluation::b2_model;
use scoreloop::model::{
    CovariateState, Dimensions, InterventionSpec, LogisticLinear, MechanismSpec, OracleConfig, PopulationSpec,
    ScoreFunction,
};
use scoreloop::sampling::{make_dataset, sample_covariates, sample_outcomes, Dataset};
use scoreloop::{Error, RngSeed};

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn unit() -> MechanismSpec {
    MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 1.0).unwrap())
}

fn simulate(f: &MechanismSpec, n: usize, seed: u64) -> Dataset {
    let d = Dimensions::new(1, 1, 0).unwrap();
    let mu = PopulationSpec::standard_normal(2).unwrap();
    let start = sample_covariates(&mu, d, n, 0, RngSeed(seed).split(0)).unwrap();
    let end: Vec<CovariateState> = start.iter().map(|s| s.unchanged()).collect();
    let y = sample_outcomes(f, &end, RngSeed(seed).split(1)).unwrap();
    make_dataset(&start, &y).unwrap()
}

fn thresholds(s: &ScoreFunction) -> (f64, f64) {
    match s {
        ScoreFunction::ThresholdRule { value_pos, value_neg } => (*value_pos, *value_neg),
        other => panic!("not a threshold rule: {other:?}"),
    }
}

#[test]
fn oracle_examples() {
    let exact = OracleConfig::exact();
    let id = InterventionSpec::Identity;
    let v = oracle_score(&unit(), &id, &id, 0.0, &[0.0], &[0.0], &exact).unwrap();
    assert_eq!(v.value, 0.5);
    let log = InterventionSpec::LogShift { scale: 1.0 };
    let v = oracle_score(&unit(), &log, &id, 1.0, &[0.0], &[0.0], &exact).unwrap();
    assert!((v.value - 1.0 / 3.0).abs() < 1e-15);
    assert!(oracle_score(&unit(), &log, &id, 1.5, &[0.0], &[0.0], &exact).is_err());
}

#[test]
fn irrelevant_latent_matches_observed_oracle() {
    let with_l = MechanismSpec::LogisticLinear(LogisticLinear::new(0.0, vec![1.0], vec![1.0], vec![0.0], 1.0).unwrap());
    let log = InterventionSpec::LogShift { scale: 1.0 };
    let id = InterventionSpec::Identity;
    let base = oracle_score(&unit(), &log, &id, 0.4, &[0.3], &[-0.2], &OracleConfig::exact()).unwrap();
    for samples in [1, 17, 500] {
        let cfg = OracleConfig::new(samples, PopulationSpec::standard_normal(1).unwrap(), RngSeed(2)).unwrap();
        let v = oracle_score(&with_l, &log, &id, 0.4, &[0.3], &[-0.2], &cfg).unwrap();
        assert_eq!(v.value, base.value);
    }
}

#[test]
fn latent_oracle_variance_halves_with_doubled_budget() {
    let f = MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 1, 1.0).unwrap());
    let g = InterventionSpec::LogShift { scale: 1.0 };
    let mu_l = PopulationSpec::standard_normal(1).unwrap();
    let var = |n: usize| {
        let cfg = OracleConfig::new(n, mu_l.clone(), RngSeed(31)).unwrap();
        let e = oracle_score(&f, &g, &g, 0.3, &[0.2], &[0.1], &cfg).unwrap();
        e.std_error * e.std_error
    };
    let ratio = var(8000) / var(4000);
    assert!((ratio - 0.5).abs() < 0.1, "{ratio}");
}

#[test]
fn latent_oracle_needs_a_budget() {
    let f = MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 1, 1.0).unwrap());
    let id = InterventionSpec::Identity;
    assert!(matches!(
        oracle_score(&f, &id, &id, 0.0, &[0.0], &[0.0], &OracleConfig::exact()),
        Err(Error::MissingLatentBudget)
    ));
}

#[test]
fn threshold_reproduces_published_rule_on_fixture() {
    let data = Dataset::read_csv(std::fs::File::open(fixture("threshold_b2.csv")).unwrap(), 0).unwrap();
    assert_eq!(data.n(), 100);
    let printed = [
        [1.185, 1.272],
        [0.881, -0.995],
        [0.122, -0.956],
        [-0.826, 1.779],
        [0.853, 0.151],
        [0.177, 0.805],
    ];
    for row in printed {
        assert!(data.covariates.iter().any(|r| r[..] == row[..]));
    }
    let (pos, neg) = thresholds(&fit_threshold(&data).unwrap());
    assert!((pos - 0.733).abs() < 5e-4, "{pos}");
    assert!((neg - 0.200).abs() < 5e-4, "{neg}");
    assert_eq!(pos, 33.0 / 45.0);
    assert_eq!(neg, 11.0 / 55.0);
}

#[test]
fn threshold_examples() {
    let d = Dataset::new(1, 1, vec![vec![1.0, 0.5], vec![2.0, 0.0], vec![-1.0, 0.0]], vec![1, 1, 0], 0).unwrap();
    assert_eq!(thresholds(&fit_threshold(&d).unwrap()), (1.0, 0.0));
    let d = Dataset::new(
        1,
        1,
        vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 0.0], vec![0.0, -3.0]],
        vec![1, 0, 1, 0],
        0,
    )
    .unwrap();
    assert_eq!(thresholds(&fit_threshold(&d).unwrap()), (0.5, 0.5));
}

#[test]
fn threshold_ties_go_to_non_positive_cell() {
    let d = Dataset::new(1, 1, vec![vec![1.0, -1.0], vec![1.0, 1.0]], vec![1, 0], 0).unwrap();
    assert_eq!(thresholds(&fit_threshold(&d).unwrap()), (0.0, 1.0));
}

#[test]
fn threshold_empty_cell() {
    let d = Dataset::new(1, 1, vec![vec![1.0, 1.0], vec![2.0, 1.0]], vec![1, 0], 0).unwrap();
    assert!(matches!(fit_threshold(&d), Err(Error::EmptyCell(_))));
}

#[test]
fn logistic_recovers_truth() {
    let data = simulate(&unit(), 100_000, 1);
    let fit = fit_logistic(&data, LogisticOptions::default()).unwrap();
    assert!(fit.converged && !fit.separation);
    for (b, t) in fit.coefficients.iter().zip([0.0, 1.0, 1.0]) {
        assert!((b - t).abs() < 0.05, "{:?}", fit.coefficients);
    }
}

#[test]
fn logistic_null_slopes() {
    let null = MechanismSpec::LogisticLinear(LogisticLinear::new(0.0, vec![0.0], vec![0.0], vec![], 1.0).unwrap());
    let fit = fit_logistic(&simulate(&null, 100_000, 2), LogisticOptions::default()).unwrap();
    assert!(fit.coefficients[1].abs() < 0.05 && fit.coefficients[2].abs() < 0.05);
}

#[test]
fn logistic_loglik_non_decreasing() {
    for seed in 0..20 {
        let fit = fit_logistic(&simulate(&unit(), 60, seed), LogisticOptions::default()).unwrap();
        assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0]), "seed {seed}");
    }
}

#[test]
fn converged_fit_has_small_gradient() {
    let data = simulate(&unit(), 500, 9);
    let fit = fit_logistic(&data, LogisticOptions::default()).unwrap();
    assert!(fit.converged);
    let mut grad = [0.0; 3];
    for (row, &y) in data.covariates.iter().zip(&data.outcomes) {
        let x = [1.0, row[0], row[1]];
        let eta: f64 = x.iter().zip(&fit.coefficients).map(|(a, b)| a * b).sum();
        let p = 1.0 / (1.0 + (-eta).exp());
        for j in 0..3 {
            grad[j] += (y as f64 - p) * x[j];
        }
    }
    assert!(grad.iter().all(|g| g.abs() <= 1e-6), "{grad:?}");
}

#[test]
fn logistic_flags_separation() {
    let d = Dataset::new(1, 1, vec![vec![-2.0, 0.1], vec![-1.0, 0.3], vec![1.0, 0.2], vec![2.0, 0.0]], vec![0, 0, 1, 1], 0)
        .unwrap();
    let fit = fit_logistic(&d, LogisticOptions::default()).unwrap();
    assert!(fit.separation && !fit.converged);
    assert!(fit.require_converged().is_err());
}

#[test]
fn logistic_needs_more_rows_than_coefficients() {
    let d = Dataset::new(1, 1, vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0, 1], 0).unwrap();
    assert!(matches!(fit_logistic(&d, LogisticOptions::default()), Err(Error::TooFewRows { .. })));
}

#[test]
fn logistic_matches_brute_force_oracle() {
    let text = std::fs::read_to_string(fixture("logistic_oracle.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let cases = doc["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 10);
    for case in cases {
        let x: Vec<Vec<f64>> = serde_json::from_value(case["covariates"].clone()).unwrap();
        let y: Vec<u8> = serde_json::from_value(case["outcomes"].clone()).unwrap();
        let want: Vec<f64> = serde_json::from_value(case["grid_argmax"].clone()).unwrap();
        assert_eq!(x.len(), 50);
        let fit = fit_logistic(&Dataset::new(1, 1, x, y, 0).unwrap(), LogisticOptions::default()).unwrap();
        assert!(fit.converged);
        for (b, w) in fit.coefficients.iter().zip(&want) {
            assert!((b - w).abs() <= 0.02, "{:?} vs {want:?}", fit.coefficients);
        }
    }
}

#[test]
fn holdout_selection() {
    let rows = select_holdout(1000, 0.25, RngSeed(3)).unwrap();
    assert_eq!(rows.len(), 250);
    assert!(rows.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(rows, select_holdout(1000, 0.25, RngSeed(3)).unwrap());
    assert!(matches!(select_holdout(10, 0.0, RngSeed(0)), Err(Error::InvalidHoldoutFraction(_))));
    assert!(select_holdout(10, 1.0, RngSeed(0)).is_err());
}

#[test]
fn full_holdout_equals_full_fit() {
    let data = simulate(&unit(), 100, 4);
    let (fit, rows) = fit_on_holdout(&data, 0.999, RngSeed(5), LogisticOptions::default()).unwrap();
    assert_eq!(rows.len(), 100);
    assert_eq!(fit, fit_logistic(&data, LogisticOptions::default()).unwrap());
}

#[test]
fn holdout_needs_enough_rows() {
    let data = simulate(&unit(), 20, 4);
    assert!(matches!(
        fit_on_holdout(&data, 0.1, RngSeed(5), LogisticOptions::default()),
        Err(Error::TooFewRows { .. })
    ));
}

#[test]
fn holdout_fit_recovers_untreated_model() {
    let mut cfg = EpochConfig::new(ScoreMode::Fitted(vec![FitKind::Logistic]), 200_000, 2, RngSeed(12));
    cfg.holdout = Some(HoldoutConfig {
        fraction: 0.5,
        deploy: false,
    });
    let trace = run_naive(&b2_model(), &cfg).unwrap();
    let epoch0 = trace.records[0].fit.as_ref().unwrap();
    let held = trace.records[1].holdout_fit.as_ref().unwrap();
    let naive = trace.records[1].fit.as_ref().unwrap();
    assert_eq!(trace.records[1].holdout_rows, 100_000);
    for j in 0..3 {
        assert!((held.coefficients[j] - epoch0.coefficients[j]).abs() < 0.05);
    }
    assert!((naive.coefficients[2] - epoch0.coefficients[2]).abs() > 0.05);
}
