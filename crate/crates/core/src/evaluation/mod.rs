//! How good a score is: the absolute-difference metric `m`, its nested
//! Monte-Carlo expectation over training sets, and the objective and cost of
//! the interventions a score induces.

mod reproduce;

pub use reproduce::{
    b2_model, b5_model, b5_objective_fixed_point, b5_objective_threshold, b6_map, blend_model, reproduce, Artifact, Check,
    ReproduceOptions, ReproductionReport, REPRODUCTIONS,
};

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{intervene_population, FitKind};
use crate::error::{Error, Result};
use crate::estimators::{fit_logistic, fit_threshold, LogisticOptions};
use crate::math::mean_and_se;
use crate::model::{History, Model, Score, ScoreFunction};
use crate::rng::RngSeed;
use crate::sampling::{make_dataset, sample_covariates, sample_outcomes};

/// Monte-Carlo or exact expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub exact: bool,
}

/// `E_mu[phi(X(0))]` over full covariate rows: enumeration for atoms, `mc_n`
/// seeded draws otherwise.
pub fn expect_over_population(
    model: &Model,
    mc_n: usize,
    seed: RngSeed,
    phi: impl Fn(&[f64], &[f64], &[f64]) -> Result<f64> + Sync,
) -> Result<Estimate> {
    let dims = model.dims();
    if let Some(atoms) = model.mu.support() {
        let mut value = 0.0;
        for atom in atoms {
            let (s, a, l) = dims.split(&atom.point);
            value += atom.prob * phi(s, a, l)?;
        }
        return Ok(Estimate {
            value,
            std_error: 0.0,
            exact: true,
        });
    }
    if mc_n == 0 {
        return Err(Error::InvalidSpec("Monte-Carlo budget must be at least 1".into()));
    }
    let states = sample_covariates(&model.mu, dims, mc_n, 0, seed)?;
    let values = states
        .iter()
        .map(|s| phi(&s.x_s, &s.x_a, &s.x_l))
        .collect::<Result<Vec<_>>>()?;
    let (value, std_error) = mean_and_se(&values);
    Ok(Estimate {
        value,
        std_error,
        exact: false,
    })
}

/// Expected event probability when every individual is intervened on with
/// their own score value: `E[f(x_s, g_a(rho(x), x_a), g_l(rho(x), x_l))]`.
pub fn objective(rho: &dyn Score, model: &Model, mc_n: usize, seed: RngSeed) -> Result<Estimate> {
    expect_over_population(model, mc_n, seed, |s, a, l| {
        let r = rho.score(s, a)?;
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::RhoOutOfRange(r));
        }
        Ok(model.f.value(s, &model.g_a.apply_all(r, a), &model.g_l.apply_all(r, l)))
    })
}

type CostFnPtr = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// Cost of moving one coordinate, as a function of (original value, downshift).
#[derive(Clone)]
pub enum CostFn {
    /// No cost.
    Free,
    /// Cost equals the downshift `x - g(rho, x)`.
    LinearInShift,
    Custom(Arc<CostFnPtr>),
}

impl CostFn {
    pub fn eval(&self, original: f64, shift: f64) -> f64 {
        match self {
            CostFn::Free => 0.0,
            CostFn::LinearInShift => shift,
            CostFn::Custom(c) => c(original, shift),
        }
    }
}

impl fmt::Debug for CostFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostFn::Free => write!(f, "Free"),
            CostFn::LinearInShift => write!(f, "LinearInShift"),
            CostFn::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CostSpec {
    pub c_a: CostFn,
    pub c_l: CostFn,
    pub budget: f64,
}

impl CostSpec {
    pub fn linear(budget: f64) -> Self {
        CostSpec {
            c_a: CostFn::LinearInShift,
            c_l: CostFn::LinearInShift,
            budget,
        }
    }
}

/// Expected total cost of the shifts induced by `rho`.
pub fn cost(rho: &dyn Score, model: &Model, spec: &CostSpec, mc_n: usize, seed: RngSeed) -> Result<Estimate> {
    expect_over_population(model, mc_n, seed, |s, a, l| {
        let r = rho.score(s, a)?;
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::RhoOutOfRange(r));
        }
        let block = |c: &CostFn, g: &crate::model::InterventionSpec, x: &[f64]| -> f64 {
            x.iter().map(|&v| c.eval(v, v - g.apply(r, v))).sum()
        };
        Ok(block(&spec.c_a, &model.g_a, a) + block(&spec.c_l, &model.g_l, l))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub value: f64,
    pub mc_outer: usize,
    pub mc_inner: usize,
    pub std_error: f64,
    /// Outer replicates whose fit failed and were excluded.
    pub failed_replicates: usize,
}

/// Risk in an un-intervened epoch, `f~_0`.
pub fn untreated_risk(model: &Model) -> ScoreFunction {
    model.oracle(History::Initial)
}

/// Risk in an epoch whose interventions were driven by `deployed`.
pub fn treated_risk(model: &Model, deployed: ScoreFunction) -> ScoreFunction {
    model.oracle(History::Replace(deployed))
}

/// `E_mu[|target(X) - rho(X)|]` over `mc_inner` draws of the observed
/// covariates.
pub fn metric_m(
    rho: &dyn Score,
    target: &dyn Score,
    model: &Model,
    mc_inner: usize,
    seed: RngSeed,
) -> Result<MetricEstimate> {
    if mc_inner == 0 {
        return Err(Error::InvalidSpec("mc_inner must be at least 1".into()));
    }
    let states = sample_covariates(&model.mu, model.dims(), mc_inner, 0, seed)?;
    let diffs = states
        .iter()
        .map(|s| Ok((target.score(&s.x_s, &s.x_a)? - rho.score(&s.x_s, &s.x_a)?).abs()))
        .collect::<Result<Vec<_>>>()?;
    let (value, std_error) = mean_and_se(&diffs);
    Ok(MetricEstimate {
        value,
        mc_outer: 1,
        mc_inner,
        std_error,
        failed_replicates: 0,
    })
}

/// Score in force while the training epoch's outcomes were generated.
#[derive(Debug, Clone)]
pub enum Deployment {
    /// Un-intervened epoch.
    None,
    /// A fixed score drives every replicate's interventions.
    Fixed(ScoreFunction),
    /// Each replicate first fits this score to its own un-intervened epoch
    /// and deploys it.
    Refit(FitKind),
}

/// Which risk function the fitted score is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricTarget {
    /// `f~_0`, estimable from a holdout set.
    Untreated,
    /// `f~_e` under the replicate's deployment.
    Treated,
}

#[derive(Debug, Clone)]
pub struct MetricPipeline {
    pub model: Model,
    pub n_train: usize,
    pub deployment: Deployment,
    pub fit: FitKind,
    pub target: MetricTarget,
}

fn fit_score(kind: FitKind, data: &crate::sampling::Dataset) -> Result<ScoreFunction> {
    match kind {
        FitKind::Threshold => fit_threshold(data),
        FitKind::Logistic => {
            let report = fit_logistic(data, LogisticOptions::default())?;
            report.require_converged()?;
            Ok(report.score())
        }
    }
}

fn train(model: &Model, n: usize, deployed: Option<&ScoreFunction>, seed: RngSeed, epoch: usize, kind: FitKind) -> Result<ScoreFunction> {
    let start = sample_covariates(&model.mu, model.dims(), n, epoch, seed.split(0))?;
    let end = match deployed {
        None => start.iter().map(|s| s.unchanged()).collect(),
        Some(rho) => intervene_population(model, rho, &start, &[])?,
    };
    let y = sample_outcomes(&model.f, &end, seed.split(1))?;
    fit_score(kind, &make_dataset(&start, &y)?)
}

fn replicate(p: &MetricPipeline, mc_inner: usize, seed: RngSeed) -> Result<f64> {
    let model = &p.model;
    let deployed = match &p.deployment {
        Deployment::None => None,
        Deployment::Fixed(s) => Some(s.clone()),
        Deployment::Refit(kind) => Some(train(model, p.n_train, None, seed.split(0), 0, *kind)?),
    };
    let rho = match &deployed {
        None => train(model, p.n_train, None, seed.split(0), 0, p.fit)?,
        Some(d) => train(model, p.n_train, Some(d), seed.split(1), 1, p.fit)?,
    };
    let target = match (p.target, deployed) {
        (MetricTarget::Treated, Some(d)) => treated_risk(model, d),
        _ => untreated_risk(model),
    };
    Ok(metric_m(&rho, &target, model, mc_inner, seed.split(2))?.value)
}

/// Nested Monte Carlo: replicate `i` (seed `split(seed, i)`) draws a training
/// set, fits a score and estimates `m` with `mc_inner` draws. Replicates
/// whose fit fails are counted and left out of the mean.
pub fn expected_metric(
    pipeline: &MetricPipeline,
    mc_outer: usize,
    mc_inner: usize,
    seed: RngSeed,
) -> Result<MetricEstimate> {
    if mc_outer == 0 || mc_inner == 0 {
        return Err(Error::InvalidSpec("mc_outer and mc_inner must be at least 1".into()));
    }
    pipeline.model.validate()?;
    let results: Vec<Result<f64>> = (0..mc_outer)
        .into_par_iter()
        .map(|i| replicate(pipeline, mc_inner, seed.split(i as u64)))
        .collect();
    let mut values = Vec::with_capacity(mc_outer);
    let mut failed = 0;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(v) => values.push(v),
            Err(e) => {
                failed += 1;
                last_err = Some(e);
            }
        }
    }
    if values.is_empty() {
        return Err(last_err.unwrap_or(Error::EmptyDataset));
    }
    let (value, std_error) = mean_and_se(&values);
    Ok(MetricEstimate {
        value,
        mc_outer,
        mc_inner,
        std_error,
        failed_replicates: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Atom, InterventionSpec, LogisticLinear, MechanismSpec, PopulationSpec};

    fn model(g: InterventionSpec, mu: PopulationSpec) -> Model {
        Model::new(
            MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 1.0).unwrap()),
            g,
            InterventionSpec::Identity,
            mu,
            None,
        )
        .unwrap()
    }

    fn atoms() -> PopulationSpec {
        PopulationSpec::atoms(vec![
            Atom { point: vec![0.0, -1.0], prob: 0.5 },
            Atom { point: vec![0.0, 1.0], prob: 0.5 },
        ])
        .unwrap()
    }

    #[test]
    fn oracle_against_itself_is_zero() {
        let m = model(InterventionSpec::LogShift { scale: 1.0 }, PopulationSpec::standard_normal(2).unwrap());
        let target = treated_risk(&m, ScoreFunction::constant(0.4).unwrap());
        let est = metric_m(&target, &target, &m, 200, RngSeed(1)).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn half_against_flat_risk() {
        let flat = Model::new(
            MechanismSpec::LogisticLinear(LogisticLinear::new(0.0, vec![0.0], vec![0.0], vec![], 1.0).unwrap()),
            InterventionSpec::Identity,
            InterventionSpec::Identity,
            PopulationSpec::standard_normal(2).unwrap(),
            None,
        )
        .unwrap();
        let half = ScoreFunction::constant(0.5).unwrap();
        assert_eq!(metric_m(&half, &untreated_risk(&flat), &flat, 50, RngSeed(0)).unwrap().value, 0.0);
    }

    #[test]
    fn identity_objective_ignores_score() {
        let m = model(InterventionSpec::Identity, atoms());
        let a = objective(&ScoreFunction::constant(0.0).unwrap(), &m, 0, RngSeed(0)).unwrap();
        let b = objective(&ScoreFunction::constant(1.0).unwrap(), &m, 0, RngSeed(0)).unwrap();
        assert_eq!(a.value, b.value);
        assert!(a.exact);
    }

    #[test]
    fn zero_score_costs_nothing() {
        let m = model(InterventionSpec::LogShift { scale: 1.0 }, PopulationSpec::standard_normal(2).unwrap());
        let c = cost(&ScoreFunction::constant(0.0).unwrap(), &m, &CostSpec::linear(1.0), 100, RngSeed(0)).unwrap();
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn single_outer_replicate_is_one_metric() {
        let m = model(InterventionSpec::Identity, PopulationSpec::standard_normal(2).unwrap());
        let p = MetricPipeline {
            model: m.clone(),
            n_train: 100,
            deployment: Deployment::None,
            fit: FitKind::Threshold,
            target: MetricTarget::Untreated,
        };
        let nested = expected_metric(&p, 1, 300, RngSeed(9)).unwrap();
        let seed = RngSeed(9).split(0);
        let rho = train(&m, 100, None, seed.split(0), 0, FitKind::Threshold).unwrap();
        let direct = metric_m(&rho, &untreated_risk(&m), &m, 300, seed.split(2)).unwrap();
        assert_eq!(nested.value, direct.value);
    }
}
