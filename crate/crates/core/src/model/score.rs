use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{InterventionSpec, MechanismSpec, PopulationSpec};
use crate::error::{Error, Result};
use crate::estimators::{self, OracleEstimate};
use crate::math::sigmoid;
use crate::rng::RngSeed;

/// Anything that maps observed covariates to a risk in [0, 1].
pub trait Score: Send + Sync {
    fn score(&self, x_s: &[f64], x_a: &[f64]) -> Result<f64>;
}

/// Fixed integration rule over the latent block: a seeded sample for
/// continuous populations, the atoms themselves for discrete ones.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Quadrature {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub exact: bool,
}

impl Quadrature {
    fn none() -> Self {
        Quadrature {
            points: vec![vec![]],
            weights: vec![1.0],
            exact: true,
        }
    }

    /// Weighted mean of `g` over the rule, with its Monte-Carlo standard error
    /// (zero for exact rules).
    pub fn expectation(&self, mut g: impl FnMut(&[f64]) -> f64) -> (f64, f64) {
        if self.exact {
            let v = self.points.iter().zip(&self.weights).map(|(p, w)| w * g(p)).sum();
            return (v, 0.0);
        }
        let values: Vec<f64> = self.points.iter().map(|p| g(p)).collect();
        crate::math::mean_and_se(&values)
    }
}

/// Latent-integration settings for oracle scores.
#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub latent_mc_samples: usize,
    pub latent_conditional: Option<PopulationSpec>,
    pub seed: RngSeed,
    quadrature: Arc<Quadrature>,
}

impl OracleConfig {
    /// No latent covariates: expectations are exact.
    pub fn exact() -> Self {
        OracleConfig {
            latent_mc_samples: 1,
            latent_conditional: None,
            seed: RngSeed(0),
            quadrature: Arc::new(Quadrature::none()),
        }
    }

    /// The latent draws are generated once here and shared by every
    /// evaluation, so an oracle built on this config is a deterministic
    /// function of its inputs.
    pub fn new(latent_mc_samples: usize, latent_conditional: PopulationSpec, seed: RngSeed) -> Result<Self> {
        if latent_mc_samples == 0 {
            return Err(Error::InvalidSpec("latent_mc_samples must be at least 1".into()));
        }
        latent_conditional.validate()?;
        let quadrature = match latent_conditional.support() {
            Some(atoms) => Quadrature {
                points: atoms.iter().map(|a| a.point.clone()).collect(),
                weights: atoms.iter().map(|a| a.prob).collect(),
                exact: true,
            },
            None => {
                let mut stream = seed.stream();
                let points: Vec<Vec<f64>> = (0..latent_mc_samples)
                    .map(|_| latent_conditional.draw(&mut stream))
                    .collect();
                let w = 1.0 / latent_mc_samples as f64;
                Quadrature {
                    weights: vec![w; points.len()],
                    points,
                    exact: false,
                }
            }
        };
        Ok(OracleConfig {
            latent_mc_samples,
            latent_conditional: Some(latent_conditional),
            seed,
            quadrature: Arc::new(quadrature),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_conditional.as_ref().map_or(0, |p| p.dim())
    }

    pub(crate) fn quadrature(&self) -> &Quadrature {
        &self.quadrature
    }
}

/// Which interventions were in force when the outcome an oracle estimates
/// was generated.
#[derive(Debug, Clone)]
pub enum History {
    /// No score deployed (epoch 0).
    Initial,
    /// Naive updating: the previous epoch's score drove the interventions.
    Replace(ScoreFunction),
    /// Successive adjuvancy: each score in order was applied on top of the
    /// covariates produced by the ones before it.
    Chain(Vec<ScoreFunction>),
}

/// `E[Y | X_s(0) = x_s, X_a(0) = x_a]` under a given intervention history.
#[derive(Debug, Clone)]
pub struct OracleScore {
    pub mechanism: MechanismSpec,
    pub g_a: InterventionSpec,
    pub g_l: InterventionSpec,
    pub history: History,
    pub latent: Option<OracleConfig>,
}

impl OracleScore {
    fn config(&self) -> Result<&OracleConfig> {
        static EXACT: std::sync::OnceLock<OracleConfig> = std::sync::OnceLock::new();
        match &self.latent {
            Some(cfg) => Ok(cfg),
            None if self.mechanism.dims().p_l > 0 => Err(Error::MissingLatentBudget),
            None => Ok(EXACT.get_or_init(OracleConfig::exact)),
        }
    }

    pub fn estimate(&self, x_s: &[f64], x_a: &[f64]) -> Result<OracleEstimate> {
        let cfg = self.config()?;
        match &self.history {
            History::Initial => estimators::oracle_score(
                &self.mechanism,
                &InterventionSpec::Identity,
                &InterventionSpec::Identity,
                0.0,
                x_s,
                x_a,
                cfg,
            ),
            History::Replace(prev) => {
                let rho = prev.score(x_s, x_a)?;
                estimators::oracle_score(&self.mechanism, &self.g_a, &self.g_l, rho, x_s, x_a, cfg)
            }
            History::Chain(scores) => {
                let rhos = scores
                    .iter()
                    .map(|s| s.score(x_s, x_a))
                    .collect::<Result<Vec<_>>>()?;
                estimators::chained_oracle_score(&self.mechanism, &self.g_a, &self.g_l, &rhos, x_s, x_a, cfg)
            }
        }
    }
}

/// A deployable risk score.
#[derive(Debug, Clone)]
pub enum ScoreFunction {
    Oracle(Arc<OracleScore>),
    /// `value_pos` where the observed covariates sum to > 0, else `value_neg`.
    ThresholdRule { value_pos: f64, value_neg: f64 },
    /// `sigmoid(b0 + b . (x_s, x_a))`
    LogisticFit { coefficients: Vec<f64> },
    ConstantOverride(f64),
}

impl ScoreFunction {
    pub fn oracle(oracle: OracleScore) -> Self {
        ScoreFunction::Oracle(Arc::new(oracle))
    }

    pub fn threshold(value_pos: f64, value_neg: f64) -> Result<Self> {
        for v in [value_pos, value_neg] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::RhoOutOfRange(v));
            }
        }
        Ok(ScoreFunction::ThresholdRule { value_pos, value_neg })
    }

    pub fn constant(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::RhoOutOfRange(value));
        }
        Ok(ScoreFunction::ConstantOverride(value))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ScoreFunction::Oracle(_) => "oracle",
            ScoreFunction::ThresholdRule { .. } => "threshold",
            ScoreFunction::LogisticFit { .. } => "logistic",
            ScoreFunction::ConstantOverride(_) => "constant",
        }
    }

    /// Parameters of closed-form scores, for reports.
    pub fn summary(&self) -> ScoreSummary {
        match self {
            ScoreFunction::Oracle(_) => ScoreSummary {
                kind: "oracle".into(),
                parameters: vec![],
            },
            ScoreFunction::ThresholdRule { value_pos, value_neg } => ScoreSummary {
                kind: "threshold".into(),
                parameters: vec![*value_pos, *value_neg],
            },
            ScoreFunction::LogisticFit { coefficients } => ScoreSummary {
                kind: "logistic".into(),
                parameters: coefficients.clone(),
            },
            ScoreFunction::ConstantOverride(v) => ScoreSummary {
                kind: "constant".into(),
                parameters: vec![*v],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub kind: String,
    pub parameters: Vec<f64>,
}

impl Score for ScoreFunction {
    fn score(&self, x_s: &[f64], x_a: &[f64]) -> Result<f64> {
        match self {
            ScoreFunction::Oracle(o) => o.estimate(x_s, x_a).map(|e| e.value),
            ScoreFunction::ThresholdRule { value_pos, value_neg } => {
                let sum: f64 = x_s.iter().chain(x_a).sum();
                Ok(if sum > 0.0 { *value_pos } else { *value_neg })
            }
            ScoreFunction::LogisticFit { coefficients } => {
                let expected = 1 + x_s.len() + x_a.len();
                if coefficients.len() != expected {
                    return Err(Error::DimensionMismatch {
                        context: "logistic score coefficients",
                        expected,
                        got: coefficients.len(),
                    });
                }
                let eta = coefficients[0]
                    + coefficients[1..]
                        .iter()
                        .zip(x_s.iter().chain(x_a))
                        .map(|(b, x)| b * x)
                        .sum::<f64>();
                Ok(sigmoid(eta))
            }
            ScoreFunction::ConstantOverride(v) => Ok(*v),
        }
    }
}

impl<S: Score + ?Sized> Score for &S {
    fn score(&self, x_s: &[f64], x_a: &[f64]) -> Result<f64> {
        (**self).score(x_s, x_a)
    }
}

pub fn eval_score(rho: &ScoreFunction, x_s: &[f64], x_a: &[f64]) -> Result<f64> {
    rho.score(x_s, x_a)
}
