//! Domain types of the causal model: covariate blocks, the outcome mechanism
//! `f`, interventions `g`, the population measure `mu` and score functions.
//!
//! Covariates are split into three blocks: *set* covariates `x_s` (observed,
//! never changed), *actionable* covariates `x_a` (observed, changed by
//! interventions) and *latent* covariates `x_l` (unobserved, possibly changed).
//! Everything here is immutable after construction and cheap to clone.

mod intervention;
mod mechanism;
mod population;
mod score;

pub use intervention::{eval_intervention, CustomIntervention, InterventionSpec};
pub use mechanism::{eval_mechanism, CustomMechanism, LogisticLinear, MechanismSpec};
pub use population::{Atom, PopulationSpec};
pub use score::{eval_score, History, OracleConfig, OracleScore, Score, ScoreFunction, ScoreSummary};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dimensions {
    pub p_s: usize,
    pub p_a: usize,
    pub p_l: usize,
}

impl Dimensions {
    pub fn new(p_s: usize, p_a: usize, p_l: usize) -> Result<Self> {
        if p_s + p_a == 0 {
            return Err(Error::InvalidSpec(
                "at least one observed covariate (p_s + p_a >= 1) is required".into(),
            ));
        }
        Ok(Dimensions { p_s, p_a, p_l })
    }

    /// Width of the observed block `(x_s, x_a)`.
    pub fn observed(&self) -> usize {
        self.p_s + self.p_a
    }

    pub fn total(&self) -> usize {
        self.p_s + self.p_a + self.p_l
    }

    /// Splits a full covariate row into `(x_s, x_a, x_l)`.
    pub fn split<'a>(&self, row: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (s, rest) = row.split_at(self.p_s);
        let (a, l) = rest.split_at(self.p_a);
        (s, a, l)
    }
}

/// Within-epoch time point: the score is computed at `Start`, the outcome
/// depends on covariates at `End`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Time {
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateState {
    pub x_s: Vec<f64>,
    pub x_a: Vec<f64>,
    pub x_l: Vec<f64>,
    pub epoch: usize,
    pub time: Time,
}

impl CovariateState {
    pub fn from_row(dims: &Dimensions, row: &[f64], epoch: usize, time: Time) -> Result<Self> {
        if row.len() != dims.total() {
            return Err(Error::DimensionMismatch {
                context: "covariate row",
                expected: dims.total(),
                got: row.len(),
            });
        }
        let (s, a, l) = dims.split(row);
        Ok(CovariateState {
            x_s: s.to_vec(),
            x_a: a.to_vec(),
            x_l: l.to_vec(),
            epoch,
            time,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.x_s.len(), self.x_a.len(), self.x_l.len())
    }

    /// The state after intervening with score value `rho`. Set covariates are
    /// carried over unchanged.
    pub fn intervene(&self, g_a: &InterventionSpec, g_l: &InterventionSpec, rho: f64) -> Result<Self> {
        Ok(CovariateState {
            x_s: self.x_s.clone(),
            x_a: eval_intervention(g_a, rho, &self.x_a)?,
            x_l: eval_intervention(g_l, rho, &self.x_l)?,
            epoch: self.epoch,
            time: Time::End,
        })
    }

    /// Same covariates, relabelled as the end-of-epoch state (no intervention).
    pub fn unchanged(&self) -> Self {
        CovariateState {
            time: Time::End,
            ..self.clone()
        }
    }
}

/// The fixed ingredients of a simulation: mechanism, interventions,
/// population and (when latents exist) the latent integration rule.
#[derive(Debug, Clone)]
pub struct Model {
    pub f: MechanismSpec,
    pub g_a: InterventionSpec,
    pub g_l: InterventionSpec,
    pub mu: PopulationSpec,
    pub latent: Option<OracleConfig>,
}

impl Model {
    pub fn new(
        f: MechanismSpec,
        g_a: InterventionSpec,
        g_l: InterventionSpec,
        mu: PopulationSpec,
        latent: Option<OracleConfig>,
    ) -> Result<Self> {
        let m = Model { f, g_a, g_l, mu, latent };
        m.validate()?;
        Ok(m)
    }

    pub fn dims(&self) -> Dimensions {
        self.f.dims()
    }

    pub fn validate(&self) -> Result<()> {
        self.g_a.validate()?;
        self.g_l.validate()?;
        self.mu.validate()?;
        let d = self.dims();
        if self.mu.dim() != d.total() {
            return Err(Error::DimensionMismatch {
                context: "population",
                expected: d.total(),
                got: self.mu.dim(),
            });
        }
        if let Some(cfg) = &self.latent {
            if d.p_l > 0 && cfg.latent_dim() != d.p_l {
                return Err(Error::DimensionMismatch {
                    context: "latent conditional",
                    expected: d.p_l,
                    got: cfg.latent_dim(),
                });
            }
        }
        Ok(())
    }

    /// The latent rule used by oracle expectations; exact when `p_l = 0`.
    pub fn oracle_config(&self) -> Result<OracleConfig> {
        match &self.latent {
            _ if self.dims().p_l == 0 => Ok(OracleConfig::exact()),
            Some(cfg) => Ok(cfg.clone()),
            None => Err(Error::MissingLatentBudget),
        }
    }

    pub fn oracle(&self, history: History) -> ScoreFunction {
        ScoreFunction::oracle(OracleScore {
            mechanism: self.f.clone(),
            g_a: self.g_a.clone(),
            g_l: self.g_l.clone(),
            history,
            latent: self.latent.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_need_an_observed_covariate() {
        assert!(Dimensions::new(0, 0, 3).is_err());
        assert!(Dimensions::new(1, 0, 0).is_ok());
        assert_eq!(Dimensions::new(1, 2, 3).unwrap().observed(), 3);
    }

    #[test]
    fn set_covariates_survive_intervention() {
        let d = Dimensions::new(1, 1, 0).unwrap();
        let x = CovariateState::from_row(&d, &[0.4, 1.0], 2, Time::Start).unwrap();
        let y = x
            .intervene(&InterventionSpec::LogShift { scale: 1.0 }, &InterventionSpec::Identity, 1.0)
            .unwrap();
        assert_eq!(y.x_s, x.x_s);
        assert_eq!(y.time, Time::End);
        assert!((y.x_a[0] - (1.0 - 2f64.ln())).abs() < 1e-15);
    }
}
