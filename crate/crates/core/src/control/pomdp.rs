//! The deployment loop as a partially observed Markov decision process. The
//! hidden state is the full covariate population (latents and both time
//! points); the agent observes `(X_s(0), X_a(0), Y)` and acts by choosing the
//! score to deploy next epoch. Reward is the realized event rate.

use serde::{Deserialize, Serialize};

use crate::dynamics::{intervene_population, FitKind};
use crate::error::{Error, Result};
use crate::estimators::{fit_logistic, fit_threshold, LogisticOptions};
use crate::evaluation::objective;
use crate::model::{CovariateState, Model, ScoreFunction, ScoreSummary};
use crate::rng::RngSeed;
use crate::sampling::{make_dataset, sample_covariates, sample_outcomes, Dataset};

pub type Observation = Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// Mean of the sampled outcomes.
    Sampled,
    /// Expected event rate under the action; atom populations only.
    Exact,
}

/// Hidden state after an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct PomdpState {
    pub epoch: usize,
    pub start: Vec<CovariateState>,
    pub end: Vec<CovariateState>,
    pub outcomes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PomdpStep {
    pub epoch: usize,
    pub action: ScoreSummary,
    pub observation: Observation,
    pub reward: f64,
    pub discount: f64,
}

/// Uses the same per-epoch seed layout as the naive epoch engine, so a
/// rollout and `run_naive` with the same seed see the same populations.
#[derive(Debug, Clone)]
pub struct PomdpEnv {
    pub model: Model,
    pub n: usize,
    pub reward: RewardMode,
    pub seed: RngSeed,
}

impl PomdpEnv {
    pub fn new(model: Model, n: usize, reward: RewardMode, seed: RngSeed) -> Result<Self> {
        model.validate()?;
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if reward == RewardMode::Exact && model.mu.support().is_none() {
            return Err(Error::InvalidSpec("exact rewards need a discrete-atom population".into()));
        }
        Ok(PomdpEnv { model, n, reward, seed })
    }

    /// Epoch 0: no score deployed yet.
    pub fn reset(&self) -> Result<(PomdpState, Observation)> {
        let start = self.sample_start(0)?;
        let end: Vec<_> = start.iter().map(|s| s.unchanged()).collect();
        self.finish(0, start, end)
    }

    /// Deploy `action` during the epoch after `state`.
    pub fn step(&self, state: &PomdpState, action: &ScoreFunction) -> Result<(PomdpState, Observation, f64)> {
        let e = state.epoch + 1;
        let start = self.sample_start(e)?;
        let end = intervene_population(&self.model, action, &start, &[])?;
        let (next, obs) = self.finish(e, start, end)?;
        let reward = match self.reward {
            RewardMode::Sampled => event_rate(&next.outcomes),
            RewardMode::Exact => objective(action, &self.model, 0, self.seed)?.value,
        };
        Ok((next, obs, reward))
    }

    fn sample_start(&self, e: usize) -> Result<Vec<CovariateState>> {
        let seed = self.seed.split(e as u64).split(0);
        sample_covariates(&self.model.mu, self.model.dims(), self.n, e, seed)
    }

    fn finish(&self, e: usize, start: Vec<CovariateState>, end: Vec<CovariateState>) -> Result<(PomdpState, Observation)> {
        let outcomes = sample_outcomes(&self.model.f, &end, self.seed.split(e as u64).split(1))?;
        let obs = make_dataset(&start, &outcomes)?;
        Ok((
            PomdpState {
                epoch: e,
                start,
                end,
                outcomes,
            },
            obs,
        ))
    }
}

fn event_rate(y: &[u8]) -> f64 {
    y.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64
}

/// Maps the observation history (oldest first) to the next score.
pub trait Policy {
    fn act(&mut self, history: &[Observation]) -> Result<ScoreFunction>;
}

#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub ScoreFunction);

impl Policy for ConstantPolicy {
    fn act(&mut self, _history: &[Observation]) -> Result<ScoreFunction> {
        Ok(self.0.clone())
    }
}

/// Refit on the latest observation, as in naive updating.
#[derive(Debug, Clone, Copy)]
pub struct NaiveFitPolicy(pub FitKind);

impl Policy for NaiveFitPolicy {
    fn act(&mut self, history: &[Observation]) -> Result<ScoreFunction> {
        let last = history.last().ok_or(Error::EmptyDataset)?;
        match self.0 {
            FitKind::Threshold => fit_threshold(last),
            FitKind::Logistic => Ok(fit_logistic(last, LogisticOptions::default())?.score()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub initial: Observation,
    pub steps: Vec<PomdpStep>,
    /// `sum_e gamma^(e-1) r_e`
    pub discounted_return: f64,
    /// Loss form of the same quantity.
    pub negated_return: f64,
}

pub fn pomdp_rollout(env: &PomdpEnv, policy: &mut dyn Policy, horizon: usize, gamma: f64) -> Result<Rollout> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidSpec(format!("discount must lie in [0, 1], got {gamma}")));
    }
    let (mut state, initial) = env.reset()?;
    let mut history = vec![initial.clone()];
    let mut steps = Vec::with_capacity(horizon);
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let action = policy.act(&history)?;
        let (next, obs, reward) = env.step(&state, &action)?;
        total += discount * reward;
        steps.push(PomdpStep {
            epoch: next.epoch,
            action: action.summary(),
            observation: obs.clone(),
            reward,
            discount,
        });
        history.push(obs);
        state = next;
        discount *= gamma;
    }
    Ok(Rollout {
        initial,
        steps,
        discounted_return: total,
        negated_return: -total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_naive, EpochConfig, ScoreMode};
    use crate::evaluation::{b2_model, b5_model};

    #[test]
    fn naive_rollout_matches_epoch_engine() {
        let model = b2_model();
        let env = PomdpEnv::new(model.clone(), 2000, RewardMode::Sampled, RngSeed(9)).unwrap();
        let r = pomdp_rollout(&env, &mut NaiveFitPolicy(FitKind::Logistic), 3, 1.0).unwrap();
        let trace = run_naive(&model, &EpochConfig::new(ScoreMode::Fitted(vec![FitKind::Logistic]), 2000, 4, RngSeed(9))).unwrap();
        let rates = trace.event_rates();
        for (i, s) in r.steps.iter().enumerate() {
            assert_eq!(s.reward, rates[i + 1]);
        }
    }

    #[test]
    fn exact_reward_requires_atoms() {
        assert!(PomdpEnv::new(b2_model(), 10, RewardMode::Exact, RngSeed(0)).is_err());
        let env = PomdpEnv::new(b5_model(), 10, RewardMode::Exact, RngSeed(0)).unwrap();
        let rho = ScoreFunction::constant(0.0).unwrap();
        let r = pomdp_rollout(&env, &mut ConstantPolicy(rho), 2, 0.5).unwrap();
        let v = r.steps[0].reward;
        assert!((r.discounted_return - 1.5 * v).abs() < 1e-12);
        assert_eq!(r.negated_return, -r.discounted_return);
    }
}
