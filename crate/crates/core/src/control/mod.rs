//! Control interventions: keep the score fixed and instead choose the
//! intervention, re-estimating the outcome model each epoch by regressing on
//! post-intervention covariates. Also a POMDP view of the deployment loop.

mod pomdp;

pub use pomdp::{
    pomdp_rollout, ConstantPolicy, NaiveFitPolicy, Observation, Policy, PomdpEnv, PomdpState, PomdpStep,
    RewardMode, Rollout,
};

use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_logistic, FitReport, LogisticOptions};
use crate::evaluation::{cost, objective, CostSpec};
use crate::math::linspace;
use crate::dynamics::intervene_population;
use crate::model::{CustomIntervention, InterventionSpec, LogisticLinear, MechanismSpec, Model, Score};
use crate::rng::RngSeed;
use crate::sampling::{make_dataset, sample_covariates, sample_outcomes};

/// One-parameter intervention family `g_theta`; `theta = 0` is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    /// `x - theta * ln(1 + rho)`
    ScaledLogShift,
    /// `x - theta * rho`
    LinearShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamInterventionFamily {
    pub kind: FamilyKind,
    pub lower: f64,
    pub upper: f64,
    pub resolution: usize,
}

impl ParamInterventionFamily {
    pub fn new(kind: FamilyKind, lower: f64, upper: f64, resolution: usize) -> Result<Self> {
        if !(lower >= 0.0 && upper >= lower && upper.is_finite()) {
            return Err(Error::InvalidSpec(format!("theta bounds [{lower}, {upper}] must satisfy 0 <= lower <= upper")));
        }
        if resolution < 2 {
            return Err(Error::InvalidSpec("theta grid needs at least 2 points".into()));
        }
        Ok(ParamInterventionFamily {
            kind,
            lower,
            upper,
            resolution,
        })
    }

    /// Scaled log-shift on `[0, upper]` with 200 grid points.
    pub fn scaled_log_shift(upper: f64) -> Result<Self> {
        Self::new(FamilyKind::ScaledLogShift, 0.0, upper, 200)
    }

    pub fn intervention(&self, theta: f64) -> InterventionSpec {
        match self.kind {
            FamilyKind::ScaledLogShift => InterventionSpec::LogShift { scale: theta },
            FamilyKind::LinearShift => InterventionSpec::Custom(CustomIntervention::new(
                "linear-shift",
                move |rho, x| x - theta * rho,
            )),
        }
    }

    pub fn grid(&self) -> Vec<f64> {
        linspace(self.lower, self.upper, self.resolution)
    }

    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.resolution - 1) as f64
    }
}

/// Logistic outcome model with unit steepness from fitted coefficients.
pub fn mechanism_from_fit(fit: &FitReport, p_s: usize, p_a: usize) -> Result<MechanismSpec> {
    if fit.coefficients.len() != 1 + p_s + p_a {
        return Err(Error::DimensionMismatch {
            context: "fitted coefficients",
            expected: 1 + p_s + p_a,
            got: fit.coefficients.len(),
        });
    }
    let b = &fit.coefficients;
    Ok(MechanismSpec::LogisticLinear(LogisticLinear::new(
        b[0],
        b[1..1 + p_s].to_vec(),
        b[1 + p_s..].to_vec(),
        vec![],
        1.0,
    )?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlStep {
    pub theta: f64,
    pub objective: f64,
    pub cost: f64,
    pub feasible_points: usize,
}

/// Grid search for the `theta` minimizing the objective under `fitted`
/// subject to `cost <= budget`. Objective and cost share one population
/// sample across all `theta`; ties go to the smaller `theta`.
pub fn control_step(
    fitted: &FitReport,
    family: &ParamInterventionFamily,
    rho: &dyn Score,
    cost_spec: &CostSpec,
    model: &Model,
    mc_n: usize,
    seed: RngSeed,
) -> Result<ControlStep> {
    let dims = model.dims();
    if dims.p_l != 0 {
        return Err(Error::InvalidSpec("control interventions assume no latent covariates".into()));
    }
    if !(cost_spec.budget >= 0.0) {
        return Err(Error::NoFeasiblePoint(cost_spec.budget));
    }
    let f_hat = mechanism_from_fit(fitted, dims.p_s, dims.p_a)?;
    let mut best: Option<ControlStep> = None;
    let mut feasible = 0;
    for theta in family.grid() {
        let g = family.intervention(theta);
        let hat = Model {
            f: f_hat.clone(),
            g_a: g.clone(),
            g_l: InterventionSpec::Identity,
            mu: model.mu.clone(),
            latent: None,
        };
        let c = cost(rho, &hat, cost_spec, mc_n, seed)?.value;
        if c > cost_spec.budget {
            continue;
        }
        feasible += 1;
        let obj = objective(rho, &hat, mc_n, seed)?.value;
        if best.is_none_or(|b| obj < b.objective) {
            best = Some(ControlStep {
                theta,
                objective: obj,
                cost: c,
                feasible_points: 0,
            });
        }
    }
    let mut step = best.ok_or(Error::NoFeasiblePoint(cost_spec.budget))?;
    step.feasible_points = feasible;
    Ok(step)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEpoch {
    pub epoch: usize,
    pub theta: f64,
    /// Outcome model used to choose `theta`.
    pub fit_used: FitReport,
    /// Outcome model re-estimated on this epoch's post-intervention data.
    pub refit: FitReport,
    /// Objective under `fit_used`.
    pub objective: f64,
    /// Objective under the true mechanism.
    pub true_objective: f64,
    pub cost: f64,
    pub event_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLoopConfig {
    pub epochs: usize,
    pub n: usize,
    pub mc_n: usize,
    pub seed: RngSeed,
}

/// Each epoch: choose `theta_e` under the current outcome model, intervene
/// with `g_theta_e(rho(x), x)`, observe outcomes, and refit the outcome
/// model on `(X_e(1), Y_e)`.
pub fn run_control_loop(
    initial_fit: &FitReport,
    family: &ParamInterventionFamily,
    rho: &(dyn Score + Sync),
    cost_spec: &CostSpec,
    model: &Model,
    cfg: &ControlLoopConfig,
) -> Result<Vec<ControlEpoch>> {
    if cfg.epochs == 0 {
        return Err(Error::InvalidSpec("epochs must be at least 1".into()));
    }
    model.validate()?;
    let dims = model.dims();
    let mut fit = initial_fit.clone();
    let mut out = Vec::with_capacity(cfg.epochs);
    let mc_seed = cfg.seed.split(u64::MAX);
    for e in 0..cfg.epochs {
        let step = control_step(&fit, family, rho, cost_spec, model, cfg.mc_n, mc_seed)?;
        let truth = Model {
            g_a: family.intervention(step.theta),
            ..model.clone()
        };
        let seed = cfg.seed.split(e as u64);
        let start = sample_covariates(&model.mu, dims, cfg.n, e, seed.split(0))?;
        let end = intervene_population(&truth, rho, &start, &[])?;
        let y = sample_outcomes(&model.f, &end, seed.split(1))?;
        let refit = fit_logistic(&make_dataset(&end, &y)?, LogisticOptions::default())?;
        let true_objective = objective(rho, &truth, cfg.mc_n, mc_seed)?.value;
        out.push(ControlEpoch {
            epoch: e,
            theta: step.theta,
            fit_used: fit.clone(),
            refit: refit.clone(),
            objective: step.objective,
            true_objective,
            cost: step.cost,
            event_rate: y.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64,
        });
        fit = refit;
    }
    Ok(out)
}

pub fn write_control_csv<W: io::Write>(epochs: &[ControlEpoch], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "theta", "objective", "true_objective", "cost", "event_rate", "refit_coefficients"])?;
    for e in epochs {
        let coefs: Vec<String> = e.refit.coefficients.iter().map(|c| c.to_string()).collect();
        w.write_record([
            e.epoch.to_string(),
            e.theta.to_string(),
            e.objective.to_string(),
            e.true_objective.to_string(),
            e.cost.to_string(),
            e.event_rate.to_string(),
            coefs.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}
