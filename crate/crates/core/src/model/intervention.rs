use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::math::{central_difference, sigmoid, sigmoid_prime, FD_STEP};

type InterventionFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// Caller-supplied intervention `g(rho, x)` acting element-wise.
#[derive(Clone)]
pub struct CustomIntervention {
    pub name: String,
    func: Arc<InterventionFn>,
}

impl CustomIntervention {
    pub fn new(name: impl Into<String>, func: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        CustomIntervention {
            name: name.into(),
            func: Arc::new(func),
        }
    }
}

impl fmt::Debug for CustomIntervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomIntervention")
            .field("name", &self.name)
            .finish_non_exhaustive()
    }
}

/// Intervention applied to a covariate block in response to a score value.
#[derive(Debug, Clone)]
pub enum InterventionSpec {
    Identity,
    /// `(1 - rho)(x + shift) + rho (x - shift)`
    AdditiveShift { shift: f64 },
    /// `x - scale * ln(1 + rho)`
    LogShift { scale: f64 },
    /// `((3 - 2 rho) x + (1 - 2 rho) sqrt(1 + x^2)) / 2`; identity at `rho = 1/2`.
    Blend,
    /// `x - strength (1 - rho) sigmoid(x)`
    SigmoidPull { strength: f64 },
    Custom(CustomIntervention),
}

impl InterventionSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        match self {
            InterventionSpec::AdditiveShift { shift } => check("shift", *shift),
            InterventionSpec::LogShift { scale } => check("scale", *scale),
            InterventionSpec::SigmoidPull { strength } => check("strength", *strength),
            _ => Ok(()),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            InterventionSpec::Identity => true,
            InterventionSpec::AdditiveShift { shift } => *shift == 0.0,
            InterventionSpec::LogShift { scale } => *scale == 0.0,
            InterventionSpec::SigmoidPull { strength } => *strength == 0.0,
            _ => false,
        }
    }

    /// `g(rho, x)` for a single coordinate. No range check on `rho`, so it can
    /// be used inside finite-difference stencils.
    #[inline]
    pub fn apply(&self, rho: f64, x: f64) -> f64 {
        match self {
            InterventionSpec::Identity => x,
            InterventionSpec::AdditiveShift { shift } => (1.0 - rho) * (x + shift) + rho * (x - shift),
            InterventionSpec::LogShift { scale } => x - scale * (1.0 + rho).ln(),
            InterventionSpec::Blend => {
                0.5 * ((3.0 - 2.0 * rho) * x + (1.0 - 2.0 * rho) * (1.0 + x * x).sqrt())
            }
            InterventionSpec::SigmoidPull { strength } => x - strength * (1.0 - rho) * sigmoid(x),
            InterventionSpec::Custom(c) => (c.func)(rho, x),
        }
    }

    /// `dg/drho` at `(rho, x)`.
    pub fn d_rho(&self, rho: f64, x: f64) -> f64 {
        match self {
            InterventionSpec::Identity => 0.0,
            InterventionSpec::AdditiveShift { shift } => -2.0 * shift,
            InterventionSpec::LogShift { scale } => -scale / (1.0 + rho),
            InterventionSpec::Blend => -(x + (1.0 + x * x).sqrt()),
            InterventionSpec::SigmoidPull { strength } => strength * sigmoid(x),
            InterventionSpec::Custom(_) => central_difference(|r| self.apply(r, x), rho, FD_STEP),
        }
    }

    /// `dg/dx` at `(rho, x)`.
    pub fn d_x(&self, rho: f64, x: f64) -> f64 {
        match self {
            InterventionSpec::Identity
            | InterventionSpec::AdditiveShift { .. }
            | InterventionSpec::LogShift { .. } => 1.0,
            InterventionSpec::Blend => {
                0.5 * ((3.0 - 2.0 * rho) + (1.0 - 2.0 * rho) * x / (1.0 + x * x).sqrt())
            }
            InterventionSpec::SigmoidPull { strength } => 1.0 - strength * (1.0 - rho) * sigmoid_prime(x),
            InterventionSpec::Custom(_) => central_difference(|v| self.apply(rho, v), x, FD_STEP),
        }
    }

    pub(crate) fn apply_all(&self, rho: f64, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.apply(rho, v)).collect()
    }
}

/// Element-wise `g(rho, x_i)`.
pub fn eval_intervention(g: &InterventionSpec, rho: f64, x: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::RhoOutOfRange(rho));
    }
    Ok(g.apply_all(rho, x))
}
