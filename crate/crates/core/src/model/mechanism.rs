use std::fmt;
use std::sync::Arc;

use super::{CovariateState, Dimensions};
use crate::error::{Error, Result};
use crate::math::{central_difference, sigmoid, sigmoid_prime, FD_STEP};

/// Largest double below one; keeps saturated sigmoids inside (0, 1).
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// `f(x) = sigmoid(k * (intercept + coef . x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticLinear {
    pub intercept: f64,
    pub coef_s: Vec<f64>,
    pub coef_a: Vec<f64>,
    pub coef_l: Vec<f64>,
    pub steepness: f64,
}

impl LogisticLinear {
    pub fn new(
        intercept: f64,
        coef_s: Vec<f64>,
        coef_a: Vec<f64>,
        coef_l: Vec<f64>,
        steepness: f64,
    ) -> Result<Self> {
        if !(steepness > 0.0 && steepness.is_finite()) {
            return Err(Error::InvalidSpec(format!("steepness must be positive, got {steepness}")));
        }
        let all_finite = std::iter::once(&intercept)
            .chain(&coef_s)
            .chain(&coef_a)
            .chain(&coef_l)
            .all(|c| c.is_finite());
        if !all_finite {
            return Err(Error::InvalidSpec("mechanism coefficients must be finite".into()));
        }
        Dimensions::new(coef_s.len(), coef_a.len(), coef_l.len())?;
        Ok(LogisticLinear {
            intercept,
            coef_s,
            coef_a,
            coef_l,
            steepness,
        })
    }

    /// All coefficients one, no intercept: `f = sigmoid(k * sum(x))`.
    pub fn unit(p_s: usize, p_a: usize, p_l: usize, steepness: f64) -> Result<Self> {
        Self::new(0.0, vec![1.0; p_s], vec![1.0; p_a], vec![1.0; p_l], steepness)
    }

    fn linear_predictor(&self, s: &[f64], a: &[f64], l: &[f64]) -> f64 {
        let dot = |c: &[f64], x: &[f64]| c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>();
        self.intercept + dot(&self.coef_s, s) + dot(&self.coef_a, a) + dot(&self.coef_l, l)
    }
}

type MechanismFn = dyn Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync;

/// Caller-supplied mechanism. The function must return values in (0, 1).
#[derive(Clone)]
pub struct CustomMechanism {
    pub name: String,
    pub dims: Dimensions,
    func: Arc<MechanismFn>,
}

impl CustomMechanism {
    pub fn new(
        name: impl Into<String>,
        dims: Dimensions,
        func: impl Fn(&[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CustomMechanism {
            name: name.into(),
            dims,
            func: Arc::new(func),
        }
    }
}

impl fmt::Debug for CustomMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomMechanism")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .finish_non_exhaustive()
    }
}

/// The causal outcome mechanism `P(Y = 1 | X(1) = x)`.
#[derive(Debug, Clone)]
pub enum MechanismSpec {
    LogisticLinear(LogisticLinear),
    Custom(CustomMechanism),
}

impl MechanismSpec {
    pub fn dims(&self) -> Dimensions {
        match self {
            MechanismSpec::LogisticLinear(m) => Dimensions {
                p_s: m.coef_s.len(),
                p_a: m.coef_a.len(),
                p_l: m.coef_l.len(),
            },
            MechanismSpec::Custom(c) => c.dims,
        }
    }

    pub fn check_dims(&self, s: &[f64], a: &[f64], l: &[f64]) -> Result<()> {
        let d = self.dims();
        for (context, expected, got) in [
            ("set covariates", d.p_s, s.len()),
            ("actionable covariates", d.p_a, a.len()),
            ("latent covariates", d.p_l, l.len()),
        ] {
            if expected != got {
                return Err(Error::DimensionMismatch { context, expected, got });
            }
        }
        Ok(())
    }

    pub fn eval(&self, s: &[f64], a: &[f64], l: &[f64]) -> Result<f64> {
        self.check_dims(s, a, l)?;
        Ok(self.value(s, a, l))
    }

    /// Unchecked evaluation; callers have validated dimensions.
    #[inline]
    pub(crate) fn value(&self, s: &[f64], a: &[f64], l: &[f64]) -> f64 {
        match self {
            MechanismSpec::LogisticLinear(m) => {
                sigmoid(m.steepness * m.linear_predictor(s, a, l)).clamp(f64::MIN_POSITIVE, ONE_BELOW)
            }
            MechanismSpec::Custom(c) => (c.func)(s, a, l),
        }
    }

    /// Partial derivatives with respect to the actionable block.
    pub fn grad_a(&self, s: &[f64], a: &[f64], l: &[f64]) -> Vec<f64> {
        match self {
            MechanismSpec::LogisticLinear(m) => {
                let w = m.steepness * sigmoid_prime(m.steepness * m.linear_predictor(s, a, l));
                m.coef_a.iter().map(|c| w * c).collect()
            }
            MechanismSpec::Custom(_) => (0..a.len())
                .map(|i| {
                    let mut x = a.to_vec();
                    central_difference(
                        |v| {
                            x[i] = v;
                            self.value(s, &x, l)
                        },
                        a[i],
                        FD_STEP,
                    )
                })
                .collect(),
        }
    }

    /// Partial derivatives with respect to the latent block.
    pub fn grad_l(&self, s: &[f64], a: &[f64], l: &[f64]) -> Vec<f64> {
        match self {
            MechanismSpec::LogisticLinear(m) => {
                let w = m.steepness * sigmoid_prime(m.steepness * m.linear_predictor(s, a, l));
                m.coef_l.iter().map(|c| w * c).collect()
            }
            MechanismSpec::Custom(_) => (0..l.len())
                .map(|i| {
                    let mut x = l.to_vec();
                    central_difference(
                        |v| {
                            x[i] = v;
                            self.value(s, a, &x)
                        },
                        l[i],
                        FD_STEP,
                    )
                })
                .collect(),
        }
    }

    /// True when every coefficient is strictly positive, i.e. higher
    /// covariate values mean higher risk. Custom mechanisms are not checked.
    pub fn is_monotone_increasing(&self) -> Option<bool> {
        match self {
            MechanismSpec::LogisticLinear(m) => Some(
                m.coef_s
                    .iter()
                    .chain(&m.coef_a)
                    .chain(&m.coef_l)
                    .all(|c| *c > 0.0),
            ),
            MechanismSpec::Custom(_) => None,
        }
    }
}

pub fn eval_mechanism(f: &MechanismSpec, x: &CovariateState) -> Result<f64> {
    f.eval(&x.x_s, &x.x_a, &x.x_l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Time;

    fn state(s: &[f64], a: &[f64]) -> CovariateState {
        CovariateState {
            x_s: s.to_vec(),
            x_a: a.to_vec(),
            x_l: vec![],
            epoch: 0,
            time: Time::End,
        }
    }

    #[test]
    fn logistic_at_origin_is_half() {
        let f = MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 1.0).unwrap());
        assert_eq!(eval_mechanism(&f, &state(&[0.0], &[0.0])).unwrap(), 0.5);
        let steep = MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 8.0).unwrap());
        assert_eq!(eval_mechanism(&steep, &state(&[0.7], &[-0.7])).unwrap(), 0.5);
    }

    #[test]
    fn logistic_at_table_row() {
        let f = MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 1.0).unwrap());
        let p = eval_mechanism(&f, &state(&[1.185], &[1.272])).unwrap();
        let expected = 1.0 / (1.0 + (-2.457f64).exp());
        assert!((p - expected).abs() < 1e-15);
        assert!((p - 0.921).abs() < 5e-4);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let f = MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 1.0).unwrap());
        let err = eval_mechanism(&f, &state(&[0.0, 1.0], &[0.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 1, got: 2, .. }));
    }

    #[test]
    fn rejects_non_positive_steepness() {
        assert!(LogisticLinear::unit(1, 1, 0, 0.0).is_err());
        assert!(LogisticLinear::unit(1, 1, 0, -1.0).is_err());
    }

    #[test]
    fn output_stays_in_open_interval() {
        let f = MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 1.0).unwrap());
        for x in [-30.0, -5.0, 0.0, 5.0, 30.0] {
            let p = f.eval(&[x], &[0.0], &[]).unwrap();
            assert!(p > 0.0 && p < 1.0, "{p}");
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_difference() {
        let m = LogisticLinear::new(0.3, vec![0.5], vec![1.5, 0.7], vec![2.0], 2.0).unwrap();
        let f = MechanismSpec::LogisticLinear(m.clone());
        let g = MechanismSpec::Custom(CustomMechanism::new("copy", f.dims(), move |s, a, l| {
            sigmoid(m.steepness * m.linear_predictor(s, a, l))
        }));
        let (s, a, l) = ([0.1], [0.2, -0.4], [0.3]);
        for (x, y) in f.grad_a(&s, &a, &l).iter().zip(g.grad_a(&s, &a, &l)) {
            assert!((x - y).abs() < 1e-8);
        }
        for (x, y) in f.grad_l(&s, &a, &l).iter().zip(g.grad_l(&s, &a, &l)) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}
