//! Score construction: the oracle expectation, the sign-threshold rule,
//! logistic maximum likelihood by IRLS, and fitting on a held-out subset.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InterventionSpec, MechanismSpec, OracleConfig, ScoreFunction};
use crate::rng::RngSeed;
use crate::sampling::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub value: f64,
    /// Monte-Carlo standard error over the latent draws; zero when exact.
    pub std_error: f64,
}

/// `E_L[f(x_s, g_a(prev, x_a), g_l(prev, L))]` over the configured latent rule.
pub fn oracle_score(
    f: &MechanismSpec,
    g_a: &InterventionSpec,
    g_l: &InterventionSpec,
    prev_rho: f64,
    x_s: &[f64],
    x_a: &[f64],
    cfg: &OracleConfig,
) -> Result<OracleEstimate> {
    if !(0.0..=1.0).contains(&prev_rho) {
        return Err(Error::RhoOutOfRange(prev_rho));
    }
    chained_oracle_score(f, g_a, g_l, &[prev_rho], x_s, x_a, cfg)
}

/// Oracle under a chain of interventions applied in order `rhos[0], rhos[1], ...`.
/// An empty chain is the un-intervened risk.
pub fn chained_oracle_score(
    f: &MechanismSpec,
    g_a: &InterventionSpec,
    g_l: &InterventionSpec,
    rhos: &[f64],
    x_s: &[f64],
    x_a: &[f64],
    cfg: &OracleConfig,
) -> Result<OracleEstimate> {
    let dims = f.dims();
    if dims.p_l > 0 && cfg.latent_dim() != dims.p_l {
        return Err(if cfg.latent_conditional.is_none() {
            Error::MissingLatentBudget
        } else {
            Error::DimensionMismatch {
                context: "latent conditional",
                expected: dims.p_l,
                got: cfg.latent_dim(),
            }
        });
    }
    let mut a = x_a.to_vec();
    for &r in rhos {
        a = g_a.apply_all(r, &a);
    }
    f.check_dims(x_s, &a, &vec![0.0; dims.p_l])?;
    let (value, std_error) = cfg.quadrature().expectation(|latent| {
        if dims.p_l == 0 {
            return f.value(x_s, &a, &[]);
        }
        let mut l = latent.to_vec();
        for &r in rhos {
            l = g_l.apply_all(r, &l);
        }
        f.value(x_s, &a, &l)
    });
    Ok(OracleEstimate { value, std_error })
}

/// Mean outcome on each side of `sum(x) > 0`. Rows summing to exactly zero
/// fall in the non-positive cell.
pub fn fit_threshold(data: &Dataset) -> Result<ScoreFunction> {
    let (mut pos_n, mut pos_y, mut neg_n, mut neg_y) = (0usize, 0usize, 0usize, 0usize);
    for (row, &y) in data.covariates.iter().zip(&data.outcomes) {
        if row.iter().sum::<f64>() > 0.0 {
            pos_n += 1;
            pos_y += y as usize;
        } else {
            neg_n += 1;
            neg_y += y as usize;
        }
    }
    if pos_n == 0 {
        return Err(Error::EmptyCell("sum > 0"));
    }
    if neg_n == 0 {
        return Err(Error::EmptyCell("sum <= 0"));
    }
    Ok(ScoreFunction::ThresholdRule {
        value_pos: pos_y as f64 / pos_n as f64,
        value_neg: neg_y as f64 / neg_n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Intercept first, then `x_s`, then `x_a` slopes.
    pub coefficients: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Coefficients blew past the separation threshold.
    #[serde(default)]
    pub separation: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loglik_trace: Vec<f64>,
}

impl FitReport {
    pub fn score(&self) -> ScoreFunction {
        ScoreFunction::LogisticFit {
            coefficients: self.coefficients.clone(),
        }
    }

    /// Errors with [`Error::SeparationDetected`] for a diverged fit.
    pub fn require_converged(&self) -> Result<&Self> {
        if self.separation {
            let mag = self.coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            return Err(Error::SeparationDetected(mag));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    /// Coefficient step max-norm below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

const GRAD_TOL: f64 = 1e-6;
const SEPARATION_BOUND: f64 = 30.0;
const MAX_HALVINGS: usize = 20;

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Design {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Design {
    fn new(data: &Dataset) -> Self {
        let (n, p) = (data.n(), data.width() + 1);
        let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { data.covariates[i][j - 1] });
        let y = DVector::from_iterator(n, data.outcomes.iter().map(|&v| v as f64));
        Design { x, y }
    }

    fn loglik(&self, beta: &DVector<f64>) -> f64 {
        let eta = &self.x * beta;
        eta.iter().zip(self.y.iter()).map(|(e, y)| y * e - softplus(*e)).sum()
    }

    /// The linear predictor classifies every row correctly, so the likelihood
    /// has no finite maximizer.
    fn separates(&self, beta: &DVector<f64>) -> bool {
        let eta = &self.x * beta;
        eta.iter().zip(self.y.iter()).all(|(e, y)| if *y > 0.5 { *e > 0.0 } else { *e < 0.0 })
    }

    fn gradient_and_weights(&self, beta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let eta = &self.x * beta;
        let mu = eta.map(crate::math::sigmoid);
        let w = mu.map(|m| m * (1.0 - m));
        (self.x.transpose() * (&self.y - &mu), w)
    }
}

/// Bernoulli maximum likelihood with intercept via iteratively reweighted
/// least squares (Newton steps with step-halving).
///
/// Iteration stops when the log-likelihood gradient max-norm is at most 1e-6,
/// when a coefficient step is smaller than `tol`, or after `max_iter`
/// iterations; `converged` reports whether the gradient criterion holds at the
/// returned coefficients. Coefficients exceeding 30 in magnitude are taken as
/// separation and returned with `separation = true`, `converged = false`.
pub fn fit_logistic(data: &Dataset, opts: LogisticOptions) -> Result<FitReport> {
    let p = data.width() + 1;
    if data.n() <= p {
        return Err(Error::TooFewRows {
            rows: data.n(),
            coefficients: p,
        });
    }
    let design = Design::new(data);
    let mut beta = DVector::zeros(p);
    let mut ll = design.loglik(&beta);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut separation = false;

    loop {
        let (grad, w) = design.gradient_and_weights(&beta);
        if iterations >= opts.max_iter || (grad.amax() <= GRAD_TOL && !design.separates(&beta)) {
            break;
        }
        iterations += 1;
        let mut weighted = design.x.clone();
        for (mut row, wi) in weighted.row_iter_mut().zip(w.iter()) {
            row *= *wi;
        }
        let mut hessian = design.x.transpose() * weighted;
        // Weights underflow to zero once fitted probabilities saturate.
        let floor = 1e-12 * hessian.diagonal().amax().max(1e-300);
        for i in 0..p {
            hessian[(i, i)] += floor;
        }
        let step = match hessian.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => match hessian.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &beta + &step * t;
            let cand_ll = design.loglik(&candidate);
            if cand_ll >= ll {
                accepted = Some((candidate, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            break;
        };
        let moved = (&next - &beta).amax();
        beta = next;
        ll = next_ll;
        trace.push(ll);

        if beta.amax() > SEPARATION_BOUND {
            separation = true;
            break;
        }
        if moved < opts.tol {
            break;
        }
    }

    let grad_norm = design.gradient_and_weights(&beta).0.amax();
    let separation = separation || design.separates(&beta);
    Ok(FitReport {
        coefficients: beta.iter().copied().collect(),
        loglik: ll,
        iterations,
        converged: !separation && grad_norm <= GRAD_TOL,
        separation,
        loglik_trace: trace,
    })
}

/// Seeded uniform choice of `round(fraction * n)` rows without replacement,
/// returned in increasing order.
pub fn select_holdout(n: usize, holdout_fraction: f64, seed: RngSeed) -> Result<Vec<usize>> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::InvalidHoldoutFraction(holdout_fraction));
    }
    let k = ((holdout_fraction * n as f64).round() as usize).min(n);
    // Partial Fisher-Yates.
    let mut idx: Vec<usize> = (0..n).collect();
    let mut stream = seed.stream();
    for i in 0..k {
        let j = i + stream.below((n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Logistic fit restricted to a seeded holdout subset, which the caller must
/// have left un-intervened. Returns the fit and the held-out row indices.
pub fn fit_on_holdout(
    data: &Dataset,
    holdout_fraction: f64,
    seed: RngSeed,
    opts: LogisticOptions,
) -> Result<(FitReport, Vec<usize>)> {
    let rows = select_holdout(data.n(), holdout_fraction, seed)?;
    let p = data.width() + 1;
    if rows.len() < p + 1 {
        return Err(Error::TooFewRows {
            rows: rows.len(),
            coefficients: p,
        });
    }
    let fit = fit_logistic(&data.subset(&rows)?, opts)?;
    Ok((fit, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sigmoid;
    use crate::model::{LogisticLinear, PopulationSpec};

    fn ds(rows: Vec<Vec<f64>>, y: Vec<u8>) -> Dataset {
        let w = rows[0].len();
        Dataset::new(w, 0, rows, y, 0).unwrap()
    }

    #[test]
    fn oracle_without_intervention_at_origin() {
        let f = MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 1.0).unwrap());
        let id = InterventionSpec::Identity;
        let est = oracle_score(&f, &id, &id, 0.3, &[0.0], &[0.0], &OracleConfig::exact()).unwrap();
        assert_eq!(est.value, 0.5);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn oracle_after_full_log_shift() {
        let f = MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 1.0).unwrap());
        let g = InterventionSpec::LogShift { scale: 1.0 };
        let est = oracle_score(&f, &g, &InterventionSpec::Identity, 1.0, &[0.0], &[0.0], &OracleConfig::exact())
            .unwrap();
        // sigmoid(-ln 2) = 1 / (1 + 2)
        assert!((est.value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn irrelevant_latent_matches_exact() {
        let f = MechanismSpec::LogisticLinear(LogisticLinear::new(0.0, vec![1.0], vec![1.0], vec![0.0], 1.0).unwrap());
        let f0 = MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, 1.0).unwrap());
        let g = InterventionSpec::LogShift { scale: 1.0 };
        let id = InterventionSpec::Identity;
        let exact = oracle_score(&f0, &g, &id, 0.4, &[0.2], &[0.3], &OracleConfig::exact()).unwrap();
        for budget in [1, 7, 100] {
            let cfg = OracleConfig::new(budget, PopulationSpec::standard_normal(1).unwrap(), RngSeed(4)).unwrap();
            let est = oracle_score(&f, &g, &id, 0.4, &[0.2], &[0.3], &cfg).unwrap();
            assert!((est.value - exact.value).abs() < 1e-15);
        }
    }

    #[test]
    fn threshold_examples() {
        let all_pos = ds(vec![vec![1.0], vec![2.0], vec![0.0]], vec![1, 1, 0]);
        match fit_threshold(&all_pos).unwrap() {
            ScoreFunction::ThresholdRule { value_pos, value_neg } => {
                assert_eq!((value_pos, value_neg), (1.0, 0.0));
            }
            other => panic!("{other:?}"),
        }
        let mixed = ds(vec![vec![1.0], vec![0.5], vec![-1.0], vec![-0.5]], vec![1, 0, 1, 0]);
        match fit_threshold(&mixed).unwrap() {
            ScoreFunction::ThresholdRule { value_pos, value_neg } => {
                assert_eq!((value_pos, value_neg), (0.5, 0.5));
            }
            other => panic!("{other:?}"),
        }
        let one_sided = ds(vec![vec![1.0], vec![2.0]], vec![1, 0]);
        assert_eq!(fit_threshold(&one_sided).unwrap_err(), Error::EmptyCell("sum <= 0"));
    }

    #[test]
    fn separable_data_flagged() {
        let sep = ds(vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]], vec![0, 0, 1, 1]);
        let fit = fit_logistic(&sep, LogisticOptions::default()).unwrap();
        assert!(fit.separation);
        assert!(!fit.converged);
        assert!(matches!(fit.require_converged(), Err(Error::SeparationDetected(_))));
    }

    #[test]
    fn too_few_rows() {
        let two = ds(vec![vec![0.0], vec![1.0]], vec![0, 1]);
        assert!(matches!(
            fit_logistic(&two, LogisticOptions::default()),
            Err(Error::TooFewRows { rows: 2, coefficients: 2 })
        ));
    }

    fn simulated(beta: &[f64], n: usize, seed: u64) -> Dataset {
        let mut s = RngSeed(seed).stream();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![s.normal(), s.normal()]).collect();
        let y = rows
            .iter()
            .map(|r| u8::from(s.bernoulli(sigmoid(beta[0] + beta[1] * r[0] + beta[2] * r[1]))))
            .collect();
        Dataset::new(1, 1, rows, y, 0).unwrap()
    }

    #[test]
    fn recovers_known_coefficients() {
        let data = simulated(&[0.0, 1.0, 1.0], 100_000, 17);
        let fit = fit_logistic(&data, LogisticOptions::default()).unwrap();
        assert!(fit.converged);
        for (b, t) in fit.coefficients.iter().zip([0.0, 1.0, 1.0]) {
            assert!((b - t).abs() < 0.05, "{:?}", fit.coefficients);
        }
    }

    #[test]
    fn null_slopes_near_zero() {
        let data = simulated(&[0.0, 0.0, 0.0], 100_000, 5);
        let fit = fit_logistic(&data, LogisticOptions::default()).unwrap();
        assert!(fit.coefficients[1].abs() < 0.05 && fit.coefficients[2].abs() < 0.05);
    }

    #[test]
    fn loglik_never_decreases() {
        for seed in 0..20 {
            let data = simulated(&[0.4, -1.5, 2.0], 60, seed);
            let fit = fit_logistic(&data, LogisticOptions::default()).unwrap();
            for w in fit.loglik_trace.windows(2) {
                assert!(w[1] >= w[0], "seed {seed}: {:?}", fit.loglik_trace);
            }
        }
    }

    #[test]
    fn holdout_rejects_bad_fraction() {
        let data = simulated(&[0.0, 1.0, 1.0], 50, 1);
        for frac in [0.0, 1.0, -0.5] {
            assert!(matches!(
                fit_on_holdout(&data, frac, RngSeed(0), LogisticOptions::default()),
                Err(Error::InvalidHoldoutFraction(_))
            ));
        }
        assert!(matches!(
            fit_on_holdout(&data, 0.02, RngSeed(0), LogisticOptions::default()),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn full_holdout_equals_plain_fit() {
        let data = simulated(&[0.2, 1.0, -0.5], 100, 8);
        let (fit, rows) = fit_on_holdout(&data, 0.999, RngSeed(2), LogisticOptions::default()).unwrap();
        assert_eq!(rows, (0..100).collect::<Vec<_>>());
        assert_eq!(fit, fit_logistic(&data, LogisticOptions::default()).unwrap());
    }

    #[test]
    fn holdout_selection_is_seeded_and_distinct() {
        let a = select_holdout(1000, 0.1, RngSeed(3)).unwrap();
        assert_eq!(a, select_holdout(1000, 0.1, RngSeed(3)).unwrap());
        assert_eq!(a.len(), 100);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}
