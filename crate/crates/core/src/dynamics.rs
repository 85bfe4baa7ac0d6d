//! Naive updating. At a fixed observed point the score recursion is the
//! one-dimensional map `rho_{e+1} = h(rho_e)`; this module evaluates `h` and
//! its derivative, finds and classifies its fixed point, bounds its Lipschitz
//! constant, and simulates whole populations epoch by epoch.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_logistic, fit_on_holdout, fit_threshold, select_holdout, FitReport, LogisticOptions};
use crate::math::{bisect, central_difference, linspace, sigmoid_prime, FD_STEP};
use crate::model::{
    CovariateState, History, InterventionSpec, MechanismSpec, Model, OracleConfig, Score, ScoreFunction,
    ScoreSummary,
};
use crate::rng::RngSeed;
use crate::sampling::{make_dataset, sample_covariates, sample_outcomes, Dataset};

/// `h(z) = E_L[f(x_s, g_a(z, x_a), g_l(z, L))]` at one observed point.
#[derive(Debug, Clone)]
pub struct HMap {
    pub f: MechanismSpec,
    pub g_a: InterventionSpec,
    pub g_l: InterventionSpec,
    pub x_s: Vec<f64>,
    pub x_a: Vec<f64>,
    latent: OracleConfig,
}

impl HMap {
    pub fn new(
        f: MechanismSpec,
        g_a: InterventionSpec,
        g_l: InterventionSpec,
        x_s: Vec<f64>,
        x_a: Vec<f64>,
        latent: Option<OracleConfig>,
    ) -> Result<Self> {
        let dims = f.dims();
        f.check_dims(&x_s, &x_a, &vec![0.0; dims.p_l])?;
        g_a.validate()?;
        g_l.validate()?;
        let latent = match latent {
            _ if dims.p_l == 0 => OracleConfig::exact(),
            Some(cfg) if cfg.latent_dim() == dims.p_l => cfg,
            Some(cfg) => {
                return Err(Error::DimensionMismatch {
                    context: "latent conditional",
                    expected: dims.p_l,
                    got: cfg.latent_dim(),
                })
            }
            None => return Err(Error::MissingLatentBudget),
        };
        Ok(HMap {
            f,
            g_a,
            g_l,
            x_s,
            x_a,
            latent,
        })
    }

    /// The map at one point of a model.
    pub fn at(model: &Model, x_s: &[f64], x_a: &[f64]) -> Result<Self> {
        Self::new(
            model.f.clone(),
            model.g_a.clone(),
            model.g_l.clone(),
            x_s.to_vec(),
            x_a.to_vec(),
            model.latent.clone(),
        )
    }

    /// Unchecked `h(z)`; also defined slightly outside [0, 1] for stencils.
    pub fn value(&self, z: f64) -> f64 {
        let a = self.g_a.apply_all(z, &self.x_a);
        let p_l = self.f.dims().p_l;
        self.latent
            .quadrature()
            .expectation(|l| {
                if p_l == 0 {
                    self.f.value(&self.x_s, &a, &[])
                } else {
                    self.f.value(&self.x_s, &a, &self.g_l.apply_all(z, l))
                }
            })
            .0
    }

    /// The un-intervened score `rho_0 = E_L[f(x_s, x_a, L)]`.
    pub fn initial_score(&self) -> f64 {
        let p_l = self.f.dims().p_l;
        self.latent
            .quadrature()
            .expectation(|l| self.f.value(&self.x_s, &self.x_a, if p_l == 0 { &[] } else { l }))
            .0
    }

    fn has_analytic_derivative(&self) -> bool {
        matches!(self.f, MechanismSpec::LogisticLinear(_))
            && !matches!(self.g_a, InterventionSpec::Custom(_))
            && !matches!(self.g_l, InterventionSpec::Custom(_))
    }

    /// Latent-averaged derivative terms at `z`: `E[(d g/dz)^2]` and the
    /// `f`-gradient moments used by the contraction certificate.
    fn delta_moments(&self, z: f64) -> [f64; 4] {
        let dims = self.f.dims();
        let a = self.g_a.apply_all(z, &self.x_a);
        let k1: f64 = self.x_a.iter().map(|&x| self.g_a.d_rho(z, x).powi(2)).sum();
        let q = self.latent.quadrature();
        let mut abs_fa = vec![0.0; dims.p_a];
        let mut k2 = 0.0;
        let mut k4 = 0.0;
        for (point, w) in q.points.iter().zip(&q.weights) {
            let l = if dims.p_l == 0 { vec![] } else { self.g_l.apply_all(z, point) };
            for (acc, d) in abs_fa.iter_mut().zip(self.f.grad_a(&self.x_s, &a, &l)) {
                *acc += w * d.abs();
            }
            if dims.p_l > 0 {
                k2 += w * point.iter().map(|&x| self.g_l.d_rho(z, x).powi(2)).sum::<f64>();
                k4 += w * self.f.grad_l(&self.x_s, &a, &l).iter().map(|d| d * d).sum::<f64>();
            }
        }
        [k1, k2, abs_fa.iter().map(|v| v * v).sum(), k4]
    }
}

pub fn h_eval(map: &HMap, z: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::RhoOutOfRange(z));
    }
    Ok(map.value(z))
}

/// `h'(z)` by central difference with step 1e-5.
pub fn h_derivative_fd(map: &HMap, z: f64) -> f64 {
    central_difference(|v| map.value(v), z, FD_STEP)
}

/// `h'(z)`: analytic chain rule for logistic-linear mechanisms with built-in
/// interventions, finite differences otherwise.
pub fn h_derivative(map: &HMap, z: f64) -> f64 {
    if !map.has_analytic_derivative() {
        return h_derivative_fd(map, z);
    }
    let MechanismSpec::LogisticLinear(m) = &map.f else {
        unreachable!()
    };
    let dims = map.f.dims();
    let a = map.g_a.apply_all(z, &map.x_a);
    let da: f64 = m
        .coef_a
        .iter()
        .zip(&map.x_a)
        .map(|(c, &x)| c * map.g_a.d_rho(z, x))
        .sum();
    map.latent
        .quadrature()
        .expectation(|l| {
            let (l_end, dl) = if dims.p_l == 0 {
                (vec![], 0.0)
            } else {
                let dl = m.coef_l.iter().zip(l).map(|(c, &x)| c * map.g_l.d_rho(z, x)).sum::<f64>();
                (map.g_l.apply_all(z, l), dl)
            };
            let eta = m.intercept
                + m.coef_s.iter().zip(&map.x_s).map(|(c, x)| c * x).sum::<f64>()
                + m.coef_a.iter().zip(&a).map(|(c, x)| c * x).sum::<f64>()
                + m.coef_l.iter().zip(&l_end).map(|(c, x)| c * x).sum::<f64>();
            m.steepness * sigmoid_prime(m.steepness * eta) * (da + dl)
        })
        .0
}

/// The unique root `z0` of `h(z) - z` on [0, 1] by bisection, with `h'(z0)`.
/// Bisection runs until the bracket is a few ulps wide, well inside the
/// required residual of 1e-10.
pub fn find_fixed_point(map: &HMap) -> Result<(f64, f64)> {
    let (h0, h1) = (map.value(0.0), map.value(1.0));
    if h0 <= 0.0 || h1 >= 1.0 {
        return Err(Error::NoSignChange { h0, h1 });
    }
    let z0 = bisect(|z| map.value(z) - z, 0.0, 1.0, 0.0, 4.0 * f64::EPSILON);
    Ok((z0, h_derivative(map, z0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Converged,
    Oscillating,
    Undetermined,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Converged => "Converged",
            Regime::Oscillating => "Oscillating",
            Regime::Undetermined => "Undetermined",
        }
    }
}

/// Stopping rule for [`classify_recursion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub max_epochs: usize,
    pub conv_tol: f64,
    pub osc_floor: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            max_epochs: 10,
            conv_tol: 0.01,
            osc_floor: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionReport {
    pub fixed_point: f64,
    pub derivative_at_fixed_point: f64,
    pub classification: Regime,
    pub epochs_used: usize,
    /// `rho_0, rho_1, ...`
    pub trace: Vec<f64>,
    /// `deltas[e - 1] = |rho_e - rho_{e-1}|`
    pub deltas: Vec<f64>,
}

impl RecursionReport {
    /// CSV rows `epoch,rho,delta,classification`; epoch 0 has an empty delta.
    pub fn write_trace_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "rho", "delta", "classification"])?;
        for (e, rho) in self.trace.iter().enumerate() {
            let delta = if e == 0 { String::new() } else { self.deltas[e - 1].to_string() };
            w.write_record([e.to_string(), rho.to_string(), delta, self.classification.as_str().into()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }
}

/// Iterates `rho_{e+1} = h(rho_e)` from `rho0`.
///
/// Converged: `Delta_e < conv_tol` and the steps are not growing
/// (`Delta_e <= Delta_{e-1}`, or `Delta_e = 0`). Oscillating:
/// `Delta_e > osc_floor` and `|Delta_e - Delta_{e-1}| < conv_tol`.
/// Undetermined once `max_epochs` is reached.
pub fn classify_recursion(map: &HMap, rho0: f64, opts: ClassifyOptions) -> Result<RecursionReport> {
    if !(0.0..=1.0).contains(&rho0) {
        return Err(Error::RhoOutOfRange(rho0));
    }
    let (z0, dz0) = find_fixed_point(map)?;
    let mut trace = vec![rho0];
    let mut deltas: Vec<f64> = Vec::new();
    let mut classification = Regime::Undetermined;
    for e in 1..=opts.max_epochs {
        let next = map.value(trace[e - 1]);
        let delta = (next - trace[e - 1]).abs();
        trace.push(next);
        let prev_delta = deltas.last().copied();
        deltas.push(delta);
        let shrinking = delta == 0.0 || prev_delta.is_some_and(|p| delta <= p);
        if delta < opts.conv_tol && shrinking {
            classification = Regime::Converged;
            break;
        }
        if let Some(p) = prev_delta {
            if delta > opts.osc_floor && (delta - p).abs() < opts.conv_tol {
                classification = Regime::Oscillating;
                break;
            }
        }
    }
    Ok(RecursionReport {
        fixed_point: z0,
        derivative_at_fixed_point: dz0,
        classification,
        epochs_used: deltas.len(),
        trace,
        deltas,
    })
}

/// Closed interval for one axis of a certificate region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    fn grid(&self, resolution: usize) -> Vec<f64> {
        if self.lo == self.hi {
            vec![self.lo]
        } else {
            linspace(self.lo, self.hi, resolution)
        }
    }
}

/// Region over which the suprema are taken: score values and observed
/// covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub rho: Interval,
    pub x_s: Vec<Interval>,
    pub x_a: Vec<Interval>,
}

impl Region {
    /// All `rho` in [0, 1] at a single observed point.
    pub fn at_point(x_s: &[f64], x_a: &[f64]) -> Self {
        Region {
            rho: Interval::new(0.0, 1.0),
            x_s: x_s.iter().map(|&x| Interval::point(x)).collect(),
            x_a: x_a.iter().map(|&x| Interval::point(x)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub bound: f64,
    pub certified: bool,
}

/// Grid estimate of the Lipschitz bound `sqrt(k1 k3) + sqrt(k2 k4)`.
///
/// Each `k` is the maximum of its derivative sum over a rectangular grid of
/// `resolution` points per non-degenerate axis, so the certificate is only as
/// conservative as the grid is fine.
pub fn contraction_certificate(
    f: &MechanismSpec,
    g_a: &InterventionSpec,
    g_l: &InterventionSpec,
    region: &Region,
    resolution: usize,
    latent: Option<OracleConfig>,
) -> Result<ContractionReport> {
    if resolution < 2 {
        return Err(Error::InvalidSpec("certificate grid needs at least 2 points per axis".into()));
    }
    let dims = f.dims();
    if region.x_s.len() != dims.p_s || region.x_a.len() != dims.p_a {
        return Err(Error::DimensionMismatch {
            context: "certificate region",
            expected: dims.observed(),
            got: region.x_s.len() + region.x_a.len(),
        });
    }
    let axes: Vec<Vec<f64>> = region
        .x_s
        .iter()
        .chain(&region.x_a)
        .map(|iv| iv.grid(resolution))
        .collect();
    let zs = region.rho.grid(resolution);

    let mut points: Vec<Vec<f64>> = vec![vec![]];
    for axis in &axes {
        points = points
            .iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }

    let ks = points
        .par_iter()
        .map(|p| -> Result<[f64; 4]> {
            let (s, a) = p.split_at(dims.p_s);
            let map = HMap::new(f.clone(), g_a.clone(), g_l.clone(), s.to_vec(), a.to_vec(), latent.clone())?;
            Ok(zs.iter().fold([0.0; 4], |acc, &z| {
                let m = map.delta_moments(z);
                [acc[0].max(m[0]), acc[1].max(m[1]), acc[2].max(m[2]), acc[3].max(m[3])]
            }))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold([0.0f64; 4], |acc, m| {
            [acc[0].max(m[0]), acc[1].max(m[1]), acc[2].max(m[2]), acc[3].max(m[3])]
        });
    let [k1, k2, k3, k4] = ks;
    let bound = (k1 * k3).sqrt() + (k2 * k4).sqrt();
    Ok(ContractionReport {
        k1,
        k2,
        k3,
        k4,
        bound,
        certified: bound < 1.0,
    })
}

/// `rho_inf(x)`: the fixed point of `h` at every observed point.
#[derive(Debug, Clone)]
pub struct FixedPointScore {
    pub f: MechanismSpec,
    pub g_a: InterventionSpec,
    pub g_l: InterventionSpec,
    pub latent: Option<OracleConfig>,
}

impl FixedPointScore {
    pub fn from_model(model: &Model) -> Self {
        FixedPointScore {
            f: model.f.clone(),
            g_a: model.g_a.clone(),
            g_l: model.g_l.clone(),
            latent: model.latent.clone(),
        }
    }
}

impl Score for FixedPointScore {
    fn score(&self, x_s: &[f64], x_a: &[f64]) -> Result<f64> {
        let map = HMap::new(
            self.f.clone(),
            self.g_a.clone(),
            self.g_l.clone(),
            x_s.to_vec(),
            x_a.to_vec(),
            self.latent.clone(),
        )?;
        Ok(find_fixed_point(&map)?.0)
    }
}

/// One cell of a naive-updating regime map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCell {
    pub x_s: f64,
    pub x_a: f64,
    pub rho0: f64,
    pub fixed_point: f64,
    pub derivative: f64,
    pub classification: Regime,
    pub epochs_used: usize,
    pub final_delta: f64,
}

/// Square grid over one set and one actionable coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
}

impl Grid2 {
    /// Row-major `(x_s, x_a)` pairs, `x_s` varying slowest.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let axis = linspace(self.lo, self.hi, self.resolution);
        axis.iter()
            .flat_map(|&s| axis.iter().map(move |&a| (s, a)))
            .collect()
    }
}

/// Classifies the recursion started from the un-intervened score at every
/// grid cell (requires `p_s = p_a = 1`).
pub fn regime_map(model: &Model, grid: Grid2, opts: ClassifyOptions) -> Result<Vec<RegimeCell>> {
    let d = model.dims();
    if d.p_s != 1 || d.p_a != 1 {
        return Err(Error::InvalidSpec("regime maps need exactly one set and one actionable covariate".into()));
    }
    grid.points()
        .par_iter()
        .map(|&(s, a)| {
            let map = HMap::at(model, &[s], &[a])?;
            let rho0 = map.initial_score();
            let r = classify_recursion(&map, rho0, opts)?;
            Ok(RegimeCell {
                x_s: s,
                x_a: a,
                rho0,
                fixed_point: r.fixed_point,
                derivative: r.derivative_at_fixed_point,
                classification: r.classification,
                epochs_used: r.epochs_used,
                final_delta: r.deltas.last().copied().unwrap_or(0.0),
            })
        })
        .collect()
}

pub fn write_regime_csv<W: io::Write>(cells: &[RegimeCell], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "x_s",
        "x_a",
        "rho0",
        "fixed_point",
        "derivative",
        "classification",
        "epochs_used",
        "final_delta",
    ])?;
    for c in cells {
        w.write_record([
            c.x_s.to_string(),
            c.x_a.to_string(),
            c.rho0.to_string(),
            c.fixed_point.to_string(),
            c.derivative.to_string(),
            c.classification.as_str().to_string(),
            c.epochs_used.to_string(),
            c.final_delta.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}

/// How each epoch's score is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Threshold,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreMode {
    /// `rho_e` is the oracle under the previous score's interventions.
    Oracle,
    /// `rho_e` is fitted to `(X_e(0), Y_e)`; entry `e` of the schedule is used
    /// at epoch `e` and the last entry repeats.
    Fitted(Vec<FitKind>),
}

/// A sub-population left un-scored each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutConfig {
    pub fraction: f64,
    /// Deploy the holdout fit instead of the naive refit.
    pub deploy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochConfig {
    pub mode: ScoreMode,
    pub n_per_epoch: usize,
    pub epochs: usize,
    pub seed: RngSeed,
    pub holdout: Option<HoldoutConfig>,
    /// Observed points `(x_s, x_a)` at which every epoch's score is recorded.
    pub probes: Vec<(Vec<f64>, Vec<f64>)>,
    /// Keep every epoch's states and dataset in the trace.
    pub keep_populations: bool,
}

impl EpochConfig {
    pub fn new(mode: ScoreMode, n_per_epoch: usize, epochs: usize, seed: RngSeed) -> Self {
        EpochConfig {
            mode,
            n_per_epoch,
            epochs,
            seed,
            holdout: None,
            probes: vec![],
            keep_populations: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Score driving this epoch's interventions (none at epoch 0).
    pub deployed: Option<ScoreSummary>,
    /// Score produced at the end of this epoch.
    pub produced: ScoreSummary,
    pub fit: Option<FitReport>,
    pub holdout_fit: Option<FitReport>,
    pub holdout_rows: usize,
    pub probe_scores: Vec<f64>,
    pub mean_start: Vec<f64>,
    pub mean_end: Vec<f64>,
    /// Realized mean of `Y_e`.
    pub event_rate: f64,
    /// Population mean of `f(X_e(1))`.
    pub mean_risk: f64,
    pub n: usize,
}

/// One epoch's population, kept on request.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPopulation {
    pub start: Vec<CovariateState>,
    pub end: Vec<CovariateState>,
    pub data: Dataset,
    pub holdout: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EpochTrace {
    pub records: Vec<EpochRecord>,
    /// `scores[e]` is `rho_e`.
    pub scores: Vec<ScoreFunction>,
    pub populations: Vec<EpochPopulation>,
}

impl EpochTrace {
    pub fn event_rates(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.event_rate).collect()
    }

    /// `rho_e` at probe `i` for every epoch.
    pub fn probe_trace(&self, i: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.probe_scores[i]).collect()
    }

    /// CSV rows `epoch,event_rate,mean_risk,score_kind,score_params,probe_*`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let probes = self.records.first().map_or(0, |r| r.probe_scores.len());
        let mut header = vec![
            "epoch".to_string(),
            "event_rate".into(),
            "mean_risk".into(),
            "score_kind".into(),
            "score_params".into(),
        ];
        header.extend((0..probes).map(|i| format!("probe_{i}")));
        w.write_record(&header)?;
        for r in &self.records {
            let params: Vec<String> = r.produced.parameters.iter().map(|p| p.to_string()).collect();
            let mut row = vec![
                r.epoch.to_string(),
                r.event_rate.to_string(),
                r.mean_risk.to_string(),
                r.produced.kind.clone(),
                params.join(";"),
            ];
            row.extend(r.probe_scores.iter().map(|p| p.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))
    }
}

fn column_means(states: &[CovariateState]) -> Vec<f64> {
    let Some(first) = states.first() else {
        return vec![];
    };
    let width = first.x_s.len() + first.x_a.len() + first.x_l.len();
    let mut acc = vec![0.0; width];
    for s in states {
        for (a, v) in acc.iter_mut().zip(s.x_s.iter().chain(&s.x_a).chain(&s.x_l)) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / states.len() as f64).collect()
}

/// Intervenes on every row outside `holdout` using `score`.
pub(crate) fn intervene_population(
    model: &Model,
    score: &(dyn Score + Sync),
    states: &[CovariateState],
    holdout: &[usize],
) -> Result<Vec<CovariateState>> {
    states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if holdout.binary_search(&i).is_ok() {
                return Ok(s.unchanged());
            }
            let rho = score.score(&s.x_s, &s.x_a)?;
            s.intervene(&model.g_a, &model.g_l, rho)
        })
        .collect()
}

fn run_epochs(model: &Model, cfg: &EpochConfig, longitudinal: bool) -> Result<EpochTrace> {
    model.validate()?;
    if cfg.epochs == 0 {
        return Err(Error::InvalidSpec("epochs must be at least 1".into()));
    }
    if let ScoreMode::Fitted(schedule) = &cfg.mode {
        if schedule.is_empty() {
            return Err(Error::InvalidSpec("fit schedule is empty".into()));
        }
    }
    let dims = model.dims();
    let logistic = LogisticOptions::default();
    let mut trace = EpochTrace {
        records: vec![],
        scores: vec![],
        populations: vec![],
    };
    let mut carried: Option<Vec<CovariateState>> = None;

    for e in 0..cfg.epochs {
        let seed = cfg.seed.split(e as u64);
        let start = match carried.take() {
            Some(prev_end) if longitudinal => prev_end
                .into_iter()
                .map(|s| CovariateState {
                    epoch: e,
                    time: crate::model::Time::Start,
                    ..s
                })
                .collect(),
            _ => sample_covariates(&model.mu, dims, cfg.n_per_epoch, e, seed.split(0))?,
        };
        let holdout_seed = seed.split(2);
        let holdout = match cfg.holdout {
            Some(h) => select_holdout(start.len(), h.fraction, holdout_seed)?,
            None => vec![],
        };
        let deployed = trace.scores.last().cloned();
        let end = match &deployed {
            None => start.iter().map(|s| s.unchanged()).collect(),
            Some(rho) => intervene_population(model, rho, &start, &holdout)?,
        };
        let outcomes = sample_outcomes(&model.f, &end, seed.split(1))?;
        let data = make_dataset(&start, &outcomes)?;

        let holdout_fit = match cfg.holdout {
            Some(h) => Some(fit_on_holdout(&data, h.fraction, holdout_seed, logistic)?.0),
            None => None,
        };
        let (produced, fit) = match &cfg.mode {
            ScoreMode::Oracle => {
                let history = match &deployed {
                    None => History::Initial,
                    Some(prev) => History::Replace(prev.clone()),
                };
                (model.oracle(history), None)
            }
            ScoreMode::Fitted(schedule) => match schedule[e.min(schedule.len() - 1)] {
                FitKind::Threshold => (fit_threshold(&data)?, None),
                FitKind::Logistic => {
                    let report = fit_logistic(&data, logistic)?;
                    (report.score(), Some(report))
                }
            },
        };
        let produced = match (&cfg.holdout, &holdout_fit) {
            (Some(HoldoutConfig { deploy: true, .. }), Some(h)) => h.score(),
            _ => produced,
        };

        let probe_scores = cfg
            .probes
            .iter()
            .map(|(s, a)| produced.score(s, a))
            .collect::<Result<Vec<_>>>()?;
        let mean_risk = end
            .iter()
            .map(|s| model.f.value(&s.x_s, &s.x_a, &s.x_l))
            .sum::<f64>()
            / end.len() as f64;
        trace.records.push(EpochRecord {
            epoch: e,
            deployed: deployed.as_ref().map(|d| d.summary()),
            produced: produced.summary(),
            fit,
            holdout_fit,
            holdout_rows: holdout.len(),
            probe_scores,
            mean_start: column_means(&start),
            mean_end: column_means(&end),
            event_rate: outcomes.iter().map(|&y| y as f64).sum::<f64>() / outcomes.len() as f64,
            mean_risk,
            n: start.len(),
        });
        trace.scores.push(produced);
        if cfg.keep_populations {
            trace.populations.push(EpochPopulation {
                start,
                end: end.clone(),
                data,
                holdout,
            });
        }
        carried = Some(end);
    }
    Ok(trace)
}

/// Naive updating with a fresh iid population every epoch.
pub fn run_naive(model: &Model, cfg: &EpochConfig) -> Result<EpochTrace> {
    run_epochs(model, cfg, false)
}

/// Naive updating on one cohort: the population entering epoch `e + 1` is
/// the post-intervention population of epoch `e`.
pub fn run_longitudinal(model: &Model, cfg: &EpochConfig) -> Result<EpochTrace> {
    run_epochs(model, cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LogisticLinear;

    fn unit(k: f64) -> MechanismSpec {
        MechanismSpec::LogisticLinear(LogisticLinear::unit(1, 1, 0, k).unwrap())
    }

    fn map(k: f64, g: InterventionSpec, s: f64, a: f64) -> HMap {
        HMap::new(unit(k), g, InterventionSpec::Identity, vec![s], vec![a], None).unwrap()
    }

    #[test]
    fn steep_log_shift_values() {
        let m = map(8.0, InterventionSpec::LogShift { scale: 1.0 }, 0.0, 0.0);
        assert_eq!(h_eval(&m, 0.0).unwrap(), 0.5);
        assert!((h_eval(&m, 0.2).unwrap() - 0.189).abs() < 1e-3);
        assert!(h_eval(&m, 1.5).is_err());
    }

    #[test]
    fn identity_map_is_constant() {
        let m = map(1.0, InterventionSpec::Identity, 0.3, 0.5);
        let rho0 = m.initial_score();
        for z in [0.0, 0.4, 1.0] {
            assert_eq!(h_eval(&m, z).unwrap(), rho0);
            assert_eq!(h_derivative(&m, z), 0.0);
        }
        let (z0, _) = find_fixed_point(&m).unwrap();
        assert!((z0 - rho0).abs() < 1e-10);
        let r = classify_recursion(&m, rho0, ClassifyOptions::default()).unwrap();
        assert_eq!(r.classification, Regime::Converged);
        assert_eq!(r.epochs_used, 1);
        assert_eq!(r.deltas[0], 0.0);
    }

    #[test]
    fn analytic_log_shift_derivative() {
        let (s, a) = (0.3, -0.4);
        let m = map(1.0, InterventionSpec::LogShift { scale: 1.0 }, s, a);
        let k = 1.0f64;
        let ex = (k * (s + a)).exp();
        for z in [0.1f64, 0.5, 0.9] {
            let want = -k * ex * (1.0 + z).powf(k - 1.0) / (ex + (1.0 + z).powf(k)).powi(2);
            assert!((h_derivative(&m, z) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn analytic_and_fd_derivatives_agree() {
        for g in [
            InterventionSpec::LogShift { scale: 1.0 },
            InterventionSpec::Blend,
            InterventionSpec::AdditiveShift { shift: 3.0 },
        ] {
            for (s, a) in [(0.0, 0.0), (1.0, -2.0), (-0.5, 0.7)] {
                let m = map(1.0, g.clone(), s, a);
                for z in [0.05, 0.5, 0.95] {
                    assert!((h_derivative(&m, z) - h_derivative_fd(&m, z)).abs() < 1e-6, "{g:?}");
                }
            }
        }
    }

    #[test]
    fn fixed_point_matches_closed_form() {
        let (x, y) = (0.0, -1.0);
        let m = map(1.0, InterventionSpec::LogShift { scale: 1.0 }, x, y);
        let u = f64::exp(x + y);
        let closed = 0.5 * (((u + 1.0).powi(2) + 4.0 * u).sqrt() - (u + 1.0));
        let (z0, _) = find_fixed_point(&m).unwrap();
        assert!((z0 - closed).abs() < 1e-9);
        assert!((z0 - 0.2302).abs() < 1e-4);
        assert!((m.value(z0) - z0).abs() <= 1e-10);
    }

    #[test]
    fn steep_map_oscillates_from_half() {
        let m = map(8.0, InterventionSpec::LogShift { scale: 1.0 }, 0.0, 0.0);
        let r = classify_recursion(&m, 0.5, ClassifyOptions::default()).unwrap();
        assert_eq!(r.classification, Regime::Oscillating);
        assert!(r.derivative_at_fixed_point <= -1.0);
    }

    #[test]
    fn gentle_map_converges() {
        let m = map(1.0, InterventionSpec::LogShift { scale: 1.0 }, 0.0, 0.0);
        for z in linspace(0.0, 1.0, 101) {
            assert!(h_derivative(&m, z).abs() < 1.0);
        }
        let r = classify_recursion(&m, m.initial_score(), ClassifyOptions::default()).unwrap();
        assert_eq!(r.classification, Regime::Converged);
        assert!((r.trace.last().unwrap() - r.fixed_point).abs() < 0.01);
    }

    #[test]
    fn identity_certificate_is_zero() {
        let r = contraction_certificate(
            &unit(1.0),
            &InterventionSpec::Identity,
            &InterventionSpec::Identity,
            &Region::at_point(&[0.0], &[0.0]),
            11,
            None,
        )
        .unwrap();
        assert_eq!(r.bound, 0.0);
        assert!(r.certified);
    }

    #[test]
    fn steep_certificate_fails() {
        let region = Region {
            rho: Interval::new(0.0, 0.2),
            ..Region::at_point(&[0.0], &[0.0])
        };
        let r = contraction_certificate(
            &unit(8.0),
            &InterventionSpec::LogShift { scale: 1.0 },
            &InterventionSpec::Identity,
            &region,
            21,
            None,
        )
        .unwrap();
        assert!(r.bound >= 1.0 && !r.certified);
    }

    #[test]
    fn regime_csv_has_header_and_rows() {
        let model = Model::new(
            unit(1.0),
            InterventionSpec::Blend,
            InterventionSpec::Identity,
            crate::model::PopulationSpec::standard_normal(2).unwrap(),
            None,
        )
        .unwrap();
        let cells = regime_map(&model, Grid2 { lo: -1.0, hi: 1.0, resolution: 3 }, ClassifyOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_regime_csv(&cells, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
    }
}
