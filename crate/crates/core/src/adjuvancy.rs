//! Successive adjuvancy: each new score's interventions are applied on top of
//! all earlier ones, so the actionable covariate follows
//! `x_{e+1} = g(rho_e, x_e)` and the score follows the map `h2`.

use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::Grid2;
use crate::error::{Error, Result};
use crate::math::{bisect, central_difference, linspace, FD_STEP};
use crate::model::{InterventionSpec, MechanismSpec};

/// `g(rho_{e-1}, g(rho_{e-2}, ... g(rho_0, x)))`.
#[derive(Debug, Clone)]
pub struct InterventionChain {
    pub base: InterventionSpec,
    pub rhos: Vec<f64>,
}

impl InterventionChain {
    pub fn new(base: InterventionSpec) -> Self {
        InterventionChain { base, rhos: vec![] }
    }

    pub fn len(&self) -> usize {
        self.rhos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhos.is_empty()
    }

    pub fn push(&mut self, rho: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::RhoOutOfRange(rho));
        }
        self.rhos.push(rho);
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rhos
            .iter()
            .fold(x.to_vec(), |acc, &r| self.base.apply_all(r, &acc))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjuvancyTrace {
    /// `rho_0 .. rho_epochs`
    pub rho: Vec<f64>,
    /// `x_0 .. x_epochs`, actionable block only.
    pub x: Vec<Vec<f64>>,
}

fn check_no_latent(f: &MechanismSpec) -> Result<()> {
    if f.dims().p_l != 0 {
        return Err(Error::InvalidSpec(
            "the adjuvancy recursion is defined for mechanisms without latent covariates".into(),
        ));
    }
    Ok(())
}

/// `rho_0 = f(x_s, x_a)`, `x_{e+1} = g(rho_e, x_e)`, `rho_{e+1} = f(x_s, x_{e+1})`.
pub fn run_adjuvancy(
    f: &MechanismSpec,
    g: &InterventionSpec,
    x_s: &[f64],
    x_a: &[f64],
    epochs: usize,
) -> Result<AdjuvancyTrace> {
    check_no_latent(f)?;
    f.check_dims(x_s, x_a, &[])?;
    let mut x = vec![x_a.to_vec()];
    let mut rho = vec![f.value(x_s, x_a, &[])];
    for e in 0..epochs {
        let next = g.apply_all(rho[e], &x[e]);
        rho.push(f.value(x_s, &next, &[]));
        x.push(next);
    }
    Ok(AdjuvancyTrace { rho, x })
}

/// `h2(r) = f(x_s, g(r, f^{-1}(r)))` for one actionable coordinate.
#[derive(Debug, Clone)]
pub struct H2Map {
    pub f: MechanismSpec,
    pub g: InterventionSpec,
    pub x_s: Vec<f64>,
    /// Search bracket for `f^{-1}` in the actionable coordinate.
    pub bracket: (f64, f64),
}

pub const DEFAULT_BRACKET: (f64, f64) = (-50.0, 50.0);

impl H2Map {
    pub fn new(f: MechanismSpec, g: InterventionSpec, x_s: Vec<f64>) -> Result<Self> {
        check_no_latent(&f)?;
        let d = f.dims();
        if d.p_a != 1 {
            return Err(Error::DimensionMismatch {
                context: "h2 actionable block",
                expected: 1,
                got: d.p_a,
            });
        }
        f.check_dims(&x_s, &[0.0], &[])?;
        Ok(H2Map {
            f,
            g,
            x_s,
            bracket: DEFAULT_BRACKET,
        })
    }

    pub fn with_bracket(mut self, lo: f64, hi: f64) -> Self {
        self.bracket = (lo, hi);
        self
    }

    fn risk(&self, x: f64) -> f64 {
        self.f.value(&self.x_s, &[x], &[])
    }

    /// The actionable value with `f(x_s, x) = r`.
    pub fn inverse(&self, r: f64) -> Result<f64> {
        let (lo, hi) = self.bracket;
        let (f_lo, f_hi) = (self.risk(lo), self.risk(hi));
        if !(f_lo <= r && r <= f_hi) {
            return Err(Error::BracketFailure { r, lo, hi });
        }
        Ok(bisect(|x| self.risk(x) - r, lo, hi, 0.0, 1e-12))
    }

    pub fn value(&self, r: f64) -> Result<f64> {
        let x = self.inverse(r)?;
        Ok(self.risk(self.g.apply(r, x)))
    }

    /// `dh2/dr` by central difference.
    pub fn derivative(&self, r: f64) -> Result<f64> {
        let (a, b) = (self.value(r + FD_STEP)?, self.value(r - FD_STEP)?);
        Ok((a - b) / (2.0 * FD_STEP))
    }

    /// Largest `|dh2/dr|` over `n` evenly spaced points of `[lo, hi]`.
    pub fn sup_abs_derivative(&self, lo: f64, hi: f64, n: usize) -> Result<f64> {
        let pts = if lo == hi { vec![lo] } else { linspace(lo, hi, n.max(2)) };
        pts.iter()
            .map(|&r| self.derivative(r).map(f64::abs))
            .try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
    }
}

pub fn h2_eval(map: &H2Map, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::RhoOutOfRange(r));
    }
    map.value(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSpec {
    pub rho_eq: f64,
    /// `rho_eq` is interior and `g(rho_eq, x) = x` held on the whole grid.
    pub verified_uniform: bool,
    pub max_residual: f64,
}

const UNIFORM_TOL: f64 = 1e-9;

/// Solves `g(rho, x*) = x*` at the grid's middle point and checks the
/// solution on every grid value.
pub fn find_rho_eq(g: &InterventionSpec, grid: &[f64]) -> Result<EquilibriumSpec> {
    if g.is_identity() {
        return Err(Error::IdentityIntervention);
    }
    if grid.is_empty() {
        return Err(Error::InvalidSpec("equilibrium test grid is empty".into()));
    }
    let rho_eq = match g {
        InterventionSpec::Blend | InterventionSpec::AdditiveShift { .. } => 0.5,
        _ => {
            let x_ref = grid[grid.len() / 2];
            let phi = |r: f64| g.apply(r, x_ref) - x_ref;
            let (p0, p1) = (phi(0.0), phi(1.0));
            if p0 == 0.0 {
                0.0
            } else if p1 == 0.0 {
                1.0
            } else if (p0 > 0.0) != (p1 > 0.0) {
                bisect(phi, 0.0, 1.0, 0.0, 1e-15)
            } else {
                return Err(Error::NoEquilibrium);
            }
        }
    };
    let max_residual = grid
        .iter()
        .map(|&x| (g.apply(rho_eq, x) - x).abs())
        .fold(0.0, f64::max);
    Ok(EquilibriumSpec {
        rho_eq,
        verified_uniform: rho_eq > 0.0 && rho_eq < 1.0 && max_residual <= UNIFORM_TOL,
        max_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdjuvancyRegime {
    ConvergedToEq,
    Chaotic,
}

impl AdjuvancyRegime {
    pub fn as_str(&self) -> &'static str {
        match self {
            AdjuvancyRegime::ConvergedToEq => "ConvergedToEq",
            AdjuvancyRegime::Chaotic => "Chaotic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjuvancyReport {
    pub classification: AdjuvancyRegime,
    pub rho_final: f64,
    /// `rho_epochs - rho_eq`
    pub gap: f64,
    /// Mean log-derivative of the actionable recursion along the trace.
    pub lyapunov: f64,
    pub trace: AdjuvancyTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjuvancyOptions {
    pub epochs: usize,
    pub tol: f64,
}

impl Default for AdjuvancyOptions {
    fn default() -> Self {
        AdjuvancyOptions { epochs: 20, tol: 1e-3 }
    }
}

/// Steps over which shrinking is required.
const SHRINK_WINDOW: usize = 5;

/// ConvergedToEq when `|rho_epochs - rho_eq| < tol` and the step sizes are
/// non-increasing over the last five epochs; Chaotic otherwise.
pub fn classify_adjuvancy(
    f: &MechanismSpec,
    g: &InterventionSpec,
    x_s: &[f64],
    x_a: &[f64],
    rho_eq: f64,
    opts: AdjuvancyOptions,
) -> Result<AdjuvancyReport> {
    let trace = run_adjuvancy(f, g, x_s, x_a, opts.epochs)?;
    let rho_final = *trace.rho.last().unwrap();
    let gap = rho_final - rho_eq;
    let deltas: Vec<f64> = trace.rho.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let tail = &deltas[deltas.len().saturating_sub(SHRINK_WINDOW)..];
    let shrinking = tail.windows(2).all(|w| w[1] <= w[0]);
    let classification = if gap.abs() < opts.tol && shrinking {
        AdjuvancyRegime::ConvergedToEq
    } else {
        AdjuvancyRegime::Chaotic
    };
    Ok(AdjuvancyReport {
        classification,
        rho_final,
        gap,
        lyapunov: lyapunov(f, g, x_s, &trace),
        trace,
    })
}

/// Average of `ln |d x_{e+1} / d x_e|` for a scalar actionable covariate.
fn lyapunov(f: &MechanismSpec, g: &InterventionSpec, x_s: &[f64], trace: &AdjuvancyTrace) -> f64 {
    let steps = trace.rho.len() - 1;
    if steps == 0 || trace.x[0].len() != 1 {
        return f64::NAN;
    }
    let total: f64 = (0..steps)
        .map(|e| {
            let (r, x) = (trace.rho[e], trace.x[e][0]);
            let df = central_difference(|v| f.value(x_s, &[v], &[]), x, FD_STEP);
            (g.d_x(r, x) + g.d_rho(r, x) * df).abs().max(1e-300).ln()
        })
        .sum();
    total / steps as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjuvancyCell {
    pub x_s: f64,
    pub x_a: f64,
    pub rho_final: f64,
    pub gap_to_eq: f64,
    pub classification: AdjuvancyRegime,
    pub lyapunov: f64,
}

/// Adjuvancy regime at every grid cell (requires `p_s = p_a = 1`).
pub fn adjuvancy_map(
    f: &MechanismSpec,
    g: &InterventionSpec,
    rho_eq: f64,
    grid: Grid2,
    opts: AdjuvancyOptions,
) -> Result<Vec<AdjuvancyCell>> {
    let d = f.dims();
    if d.p_s != 1 || d.p_a != 1 {
        return Err(Error::InvalidSpec("regime maps need exactly one set and one actionable covariate".into()));
    }
    grid.points()
        .par_iter()
        .map(|&(s, a)| {
            let r = classify_adjuvancy(f, g, &[s], &[a], rho_eq, opts)?;
            Ok(AdjuvancyCell {
                x_s: s,
                x_a: a,
                rho_final: r.rho_final,
                gap_to_eq: r.gap,
                classification: r.classification,
                lyapunov: r.lyapunov,
            })
        })
        .collect()
}

pub fn write_adjuvancy_csv<W: io::Write>(cells: &[AdjuvancyCell], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x_s", "x_a", "rho_final", "gap_to_eq", "classification", "lyapunov"])?;
    for c in cells {
        w.write_record([
            c.x_s.to_string(),
            c.x_a.to_string(),
            c.rho_final.to_string(),
            c.gap_to_eq.to_string(),
            c.classification.as_str().to_string(),
            c.lyapunov.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))
}
