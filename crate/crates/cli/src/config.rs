//! Experiment configuration: a TOML tree with `model`, `run` and `output`
//! sections, validated into core specs before anything runs.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scoreloop::control::{FamilyKind, ParamInterventionFamily, RewardMode};
use scoreloop::dynamics::{ClassifyOptions, FitKind, Grid2, HoldoutConfig, ScoreMode};
use scoreloop::evaluation::{CostSpec, REPRODUCTIONS};
use scoreloop::model::{
    Atom, Dimensions, InterventionSpec, LogisticLinear, MechanismSpec, Model, OracleConfig, PopulationSpec,
};
use scoreloop::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Naive,
    Longitudinal,
    Adjuvancy,
    Sweep,
    Reproduce,
    Control,
    Pomdp,
    FixedPoint,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Naive => "naive",
            Kind::Longitudinal => "longitudinal",
            Kind::Adjuvancy => "adjuvancy",
            Kind::Sweep => "sweep",
            Kind::Reproduce => "reproduce",
            Kind::Control => "control",
            Kind::Pomdp => "pomdp",
            Kind::FixedPoint => "fixed-point",
        }
    }

    fn needs_model(&self) -> bool {
        *self != Kind::Reproduce
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "one")]
    pub p_s: usize,
    #[serde(default = "one")]
    pub p_a: usize,
    #[serde(default)]
    pub p_l: usize,
    pub f: MechanismConfig,
    pub g_a: InterventionConfig,
    #[serde(default)]
    pub g_l: InterventionConfig,
    pub population: PopulationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MechanismConfig {
    /// Missing coefficient vectors default to all ones.
    LogisticLinear {
        #[serde(default)]
        intercept: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coef_s: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coef_a: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coef_l: Option<Vec<f64>>,
        #[serde(default = "one_f")]
        steepness: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InterventionConfig {
    #[default]
    Identity,
    AdditiveShift {
        shift: f64,
    },
    LogShift {
        #[serde(default = "one_f")]
        scale: f64,
    },
    Blend,
    SigmoidPull {
        strength: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PopulationConfig {
    StandardNormal,
    Gaussian { mean: Vec<f64>, var: Vec<f64> },
    Atoms { atoms: Vec<AtomConfig> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub point: Vec<f64>,
    pub prob: f64,
}

/// Latent covariates are integrated against a Gaussian conditional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentConfig {
    pub samples: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

/// Linear-in-shift cost with a budget; `inf` means unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreChoice {
    Oracle,
    Threshold,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Regime,
    Adjuvancy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub x_s: Vec<f64>,
    pub x_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HoldoutSection {
    pub fraction: f64,
    #[serde(default)]
    pub deploy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(default = "family_default")]
    pub family: FamilyKind,
    #[serde(default)]
    pub theta_lower: f64,
    pub theta_upper: f64,
    #[serde(default = "theta_resolution_default")]
    pub theta_resolution: usize,
    /// Coefficients `(b0, b_s, b_a)` of the logistic score held fixed.
    pub score: Vec<f64>,
    /// Starting outcome-model estimate.
    pub initial_fit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyConfig {
    Naive { fit: FitKind },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PomdpSection {
    pub horizon: usize,
    #[serde(default = "one_f")]
    pub gamma: f64,
    #[serde(default = "reward_default")]
    pub reward: RewardMode,
    pub policy: PolicyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "epochs_default")]
    pub epochs: usize,
    #[serde(default = "n_default")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Score schedule for fitted runs; the last entry repeats.
    #[serde(default = "score_default")]
    pub score: Vec<ScoreChoice>,
    #[serde(default = "mc_default")]
    pub mc_n: usize,
    #[serde(default = "mc_default")]
    pub mc_outer: usize,
    #[serde(default = "mc_default")]
    pub mc_inner: usize,
    #[serde(default = "n_train_default")]
    pub n_train: usize,
    #[serde(default = "yes")]
    pub fixed_rho0: bool,
    #[serde(default = "max_epochs_default")]
    pub max_epochs: usize,
    #[serde(default = "conv_tol_default")]
    pub conv_tol: f64,
    #[serde(default = "osc_floor_default")]
    pub osc_floor: f64,
    #[serde(default = "adj_epochs_default")]
    pub adjuvancy_epochs: usize,
    #[serde(default = "adj_tol_default")]
    pub adjuvancy_tol: f64,
    #[serde(default = "grid_default")]
    pub grid: Grid2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<PointConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<PointConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<HoldoutSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reproduce: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pomdp: Option<PomdpSection>,
    /// Worker threads for sweeps and Monte-Carlo replicates; 0 uses all cores.
    #[serde(default)]
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("every run field has a default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Falls back to `$SCORELOOP_OUT`, then `out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default = "formats_default")]
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            formats: formats_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn epochs_default() -> usize {
    10
}
fn n_default() -> usize {
    1000
}
fn score_default() -> Vec<ScoreChoice> {
    vec![ScoreChoice::Oracle]
}
fn mc_default() -> usize {
    1000
}
fn n_train_default() -> usize {
    100
}
fn max_epochs_default() -> usize {
    ClassifyOptions::default().max_epochs
}
fn conv_tol_default() -> f64 {
    ClassifyOptions::default().conv_tol
}
fn osc_floor_default() -> f64 {
    ClassifyOptions::default().osc_floor
}
fn adj_epochs_default() -> usize {
    20
}
fn adj_tol_default() -> f64 {
    1e-3
}
fn grid_default() -> Grid2 {
    Grid2 {
        lo: -3.0,
        hi: 3.0,
        resolution: 61,
    }
}
fn family_default() -> FamilyKind {
    FamilyKind::ScaledLogShift
}
fn theta_resolution_default() -> usize {
    200
}
fn reward_default() -> RewardMode {
    RewardMode::Sampled
}
fn formats_default() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

/// A semantic problem at a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("{}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<FieldError>),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

fn syntax(text: &str, e: toml::de::Error) -> ConfigError {
    let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
    ConfigError::Syntax {
        line,
        column,
        message: e.message().to_string(),
    }
}

/// Sets `a.b.c = value`; the value is read as TOML, or as a string if that fails.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(assignment.into()));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(ConfigError::Override(assignment.into())),
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses, applies `--set` overrides and validates.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut table: toml::Table = text.parse().map_err(|e| syntax(text, e))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Invalid(vec![FieldError {
            path: if path == "." { "(root)".into() } else { path },
            message: e.into_inner().message().to_string(),
        }])
    })?;
    let errors = cfg.validate();
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    parse_config_with(text, &[])
}

struct Errors(Vec<FieldError>);

impl Errors {
    fn push(&mut self, path: impl Into<String>, message: impl fmt::Display) {
        self.0.push(FieldError {
            path: path.into(),
            message: message.to_string(),
        });
    }

    fn check(&mut self, ok: bool, path: &str, message: &str) {
        if !ok {
            self.push(path, message);
        }
    }
}

impl ExperimentConfig {
    /// Canonical TOML text; parsing it gives back an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string())
    }

    /// Every semantic problem, each tagged with its field path.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Errors(Vec::new());
        match (&self.model, self.kind.needs_model()) {
            (Some(m), _) => validate_model(m, &mut errs),
            (None, true) => errs.push("model", format!("required for kind `{}`", self.kind.as_str())),
            (None, false) => {}
        }
        self.validate_run(&mut errs);
        errs.check(!self.output.formats.is_empty(), "output.formats", "must list at least one format");
        errs.0
    }

    fn validate_run(&self, errs: &mut Errors) {
        let r = &self.run;
        errs.check(r.epochs >= 1, "run.epochs", "must be at least 1");
        errs.check(r.n >= 1, "run.n", "must be at least 1");
        errs.check(!r.score.is_empty(), "run.score", "must name at least one score");
        if r.score.len() > 1 && r.score.contains(&ScoreChoice::Oracle) {
            errs.push("run.score", "oracle cannot be mixed with fitted scores");
        }
        for (path, v) in [("run.mc_n", r.mc_n), ("run.mc_outer", r.mc_outer), ("run.mc_inner", r.mc_inner)] {
            errs.check(v >= 1, path, "must be at least 1");
        }
        errs.check(r.max_epochs >= 1, "run.max_epochs", "must be at least 1");
        errs.check(r.conv_tol > 0.0, "run.conv_tol", "must be positive");
        errs.check(r.osc_floor > 0.0, "run.osc_floor", "must be positive");
        errs.check(r.adjuvancy_tol > 0.0, "run.adjuvancy_tol", "must be positive");
        errs.check(
            r.grid.lo.is_finite() && r.grid.hi.is_finite() && r.grid.lo < r.grid.hi,
            "run.grid",
            "needs finite lo < hi",
        );
        errs.check(r.grid.resolution >= 2, "run.grid.resolution", "must be at least 2");
        if let Some(rho) = r.rho0 {
            errs.check((0.0..=1.0).contains(&rho), "run.rho0", "must lie in [0, 1]");
        }
        if let Some(h) = &r.holdout {
            errs.check(h.fraction > 0.0 && h.fraction < 1.0, "run.holdout.fraction", "must lie in (0, 1)");
        }
        let dims = self.model.as_ref().map(|m| (m.p_s, m.p_a));
        let check_point = |errs: &mut Errors, path: &str, p: &PointConfig| {
            if let Some((p_s, p_a)) = dims {
                if p.x_s.len() != p_s || p.x_a.len() != p_a {
                    errs.push(path, format!("needs {p_s} set and {p_a} actionable values"));
                }
            }
        };
        if let Some(p) = &r.point {
            check_point(errs, "run.point", p);
        }
        for (i, p) in r.probes.iter().flatten().enumerate() {
            check_point(errs, &format!("run.probes[{i}]"), p);
        }
        let scalar = dims == Some((1, 1));
        match self.kind {
            Kind::FixedPoint | Kind::Adjuvancy => {
                errs.check(r.point.is_some(), "run.point", "required for this kind");
                if self.kind == Kind::Adjuvancy {
                    errs.check(scalar, "model", "adjuvancy runs need p_s = p_a = 1");
                }
            }
            Kind::Sweep => {
                errs.check(r.sweep.is_some(), "run.sweep", "required for sweeps (regime or adjuvancy)");
                errs.check(scalar, "model", "sweeps need p_s = p_a = 1");
            }
            Kind::Reproduce => match &r.reproduce {
                None => errs.push("run.reproduce", format!("required; one of {}", REPRODUCTIONS.join(", "))),
                Some(name) if !REPRODUCTIONS.contains(&name.as_str()) => {
                    errs.push("run.reproduce", format!("unknown `{name}`; one of {}", REPRODUCTIONS.join(", ")))
                }
                Some(_) => {}
            },
            Kind::Control => match &r.control {
                None => errs.push("run.control", "required for control runs"),
                Some(c) => {
                    if let Err(e) = ParamInterventionFamily::new(c.family, c.theta_lower, c.theta_upper, c.theta_resolution) {
                        errs.push("run.control", e);
                    }
                    if let Some((p_s, p_a)) = dims {
                        let want = 1 + p_s + p_a;
                        errs.check(c.score.len() == want, "run.control.score", &format!("needs {want} coefficients"));
                        errs.check(
                            c.initial_fit.len() == want,
                            "run.control.initial_fit",
                            &format!("needs {want} coefficients"),
                        );
                    }
                    let has_cost = self.model.as_ref().is_some_and(|m| m.cost.is_some());
                    errs.check(has_cost, "model.cost", "required for control runs");
                    errs.check(
                        self.model.as_ref().is_none_or(|m| m.p_l == 0),
                        "model.p_l",
                        "control runs assume no latent covariates",
                    );
                }
            },
            Kind::Pomdp => match &r.pomdp {
                None => errs.push("run.pomdp", "required for pomdp runs"),
                Some(p) => {
                    errs.check((0.0..=1.0).contains(&p.gamma), "run.pomdp.gamma", "must lie in [0, 1]");
                    if let PolicyConfig::Constant { value } = p.policy {
                        errs.check((0.0..=1.0).contains(&value), "run.pomdp.policy.value", "must lie in [0, 1]");
                    }
                    let atoms = self
                        .model
                        .as_ref()
                        .is_some_and(|m| matches!(m.population, PopulationConfig::Atoms { .. }));
                    if p.reward == RewardMode::Exact && !atoms {
                        errs.push("run.pomdp.reward", "exact rewards need an atoms population");
                    }
                }
            },
            Kind::Naive | Kind::Longitudinal => {}
        }
    }

    pub fn core_model(&self) -> Option<Model> {
        self.model.as_ref().map(|m| build_model(m).expect("validated model"))
    }

    pub fn classify_options(&self) -> ClassifyOptions {
        ClassifyOptions {
            max_epochs: self.run.max_epochs,
            conv_tol: self.run.conv_tol,
            osc_floor: self.run.osc_floor,
        }
    }

    pub fn score_mode(&self) -> ScoreMode {
        if self.run.score == [ScoreChoice::Oracle] {
            return ScoreMode::Oracle;
        }
        ScoreMode::Fitted(
            self.run
                .score
                .iter()
                .map(|s| match s {
                    ScoreChoice::Threshold => FitKind::Threshold,
                    _ => FitKind::Logistic,
                })
                .collect(),
        )
    }

    pub fn holdout(&self) -> Option<HoldoutConfig> {
        self.run.holdout.as_ref().map(|h| HoldoutConfig {
            fraction: h.fraction,
            deploy: h.deploy,
        })
    }

    pub fn seed(&self) -> RngSeed {
        RngSeed(self.run.seed)
    }

    pub fn cost_spec(&self) -> Option<CostSpec> {
        self.model.as_ref()?.cost.as_ref().map(|c| CostSpec::linear(c.budget))
    }
}

fn validate_model(m: &ModelConfig, errs: &mut Errors) {
    let dims = match Dimensions::new(m.p_s, m.p_a, m.p_l) {
        Ok(d) => Some(d),
        Err(e) => {
            errs.push("model.p_s", e);
            None
        }
    };
    if let Some(d) = dims {
        if let Err(e) = build_mechanism(&m.f, d) {
            errs.push("model.f", e);
        }
    }
    for (path, g) in [("model.g_a", &m.g_a), ("model.g_l", &m.g_l)] {
        if let Err(e) = build_intervention(g) {
            errs.push(path, e);
        }
    }
    match population_for(m) {
        Ok(p) => {
            let total = m.p_s + m.p_a + m.p_l;
            if p.dim() != total {
                errs.push("model.population", format!("has dimension {} but p_s + p_a + p_l = {total}", p.dim()));
            }
        }
        Err(e) => errs.push(population_path(&m.population), e),
    }
    match &m.latent {
        Some(l) => {
            if let Err(e) = build_latent(l) {
                errs.push("model.latent", e);
            } else if l.mean.len() != m.p_l {
                errs.push("model.latent.mean", format!("needs {} entries", m.p_l));
            }
        }
        None if m.p_l > 0 => errs.push("model.latent", "required when p_l > 0"),
        None => {}
    }
    if let Some(c) = &m.cost {
        errs.check(c.budget >= 0.0, "model.cost.budget", "must be non-negative");
    }
}

fn population_path(p: &PopulationConfig) -> &'static str {
    match p {
        PopulationConfig::Atoms { .. } => "model.population.atoms",
        _ => "model.population",
    }
}

fn build_mechanism(f: &MechanismConfig, d: Dimensions) -> scoreloop::Result<MechanismSpec> {
    match f {
        MechanismConfig::LogisticLinear {
            intercept,
            coef_s,
            coef_a,
            coef_l,
            steepness,
        } => {
            let ones = |n| vec![1.0; n];
            Ok(MechanismSpec::LogisticLinear(LogisticLinear::new(
                *intercept,
                coef_s.clone().unwrap_or_else(|| ones(d.p_s)),
                coef_a.clone().unwrap_or_else(|| ones(d.p_a)),
                coef_l.clone().unwrap_or_else(|| ones(d.p_l)),
                *steepness,
            )?))
        }
    }
}

fn build_intervention(g: &InterventionConfig) -> scoreloop::Result<InterventionSpec> {
    let spec = match *g {
        InterventionConfig::Identity => InterventionSpec::Identity,
        InterventionConfig::AdditiveShift { shift } => InterventionSpec::AdditiveShift { shift },
        InterventionConfig::LogShift { scale } => InterventionSpec::LogShift { scale },
        InterventionConfig::Blend => InterventionSpec::Blend,
        InterventionConfig::SigmoidPull { strength } => InterventionSpec::SigmoidPull { strength },
    };
    spec.validate()?;
    Ok(spec)
}

fn population_for(m: &ModelConfig) -> scoreloop::Result<PopulationSpec> {
    match &m.population {
        PopulationConfig::StandardNormal => PopulationSpec::standard_normal(m.p_s + m.p_a + m.p_l),
        PopulationConfig::Gaussian { mean, var } => PopulationSpec::gaussian(mean.clone(), var.clone()),
        PopulationConfig::Atoms { atoms } => PopulationSpec::atoms(
            atoms
                .iter()
                .map(|a| Atom {
                    point: a.point.clone(),
                    prob: a.prob,
                })
                .collect(),
        ),
    }
}

fn build_latent(l: &LatentConfig) -> scoreloop::Result<OracleConfig> {
    OracleConfig::new(l.samples, PopulationSpec::gaussian(l.mean.clone(), l.var.clone())?, RngSeed(l.seed))
}

fn build_model(m: &ModelConfig) -> scoreloop::Result<Model> {
    let d = Dimensions::new(m.p_s, m.p_a, m.p_l)?;
    let mu = population_for(m)?;
    Model::new(
        build_mechanism(&m.f, d)?,
        build_intervention(&m.g_a)?,
        build_intervention(&m.g_l)?,
        mu,
        m.latent.as_ref().map(build_latent).transpose()?,
    )
}
