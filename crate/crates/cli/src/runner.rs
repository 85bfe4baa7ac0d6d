//! Dispatches a validated config to the engines and writes its artifacts.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use scoreloop::adjuvancy::{adjuvancy_map, classify_adjuvancy, find_rho_eq, write_adjuvancy_csv, AdjuvancyOptions};
use scoreloop::control::{
    pomdp_rollout, run_control_loop, write_control_csv, ConstantPolicy, ControlLoopConfig, NaiveFitPolicy,
    ParamInterventionFamily, Policy, PomdpEnv,
};
use scoreloop::dynamics::{
    classify_recursion, regime_map, run_longitudinal, run_naive, write_regime_csv, EpochConfig, EpochTrace, HMap,
};
use scoreloop::estimators::FitReport;
use scoreloop::evaluation::{reproduce, ReproduceOptions};
use scoreloop::math::linspace;
use scoreloop::model::{Model, ScoreFunction};

use crate::config::{ExperimentConfig, Format, Kind, PolicyConfig, SweepKind};

pub const OUT_ENV: &str = "SCORELOOP_OUT";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{stage} failed: {source}")]
    Engine {
        stage: &'static str,
        source: scoreloop::Error,
    },
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("worker pool: {0}")]
    Pool(String),
}

fn stage(name: &'static str) -> impl FnOnce(scoreloop::Error) -> RunError {
    move |source| RunError::Engine { stage: name, source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub summary: Vec<String>,
    /// Set by reproductions: whether every target was met.
    pub targets_met: Option<bool>,
}

enum Body {
    Csv(String),
    Json(String),
    JsonLines(String),
}

struct Artifact {
    file: String,
    body: Body,
}

/// Where artifacts go: explicit dir, then the config, then `$SCORELOOP_OUT`, then `out`.
pub fn output_dir(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    let base = explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    base.join(cfg.label())
}

fn csv_with<F>(file: &str, write: F) -> Result<Artifact, RunError>
where
    F: FnOnce(&mut Vec<u8>) -> scoreloop::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf).map_err(stage("csv output"))?;
    Ok(Artifact {
        file: file.into(),
        body: Body::Csv(String::from_utf8(buf).expect("csv is utf-8")),
    })
}

fn json<T: Serialize>(file: &str, value: &T) -> Artifact {
    Artifact {
        file: file.into(),
        body: Body::Json(serde_json::to_string_pretty(value).expect("reports serialize") + "\n"),
    }
}

fn fit_report(coefficients: &[f64]) -> FitReport {
    FitReport {
        coefficients: coefficients.to_vec(),
        loglik: 0.0,
        iterations: 0,
        converged: true,
        separation: false,
        loglik_trace: vec![],
    }
}

/// Runs the experiment and writes every artifact once all work is done.
pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let (artifacts, summary, targets_met) = pool.install(|| execute(cfg))?;
    let files = write_artifacts(cfg, out_dir, artifacts)?;
    Ok(RunOutcome {
        files,
        summary,
        targets_met,
    })
}

type Produced = (Vec<Artifact>, Vec<String>, Option<bool>);

fn execute(cfg: &ExperimentConfig) -> Result<Produced, RunError> {
    let r = &cfg.run;
    let model = cfg.core_model();
    let model = || -> &Model { model.as_ref().expect("validated configs carry a model") };
    let mut out = Vec::new();
    let mut summary = Vec::new();
    let mut targets_met = None;
    match cfg.kind {
        Kind::Naive | Kind::Longitudinal => {
            let mut ec = EpochConfig::new(cfg.score_mode(), r.n, r.epochs, cfg.seed());
            ec.holdout = cfg.holdout();
            ec.probes = r.probes.iter().flatten().map(|p| (p.x_s.clone(), p.x_a.clone())).collect();
            let trace: EpochTrace = if cfg.kind == Kind::Naive {
                run_naive(model(), &ec).map_err(stage("naive updating"))?
            } else {
                run_longitudinal(model(), &ec).map_err(stage("longitudinal run"))?
            };
            let rates: Vec<String> = trace.event_rates().iter().map(|v| v.to_string()).collect();
            summary.push(format!("event rates: {}", rates.join(", ")));
            out.push(csv_with("trace.csv", |b| trace.write_csv(b))?);
            out.push(json("trace.json", &trace.records));
        }
        Kind::FixedPoint => {
            let p = r.point.as_ref().expect("validated");
            let map = HMap::at(model(), &p.x_s, &p.x_a).map_err(stage("h map"))?;
            let rho0 = r.rho0.unwrap_or_else(|| map.initial_score());
            let rep = classify_recursion(&map, rho0, cfg.classify_options()).map_err(stage("fixed-point analysis"))?;
            summary.push(format!(
                "fixed point {} with h' = {}; {} after {} epochs",
                rep.fixed_point,
                rep.derivative_at_fixed_point,
                rep.classification.as_str(),
                rep.epochs_used
            ));
            out.push(csv_with("fixed_point_trace.csv", |b| rep.write_trace_csv(b))?);
            out.push(json("fixed_point.json", &rep));
        }
        Kind::Adjuvancy => {
            let p = r.point.as_ref().expect("validated");
            let m = model();
            let eq = find_rho_eq(&m.g_a, &linspace(r.grid.lo, r.grid.hi, r.grid.resolution))
                .map_err(stage("equilibrium search"))?;
            let opts = AdjuvancyOptions {
                epochs: r.adjuvancy_epochs,
                tol: r.adjuvancy_tol,
            };
            let rep = classify_adjuvancy(&m.f, &m.g_a, &p.x_s, &p.x_a, eq.rho_eq, opts)
                .map_err(stage("adjuvancy run"))?;
            summary.push(format!(
                "rho_eq {} (uniform: {}); {} with gap {}",
                eq.rho_eq,
                eq.verified_uniform,
                rep.classification.as_str(),
                rep.gap
            ));
            out.push(csv_with("adjuvancy_trace.csv", |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["epoch", "rho", "x_a"])?;
                for (e, (rho, x)) in rep.trace.rho.iter().zip(&rep.trace.x).enumerate() {
                    let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                    w.write_record([e.to_string(), rho.to_string(), xs.join(";")])?;
                }
                w.flush().map_err(|e| scoreloop::Error::Csv(e.to_string()))
            })?);
            out.push(json("adjuvancy.json", &json!({ "equilibrium": eq, "report": rep })));
        }
        Kind::Sweep => match r.sweep.expect("validated") {
            SweepKind::Regime => {
                let cells = regime_map(model(), r.grid, cfg.classify_options()).map_err(stage("regime sweep"))?;
                summary.push(format!("{} cells", cells.len()));
                out.push(csv_with("regime_map.csv", |b| write_regime_csv(&cells, b))?);
            }
            SweepKind::Adjuvancy => {
                let m = model();
                let eq = find_rho_eq(&m.g_a, &linspace(r.grid.lo, r.grid.hi, r.grid.resolution))
                    .map_err(stage("equilibrium search"))?;
                let opts = AdjuvancyOptions {
                    epochs: r.adjuvancy_epochs,
                    tol: r.adjuvancy_tol,
                };
                let cells = adjuvancy_map(&m.f, &m.g_a, eq.rho_eq, r.grid, opts).map_err(stage("adjuvancy sweep"))?;
                summary.push(format!("{} cells, rho_eq {}", cells.len(), eq.rho_eq));
                out.push(csv_with("adjuvancy_map.csv", |b| write_adjuvancy_csv(&cells, b))?);
            }
        },
        Kind::Reproduce => {
            let name = r.reproduce.as_deref().expect("validated");
            let opts = ReproduceOptions {
                seed: cfg.seed(),
                mc_outer: r.mc_outer,
                mc_inner: r.mc_inner,
                n_train: r.n_train,
                fixed_rho0: r.fixed_rho0,
                grid: r.grid,
                classify: cfg.classify_options(),
                adjuvancy: AdjuvancyOptions {
                    epochs: r.adjuvancy_epochs,
                    tol: r.adjuvancy_tol,
                },
            };
            let rep = reproduce(name, &opts).map_err(stage("reproduction"))?;
            for c in &rep.checks {
                let target = c.target.map_or(String::new(), |t| format!(" target {t}"));
                let detail = c.detail.as_deref().map_or(String::new(), |d| format!(" ({d})"));
                let verdict = if c.pass { "PASS" } else { "FAIL" };
                summary.push(format!("{verdict} {}: {}{target}{detail}", c.name, c.computed));
            }
            for a in &rep.artifacts {
                out.push(Artifact {
                    file: a.file_name.clone(),
                    body: Body::Csv(a.contents.clone()),
                });
            }
            out.push(json("report.json", &rep));
            targets_met = Some(rep.pass);
        }
        Kind::Control => {
            let c = r.control.as_ref().expect("validated");
            let family = ParamInterventionFamily::new(c.family, c.theta_lower, c.theta_upper, c.theta_resolution)
                .map_err(stage("intervention family"))?;
            let rho = fit_report(&c.score).score();
            let loop_cfg = ControlLoopConfig {
                epochs: r.epochs,
                n: r.n,
                mc_n: r.mc_n,
                seed: cfg.seed(),
            };
            let spec = cfg.cost_spec().expect("validated");
            let epochs = run_control_loop(&fit_report(&c.initial_fit), &family, &rho, &spec, model(), &loop_cfg)
                .map_err(stage("control loop"))?;
            let thetas: Vec<String> = epochs.iter().map(|e| e.theta.to_string()).collect();
            summary.push(format!("theta by epoch: {}", thetas.join(", ")));
            out.push(csv_with("control.csv", |b| write_control_csv(&epochs, b))?);
            out.push(json("control.json", &epochs));
        }
        Kind::Pomdp => {
            let p = r.pomdp.as_ref().expect("validated");
            let env = PomdpEnv::new(model().clone(), r.n, p.reward, cfg.seed()).map_err(stage("pomdp environment"))?;
            let mut policy: Box<dyn Policy> = match p.policy {
                PolicyConfig::Naive { fit } => Box::new(NaiveFitPolicy(fit)),
                PolicyConfig::Constant { value } => {
                    Box::new(ConstantPolicy(ScoreFunction::constant(value).map_err(stage("policy"))?))
                }
            };
            let roll = pomdp_rollout(&env, policy.as_mut(), p.horizon, p.gamma).map_err(stage("pomdp rollout"))?;
            summary.push(format!("discounted return {}", roll.discounted_return));
            let lines: Vec<String> = roll
                .steps
                .iter()
                .map(|s| serde_json::to_string(s).expect("steps serialize"))
                .collect();
            out.push(Artifact {
                file: "rollout.jsonl".into(),
                body: Body::JsonLines(lines.join("\n") + "\n"),
            });
            out.push(json(
                "rollout_summary.json",
                &json!({
                    "horizon": p.horizon,
                    "gamma": p.gamma,
                    "rewards": roll.steps.iter().map(|s| s.reward).collect::<Vec<_>>(),
                    "discounted_return": roll.discounted_return,
                    "negated_return": roll.negated_return,
                }),
            ));
        }
    }
    Ok((out, summary, targets_met))
}

fn metadata(cfg: &ExperimentConfig) -> String {
    format!(
        "# config_sha256: {}\n# seed: {}\n# kind: {}\n",
        cfg.hash(),
        cfg.run.seed,
        cfg.kind.as_str()
    )
}

fn write_artifacts(cfg: &ExperimentConfig, dir: &Path, artifacts: Vec<Artifact>) -> Result<Vec<PathBuf>, RunError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    for a in artifacts {
        let text = match a.body {
            Body::Csv(body) if cfg.output.formats.contains(&Format::Csv) => body + &metadata(cfg),
            Body::Json(body) | Body::JsonLines(body) if cfg.output.formats.contains(&Format::Json) => body,
            _ => continue,
        };
        let path = dir.join(&a.file);
        fs::write(&path, text).map_err(io_err(&path))?;
        files.push(path);
    }
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(io_err(&path))?;
    files.push(path);
    Ok(files)
}
