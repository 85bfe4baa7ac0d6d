use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scoreloop_cli::config::SweepKind;
use scoreloop_cli::{exit, output_dir, parse_config_with, run, ExperimentConfig, Kind};

#[derive(Parser)]
#[command(name = "scoreloop", version, about = "Simulate risk-score deployment under intervention feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Override a config field, e.g. `--set run.seed=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default: config, then $SCORELOOP_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment a config describes.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check a config and report every problem.
    Validate {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a named reproduction with default settings.
    Reproduce {
        name: String,
        #[command(flatten)]
        common: Common,
    },
    /// Run a regime-map sweep.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fixed point and recursion classification at one point.
    FixedPoint {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load(path: &Path, overrides: &[String], kind: Option<Kind>) -> Result<ExperimentConfig, u8> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        exit::INVALID
    })?;
    let mut extra = overrides.to_vec();
    if let Some(k) = kind {
        extra.insert(0, format!("kind=\"{}\"", k.as_str()));
    }
    parse_config_with(&text, &extra).map_err(|e| {
        eprintln!("{}: invalid config", path.display());
        for line in e.to_string().lines() {
            eprintln!("  {line}");
        }
        exit::INVALID
    })
}

fn execute(cfg: &ExperimentConfig, out: Option<&Path>) -> u8 {
    let dir = output_dir(cfg, out);
    match run(cfg, &dir) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            match outcome.targets_met {
                Some(false) => exit::TARGET_MISSED,
                _ => exit::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit::RUNTIME
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match cli.command {
        Command::Validate { config, overrides } => match load(&config, &overrides, None) {
            Ok(cfg) => {
                println!("{}: valid {} config", config.display(), cfg.kind.as_str());
                exit::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run { config, common } => match load(&config, &common.overrides, None) {
            Ok(cfg) => execute(&cfg, common.out.as_deref()),
            Err(code) => code,
        },
        Command::Sweep { config, common } => match load(&config, &common.overrides, Some(Kind::Sweep)) {
            Ok(mut cfg) => {
                cfg.run.sweep.get_or_insert(SweepKind::Regime);
                execute(&cfg, common.out.as_deref())
            }
            Err(code) => code,
        },
        Command::FixedPoint { config, common } => match load(&config, &common.overrides, Some(Kind::FixedPoint)) {
            Ok(cfg) => execute(&cfg, common.out.as_deref()),
            Err(code) => code,
        },
        Command::Reproduce { name, common } => {
            let quoted = toml_string(&name);
            let text = format!("kind = \"reproduce\"\nname = {quoted}\n[run]\nreproduce = {quoted}\n");
            match parse_config_with(&text, &common.overrides) {
                Ok(cfg) => execute(&cfg, common.out.as_deref()),
                Err(e) => {
                    eprintln!("{e}");
                    exit::INVALID
                }
            }
        }
    };
    ExitCode::from(status)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}
