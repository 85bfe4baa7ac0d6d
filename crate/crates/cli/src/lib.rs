//! Config-driven experiment runner for the `scoreloop` simulation library.

pub mod config;
pub mod runner;

pub use config::{parse_config, parse_config_with, ConfigError, ExperimentConfig, FieldError, Kind};
pub use runner::{output_dir, run, RunError, RunOutcome, OUT_ENV};

/// Process exit statuses.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const INVALID: u8 = 1;
    pub const TARGET_MISSED: u8 = 2;
    pub const RUNTIME: u8 = 3;
}
