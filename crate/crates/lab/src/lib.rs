//! Declarative experiment runner: config text in, JSON and CSV reports out.

pub mod config;
pub mod experiments;
pub mod lags;
pub mod plan;
pub mod report;

pub use config::ParseError;
pub use plan::{parse_config, parse_config_with, ConfigError, ExperimentPlan, OutputFormat, Overrides};
pub use report::{emit_report, run_plan, Report};
