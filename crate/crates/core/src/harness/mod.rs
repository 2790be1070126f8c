//! Experiment plumbing: quadrature rules, error metrics, slope fits,
//! configuration and the acceptance experiments.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod rules;

pub use metrics::{fit_slope, l2_error, time_averaged_error, Bump, ConvergenceReport};
pub use rules::{build_rule_grid, build_rule_mc, QuadratureRule, RuleKind};
