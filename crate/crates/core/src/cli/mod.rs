//! Configuration-driven experiment runner behind the `gradflow` binary.

pub mod compare;
pub mod config;
pub mod runner;

pub use compare::{compare_profiles, fit_decay, Comparison, DecayFit, Reference};
pub use config::{parse_config, parse_config_str, ExperimentSpec, Scheme};
pub use runner::{run_experiment, Check, Manifest};
