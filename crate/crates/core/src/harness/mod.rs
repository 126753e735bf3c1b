//! Scenario configuration, the deterministic run loop, trace lemmas and
//! the canned scenarios and attacks.

pub mod config;
pub mod engine;
pub mod lemmas;
pub mod scenarios;
pub mod trace;

pub use config::{ConfigError, ScenarioConfig};
pub use engine::{run, RunReport};
