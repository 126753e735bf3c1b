//! Scenario configuration, read from TOML. Every field has a default so a
//! file only needs to state what differs from the baseline run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::actors::{Behavior, Mode};
use crate::network::adversary::ADVERSARY;
use crate::network::AdversaryConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub mode: Mode,
    pub devices: usize,
    pub hubs: usize,
    /// Distributors active from the start (seeded by the manufacturer).
    pub distributors: usize,
    /// Distributors that join after seeding closed.
    pub shds: usize,
    /// Hub index for each device; spread evenly when absent.
    pub assignment: Option<Vec<usize>>,
    #[serde(alias = "a_d")]
    pub reward_distributor: u64,
    #[serde(alias = "a_h")]
    pub reward_hub: u64,
    /// Defaults to exactly `devices * (a_d + a_h)`.
    pub deposit: Option<u64>,
    /// Release lifetime in blocks.
    pub expiry: u64,
    pub reset_period: u64,
    /// Blocks after release during which the manufacturer seeds.
    pub seed_window: u64,
    pub hub_score_threshold: u64,
    pub fhd_score_threshold: u64,
    pub dde_offer: u64,
    pub dde_expiry: Option<u64>,
    pub shd_join_block: u64,
    pub hub_start_block: u64,
    pub update_size: usize,
    pub initial_balance: u64,
    pub steps_per_block: u64,
    pub max_blocks: u64,
    pub session_timeout_blocks: u64,
    pub hub_retry_budget: u32,
    pub hub_parallel_sessions: usize,
    pub ledger_max_delay: u64,
    pub reclaim_on_expiry: bool,
    /// The release is signed by a key the devices do not trust.
    pub impostor_manufacturer: bool,
    /// Per-distributor behaviour, keyed by actor name (`dist0`, `shd1`, ...).
    pub behaviors: BTreeMap<String, Behavior>,
    /// Violation checks that do not count against the exit code.
    pub expected_violations: Vec<String>,
    pub adversary: AdversaryConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            mode: Mode::Standard,
            devices: 3,
            hubs: 2,
            distributors: 3,
            shds: 0,
            assignment: None,
            reward_distributor: 5,
            reward_hub: 2,
            deposit: None,
            expiry: 60,
            reset_period: 100,
            seed_window: 3,
            hub_score_threshold: 0,
            fhd_score_threshold: 0,
            dde_offer: 3,
            dde_expiry: None,
            shd_join_block: 10,
            hub_start_block: 0,
            update_size: 256,
            initial_balance: 100,
            steps_per_block: 4,
            max_blocks: 120,
            session_timeout_blocks: 4,
            hub_retry_budget: 4,
            hub_parallel_sessions: 1,
            ledger_max_delay: 2,
            reclaim_on_expiry: false,
            impostor_manufacturer: false,
            behaviors: BTreeMap::new(),
            expected_violations: Vec::new(),
            adversary: AdversaryConfig::default(),
        }
    }
}

pub const MANUFACTURER: &str = "mfr";

pub fn distributor_name(i: usize) -> String {
    format!("dist{i}")
}

pub fn shd_name(i: usize) -> String {
    format!("shd{i}")
}

pub fn hub_name(i: usize) -> String {
    format!("hub{i}")
}

pub fn device_name(i: usize) -> String {
    format!("dev{i}")
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// `|L_m| · (a_d + a_h)`, or `None` on overflow.
    pub fn required_deposit(&self) -> Option<u64> {
        let per = self.reward_distributor.checked_add(self.reward_hub)?;
        (self.devices as u64).checked_mul(per)
    }

    pub fn deposit(&self) -> u64 {
        self.deposit.or_else(|| self.required_deposit()).unwrap_or(0)
    }

    pub fn hub_of(&self, device: usize) -> usize {
        match &self.assignment {
            Some(a) => a[device],
            None => device * self.hubs / self.devices.max(1),
        }
    }

    pub fn actor_names(&self) -> Vec<String> {
        let mut names = vec![MANUFACTURER.to_string()];
        names.extend((0..self.distributors).map(distributor_name));
        names.extend((0..self.shds).map(shd_name));
        names.extend((0..self.hubs).map(hub_name));
        names.extend((0..self.devices).map(device_name));
        names
    }

    pub fn behavior(&self, name: &str) -> Behavior {
        self.behaviors.get(name).copied().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("steps_per_block", self.steps_per_block),
            ("max_blocks", self.max_blocks),
            ("expiry", self.expiry),
            ("reset_period", self.reset_period),
            ("session_timeout_blocks", self.session_timeout_blocks),
        ] {
            if v == 0 {
                return invalid(format!("{field} must be positive"));
            }
        }
        if self.update_size == 0 {
            return invalid("update_size must be positive");
        }
        if self.hub_parallel_sessions == 0 {
            return invalid("hub_parallel_sessions must be positive");
        }
        if self.devices > 0 && self.hubs == 0 {
            return invalid("devices need at least one hub");
        }
        if let Some(a) = &self.assignment {
            if a.len() != self.devices {
                return invalid(format!("assignment lists {} devices, expected {}", a.len(), self.devices));
            }
            if let Some(h) = a.iter().find(|h| **h >= self.hubs) {
                return invalid(format!("assignment names hub{h}, only {} hubs", self.hubs));
            }
        }
        let required = self
            .required_deposit()
            .ok_or_else(|| ConfigError::Invalid("reward arithmetic overflows".into()))?;
        let parties = (self.distributors + self.shds + self.hubs + 2) as u64;
        let supply = self
            .initial_balance
            .checked_mul(parties)
            .and_then(|s| s.checked_add(self.deposit.unwrap_or(required)));
        if supply.is_none() {
            return invalid("genesis supply overflows");
        }
        let names = self.actor_names();
        for name in self.behaviors.keys() {
            if !(name.starts_with("dist") || name.starts_with("shd")) || !names.contains(name) {
                return invalid(format!("behavior set for unknown distributor {name}"));
            }
        }
        for rule in &self.adversary.rules {
            for n in rule.from.iter().chain(rule.to.iter()) {
                if n != ADVERSARY && !names.contains(n) {
                    return invalid(format!("adversary rule names unknown actor {n}"));
                }
            }
        }
        if let Some(p) = &self.adversary.random {
            let probs = [p.delay_prob, p.replay_prob, p.tx_delay_prob];
            if probs.iter().any(|x| !(0.0..=1.0).contains(x)) || p.delay_prob + p.replay_prob > 1.0 {
                return invalid("adversary probabilities must lie in [0, 1]");
            }
        }
        Ok(())
    }
}
