//! Canned scenarios and the attack suite. Each attack is a config overlay
//! plus a verdict over the finished run.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::{distributor_name, ScenarioConfig};
use super::engine::RunReport;
use super::trace::EventKind;
use crate::actors::{Behavior, Mode, MessageKind};
use crate::network::adversary::{RandomPolicy, Rule, RuleAction, Substitution, ADVERSARY};

pub fn happy_path(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        ..ScenarioConfig::default()
    }
}

/// Random topology and an active network adversary, derived from `seed`.
pub fn randomized(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let devices = rng.gen_range(1..=4);
    let hubs = rng.gen_range(1..=2);
    let distributors = rng.gen_range(1..=3);
    let mut cfg = ScenarioConfig {
        seed,
        devices,
        hubs,
        distributors,
        shds: rng.gen_range(0..=1),
        shd_join_block: rng.gen_range(4..=12),
        update_size: rng.gen_range(16..=512),
        steps_per_block: rng.gen_range(2..=5),
        hub_parallel_sessions: rng.gen_range(1..=2),
        ..ScenarioConfig::default()
    };
    for i in 0..distributors {
        if rng.gen_bool(0.25) {
            cfg.behaviors.insert(distributor_name(i), Behavior::WithholdPod);
        }
    }
    cfg.adversary.random = Some(RandomPolicy {
        delay_prob: rng.gen_range(0.0..0.4),
        replay_prob: rng.gen_range(0.0..0.2),
        tx_delay_prob: rng.gen_range(0.0..0.4),
        ..RandomPolicy::default()
    });
    cfg.adversary.intercept_pods = rng.gen_bool(0.5);
    cfg
}

/// Adversary sends every target device an ID challenge shaped like a PoD.
pub fn leiba(seed: u64, mode: Mode) -> ScenarioConfig {
    let mut cfg = happy_path(seed);
    cfg.mode = mode;
    cfg.adversary.forge_id_challenges = true;
    cfg
}

/// One distributor holds the package but only sells it; a late joiner
/// buys it and serves the single device.
pub fn dde(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        seed,
        devices: 1,
        hubs: 1,
        distributors: 1,
        shds: 1,
        shd_join_block: 8,
        hub_start_block: 20,
        ..ScenarioConfig::default()
    };
    cfg.behaviors.insert(distributor_name(0), Behavior::ExchangeOnly);
    cfg
}

/// One device, two distributors engaged at once.
pub fn race(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        devices: 1,
        hubs: 1,
        distributors: 2,
        hub_parallel_sessions: 2,
        ..ScenarioConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attack {
    Impersonation,
    PodInterception,
    MaliciousDistributor,
    UpdateIntegrity,
    LedgerDrop,
    LeibaForgery,
}

impl Attack {
    /// The suite run by `--attack all`.
    pub const SUITE: [Attack; 5] = [
        Attack::Impersonation,
        Attack::PodInterception,
        Attack::MaliciousDistributor,
        Attack::UpdateIntegrity,
        Attack::LedgerDrop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attack::Impersonation => "impersonation",
            Attack::PodInterception => "pod-interception",
            Attack::MaliciousDistributor => "malicious-distributor",
            Attack::UpdateIntegrity => "update-integrity",
            Attack::LedgerDrop => "ledger-drop",
            Attack::LeibaForgery => "leiba-forgery",
        }
    }

    pub fn from_name(name: &str) -> Option<Attack> {
        Attack::SUITE
            .into_iter()
            .chain([Attack::LeibaForgery])
            .find(|a| a.name() == name)
    }

    /// Applies the attack on top of `base`.
    pub fn configure(self, base: &ScenarioConfig) -> ScenarioConfig {
        let mut cfg = base.clone();
        let expect = |cfg: &mut ScenarioConfig, check: &str| {
            if !cfg.expected_violations.iter().any(|c| c == check) {
                cfg.expected_violations.push(check.to_string());
            }
        };
        match self {
            Attack::Impersonation => {
                cfg.impostor_manufacturer = true;
                expect(&mut cfg, "BadManufacturerSignature");
            }
            Attack::PodInterception => cfg.adversary.intercept_pods = true,
            Attack::MaliciousDistributor => {
                cfg.behaviors.insert(distributor_name(0), Behavior::WithholdPod);
            }
            Attack::UpdateIntegrity => {
                cfg.behaviors.insert(distributor_name(0), Behavior::TamperUpdate);
                cfg.adversary.rules.push(Rule {
                    kind: Some(MessageKind::FinalDelivery),
                    from: None,
                    to: None,
                    action: RuleAction::Substitute,
                    steps: 1,
                    substitute: Some(Substitution::FlipLastByte),
                    times: Some(1),
                });
                expect(&mut cfg, "ProofInvalid");
                expect(&mut cfg, "HashMismatch");
            }
            Attack::LedgerDrop => cfg.adversary.drop_txs = true,
            Attack::LeibaForgery => cfg.adversary.forge_id_challenges = true,
        }
        cfg
    }

    /// Judges a finished run of `self.configure(..)`.
    pub fn evaluate(self, report: &RunReport) -> AttackVerdict {
        let mut checks = Vec::new();
        let mut check = |name: &str, ok: bool| checks.push((name.to_string(), ok));
        let devices = report.devices.len();
        let paid_d = report.count(|e| matches!(e, EventKind::PaymentToD { .. }));
        let paid_h = report.count(|e| matches!(e, EventKind::PaymentToH { .. }));
        let violation = |name: &str| report.trace.violations().any(|(c, _)| c == name);
        let all_installed_genuine = report.installed() == devices
            && report.devices.iter().all(|d| d.installed == report.update_hash);
        let adv = report.account(ADVERSARY);
        let adv_gain = report.ledger.balance(&adv) as i128 - report.genesis_balance(ADVERSARY) as i128;
        match self {
            Attack::Impersonation => {
                check("devices rejected the release", violation("BadManufacturerSignature"));
                check("nothing installed", report.installed() == 0);
                check("nobody paid", paid_d == 0 && paid_h == 0);
            }
            Attack::PodInterception => {
                let crafted: Vec<_> = report
                    .ledger
                    .receipts()
                    .iter()
                    .filter(|r| r.sender == adv && r.call == "dsc_submit_pod")
                    .collect();
                check("adversary submitted crafted PoDs", !crafted.is_empty());
                check("every crafted submission failed", crafted.iter().all(|r| !r.ok()));
                check("adversary gained nothing", adv_gain <= 0);
                check("all devices updated", all_installed_genuine);
                check("one payment per device", paid_d == devices);
            }
            Attack::MaliciousDistributor => {
                let d0 = report.account(&distributor_name(0));
                let withheld = report.count(|e| matches!(e, EventKind::GenProof { distributor, .. } if *distributor == d0));
                let d0_paid = report.count(|e| matches!(e, EventKind::PaymentToD { distributor, .. } if *distributor == d0));
                check("withholding distributor was engaged", withheld > 0);
                check("withholding distributor was not paid", d0_paid == 0);
                check("all devices updated by another distributor", all_installed_genuine);
            }
            Attack::UpdateIntegrity => {
                check("tampered ciphertext rejected by proof check", violation("ProofInvalid"));
                check("tampered delivery rejected by device", violation("HashMismatch"));
                check("only the genuine update installed", all_installed_genuine);
            }
            Attack::LedgerDrop => {
                let refused = report.count(|e| {
                    matches!(e, EventKind::AdversaryAction { action, detail } if action == "drop-tx" && detail.contains("refused"))
                });
                let attempts = report.count(|e| matches!(e, EventKind::AdversaryAction { action, .. } if action == "drop-tx"));
                check("drop attempts were made and refused", refused > 0 && refused == attempts);
                check("all devices updated", all_installed_genuine);
                check("every distributor and hub paid", paid_d == devices && paid_h == devices);
            }
            Attack::LeibaForgery => {
                check("adversary gained nothing", adv_gain <= 0);
            }
        }
        check("lemmas hold", report.lemmas_hold());
        check("no unexpected violations", report.unexpected_violations().is_empty());
        AttackVerdict {
            attack: self,
            mode: report.mode,
            checks,
        }
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct AttackVerdict {
    pub attack: Attack,
    pub mode: Mode,
    /// `(description, passed)`
    pub checks: Vec<(String, bool)>,
}

impl AttackVerdict {
    /// The protocol defeated the attack.
    pub fn defeated(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }

    /// 0 when defeated; 3 when the attack succeeded in legacy mode, where
    /// that is the anticipated outcome; 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match (self.defeated(), self.mode) {
            (true, _) => 0,
            (false, Mode::LegacyLeiba) => 3,
            (false, Mode::Standard) => 1,
        }
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &str> {
        self.checks.iter().filter(|(_, ok)| !ok).map(|(c, _)| c.as_str())
    }
}
