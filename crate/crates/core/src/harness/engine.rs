//! Deterministic run loop. One seeded RNG drives every honest choice and a
//! second stream drives the adversary, so a `(config, seed)` pair always
//! yields the same trace.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::config::{
    device_name, distributor_name, hub_name, shd_name, ConfigError, ScenarioConfig, MANUFACTURER,
};
use super::lemmas::{self, LemmaReport};
use super::trace::{EventKind, Trace};
use crate::actors::distributor::DistributorConfig;
use crate::actors::hub::{DeviceLink, HubConfig};
use crate::actors::manufacturer::ReleasePlan;
use crate::actors::{find_release, Ctx, Device, Distributor, Hub, Manufacturer, Message, Mode, Secrets};
use crate::crypto::{contains_subslice, hash, Digest, KeyPair, PublicKey};
use crate::ledger::{Address, Ledger, LedgerEvent, PayReason, TxReceipt};
use crate::network::adversary::ADVERSARY;
use crate::network::knowledge::Source;
use crate::network::{ActorId, Adversary, Dht, Envelope, Network};
use crate::zk::ZkSystem;

pub const CONSERVATION: &str = "Conservation";
pub const WITNESS_LEAK: &str = "WitnessLeak";
pub const MALFORMED: &str = "Malformed";

#[allow(clippy::large_enum_variant)]
enum Actor {
    Manufacturer(Manufacturer),
    Distributor(Distributor),
    Hub(Hub),
    Device(Device),
}

impl Actor {
    fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, msg: Message) {
        match self {
            Actor::Manufacturer(a) => a.on_message(ctx, from, msg),
            Actor::Distributor(a) => a.on_message(ctx, from, msg),
            Actor::Hub(a) => a.on_message(ctx, from, msg),
            Actor::Device(a) => a.on_message(ctx, from, msg),
        }
    }

    fn on_tick(&mut self, ctx: &mut Ctx<'_>) {
        match self {
            Actor::Manufacturer(a) => a.on_tick(ctx),
            Actor::Distributor(a) => a.on_tick(ctx),
            Actor::Hub(a) => a.on_tick(ctx),
            Actor::Device(_) => {}
        }
    }

    fn busy(&self, height: u64, released: bool) -> bool {
        match self {
            Actor::Manufacturer(a) => a.busy(),
            Actor::Distributor(a) => a.busy(height, released),
            Actor::Hub(a) => a.busy(released),
            Actor::Device(_) => false,
        }
    }
}

/// A secret value observed somewhere it should not have been yet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Breach {
    pub witness: String,
    pub step: u64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviceOutcome {
    pub name: String,
    pub public: PublicKey,
    pub installed: Option<Digest>,
}

pub struct RunReport {
    pub seed: u64,
    pub mode: Mode,
    pub trace: Trace,
    pub lemmas: Vec<LemmaReport>,
    pub ledger: Ledger,
    /// Account address of every actor, the adversary included.
    pub accounts: BTreeMap<ActorId, Address>,
    genesis: BTreeMap<Address, u64>,
    pub devices: Vec<DeviceOutcome>,
    pub update_hash: Option<Digest>,
    pub release: Option<Address>,
    pub blocks: u64,
    pub quiescent: bool,
    /// Total supply after each block.
    pub supply: Vec<u64>,
    pub conservation_breaches: Vec<u64>,
    pub confinement_breaches: Vec<Breach>,
    /// Adversary emissions that were not derivable from its knowledge.
    pub underivable_emissions: usize,
    pub wall_ms: u128,
    expected_violations: Vec<String>,
}

impl RunReport {
    pub fn account(&self, name: &str) -> Address {
        self.accounts[name]
    }

    pub fn genesis_balance(&self, name: &str) -> u64 {
        self.genesis.get(&self.account(name)).copied().unwrap_or(0)
    }

    pub fn balance(&self, name: &str) -> u64 {
        self.ledger.balance(&self.account(name))
    }

    pub fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.trace.events().iter().filter(|e| pred(&e.event)).count()
    }

    pub fn installed(&self) -> usize {
        self.devices.iter().filter(|d| d.installed.is_some()).count()
    }

    pub fn lemmas_hold(&self) -> bool {
        self.lemmas.iter().all(|l| l.holds)
    }

    /// Violation checks the scenario did not declare as expected.
    pub fn unexpected_violations(&self) -> Vec<&str> {
        self.trace
            .violations()
            .map(|(check, _)| check)
            .filter(|c| !self.expected_violations.iter().any(|e| e == c))
            .collect()
    }

    /// 0 clean; 1 lemma or unexpected violation; 3 lemma failure in legacy
    /// mode, where it is the anticipated outcome.
    pub fn exit_code(&self, check_lemmas: bool) -> i32 {
        if check_lemmas && !self.lemmas_hold() {
            return if self.mode == Mode::LegacyLeiba { 3 } else { 1 };
        }
        if !self.unexpected_violations().is_empty() {
            return 1;
        }
        0
    }
}

pub fn run(cfg: &ScenarioConfig) -> Result<RunReport, ConfigError> {
    cfg.validate()?;
    Ok(Engine::new(cfg).run())
}

struct Engine<'c> {
    cfg: &'c ScenarioConfig,
    ledger: Ledger,
    dht: Dht,
    rng: ChaCha20Rng,
    zk: ZkSystem,
    trace: Trace,
    secrets: Secrets,
    outbox: Vec<(ActorId, ActorId, Message)>,
    network: Network,
    adversary: Adversary,
    names: Vec<ActorId>,
    actors: Vec<Actor>,
    index: BTreeMap<ActorId, usize>,
    accounts: BTreeMap<ActorId, Address>,
    genesis: BTreeMap<Address, u64>,
    manufacturer: Address,
    confinement: Vec<Breach>,
    supply: Vec<u64>,
    conservation: Vec<u64>,
}

impl<'c> Engine<'c> {
    fn new(cfg: &'c ScenarioConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let trusted = KeyPair::generate(&mut rng);
        let signer = if cfg.impostor_manufacturer {
            KeyPair::generate(&mut rng)
        } else {
            trusted.clone()
        };
        let device_keys: Vec<KeyPair> = (0..cfg.devices).map(|_| KeyPair::generate(&mut rng)).collect();
        let hub_keys: Vec<KeyPair> = (0..cfg.hubs).map(|_| KeyPair::generate(&mut rng)).collect();
        let dist_keys: Vec<KeyPair> = (0..cfg.distributors + cfg.shds)
            .map(|_| KeyPair::generate(&mut rng))
            .collect();
        let zk = ZkSystem::new(&mut rng);

        let directory: BTreeMap<ActorId, PublicKey> = device_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (device_name(i), k.public()))
            .collect();
        let adversary = Adversary::new(cfg.adversary.clone(), cfg.seed, directory);

        let manufacturer: Address = signer.public().into();
        let mut accounts = BTreeMap::new();
        let mut names = Vec::new();
        let mut actors = Vec::new();
        let mut genesis = vec![
            (manufacturer, cfg.initial_balance + cfg.deposit()),
            (adversary.address(), cfg.initial_balance),
        ];

        let plan = ReleasePlan {
            update_size: cfg.update_size,
            targets: device_keys.iter().map(|k| k.public()).collect(),
            expiry: cfg.expiry,
            reward_distributor: cfg.reward_distributor,
            reward_hub: cfg.reward_hub,
            deposit: cfg.deposit(),
            reset_period: cfg.reset_period,
            seed_window: cfg.seed_window,
            reclaim_on_expiry: cfg.reclaim_on_expiry,
        };
        accounts.insert(MANUFACTURER.to_string(), manufacturer);
        names.push(MANUFACTURER.to_string());
        actors.push(Actor::Manufacturer(Manufacturer::new(MANUFACTURER, signer, plan)));

        for (i, kp) in dist_keys.into_iter().enumerate() {
            let (name, join_block) = if i < cfg.distributors {
                (distributor_name(i), 0)
            } else {
                (shd_name(i - cfg.distributors), cfg.shd_join_block)
            };
            let dcfg = DistributorConfig {
                join_block,
                manufacturer_actor: MANUFACTURER.to_string(),
                manufacturer,
                mode: cfg.mode,
                behavior: cfg.behavior(&name),
                score_threshold: cfg.fhd_score_threshold,
                dde_offer: cfg.dde_offer,
                dde_expiry: cfg.dde_expiry,
                timeout_blocks: cfg.session_timeout_blocks,
            };
            let addr: Address = kp.public().into();
            genesis.push((addr, cfg.initial_balance));
            accounts.insert(name.clone(), addr);
            actors.push(Actor::Distributor(Distributor::new(&name, kp, dcfg)));
            names.push(name);
        }

        let hub_addrs: Vec<Address> = hub_keys.iter().map(|k| k.public().into()).collect();
        for (h, kp) in hub_keys.into_iter().enumerate() {
            let name = hub_name(h);
            let links = (0..cfg.devices)
                .filter(|d| cfg.hub_of(*d) == h)
                .map(|d| DeviceLink {
                    actor: device_name(d),
                    device: device_keys[d].public(),
                })
                .collect();
            let hcfg = HubConfig {
                manufacturer,
                start_block: cfg.hub_start_block,
                score_threshold: cfg.hub_score_threshold,
                timeout_blocks: cfg.session_timeout_blocks,
                retry_budget: cfg.hub_retry_budget,
                parallel: cfg.hub_parallel_sessions,
                hello_window: (2 * cfg.steps_per_block).max(3),
            };
            genesis.push((hub_addrs[h], cfg.initial_balance));
            accounts.insert(name.clone(), hub_addrs[h]);
            actors.push(Actor::Hub(Hub::new(&name, kp, hcfg, links)));
            names.push(name);
        }

        for (d, kp) in device_keys.into_iter().enumerate() {
            let name = device_name(d);
            accounts.insert(name.clone(), kp.public().into());
            let hub = hub_addrs[cfg.hub_of(d)];
            actors.push(Actor::Device(Device::new(&name, kp, trusted.public(), hub, cfg.mode)));
            names.push(name);
        }
        accounts.insert(ADVERSARY.to_string(), adversary.address());

        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Engine {
            cfg,
            ledger: Ledger::genesis(genesis.iter().copied(), cfg.ledger_max_delay),
            genesis: genesis.into_iter().collect(),
            dht: Dht::new(),
            rng,
            zk,
            trace: Trace::new(),
            secrets: Secrets::default(),
            outbox: Vec::new(),
            network: Network::new(),
            adversary,
            names,
            actors,
            index,
            accounts,
            manufacturer,
            confinement: Vec::new(),
            supply: Vec::new(),
            conservation: Vec::new(),
        }
    }

    fn run(mut self) -> RunReport {
        let started = std::time::Instant::now();
        let spb = self.cfg.steps_per_block;
        let mut blocks = 0;
        let mut quiescent = false;
        while blocks < self.cfg.max_blocks {
            let first = blocks * spb;
            for step in first..first + spb {
                self.deliver(step);
                for i in 0..self.actors.len() {
                    self.act(i, step, |a, ctx| a.on_tick(ctx));
                }
            }
            self.end_block(first + spb - 1);
            blocks += 1;
            if self.quiescent() {
                quiescent = true;
                break;
            }
        }
        self.scan_knowledge();
        self.finish(blocks, quiescent, started.elapsed().as_millis())
    }

    fn act(&mut self, i: usize, step: u64, f: impl FnOnce(&mut Actor, &mut Ctx<'_>)) {
        let mut ctx = Ctx {
            me: &self.names[i],
            height: self.ledger.height(),
            step,
            steps_per_block: self.cfg.steps_per_block,
            ledger: &mut self.ledger,
            dht: &mut self.dht,
            rng: &mut self.rng,
            zk: &mut self.zk,
            trace: &mut self.trace,
            secrets: &mut self.secrets,
            outbox: &mut self.outbox,
        };
        f(&mut self.actors[i], &mut ctx);
        self.flush(step);
    }

    fn record(&mut self, step: u64, actor: &str, event: EventKind) {
        self.trace.record(self.ledger.height(), step, actor, event);
    }

    fn deliver(&mut self, step: u64) {
        let mut due = self.network.take_due(step);
        self.adversary.order_due(&mut due);
        for env in due {
            let verdict = self.adversary.intercept(env, step);
            for n in verdict.notes {
                self.record(step, ADVERSARY, EventKind::AdversaryAction { action: n.action, detail: n.detail });
            }
            for (e, at, fresh) in verdict.requeue {
                let id = self.network.requeue(e, at, fresh);
                if fresh {
                    self.adversary.settle(id);
                }
            }
            if let Some(env) = verdict.deliver {
                self.dispatch(env, step);
            }
        }
    }

    fn dispatch(&mut self, env: Envelope, step: u64) {
        if env.to == ADVERSARY {
            for n in self.adversary.receive(&env) {
                self.record(step, ADVERSARY, EventKind::AdversaryAction { action: n.action, detail: n.detail });
            }
            return;
        }
        let Some(&i) = self.index.get(&env.to) else { return };
        match Message::decode(&env.payload) {
            Ok(msg) => self.act(i, step, |a, ctx| a.on_message(ctx, &env.from, msg)),
            Err(e) => {
                let to = env.to.clone();
                self.record(
                    step,
                    &to,
                    EventKind::Violation {
                        check: MALFORMED.into(),
                        session: format!("msg-{}", env.id),
                        detail: format!("{} from {}: {e}", env.kind.name(), env.from),
                    },
                );
            }
        }
    }

    fn flush(&mut self, step: u64) {
        let out = std::mem::take(&mut self.outbox);
        for (from, to, msg) in out {
            let kind = msg.kind();
            let payload = msg.encode();
            self.scan_payload(&payload, kind, &from, step);
            let bytes = payload.len();
            let id = self.network.send(&from, &to, kind, payload, step + 1);
            self.record(
                step,
                &from,
                EventKind::MessageSent {
                    id,
                    from: from.clone(),
                    to,
                    kind: kind.name(),
                    bytes,
                },
            );
        }
    }

    fn first_publication(&self) -> Option<u64> {
        self.secrets.keys.iter().filter_map(|k| k.published_step).min()
    }

    /// No unpublished key, and no plaintext update outside the seed phase,
    /// ever crosses the network before the ledger makes it derivable.
    fn scan_payload(&mut self, payload: &[u8], kind: crate::actors::MessageKind, from: &str, step: u64) {
        let mut found = Vec::new();
        for k in &self.secrets.keys {
            if k.published_step.is_none() && contains_subslice(payload, k.r.as_bytes()) {
                found.push(Breach {
                    witness: format!("r of {}", k.s.to_hex()),
                    step,
                    detail: format!("{} from {from}", kind.name()),
                });
            }
        }
        let seed_phase = kind == crate::actors::MessageKind::SeedPackage;
        if let Some(u) = &self.secrets.update {
            if !seed_phase && self.first_publication().is_none() && contains_subslice(payload, u) {
                found.push(Breach {
                    witness: "update".into(),
                    step,
                    detail: format!("{} from {from}", kind.name()),
                });
            }
        }
        for b in found {
            self.leak(b);
        }
    }

    fn leak(&mut self, b: Breach) {
        let step = b.step;
        self.record(
            step,
            "harness",
            EventKind::Violation {
                check: WITNESS_LEAK.into(),
                session: b.witness.clone(),
                detail: b.detail.clone(),
            },
        );
        self.confinement.push(b);
    }

    /// Post-run check of what the adversary actually learned and when.
    fn scan_knowledge(&mut self) {
        let step = self.ledger.height() * self.cfg.steps_per_block;
        let kb = self.adversary.knowledge();
        let mut found = Vec::new();
        for k in &self.secrets.keys {
            if let Some(at) = kb.first_containing(k.r.as_bytes(), |_| false) {
                if k.published_step.is_none_or(|p| at < p) {
                    found.push(Breach {
                        witness: format!("r of {}", k.s.to_hex()),
                        step: at,
                        detail: "adversary knowledge".into(),
                    });
                }
            }
        }
        if let Some(u) = &self.secrets.update {
            let skip = |s: Source| s == Source::Observed(crate::actors::MessageKind::SeedPackage);
            if let Some(at) = kb.first_containing(u, skip) {
                if self.first_publication().is_none_or(|p| at < p) {
                    found.push(Breach {
                        witness: "update".into(),
                        step: at,
                        detail: "adversary knowledge".into(),
                    });
                }
            }
        }
        for mut b in found {
            b.step = b.step.min(step);
            self.leak(b);
        }
    }

    fn end_block(&mut self, step: u64) {
        let (injected, notes) = self.adversary.on_block_end(&mut self.ledger, step);
        for n in notes {
            self.record(step, ADVERSARY, EventKind::AdversaryAction { action: n.action, detail: n.detail });
        }
        for (to, msg) in injected {
            self.outbox.push((ADVERSARY.to_string(), to, msg));
        }
        self.flush(step);

        let receipts = self.ledger.advance_block();
        for r in &receipts {
            self.record_receipt(r, step);
        }
        for k in self.secrets.keys.iter_mut().filter(|k| k.published_step.is_none()) {
            if self.ledger.published_key(&k.s).is_some() {
                k.published_step = Some(step);
            }
        }

        let supply = self.ledger.total_supply();
        self.supply.push(supply);
        if supply != self.ledger.genesis_supply() {
            let height = self.ledger.height();
            self.conservation.push(height);
            self.record(
                step,
                "harness",
                EventKind::Violation {
                    check: CONSERVATION.into(),
                    session: format!("block-{height}"),
                    detail: format!("supply {supply} != genesis {}", self.ledger.genesis_supply()),
                },
            );
        }
    }

    fn record_receipt(&mut self, r: &TxReceipt, step: u64) {
        self.record(
            step,
            "ledger",
            EventKind::TxExecuted {
                tx: r.id,
                call: r.call,
                ok: r.ok(),
                error: r.outcome.as_ref().err().cloned(),
            },
        );
        let Ok(events) = &r.outcome else { return };
        for e in events {
            let event = match e {
                LedgerEvent::ContractDeployed { address, kind, .. } => EventKind::ContractDeployed {
                    address: *address,
                    kind: *kind,
                },
                LedgerEvent::Paid { to, amount, reason, .. } => match reason {
                    PayReason::Delivery { device } => EventKind::PaymentToD {
                        distributor: *to,
                        device: *device,
                        amount: *amount,
                    },
                    PayReason::FinalDelivery { device } => EventKind::PaymentToH {
                        hub: *to,
                        device: *device,
                        amount: *amount,
                    },
                    PayReason::Exchange => EventKind::ExchangePaid {
                        payee: *to,
                        amount: *amount,
                    },
                    PayReason::Refund => EventKind::Refund {
                        to: *to,
                        amount: *amount,
                    },
                },
                LedgerEvent::KeyPublished { s, .. } => EventKind::KeyPublished { s: *s },
                LedgerEvent::ScoreUpdated { distributor, score } => EventKind::ScoreUpdated {
                    distributor: *distributor,
                    score: *score,
                },
            };
            self.record(step, "ledger", event);
        }
    }

    fn quiescent(&self) -> bool {
        if !self.network.is_empty() || !self.ledger.pending().is_empty() {
            return false;
        }
        let height = self.ledger.height();
        let released = find_release(&self.ledger, &self.manufacturer).is_some();
        !self.actors.iter().any(|a| a.busy(height, released))
    }

    fn finish(self, blocks: u64, quiescent: bool, wall_ms: u128) -> RunReport {
        let emissions = self.adversary.emissions();
        let underivable_emissions = emissions
            .iter()
            .filter(|e| !self.adversary.knowledge().derivable(e))
            .count();
        let devices = self
            .actors
            .iter()
            .filter_map(|a| match a {
                Actor::Device(d) => Some(DeviceOutcome {
                    name: d.name().to_string(),
                    public: d.public(),
                    installed: d.installed(),
                }),
                _ => None,
            })
            .collect();
        let release = find_release(&self.ledger, &self.manufacturer).map(|(a, _)| a);
        let update_hash = self.secrets.update.as_deref().map(hash);
        let lemmas = lemmas::check_all(&self.trace);
        RunReport {
            seed: self.cfg.seed,
            mode: self.cfg.mode,
            lemmas,
            trace: self.trace,
            ledger: self.ledger,
            accounts: self.accounts,
            genesis: self.genesis,
            devices,
            update_hash,
            release,
            blocks,
            quiescent,
            supply: self.supply,
            conservation_breaches: self.conservation,
            confinement_breaches: self.confinement,
            underivable_emissions,
            wall_ms,
            expected_violations: self.cfg.expected_violations.clone(),
        }
    }
}
