//! Dolev-Yao network adversary: sees and controls every envelope, reads the
//! public ledger, may submit its own transactions and reorder or briefly
//! delay the pending queue. It holds only its own signing key.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

use super::knowledge::{Knowledge, Source};
use super::{ActorId, Envelope};
use crate::actors::messages::{Message, MessageKind};
use crate::contracts::{delivery_key, pod_message, Call};
use crate::crypto::{hash, Context, Digest, KeyPair, Nonce, PublicKey, Signature, SymKey};
use crate::ledger::{Address, Ledger, Transaction, TxId};

pub const ADVERSARY: &str = "adv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleAction {
    Pass,
    Drop,
    Delay,
    Replay,
    Substitute,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Substitution {
    FlipLastByte,
    Hex(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub kind: Option<MessageKind>,
    pub from: Option<String>,
    pub to: Option<String>,
    pub action: RuleAction,
    /// Steps for `delay`, and the gap before the copy for `replay`.
    #[serde(default = "one")]
    pub steps: u64,
    pub substitute: Option<Substitution>,
    /// How many envelopes the rule may fire on; unlimited when absent.
    pub times: Option<u32>,
}

fn one() -> u64 {
    1
}

impl Rule {
    fn matches(&self, env: &Envelope) -> bool {
        self.kind.is_none_or(|k| k == env.kind)
            && self.from.as_ref().is_none_or(|f| *f == env.from)
            && self.to.as_ref().is_none_or(|t| *t == env.to)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomPolicy {
    pub delay_prob: f64,
    pub max_delay_steps: u64,
    pub replay_prob: f64,
    pub reorder_messages: bool,
    pub reorder_txs: bool,
    pub tx_delay_prob: f64,
}

impl Default for RandomPolicy {
    fn default() -> Self {
        RandomPolicy {
            delay_prob: 0.2,
            max_delay_steps: 3,
            replay_prob: 0.1,
            reorder_messages: true,
            reorder_txs: true,
            tx_delay_prob: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxOrder {
    #[default]
    Fifo,
    Reverse,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversaryConfig {
    pub rules: Vec<Rule>,
    pub random: Option<RandomPolicy>,
    /// Front-run every captured PoD with crafted submissions.
    pub intercept_pods: bool,
    /// Try to drop every pending transaction each block.
    pub drop_txs: bool,
    /// Send each target device an ID challenge shaped like a PoD message.
    pub forge_id_challenges: bool,
    pub tx_order: TxOrder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Note {
    pub action: String,
    pub detail: String,
}

fn note(action: &str, detail: impl Into<String>) -> Note {
    Note {
        action: action.to_string(),
        detail: detail.into(),
    }
}

/// What happens to one envelope.
#[derive(Debug, Default)]
pub struct Verdict {
    pub deliver: Option<Envelope>,
    /// `(envelope, deliver_at, needs_fresh_id)`
    pub requeue: Vec<(Envelope, u64, bool)>,
    pub notes: Vec<Note>,
}

#[derive(Debug, Clone)]
struct Forgery {
    device: PublicKey,
    dsc: Address,
    t: [u8; 32],
    r: SymKey,
    s: Digest,
}

pub struct Adversary {
    config: AdversaryConfig,
    rng: ChaCha20Rng,
    knowledge: Knowledge,
    keypair: KeyPair,
    directory: BTreeMap<ActorId, PublicKey>,
    rule_hits: Vec<u32>,
    settled: BTreeSet<u64>,
    captured_pods: Vec<(PublicKey, Digest, Signature)>,
    seen_pods: BTreeSet<(PublicKey, Digest)>,
    forged: BTreeMap<Nonce, Forgery>,
    challenged: bool,
    crafted: Vec<Transaction>,
    own_txs: BTreeSet<TxId>,
    emissions: Vec<Vec<u8>>,
}

impl Adversary {
    /// `directory` lists device identities, which are public.
    pub fn new(config: AdversaryConfig, seed: u64, directory: BTreeMap<ActorId, PublicKey>) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let keypair = KeyPair::generate(&mut rng);
        let rule_hits = vec![0; config.rules.len()];
        let mut knowledge = Knowledge::new();
        for pk in directory.values() {
            knowledge.learn(pk.as_bytes(), 0, Source::Ledger);
        }
        knowledge.computed(keypair.public().as_bytes(), 0);
        Adversary {
            config,
            rng,
            knowledge,
            keypair,
            directory,
            rule_hits,
            settled: BTreeSet::new(),
            captured_pods: Vec::new(),
            seen_pods: BTreeSet::new(),
            forged: BTreeMap::new(),
            challenged: false,
            crafted: Vec::new(),
            own_txs: BTreeSet::new(),
            emissions: Vec::new(),
        }
    }

    pub fn address(&self) -> Address {
        self.keypair.public().into()
    }

    pub fn knowledge(&self) -> &Knowledge {
        &self.knowledge
    }

    pub fn config(&self) -> &AdversaryConfig {
        &self.config
    }

    /// Every value the adversary has put on the wire or into a transaction.
    pub fn emissions(&self) -> &[Vec<u8>] {
        &self.emissions
    }

    pub fn own_txs(&self) -> &BTreeSet<TxId> {
        &self.own_txs
    }

    /// Shuffles envelopes that fall due in the same step.
    pub fn order_due(&mut self, due: &mut [Envelope]) {
        if self.config.random.as_ref().is_some_and(|r| r.reorder_messages) {
            due.shuffle(&mut self.rng);
        }
    }

    pub fn intercept(&mut self, env: Envelope, step: u64) -> Verdict {
        self.knowledge.learn(&env.payload, step, Source::Observed(env.kind));
        if self.config.intercept_pods && env.kind == MessageKind::PodForward {
            if let Ok(Message::PodForward { device, s, pod, .. }) = Message::decode(&env.payload) {
                if self.seen_pods.insert((device, s)) {
                    self.captured_pods.push((device, s, pod));
                }
            }
        }
        let mut v = Verdict::default();
        // held-back and duplicated envelopes go through untouched the second time
        if self.settled.remove(&env.id) {
            v.deliver = Some(env);
            return v;
        }
        let rule = self.config.rules.iter().enumerate().find(|(i, r)| {
            r.matches(&env) && r.times.is_none_or(|t| self.rule_hits[*i] < t)
        });
        if let Some((i, rule)) = rule {
            self.rule_hits[i] += 1;
            let rule = rule.clone();
            self.apply(rule.action, &rule, env, step, &mut v);
            return v;
        }
        if let Some(policy) = self.config.random.clone() {
            let roll: f64 = self.rng.gen();
            if roll < policy.delay_prob {
                let k = self.rng.gen_range(1..=policy.max_delay_steps.max(1));
                self.hold(env, step + k, &mut v);
            } else if roll < policy.delay_prob + policy.replay_prob {
                let k = self.rng.gen_range(1..=policy.max_delay_steps.max(1));
                self.replay(env, step + k, &mut v);
            } else {
                v.deliver = Some(env);
            }
            return v;
        }
        v.deliver = Some(env);
        v
    }

    fn apply(&mut self, action: RuleAction, rule: &Rule, mut env: Envelope, step: u64, v: &mut Verdict) {
        match action {
            RuleAction::Pass => v.deliver = Some(env),
            RuleAction::Drop => {
                v.notes.push(note("drop", format!("{} #{} {}->{}", env.kind.name(), env.id, env.from, env.to)));
            }
            RuleAction::Delay => self.hold(env, step + rule.steps, v),
            RuleAction::Replay => self.replay(env, step + rule.steps, v),
            RuleAction::Substitute => {
                let new = match &rule.substitute {
                    Some(Substitution::FlipLastByte) | None => {
                        let mut p = env.payload.clone();
                        if let Some(b) = p.last_mut() {
                            *b ^= 0x01;
                        }
                        p
                    }
                    Some(Substitution::Hex(h)) => hex::decode(h).unwrap_or_default(),
                };
                self.knowledge.generated(&new, step);
                self.emissions.push(new.clone());
                v.notes.push(note("substitute", format!("{} #{} {}->{}", env.kind.name(), env.id, env.from, env.to)));
                env.payload = new;
                v.deliver = Some(env);
            }
        }
    }

    fn hold(&mut self, env: Envelope, until: u64, v: &mut Verdict) {
        v.notes.push(note("delay", format!("{} #{} until step {}", env.kind.name(), env.id, until)));
        self.settled.insert(env.id);
        v.requeue.push((env, until, false));
    }

    fn replay(&mut self, env: Envelope, at: u64, v: &mut Verdict) {
        v.notes.push(note("replay", format!("{} #{} again at step {}", env.kind.name(), env.id, at)));
        v.requeue.push((env.clone(), at, true));
        v.deliver = Some(env);
    }

    /// Marks the id a replayed copy received so it is not processed again.
    pub fn settle(&mut self, id: u64) {
        self.settled.insert(id);
    }

    /// Envelopes addressed to the adversary itself.
    pub fn receive(&mut self, env: &Envelope) -> Vec<Note> {
        let Ok(Message::IdResponse { session, device, sig, .. }) = Message::decode(&env.payload) else {
            return Vec::new();
        };
        let Some(f) = self.forged.get(&session).cloned() else {
            return Vec::new();
        };
        if device != f.device {
            return Vec::new();
        }
        let pod = sig.relabel(Context::PoD);
        self.knowledge.computed(&pod.to_bytes(), env.deliver_at);
        self.crafted.push(Transaction {
            sender: self.address(),
            target: f.dsc,
            value: 0,
            call: Call::SubmitPod {
                device: f.device,
                t: f.t,
                r: f.r,
                s: f.s,
                pod,
            },
        });
        vec![note("forge-pod", format!("relabelled id response of {}", device.to_hex()))]
    }

    fn fresh_t(&mut self, step: u64) -> [u8; 32] {
        let mut t = [0u8; 32];
        self.rng.fill_bytes(&mut t);
        self.knowledge.generated(&t, step);
        t
    }

    fn crafted_key(&mut self, device: &PublicKey, step: u64) -> ([u8; 32], SymKey, Digest) {
        let t = self.fresh_t(step);
        let r = delivery_key(&t, device, &self.address());
        let s = hash(r.as_bytes());
        self.knowledge.computed(r.as_bytes(), step);
        self.knowledge.computed(s.as_bytes(), step);
        (t, r, s)
    }

    /// Ledger-side moves at the end of a block. Returns messages to inject.
    pub fn on_block_end(&mut self, ledger: &mut Ledger, step: u64) -> (Vec<(ActorId, Message)>, Vec<Note>) {
        let mut notes = Vec::new();
        let mut out = Vec::new();
        for k in ledger.published_keys().to_vec() {
            self.knowledge.learn_key(k.r, step);
        }
        let dscs: Vec<(Address, Digest, Vec<PublicKey>)> = ledger
            .dscs()
            .map(|(a, d)| (*a, d.update_hash, d.targets.keys().copied().collect()))
            .collect();
        for (a, uh, _) in &dscs {
            self.knowledge.learn(a.as_bytes(), step, Source::Ledger);
            self.knowledge.learn(uh.as_bytes(), step, Source::Ledger);
        }

        if self.config.forge_id_challenges && !self.challenged {
            if let Some((dsc, update_hash, targets)) = dscs.first().cloned() {
                self.challenged = true;
                for (actor, device) in self.directory.clone() {
                    if !targets.contains(&device) {
                        continue;
                    }
                    let (t, r, s) = self.crafted_key(&device, step);
                    let challenge = pod_message(&update_hash, &s).encode();
                    self.knowledge.computed(&challenge, step);
                    let session = Nonce::fresh(&mut self.rng);
                    self.knowledge.generated(session.as_bytes(), step);
                    self.forged.insert(session, Forgery { device, dsc, t, r, s });
                    let msg = Message::IdChallenge { session, challenge };
                    self.emissions.push(msg.encode());
                    notes.push(note("inject", format!("IdChallenge to {actor}")));
                    out.push((actor, msg));
                }
            }
        }

        for (device, s, pod) in std::mem::take(&mut self.captured_pods) {
            let Some((dsc, _, _)) = dscs.iter().find(|(_, _, t)| t.contains(&device)) else {
                continue;
            };
            let (t, r, s_own) = self.crafted_key(&device, step);
            for s_claim in [s_own, s] {
                self.crafted.push(Transaction {
                    sender: self.address(),
                    target: *dsc,
                    value: 0,
                    call: Call::SubmitPod { device, t, r, s: s_claim, pod },
                });
            }
            notes.push(note("front-run", format!("crafted submissions for {}", device.to_hex())));
        }

        for tx in std::mem::take(&mut self.crafted) {
            if let Call::SubmitPod { device, t, r, s, pod } = &tx.call {
                for field in [device.as_bytes(), &t[..], r.as_bytes(), s.as_bytes(), &pod.to_bytes()] {
                    self.emissions.push(field.to_vec());
                }
            }
            match ledger.submit_tx(tx) {
                Ok(id) => {
                    self.own_txs.insert(id);
                }
                Err(e) => notes.push(note("submit-failed", e.to_string())),
            }
        }

        if self.config.drop_txs {
            for id in ledger.pending().iter().map(|p| p.id).collect::<Vec<_>>() {
                let res = ledger.drop_tx(id);
                notes.push(note(
                    "drop-tx",
                    match res {
                        Ok(()) => format!("tx {} dropped", id.0),
                        Err(e) => format!("tx {} refused: {e}", id.0),
                    },
                ));
            }
        }

        let mut order: Vec<TxId> = ledger.pending().iter().map(|p| p.id).collect();
        let original = order.clone();
        if self.config.tx_order == TxOrder::Reverse {
            order.reverse();
        }
        if let Some(policy) = self.config.random.clone() {
            if policy.reorder_txs {
                order.shuffle(&mut self.rng);
            }
            for id in &original {
                if self.rng.gen::<f64>() < policy.tx_delay_prob && ledger.delay_tx(*id, 1).is_ok() {
                    notes.push(note("delay-tx", format!("tx {} by 1 block", id.0)));
                }
            }
        }
        // own transactions go first
        order.sort_by_key(|id| !self.own_txs.contains(id));
        if order != original {
            ledger.reorder(&order).expect("permutation of the pending queue");
            notes.push(note("reorder-txs", format!("{} pending", order.len())));
        }
        (out, notes)
    }
}
