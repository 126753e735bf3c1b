//! Hub state machine: finds a distributor for each managed device, relays
//! the identification exchange, checks the delivery proof, waits for the
//! key on the ledger and hands the decrypted update to the device.

use std::collections::{BTreeMap, BTreeSet};

use super::messages::{distributor_nonce_message, Message};
use super::{find_release, Ctx};
use crate::contracts::{pofd_message, Call, DscState};
use crate::crypto::{hash, sym_decrypt, verify_sig, Ciphertext, Digest, KeyPair, Nonce, PublicKey, Signature};
use crate::harness::trace::EventKind;
use crate::ledger::{Address, Transaction};
use crate::network::ActorId;
use crate::zk::{PublicInputs, StatementKind};

#[derive(Debug, Clone)]
pub struct HubConfig {
    pub manufacturer: Address,
    pub start_block: u64,
    pub score_threshold: u64,
    pub timeout_blocks: u64,
    /// Failed sessions or empty discovery rounds tolerated per device.
    pub retry_budget: u32,
    /// Distributors engaged at once for one device.
    pub parallel: usize,
    /// Steps the first discovery round collects hellos for.
    pub hello_window: u64,
}

#[derive(Debug, Clone)]
pub struct DeviceLink {
    pub actor: ActorId,
    pub device: PublicKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Open,
    Finalizing { session: Nonce, sent_at: u64, resends: u32 },
    Done,
    GaveUp,
}

#[derive(Debug, Clone)]
struct Task {
    link: DeviceLink,
    tried: BTreeSet<ActorId>,
    /// Every distributor engaged for this device, across passes.
    engaged: BTreeSet<ActorId>,
    failures: u32,
    next_round: u64,
    status: Status,
    discovery: Option<Nonce>,
}

#[derive(Debug, Clone)]
struct Hello {
    from: ActorId,
    challenge: Vec<u8>,
    score: u64,
    rank: usize,
}

#[derive(Debug, Clone)]
struct Discovery {
    task: usize,
    candidates: Vec<ActorId>,
    hellos: Vec<Hello>,
    closes_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    AwaitIdResponse,
    AwaitProof,
    AwaitPod,
    AwaitKey,
    Done,
    Aborted,
}

#[derive(Debug, Clone)]
struct Session {
    task: usize,
    n1: Nonce,
    distributor: ActorId,
    stage: Stage,
    deadline: u64,
    /// Timed out; still watched for its key but no longer counted as live.
    stale: bool,
    delivery: Option<(Ciphertext, Digest, Signature)>,
    update: Option<Vec<u8>>,
}

impl Session {
    fn live(&self) -> bool {
        !self.stale && !matches!(self.stage, Stage::Done | Stage::Aborted)
    }
}

pub struct Hub {
    name: String,
    keypair: KeyPair,
    cfg: HubConfig,
    tasks: Vec<Task>,
    discoveries: BTreeMap<Nonce, Discovery>,
    sessions: BTreeMap<Nonce, Session>,
    by_ref: BTreeMap<(Nonce, ActorId), Nonce>,
}

impl Hub {
    pub fn new(name: &str, keypair: KeyPair, cfg: HubConfig, devices: Vec<DeviceLink>) -> Self {
        let tasks = devices
            .into_iter()
            .map(|link| Task {
                link,
                tried: BTreeSet::new(),
                engaged: BTreeSet::new(),
                failures: 0,
                next_round: 0,
                status: Status::Open,
                discovery: None,
            })
            .collect();
        Hub {
            name: name.to_string(),
            keypair,
            cfg,
            tasks,
            discoveries: BTreeMap::new(),
            sessions: BTreeMap::new(),
            by_ref: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn address(&self) -> Address {
        self.keypair.public().into()
    }

    pub fn busy(&self, released: bool) -> bool {
        released
            && self
                .tasks
                .iter()
                .any(|t| matches!(t.status, Status::Open | Status::Finalizing { .. }))
    }

    /// Devices this hub delivered to and collected a PoFD for.
    pub fn completed(&self) -> usize {
        self.tasks.iter().filter(|t| t.status == Status::Done).count()
    }

    fn fail(&mut self, ctx: &mut Ctx<'_>, sid: Nonce, reason: &str) {
        let Some(s) = self.sessions.get_mut(&sid) else { return };
        if !s.live() {
            return;
        }
        s.stage = Stage::Aborted;
        s.stale = true;
        let task = &mut self.tasks[s.task];
        task.failures += 1;
        task.next_round = ctx.height;
        ctx.aborted(sid.to_hex(), reason);
    }

    pub fn on_tick(&mut self, ctx: &mut Ctx<'_>) {
        let Some((_, dsc)) = find_release(ctx.ledger, &self.cfg.manufacturer) else {
            return;
        };
        if ctx.height < self.cfg.start_block {
            return;
        }
        self.close_discoveries(ctx);
        self.expire_sessions(ctx);
        self.watch_keys(ctx, &dsc);
        self.resend_final(ctx);
        self.start_rounds(ctx, &dsc);
    }

    fn start_rounds(&mut self, ctx: &mut Ctx<'_>, dsc: &DscState) {
        for i in 0..self.tasks.len() {
            let task = &self.tasks[i];
            if task.status != Status::Open || task.discovery.is_some() || ctx.height < task.next_round {
                continue;
            }
            if self.sessions.values().any(|s| s.task == i && s.live()) {
                continue;
            }
            let label = task.link.actor.clone();
            if task.failures >= self.cfg.retry_budget {
                self.tasks[i].status = Status::GaveUp;
                ctx.aborted(label, "retry budget exhausted");
                continue;
            }
            if dsc.expired_at(ctx.height) {
                self.tasks[i].status = Status::GaveUp;
                ctx.aborted(label, "release expired");
                continue;
            }
            let announced = ctx.dht.lookup(&dsc.update_hash);
            if announced.is_empty() {
                // nobody holds the update yet; not a failed attempt
                self.tasks[i].next_round = ctx.height + 1;
                continue;
            }
            let candidates: Vec<ActorId> = announced
                .iter()
                .filter(|a| !task.tried.contains(*a))
                .cloned()
                .collect();
            if candidates.is_empty() {
                // everyone failed once; start another pass, bounded by the budget
                let task = &mut self.tasks[i];
                task.failures += 1;
                task.tried.clear();
                task.next_round = ctx.height + 1;
                ctx.aborted(label, "every announced distributor tried");
                continue;
            }
            let n1 = Nonce::fresh(ctx.rng);
            let device = task.link.device;
            for c in &candidates {
                ctx.send(
                    c,
                    Message::UpdateRequest {
                        update_hash: dsc.update_hash,
                        n1,
                        device,
                    },
                );
            }
            self.tasks[i].discovery = Some(n1);
            self.discoveries.insert(
                n1,
                Discovery {
                    task: i,
                    candidates,
                    hellos: Vec::new(),
                    // doubles per failure so bounded network delays are eventually covered
                    closes_at: ctx.step + (self.cfg.hello_window << self.tasks[i].failures.min(4)),
                },
            );
        }
    }

    fn close_discoveries(&mut self, ctx: &mut Ctx<'_>) {
        let due: Vec<Nonce> = self
            .discoveries
            .iter()
            .filter(|(_, d)| ctx.step >= d.closes_at)
            .map(|(n, _)| *n)
            .collect();
        for n1 in due {
            let mut d = self.discoveries.remove(&n1).expect("listed above");
            let task = &mut self.tasks[d.task];
            task.discovery = None;
            if task.status != Status::Open {
                continue;
            }
            // distributors that already failed this device go last
            d.hellos.sort_by(|a, b| {
                let seen = |h: &Hello| task.engaged.contains(&h.from);
                seen(a)
                    .cmp(&seen(b))
                    .then(b.score.cmp(&a.score))
                    .then(a.rank.cmp(&b.rank))
            });
            d.hellos.truncate(self.cfg.parallel.max(1));
            task.tried.extend(d.hellos.iter().map(|h| h.from.clone()));
            task.engaged.extend(d.hellos.iter().map(|h| h.from.clone()));
            if d.hellos.is_empty() {
                task.failures += 1;
                task.next_round = ctx.height + 1;
                let label = task.link.actor.clone();
                ctx.aborted(label, "no acceptable distributor answered");
                continue;
            }
            let device_actor = task.link.actor.clone();
            for h in d.hellos {
                let sid = Nonce::fresh(ctx.rng);
                ctx.record(EventKind::SessionStarted {
                    session: sid.to_hex(),
                    counterpart: h.from.clone(),
                });
                ctx.send(
                    &device_actor,
                    Message::IdChallenge {
                        session: sid,
                        challenge: h.challenge,
                    },
                );
                self.by_ref.insert((n1, h.from.clone()), sid);
                self.sessions.insert(
                    sid,
                    Session {
                        task: d.task,
                        n1,
                        distributor: h.from,
                        stage: Stage::AwaitIdResponse,
                        deadline: ctx.height + self.cfg.timeout_blocks,
                        stale: false,
                        delivery: None,
                        update: None,
                    },
                );
            }
        }
    }

    fn expire_sessions(&mut self, ctx: &mut Ctx<'_>) {
        let expired: Vec<(Nonce, Stage)> = self
            .sessions
            .iter()
            .filter(|(_, s)| s.live() && ctx.height >= s.deadline)
            .map(|(n, s)| (*n, s.stage))
            .collect();
        for (sid, stage) in expired {
            if stage == Stage::AwaitKey {
                // keep watching: the key may still show up
                let s = self.sessions.get_mut(&sid).expect("listed above");
                s.stale = true;
                let task = &mut self.tasks[s.task];
                task.failures += 1;
                task.next_round = ctx.height;
                ctx.aborted(sid.to_hex(), "key not published in time");
            } else {
                self.fail(ctx, sid, &format!("timeout in {stage:?}"));
            }
        }
    }

    fn watch_keys(&mut self, ctx: &mut Ctx<'_>, dsc: &DscState) {
        let waiting: Vec<Nonce> = self
            .sessions
            .iter()
            .filter(|(_, s)| s.stage == Stage::AwaitKey && self.tasks[s.task].status == Status::Open)
            .map(|(n, _)| *n)
            .collect();
        for sid in waiting {
            let s = &self.sessions[&sid];
            if self.tasks[s.task].status != Status::Open {
                continue;
            }
            let (ciphertext, key_hash, _) = s.delivery.as_ref().expect("set before AwaitKey");
            let Some(r) = ctx.ledger.published_key(key_hash) else { continue };
            let opened = sym_decrypt(ciphertext, &r);
            let session = sid.to_hex();
            let update = match opened {
                Err(_) => {
                    ctx.violation("DecryptionFailure", session, "published key does not open the ciphertext");
                    self.fail_keyed(ctx, sid);
                    continue;
                }
                Ok(u) if hash(&u) != dsc.update_hash => {
                    ctx.violation("HashMismatch", session, "decrypted update does not match the release");
                    self.fail_keyed(ctx, sid);
                    continue;
                }
                Ok(u) => u,
            };
            let task_idx = s.task;
            let device = self.tasks[task_idx].link.device;
            let device_actor = self.tasks[task_idx].link.actor.clone();
            ctx.record(EventKind::UpdateReadyForIoT {
                device,
                update: dsc.update_hash,
            });
            ctx.send(
                &device_actor,
                Message::FinalDelivery {
                    session: sid,
                    update: update.clone(),
                },
            );
            let s = self.sessions.get_mut(&sid).expect("present");
            s.stage = Stage::Done;
            s.update = Some(update);
            self.tasks[task_idx].status = Status::Finalizing {
                session: sid,
                sent_at: ctx.height,
                resends: 0,
            };
            for other in self.sessions.values_mut() {
                if other.task == task_idx && other.stage != Stage::Done {
                    other.stage = Stage::Aborted;
                    other.stale = true;
                }
            }
        }
    }

    fn fail_keyed(&mut self, ctx: &mut Ctx<'_>, sid: Nonce) {
        let s = self.sessions.get_mut(&sid).expect("present");
        let was_live = s.live();
        s.stage = Stage::Aborted;
        s.stale = true;
        if was_live {
            let task = &mut self.tasks[s.task];
            task.failures += 1;
            task.next_round = ctx.height;
        }
    }

    fn resend_final(&mut self, ctx: &mut Ctx<'_>) {
        for i in 0..self.tasks.len() {
            let Status::Finalizing { session, sent_at, resends } = self.tasks[i].status else {
                continue;
            };
            if ctx.height < sent_at + self.cfg.timeout_blocks {
                continue;
            }
            if resends >= self.cfg.retry_budget {
                self.tasks[i].status = Status::GaveUp;
                ctx.aborted(session.to_hex(), "no PoFD after final delivery");
                continue;
            }
            let update = self.sessions[&session].update.clone().expect("set when finalizing");
            let actor = self.tasks[i].link.actor.clone();
            ctx.send(&actor, Message::FinalDelivery { session, update });
            self.tasks[i].status = Status::Finalizing {
                session,
                sent_at: ctx.height,
                resends: resends + 1,
            };
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, msg: Message) {
        let Some((dsc_addr, dsc)) = find_release(ctx.ledger, &self.cfg.manufacturer) else {
            return;
        };
        match msg {
            Message::DistributorHello {
                n1,
                distributor,
                sig,
                challenge,
            } => {
                let Some(d) = self.discoveries.get_mut(&n1) else { return };
                let Some(rank) = d.candidates.iter().position(|c| c == from) else { return };
                if d.hellos.iter().any(|h| h.from == from) {
                    return;
                }
                if !verify_sig(&distributor, &distributor_nonce_message(&n1), &sig) {
                    ctx.violation("BadDistributorSignature", n1.to_hex(), format!("hello from {from}"));
                    return;
                }
                let score = ctx.ledger.score(&dsc.parent_ssc, &distributor.into());
                if score < self.cfg.score_threshold {
                    ctx.aborted(n1.to_hex(), format!("{from} score {score} below threshold"));
                    return;
                }
                d.hellos.push(Hello {
                    from: from.to_string(),
                    challenge,
                    score,
                    rank,
                });
            }
            Message::IdResponse {
                session,
                device,
                n2,
                sig,
            } => {
                let Some(s) = self.sessions.get_mut(&session) else { return };
                let link = &self.tasks[s.task].link;
                if s.stage != Stage::AwaitIdResponse || link.actor != from || link.device != device {
                    return;
                }
                s.stage = Stage::AwaitProof;
                s.deadline = ctx.height + self.cfg.timeout_blocks;
                let to = s.distributor.clone();
                let n1 = s.n1;
                ctx.send(&to, Message::IdResponse { session: n1, device, n2, sig });
            }
            Message::ZkProofDelivery {
                n1,
                proof,
                ciphertext,
                s,
                vk_delivery,
                sig_m,
            } => {
                let Some(&sid) = self.by_ref.get(&(n1, from.to_string())) else { return };
                if self.sessions[&sid].stage != Stage::AwaitProof {
                    return;
                }
                if vk_delivery.digest() != dsc.vk_delivery_hash {
                    ctx.violation("VkHashMismatch", sid.to_hex(), "verifying key does not match the release");
                    self.fail(ctx, sid, "verifying key mismatch");
                    return;
                }
                let public = PublicInputs {
                    file_hash: dsc.update_hash,
                    ciphertext: ciphertext.clone(),
                    key_hash: s,
                };
                let ok = ctx.zk.verify(&vk_delivery, &public, &proof);
                ctx.record(EventKind::ZkVerified {
                    statement: StatementKind::Delivery,
                    public: public.digest(),
                    ok,
                });
                if !ok {
                    ctx.violation("ProofInvalid", sid.to_hex(), format!("delivery proof from {from}"));
                    self.fail(ctx, sid, "invalid delivery proof");
                    return;
                }
                let session = self.sessions.get_mut(&sid).expect("present");
                session.delivery = Some((ciphertext, s, sig_m));
                session.stage = Stage::AwaitPod;
                session.deadline = ctx.height + self.cfg.timeout_blocks;
                let actor = self.tasks[session.task].link.actor.clone();
                ctx.send(
                    &actor,
                    Message::PodRequest {
                        session: sid,
                        update_hash: dsc.update_hash,
                        sig_m,
                        s,
                    },
                );
            }
            Message::PodForward { session, device, s, pod } => {
                let Some(sess) = self.sessions.get_mut(&session) else { return };
                let link = &self.tasks[sess.task].link;
                let expected = sess.delivery.as_ref().map(|d| d.1);
                if sess.stage != Stage::AwaitPod || link.actor != from || link.device != device || expected != Some(s) {
                    return;
                }
                sess.stage = Stage::AwaitKey;
                sess.deadline = ctx.height + self.cfg.timeout_blocks;
                let to = sess.distributor.clone();
                let n1 = sess.n1;
                ctx.send(&to, Message::PodForward { session: n1, device, s, pod });
            }
            Message::PofdForward { session, device, pofd } => {
                let Some(i) = self.tasks.iter().position(
                    |t| matches!(t.status, Status::Finalizing { session: s, .. } if s == session),
                ) else {
                    return;
                };
                if self.tasks[i].link.device != device || self.tasks[i].link.actor != from {
                    return;
                }
                if !verify_sig(&device, &pofd_message(&dsc.update_hash, &self.address()), &pofd) {
                    ctx.violation("BadPofd", session.to_hex(), "PoFD does not verify");
                    return;
                }
                ctx.submit(Transaction {
                    sender: self.address(),
                    target: dsc_addr,
                    value: 0,
                    call: Call::SubmitPofd { device, pofd },
                });
                self.tasks[i].status = Status::Done;
            }
            _ => {}
        }
    }
}
