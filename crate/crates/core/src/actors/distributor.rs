//! Distributor state machine. First-hand distributors get the package from
//! the manufacturer while seeding is open; later ones buy it from a holder
//! through an exchange escrow.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::messages::{
    dde_challenge_message, distributor_nonce_message, id_response_message, manufacturer_message, Message, Package,
};
use super::{account_key, find_release, Ctx, Mode};
use crate::contracts::{delivery_key, exchange_key, pod_message, Call, DscState};
use crate::crypto::{
    hash, sym_decrypt, sym_encrypt, verify_raw, verify_sig, Ciphertext, Context, Digest, KeyPair, Nonce, PublicKey,
    Signature, SymKey,
};
use crate::harness::trace::EventKind;
use crate::ledger::{Address, Transaction, TxId};
use crate::network::ActorId;
use crate::zk::{ProvingKey, PublicInputs, StatementKind, VerifyingKey, Witness};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    #[default]
    Honest,
    /// Collects PoDs but never submits them, so the key is never published.
    WithholdPod,
    /// Proves the genuine update, then ships the encryption of a modified one.
    TamperUpdate,
    /// Holds the package and sells it, but never serves hubs.
    ExchangeOnly,
    /// Sells the package but never claims the escrow.
    NeverClaimEsc,
    /// Sells a package other than the released one.
    WrongPackage,
}

#[derive(Debug, Clone)]
pub struct DistributorConfig {
    pub join_block: u64,
    pub manufacturer_actor: ActorId,
    pub manufacturer: Address,
    pub mode: Mode,
    pub behavior: Behavior,
    /// Minimum buyer score a seller accepts.
    pub score_threshold: u64,
    pub dde_offer: u64,
    /// Escrow lifetime; the release expiry when unset.
    pub dde_expiry: Option<u64>,
    pub timeout_blocks: u64,
}

#[derive(Debug, Clone)]
struct Holding {
    package: Package,
    bytes: Vec<u8>,
    pk_exchange: ProvingKey,
    vk_exchange: VerifyingKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Seed {
    Idle,
    Requested { since: u64 },
    Refused,
}

type Keys = ([u8; 32], SymKey, Digest);

#[derive(Debug, Clone)]
struct Delivery {
    hub: ActorId,
    device: PublicKey,
    challenge: Vec<u8>,
    keys: Option<Keys>,
}

#[derive(Debug, Clone)]
struct Sale {
    buyer: ActorId,
    keys: Option<Keys>,
    claim: Option<TxId>,
    deadline: u64,
}

#[derive(Debug, Clone)]
struct Offer {
    seller: ActorId,
    s: Digest,
    ciphertext: Ciphertext,
    pk_exchange: ProvingKey,
    vk_exchange: VerifyingKey,
}

#[derive(Debug, Clone)]
enum Purchase {
    None,
    Asking { seller: ActorId, since: u64 },
    Escrowing { offer: Offer, tx: TxId },
    Escrowed { offer: Offer, esc: Address, reclaim: Option<TxId> },
}

pub struct Distributor {
    name: String,
    keypair: KeyPair,
    cfg: DistributorConfig,
    holding: Option<Holding>,
    announced: bool,
    seed: Seed,
    deliveries: BTreeMap<Nonce, Delivery>,
    sales: BTreeMap<Nonce, Sale>,
    purchase: Purchase,
    tried_sellers: BTreeSet<ActorId>,
    /// Sellers caught cheating; never asked again.
    banned_sellers: BTreeSet<ActorId>,
}

impl Distributor {
    pub fn new(name: &str, keypair: KeyPair, cfg: DistributorConfig) -> Self {
        Distributor {
            name: name.to_string(),
            keypair,
            cfg,
            holding: None,
            announced: false,
            seed: Seed::Idle,
            deliveries: BTreeMap::new(),
            sales: BTreeMap::new(),
            purchase: Purchase::None,
            tried_sellers: BTreeSet::new(),
            banned_sellers: BTreeSet::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn address(&self) -> Address {
        self.keypair.public().into()
    }

    pub fn holds_package(&self) -> bool {
        self.holding.is_some()
    }

    pub fn behavior(&self) -> Behavior {
        self.cfg.behavior
    }

    pub fn busy(&self, height: u64, released: bool) -> bool {
        if !released {
            return false;
        }
        let acquiring = self.holding.is_none()
            && (height < self.cfg.join_block
                || matches!(self.seed, Seed::Idle | Seed::Requested { .. })
                || !matches!(self.purchase, Purchase::None));
        let claiming = self.cfg.behavior != Behavior::NeverClaimEsc
            && self
                .sales
                .values()
                .any(|s| s.keys.is_some() && s.claim.is_none() && s.deadline > height);
        acquiring || claiming
    }

    fn fresh_keys(&self, ctx: &mut Ctx<'_>, derive: impl Fn(&[u8; 32]) -> SymKey) -> Keys {
        let mut t = [0u8; 32];
        ctx.rng.fill_bytes(&mut t);
        let r = derive(&t);
        let s = hash(r.as_bytes());
        ctx.secrets.register_key(&self.name, s, r);
        (t, r, s)
    }

    /// Checks a package against the release's on-chain commitments.
    fn package_matches(package: &Package, bytes: &[u8], dsc: &DscState) -> bool {
        hash(bytes) == dsc.package_hash
            && package.update_hash() == dsc.update_hash
            && package.vk_delivery.digest() == dsc.vk_delivery_hash
            && verify_sig(
                &account_key(&dsc.creator),
                &manufacturer_message(&dsc.update_hash),
                &package.sig_m,
            )
    }

    fn exchange_keys_match(pk: &ProvingKey, vk: &VerifyingKey, dsc: &DscState) -> bool {
        pk.digest() == dsc.pk_exchange_hash && vk.digest() == dsc.vk_exchange_hash
    }

    fn acquire(&mut self, ctx: &mut Ctx<'_>, holding: Holding, via: &'static str) {
        ctx.record(EventKind::PackageAcquired {
            distributor: self.address(),
            via,
        });
        self.holding = Some(holding);
    }

    pub fn on_tick(&mut self, ctx: &mut Ctx<'_>) {
        let Some((_, dsc)) = find_release(ctx.ledger, &self.cfg.manufacturer) else {
            return;
        };
        if ctx.height < self.cfg.join_block {
            return;
        }
        if self.holding.is_none() {
            match self.seed {
                Seed::Idle => {
                    ctx.send(
                        &self.cfg.manufacturer_actor,
                        Message::SeedRequest {
                            package_hash: dsc.package_hash,
                        },
                    );
                    self.seed = Seed::Requested { since: ctx.height };
                }
                Seed::Requested { since } if ctx.height >= since + self.cfg.timeout_blocks => {
                    self.seed = Seed::Idle;
                }
                Seed::Requested { .. } => {}
                Seed::Refused => self.buy(ctx, &dsc),
            }
        }
        if let Some(h) = &self.holding {
            if !self.announced {
                self.announced = true;
                ctx.dht.announce(dsc.package_hash, &self.name);
                if self.cfg.behavior != Behavior::ExchangeOnly {
                    ctx.dht.announce(h.package.update_hash(), &self.name);
                }
            }
        }
        self.claim_escrows(ctx);
    }

    fn buy(&mut self, ctx: &mut Ctx<'_>, dsc: &DscState) {
        let me = self.address();
        match std::mem::replace(&mut self.purchase, Purchase::None) {
            Purchase::None => {
                let seller = ctx
                    .dht
                    .lookup(&dsc.package_hash)
                    .iter()
                    .find(|a| {
                        **a != self.cfg.manufacturer_actor
                            && **a != self.name
                            && !self.tried_sellers.contains(*a)
                            && !self.banned_sellers.contains(*a)
                    })
                    .cloned();
                if let Some(seller) = seller {
                    ctx.send(
                        &seller,
                        Message::DdeRequest {
                            package_hash: dsc.package_hash,
                        },
                    );
                    ctx.record(EventKind::SessionStarted {
                        session: "dde".into(),
                        counterpart: seller.clone(),
                    });
                    self.purchase = Purchase::Asking { seller, since: ctx.height };
                } else if !self.tried_sellers.is_empty() && !dsc.expired_at(ctx.height) {
                    // every seller failed once; honest-looking ones get another try
                    self.tried_sellers.clear();
                }
            }
            Purchase::Asking { seller, since } => {
                if ctx.height >= since + self.cfg.timeout_blocks {
                    ctx.aborted("dde", format!("no usable offer from {seller}"));
                    self.tried_sellers.insert(seller);
                } else {
                    self.purchase = Purchase::Asking { seller, since };
                }
            }
            Purchase::Escrowing { offer, tx } => match ctx.outcome(tx) {
                None => self.purchase = Purchase::Escrowing { offer, tx },
                Some(Ok(())) => {
                    let esc = ctx
                        .ledger
                        .escs()
                        .find(|(_, e)| e.creator == me && e.s == offer.s && !e.claimed)
                        .map(|(a, _)| *a)
                        .expect("escrow created by executed transaction");
                    self.purchase = Purchase::Escrowed { offer, esc, reclaim: None };
                }
                Some(Err(e)) => {
                    ctx.aborted("dde", format!("escrow creation failed: {e}"));
                    self.tried_sellers.insert(offer.seller);
                }
            },
            Purchase::Escrowed { offer, esc, reclaim } => {
                if let Some(r) = ctx.ledger.published_key(&offer.s) {
                    self.open_purchase(ctx, offer, &r, dsc);
                    return;
                }
                let expired = ctx.ledger.esc(&esc).is_some_and(|e| e.expired_at(ctx.height));
                match reclaim {
                    None if expired => {
                        let id = ctx.submit(Transaction {
                            sender: me,
                            target: esc,
                            value: 0,
                            call: Call::Reclaim,
                        });
                        self.purchase = Purchase::Escrowed { offer, esc, reclaim: id };
                    }
                    Some(id) if ctx.outcome(id).is_some() => {
                        ctx.aborted("dde", format!("escrow with {} expired unclaimed", offer.seller));
                        self.banned_sellers.insert(offer.seller);
                    }
                    _ => self.purchase = Purchase::Escrowed { offer, esc, reclaim },
                }
            }
        }
    }

    fn open_purchase(&mut self, ctx: &mut Ctx<'_>, offer: Offer, r: &SymKey, dsc: &DscState) {
        let opened = sym_decrypt(&offer.ciphertext, r)
            .ok()
            .and_then(|bytes| Package::from_bytes(&bytes).ok().map(|p| (p, bytes)));
        match opened {
            Some((package, bytes)) if Self::package_matches(&package, &bytes, dsc) => {
                let holding = Holding {
                    package,
                    bytes,
                    pk_exchange: offer.pk_exchange,
                    vk_exchange: offer.vk_exchange,
                };
                self.acquire(ctx, holding, "exchange");
            }
            _ => {
                ctx.violation("DecryptionFailure", "dde", format!("package from {} unusable", offer.seller));
                self.banned_sellers.insert(offer.seller);
            }
        }
    }

    fn claim_escrows(&mut self, ctx: &mut Ctx<'_>) {
        let me = self.address();
        let height = ctx.height;
        self.sales.retain(|_, s| s.claim.is_some() || s.deadline > height);
        if self.cfg.behavior == Behavior::NeverClaimEsc {
            return;
        }
        let mut claims = Vec::new();
        for (c, sale) in &self.sales {
            let (Some((t, r, s)), None) = (sale.keys, sale.claim) else { continue };
            let esc = ctx
                .ledger
                .escs()
                .find(|(_, e)| e.payee == me && e.s == s && !e.claimed && !e.expired_at(height))
                .map(|(a, _)| *a);
            if let Some(esc) = esc {
                claims.push((*c, esc, t, r));
            }
        }
        for (c, esc, t, r) in claims {
            let id = ctx.submit(Transaction {
                sender: me,
                target: esc,
                value: 0,
                call: Call::ClaimEsc { t, r },
            });
            if let Some(sale) = self.sales.get_mut(&c) {
                sale.claim = id;
            }
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, msg: Message) {
        let Some((dsc_addr, dsc)) = find_release(ctx.ledger, &self.cfg.manufacturer) else {
            return;
        };
        match msg {
            Message::SeedPackage {
                package,
                pk_exchange,
                vk_exchange,
            } => {
                if self.holding.is_some() || !matches!(self.seed, Seed::Requested { .. }) {
                    return;
                }
                let bytes = package.to_bytes();
                if Self::package_matches(&package, &bytes, &dsc)
                    && Self::exchange_keys_match(&pk_exchange, &vk_exchange, &dsc)
                {
                    let holding = Holding {
                        package,
                        bytes,
                        pk_exchange,
                        vk_exchange,
                    };
                    self.acquire(ctx, holding, "seed");
                } else {
                    ctx.violation("SeedPackageInvalid", "seed", format!("from {from}"));
                    self.seed = Seed::Idle;
                }
            }
            Message::SeedRefused { package_hash } if package_hash == dsc.package_hash => {
                if matches!(self.seed, Seed::Requested { .. }) {
                    self.seed = Seed::Refused;
                }
            }
            Message::UpdateRequest { update_hash, n1, device } => {
                let Some(h) = &self.holding else { return };
                if self.cfg.behavior == Behavior::ExchangeOnly || update_hash != h.package.update_hash() {
                    return;
                }
                // a replayed request must not replace the challenge already sent
                if self.deliveries.contains_key(&n1) {
                    return;
                }
                let challenge = Nonce::fresh(ctx.rng).as_bytes().to_vec();
                let sig = self.keypair.sign(&distributor_nonce_message(&n1));
                self.deliveries.insert(
                    n1,
                    Delivery {
                        hub: from.to_string(),
                        device,
                        challenge: challenge.clone(),
                        keys: None,
                    },
                );
                ctx.send(
                    from,
                    Message::DistributorHello {
                        n1,
                        distributor: self.keypair.public(),
                        sig,
                        challenge,
                    },
                );
            }
            Message::IdResponse {
                session,
                device,
                n2,
                sig,
            } => self.on_id_response(ctx, from, session, device, &n2, &sig, &dsc),
            Message::PodForward { session, device, s, pod } => {
                let Some(d) = self.deliveries.get(&session) else { return };
                let Some((t, r, own_s)) = d.keys else { return };
                if d.hub != from || d.device != device || own_s != s {
                    return;
                }
                if !verify_sig(&device, &pod_message(&dsc.update_hash, &s), &pod) {
                    ctx.violation("BadPod", session.to_hex(), "PoD does not verify");
                    return;
                }
                if self.cfg.behavior == Behavior::WithholdPod {
                    return;
                }
                ctx.submit(Transaction {
                    sender: self.address(),
                    target: dsc_addr,
                    value: 0,
                    call: Call::SubmitPod { device, t, r, s, pod },
                });
            }
            Message::DdeRequest { package_hash } => {
                if self.holding.is_none() || package_hash != dsc.package_hash {
                    return;
                }
                let challenge = Nonce::fresh(ctx.rng);
                self.sales.insert(
                    challenge,
                    Sale {
                        buyer: from.to_string(),
                        keys: None,
                        claim: None,
                        deadline: ctx.height + 2 * self.cfg.timeout_blocks,
                    },
                );
                ctx.send(from, Message::DdeChallenge { challenge });
            }
            Message::DdeChallengeResponse { challenge, buyer, sig } => {
                self.on_dde_response(ctx, from, challenge, buyer, &sig, &dsc)
            }
            Message::DdeChallenge { challenge } => {
                if matches!(&self.purchase, Purchase::Asking { seller, .. } if seller == from) {
                    let sig = self.keypair.sign(&dde_challenge_message(&challenge));
                    ctx.send(
                        from,
                        Message::DdeChallengeResponse {
                            challenge,
                            buyer: self.keypair.public(),
                            sig,
                        },
                    );
                }
            }
            Message::DdeProofDelivery {
                seller,
                proof,
                ciphertext,
                s,
                vk_exchange,
                pk_exchange,
                ..
            } => {
                let Purchase::Asking { seller: asked, .. } = &self.purchase else { return };
                if asked != from {
                    return;
                }
                let asked = asked.clone();
                if !Self::exchange_keys_match(&pk_exchange, &vk_exchange, &dsc) {
                    ctx.violation("KeyHashMismatch", "dde", format!("exchange keys from {from}"));
                    self.banned_sellers.insert(asked);
                    self.purchase = Purchase::None;
                    return;
                }
                let public = PublicInputs {
                    file_hash: dsc.package_hash,
                    ciphertext: ciphertext.clone(),
                    key_hash: s,
                };
                let ok = ctx.zk.verify(&vk_exchange, &public, &proof);
                ctx.record(EventKind::ZkVerified {
                    statement: StatementKind::Exchange,
                    public: public.digest(),
                    ok,
                });
                if !ok {
                    ctx.violation("ProofInvalid", "dde", format!("exchange proof from {from}"));
                    self.banned_sellers.insert(asked);
                    self.purchase = Purchase::None;
                    return;
                }
                let expiry = self.cfg.dde_expiry.unwrap_or(dsc.expiry);
                let tx = ctx.submit(Transaction {
                    sender: self.address(),
                    target: dsc.parent_ssc,
                    value: self.cfg.dde_offer,
                    call: Call::CreateEsc {
                        payee: seller.into(),
                        s,
                        expiry,
                    },
                });
                if let Some(tx) = tx {
                    let offer = Offer {
                        seller: asked,
                        s,
                        ciphertext,
                        pk_exchange,
                        vk_exchange,
                    };
                    self.purchase = Purchase::Escrowing { offer, tx };
                }
            }
            _ => {}
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_id_response(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: &str,
        n1: Nonce,
        device: PublicKey,
        n2: &[u8],
        sig: &Signature,
        dsc: &DscState,
    ) {
        let Some(d) = self.deliveries.get(&n1) else { return };
        if d.hub != from || d.device != device || d.keys.is_some() {
            return;
        }
        let valid = match self.cfg.mode {
            Mode::Standard => Nonce::from_slice(n2)
                .map(|n2| verify_sig(&device, &id_response_message(&d.challenge, &n2), sig))
                .unwrap_or(false),
            Mode::LegacyLeiba => sig.context == Context::IdResponse && verify_raw(&device, &d.challenge, sig),
        };
        if !valid {
            ctx.violation("BadIdResponse", n1.to_hex(), "device signature does not verify");
            self.deliveries.remove(&n1);
            return;
        }
        if !dsc.targets(&device) {
            ctx.aborted(n1.to_hex(), "device not in release target list");
            self.deliveries.remove(&n1);
            return;
        }
        let Some(h) = self.holding.clone() else { return };
        let me = self.address();
        let keys = self.fresh_keys(ctx, |t| delivery_key(t, &device, &me));
        let (_, r, s) = keys;
        let update = &h.package.update;
        let mut public = PublicInputs {
            file_hash: dsc.update_hash,
            ciphertext: sym_encrypt(update, &r, ctx.rng),
            key_hash: s,
        };
        let proof = ctx
            .zk
            .prove(&h.package.pk_delivery, &public, &Witness { file: update, key: &r })
            .expect("holder of the package satisfies the delivery relation");
        ctx.record(EventKind::GenProof {
            distributor: me,
            device,
            update: dsc.update_hash,
            public: public.digest(),
        });
        if self.cfg.behavior == Behavior::TamperUpdate {
            let mut tampered = update.clone();
            if let Some(b) = tampered.last_mut() {
                *b ^= 0x01;
            }
            public.ciphertext = sym_encrypt(&tampered, &r, ctx.rng);
        }
        self.deliveries.get_mut(&n1).expect("session exists").keys = Some(keys);
        ctx.send(
            from,
            Message::ZkProofDelivery {
                n1,
                proof,
                ciphertext: public.ciphertext,
                s,
                vk_delivery: h.package.vk_delivery,
                sig_m: h.package.sig_m,
            },
        );
    }

    fn on_dde_response(
        &mut self,
        ctx: &mut Ctx<'_>,
        from: &str,
        challenge: Nonce,
        buyer: PublicKey,
        sig: &Signature,
        dsc: &DscState,
    ) {
        let Some(sale) = self.sales.get(&challenge) else { return };
        if sale.buyer != from || sale.keys.is_some() {
            return;
        }
        let session = challenge.to_hex();
        if !verify_sig(&buyer, &dde_challenge_message(&challenge), sig) {
            ctx.violation("BadDdeResponse", session, "buyer signature does not verify");
            self.sales.remove(&challenge);
            return;
        }
        let score = ctx.ledger.score(&dsc.parent_ssc, &buyer.into());
        if score < self.cfg.score_threshold {
            ctx.aborted(session, format!("buyer score {score} below threshold"));
            self.sales.remove(&challenge);
            return;
        }
        let Some(h) = self.holding.clone() else { return };
        let me = self.address();
        let keys = self.fresh_keys(ctx, |t| exchange_key(t, &me));
        let (_, r, s) = keys;
        let file = if self.cfg.behavior == Behavior::WrongPackage {
            let mut other = h.package.clone();
            if let Some(b) = other.update.last_mut() {
                *b ^= 0x01;
            }
            other.to_bytes()
        } else {
            h.bytes.clone()
        };
        let public = PublicInputs {
            file_hash: hash(&file),
            ciphertext: sym_encrypt(&file, &r, ctx.rng),
            key_hash: s,
        };
        let proof = ctx
            .zk
            .prove(&h.pk_exchange, &public, &Witness { file: &file, key: &r })
            .expect("seller satisfies the exchange relation for the file it encrypts");
        ctx.record(EventKind::ExchangeProof {
            seller: me,
            package: public.file_hash,
            public: public.digest(),
        });
        self.sales.get_mut(&challenge).expect("sale exists").keys = Some(keys);
        ctx.send(
            from,
            Message::DdeProofDelivery {
                challenge,
                seller: self.keypair.public(),
                proof,
                ciphertext: public.ciphertext,
                s,
                vk_exchange: h.vk_exchange,
                pk_exchange: h.pk_exchange,
            },
        );
    }
}
