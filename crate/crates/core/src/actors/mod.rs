//! Protocol state machines. Each actor reacts to delivered messages and to
//! a per-step tick; all side effects go through [`Ctx`].

pub mod device;
pub mod distributor;
pub mod hub;
pub mod manufacturer;
pub mod messages;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::contracts::{ContractError, DscState};
use crate::crypto::{Digest, PublicKey, SymKey};
use crate::harness::trace::{EventKind, Trace};
use crate::ledger::{Address, Ledger, Transaction, TxId};
use crate::network::{ActorId, Dht};
use crate::zk::ZkSystem;

pub use device::Device;
pub use distributor::{Behavior, Distributor};
pub use hub::Hub;
pub use manufacturer::Manufacturer;
pub use messages::{Message, MessageKind, Package};

/// `LegacyLeiba` makes devices answer ID challenges with a raw signature
/// over the challenge and no nonce of their own.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Standard,
    LegacyLeiba,
}

/// Secret values the witness scanner looks for.
#[derive(Debug, Clone, Default)]
pub struct Secrets {
    pub update: Option<Vec<u8>>,
    pub keys: Vec<KeyWitness>,
}

#[derive(Debug, Clone)]
pub struct KeyWitness {
    pub s: Digest,
    pub r: SymKey,
    pub owner: ActorId,
    pub published_step: Option<u64>,
}

impl Secrets {
    pub fn register_key(&mut self, owner: &str, s: Digest, r: SymKey) {
        self.keys.push(KeyWitness {
            s,
            r,
            owner: owner.to_string(),
            published_step: None,
        });
    }
}

/// Everything an actor may touch while handling one event.
pub struct Ctx<'a> {
    pub me: &'a str,
    pub height: u64,
    pub step: u64,
    pub steps_per_block: u64,
    pub ledger: &'a mut Ledger,
    pub dht: &'a mut Dht,
    pub rng: &'a mut ChaCha20Rng,
    pub zk: &'a mut ZkSystem,
    pub trace: &'a mut Trace,
    pub secrets: &'a mut Secrets,
    pub outbox: &'a mut Vec<(ActorId, ActorId, Message)>,
}

impl Ctx<'_> {
    pub fn send(&mut self, to: &str, msg: Message) {
        self.outbox.push((self.me.to_string(), to.to_string(), msg));
    }

    pub fn record(&mut self, event: EventKind) {
        self.trace.record(self.height, self.step, self.me, event);
    }

    pub fn violation(&mut self, check: &str, session: impl Into<String>, detail: impl Into<String>) {
        self.record(EventKind::Violation {
            check: check.to_string(),
            session: session.into(),
            detail: detail.into(),
        });
    }

    pub fn aborted(&mut self, session: impl Into<String>, reason: impl Into<String>) {
        self.record(EventKind::SessionAborted {
            session: session.into(),
            reason: reason.into(),
        });
    }

    /// Submits to the mempool. Only fails for senders without an account,
    /// which the engine never creates.
    pub fn submit(&mut self, tx: Transaction) -> Option<TxId> {
        let sender = tx.sender;
        let call = tx.call.name();
        let id = self.ledger.submit_tx(tx).ok()?;
        self.record(EventKind::TxSubmitted { tx: id, sender, call });
        Some(id)
    }

    /// Outcome of an executed transaction; `None` while pending.
    pub fn outcome(&self, id: TxId) -> Option<Result<(), ContractError>> {
        self.ledger
            .receipt(id)
            .map(|r| r.outcome.as_ref().map(|_| ()).map_err(Clone::clone))
    }
}

/// The release a party acts on: the DSC created by `creator`.
pub fn find_release(ledger: &Ledger, creator: &Address) -> Option<(Address, DscState)> {
    ledger
        .dscs()
        .find(|(_, d)| d.creator == *creator)
        .map(|(a, d)| (*a, d.clone()))
}

/// Account addresses are the holder's public key bytes.
pub fn account_key(addr: &Address) -> PublicKey {
    PublicKey(addr.0)
}
