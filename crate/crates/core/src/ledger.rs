//! Abstract permissionless chain: a pending queue, atomic per-transaction
//! execution at block boundaries, balances, hosted contracts, and the
//! append-only list of published decryption keys.
//!
//! Block height is the only clock. The adversary may permute the pending
//! queue and delay entries up to `max_delay` blocks; it may not drop them.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::contracts::{self, Call, Contract, ContractError, DscState, EscState, SscState};
use crate::crypto::{hash, Digest, PublicKey, SymKey};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(pub [u8; 32]);

impl Address {
    /// Target used by contract-creation transactions that have no callee yet.
    pub const CREATE: Address = Address([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl From<PublicKey> for Address {
    fn from(pk: PublicKey) -> Self {
        Address(pk.0)
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", &self.to_hex()[..12])
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TxId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub sender: Address,
    pub target: Address,
    pub value: u64,
    pub call: Call,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingTx {
    pub id: TxId,
    pub tx: Transaction,
    /// First block height at which the tx may execute.
    pub ready_at: u64,
    pub delayed_by: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PublishedKey {
    pub s: Digest,
    #[serde(skip)]
    pub r: SymKey,
    pub height: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "reason")]
pub enum PayReason {
    Delivery { device: PublicKey },
    FinalDelivery { device: PublicKey },
    Exchange,
    Refund,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerEvent {
    ContractDeployed {
        address: Address,
        kind: contracts::ContractKind,
        creator: Address,
    },
    Paid {
        from: Address,
        to: Address,
        amount: u64,
        reason: PayReason,
    },
    KeyPublished {
        s: Digest,
        r: SymKey,
    },
    ScoreUpdated {
        distributor: Address,
        score: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxReceipt {
    pub id: TxId,
    pub height: u64,
    pub sender: Address,
    pub target: Address,
    pub call: &'static str,
    pub outcome: Result<Vec<LedgerEvent>, ContractError>,
}

impl TxReceipt {
    pub fn ok(&self) -> bool {
        self.outcome.is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("sender has no account")]
    UnknownSender,
    #[error("no pending transaction with that id")]
    UnknownTx,
    #[error("requested delay exceeds the {max} block bound")]
    DelayExceeded { max: u64 },
    #[error("chain transactions cannot be dropped")]
    Undroppable,
    #[error("reorder must be a permutation of the pending queue")]
    BadPermutation,
    #[error("not found")]
    NotFound,
}

/// Balances, contracts and published keys: everything a transaction can
/// touch. Cloned before each execution so a failed call can be rolled back.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct World {
    pub balances: BTreeMap<Address, u64>,
    pub contracts: BTreeMap<Address, Contract>,
    pub published_keys: Vec<PublishedKey>,
    pub ssc_by_owner: BTreeMap<Address, Address>,
    pub deployed: u64,
}

impl World {
    pub fn balance(&self, who: &Address) -> u64 {
        self.balances.get(who).copied().unwrap_or(0)
    }

    pub fn transfer(&mut self, from: Address, to: Address, amount: u64) -> Result<(), ContractError> {
        let have = self.balance(&from);
        if have < amount {
            return Err(ContractError::InsufficientFunds {
                needed: amount,
                available: have,
            });
        }
        if amount == 0 {
            return Ok(());
        }
        self.balances.insert(from, have - amount);
        *self.balances.entry(to).or_insert(0) += amount;
        Ok(())
    }

    pub fn total_supply(&self) -> u64 {
        self.balances.values().sum()
    }

    pub fn publish_key(&mut self, s: Digest, r: SymKey, height: u64) {
        debug_assert_eq!(hash(r.as_bytes()), s);
        self.published_keys.push(PublishedKey { s, r, height });
    }
}

/// Read-only queries any participant (or the adversary) can make.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    Balance(Address),
    PublishedKey(Digest),
    Score { ssc: Address, distributor: Address },
    Dsc(Address),
    Esc(Address),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PublicValue {
    Balance(u64),
    Key(SymKey),
    Score(u64),
    Dsc(Box<DscState>),
    Esc(EscState),
}

#[derive(Debug, Clone)]
pub struct Ledger {
    height: u64,
    world: World,
    pending: Vec<PendingTx>,
    next_tx: u64,
    max_delay: u64,
    genesis_supply: u64,
    receipts: Vec<TxReceipt>,
}

impl Ledger {
    pub fn genesis<I: IntoIterator<Item = (Address, u64)>>(allocations: I, max_delay: u64) -> Self {
        let mut world = World::default();
        for (addr, amount) in allocations {
            *world.balances.entry(addr).or_insert(0) += amount;
        }
        let genesis_supply = world.total_supply();
        Ledger {
            height: 0,
            world,
            pending: Vec::new(),
            next_tx: 0,
            max_delay,
            genesis_supply,
            receipts: Vec::new(),
        }
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn genesis_supply(&self) -> u64 {
        self.genesis_supply
    }

    pub fn total_supply(&self) -> u64 {
        self.world.total_supply()
    }

    pub fn max_delay(&self) -> u64 {
        self.max_delay
    }

    pub fn receipts(&self) -> &[TxReceipt] {
        &self.receipts
    }

    pub fn receipt(&self, id: TxId) -> Option<&TxReceipt> {
        self.receipts.iter().find(|r| r.id == id)
    }

    /// The public mempool.
    pub fn pending(&self) -> &[PendingTx] {
        &self.pending
    }

    pub fn submit_tx(&mut self, tx: Transaction) -> Result<TxId, LedgerError> {
        if !self.world.balances.contains_key(&tx.sender) {
            return Err(LedgerError::UnknownSender);
        }
        let id = TxId(self.next_tx);
        self.next_tx += 1;
        self.pending.push(PendingTx {
            id,
            tx,
            ready_at: self.height + 1,
            delayed_by: 0,
        });
        Ok(id)
    }

    pub fn delay_tx(&mut self, id: TxId, blocks: u64) -> Result<(), LedgerError> {
        let max = self.max_delay;
        let p = self
            .pending
            .iter_mut()
            .find(|p| p.id == id)
            .ok_or(LedgerError::UnknownTx)?;
        if p.delayed_by + blocks > max {
            return Err(LedgerError::DelayExceeded { max });
        }
        p.delayed_by += blocks;
        p.ready_at += blocks;
        Ok(())
    }

    /// Always refused; present so adversary scripts can attempt it.
    pub fn drop_tx(&mut self, id: TxId) -> Result<(), LedgerError> {
        if self.pending.iter().any(|p| p.id == id) {
            Err(LedgerError::Undroppable)
        } else {
            Err(LedgerError::UnknownTx)
        }
    }

    /// Rearranges the pending queue. `order` must name every pending tx once.
    pub fn reorder(&mut self, order: &[TxId]) -> Result<(), LedgerError> {
        if order.len() != self.pending.len() {
            return Err(LedgerError::BadPermutation);
        }
        let mut taken: Vec<Option<PendingTx>> = self.pending.drain(..).map(Some).collect();
        let mut out = Vec::with_capacity(order.len());
        for id in order {
            let slot = taken.iter_mut().find(|p| p.as_ref().is_some_and(|p| p.id == *id));
            match slot.and_then(Option::take) {
                Some(p) => out.push(p),
                None => {
                    // restore the original queue before reporting
                    let mut restored: Vec<PendingTx> = out;
                    restored.extend(taken.into_iter().flatten());
                    restored.sort_by_key(|p| p.id);
                    self.pending = restored;
                    return Err(LedgerError::BadPermutation);
                }
            }
        }
        self.pending = out;
        Ok(())
    }

    /// Produces the next block: every ready pending tx executes in queue
    /// order, each atomically.
    pub fn advance_block(&mut self) -> Vec<TxReceipt> {
        self.height += 1;
        let height = self.height;
        let (ready, waiting): (Vec<_>, Vec<_>) =
            self.pending.drain(..).partition(|p| p.ready_at <= height);
        self.pending = waiting;
        let mut out = Vec::with_capacity(ready.len());
        for p in ready {
            let snapshot = self.world.clone();
            let outcome = contracts::execute(&mut self.world, height, &p.tx);
            if outcome.is_err() {
                self.world = snapshot;
            }
            debug_assert_eq!(self.world.total_supply(), self.genesis_supply);
            out.push(TxReceipt {
                id: p.id,
                height,
                sender: p.tx.sender,
                target: p.tx.target,
                call: p.tx.call.name(),
                outcome,
            });
        }
        self.receipts.extend(out.iter().cloned());
        out
    }

    pub fn balance(&self, who: &Address) -> u64 {
        self.world.balance(who)
    }

    pub fn published_key(&self, s: &Digest) -> Option<SymKey> {
        self.world
            .published_keys
            .iter()
            .find(|k| &k.s == s)
            .map(|k| k.r)
    }

    pub fn published_keys(&self) -> &[PublishedKey] {
        &self.world.published_keys
    }

    pub fn ssc(&self, addr: &Address) -> Option<&SscState> {
        match self.world.contracts.get(addr) {
            Some(Contract::Ssc(s)) => Some(s),
            _ => None,
        }
    }

    pub fn ssc_of(&self, owner: &Address) -> Option<Address> {
        self.world.ssc_by_owner.get(owner).copied()
    }

    pub fn dsc(&self, addr: &Address) -> Option<&DscState> {
        match self.world.contracts.get(addr) {
            Some(Contract::Dsc(d)) => Some(d),
            _ => None,
        }
    }

    pub fn esc(&self, addr: &Address) -> Option<&EscState> {
        match self.world.contracts.get(addr) {
            Some(Contract::Esc(e)) => Some(e),
            _ => None,
        }
    }

    pub fn dscs(&self) -> impl Iterator<Item = (&Address, &DscState)> {
        self.world.contracts.iter().filter_map(|(a, c)| match c {
            Contract::Dsc(d) => Some((a, &**d)),
            _ => None,
        })
    }

    pub fn escs(&self) -> impl Iterator<Item = (&Address, &EscState)> {
        self.world.contracts.iter().filter_map(|(a, c)| match c {
            Contract::Esc(e) => Some((a, e)),
            _ => None,
        })
    }

    /// Effective score at the current height (lazy reset applied).
    pub fn score(&self, ssc: &Address, distributor: &Address) -> u64 {
        self.ssc(ssc)
            .map(|s| s.score_at(distributor, self.height))
            .unwrap_or(0)
    }

    pub fn read_public(&self, query: &Query) -> Result<PublicValue, LedgerError> {
        match query {
            Query::Balance(a) => Ok(PublicValue::Balance(self.balance(a))),
            Query::PublishedKey(s) => self
                .published_key(s)
                .map(PublicValue::Key)
                .ok_or(LedgerError::NotFound),
            Query::Score { ssc, distributor } => self
                .ssc(ssc)
                .map(|s| PublicValue::Score(s.score_at(distributor, self.height)))
                .ok_or(LedgerError::NotFound),
            Query::Dsc(a) => self
                .dsc(a)
                .map(|d| PublicValue::Dsc(Box::new(d.clone())))
                .ok_or(LedgerError::NotFound),
            Query::Esc(a) => self
                .esc(a)
                .map(|e| PublicValue::Esc(e.clone()))
                .ok_or(LedgerError::NotFound),
        }
    }
}
