//! Append-only run trace. One JSON object per line with a stable field
//! order, so two runs can be compared byte for byte.

use serde::Serialize;

use crate::contracts::{ContractError, ContractKind};
use crate::crypto::{Digest, PublicKey};
use crate::ledger::{Address, TxId};
use crate::zk::StatementKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event")]
pub enum EventKind {
    MessageSent {
        id: u64,
        from: String,
        to: String,
        kind: &'static str,
        bytes: usize,
    },
    AdversaryAction {
        action: String,
        detail: String,
    },
    TxSubmitted {
        tx: TxId,
        sender: Address,
        call: &'static str,
    },
    TxExecuted {
        tx: TxId,
        call: &'static str,
        ok: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<ContractError>,
    },
    ContractDeployed {
        address: Address,
        kind: ContractKind,
    },
    PaymentToD {
        distributor: Address,
        device: PublicKey,
        amount: u64,
    },
    PaymentToH {
        hub: Address,
        device: PublicKey,
        amount: u64,
    },
    ExchangePaid {
        payee: Address,
        amount: u64,
    },
    Refund {
        to: Address,
        amount: u64,
    },
    KeyPublished {
        s: Digest,
    },
    ScoreUpdated {
        distributor: Address,
        score: u64,
    },
    Released {
        dsc: Address,
        update: Digest,
    },
    ReleaseFailed {
        error: ContractError,
    },
    SeedServed {
        to: String,
    },
    SeedRefused {
        to: String,
    },
    PackageAcquired {
        distributor: Address,
        via: &'static str,
    },
    GenProof {
        distributor: Address,
        device: PublicKey,
        update: Digest,
        public: Digest,
    },
    ExchangeProof {
        seller: Address,
        package: Digest,
        public: Digest,
    },
    ZkVerified {
        statement: StatementKind,
        public: Digest,
        ok: bool,
    },
    SessionStarted {
        session: String,
        counterpart: String,
    },
    SessionAborted {
        session: String,
        reason: String,
    },
    UpdateReadyForIoT {
        device: PublicKey,
        update: Digest,
    },
    UpdateInstalled {
        device: PublicKey,
        update: Digest,
    },
    Violation {
        check: String,
        session: String,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub height: u64,
    pub step: u64,
    pub actor: String,
    #[serde(flatten)]
    pub event: EventKind,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<TraceEvent>) -> Self {
        Trace { events }
    }

    pub fn record(&mut self, height: u64, step: u64, actor: &str, event: EventKind) {
        let seq = self.events.len() as u64;
        self.events.push(TraceEvent {
            seq,
            height,
            step,
            actor: actor.to_string(),
            event,
        });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn violations(&self) -> impl Iterator<Item = (&str, &str)> {
        self.events.iter().filter_map(|e| match &e.event {
            EventKind::Violation { check, session, .. } => Some((check.as_str(), session.as_str())),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_field_order_is_stable() {
        let mut t = Trace::new();
        t.record(
            3,
            12,
            "hub0",
            EventKind::Violation {
                check: "ProofInvalid".into(),
                session: "ab".into(),
                detail: "x".into(),
            },
        );
        assert_eq!(
            t.to_jsonl(),
            "{\"seq\":0,\"height\":3,\"step\":12,\"actor\":\"hub0\",\"event\":\"Violation\",\"check\":\"ProofInvalid\",\"session\":\"ab\",\"detail\":\"x\"}\n"
        );
        assert_eq!(t.violations().collect::<Vec<_>>(), vec![("ProofInvalid", "ab")]);
    }
}
