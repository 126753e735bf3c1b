//! Trace properties. Each checker makes one pass over a finished trace and
//! returns the events that falsify the property, if any.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::trace::{EventKind, Trace, TraceEvent};
use crate::crypto::{Digest, PublicKey};
use crate::ledger::Address;

pub const PAYMENT_ONLY_IF_GENERATE_PROOF: &str = "PaymentOnlyIfGenerateProof";
pub const ALWAYS_PAID_IF_UPDATE_READY: &str = "AlwaysPaidIfUpdateReady";
pub const MAX_ONE_PAYMENT_FOR_ONE_IOT: &str = "MaxOnePaymentForOneIoT";
pub const PROOF_SOUNDNESS: &str = "ProofSoundness";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LemmaReport {
    pub lemma: &'static str,
    pub holds: bool,
    pub counterexample: Vec<TraceEvent>,
}

impl LemmaReport {
    fn from_counterexample(lemma: &'static str, counterexample: Vec<TraceEvent>) -> Self {
        LemmaReport {
            lemma,
            holds: counterexample.is_empty(),
            counterexample,
        }
    }
}

/// Every distributor payment for a device is preceded by that distributor
/// generating a delivery proof for that device.
pub fn payment_only_if_generate_proof(trace: &Trace) -> LemmaReport {
    let mut proved: BTreeSet<(Address, PublicKey)> = BTreeSet::new();
    let mut bad = Vec::new();
    for e in trace.events() {
        match &e.event {
            EventKind::GenProof { distributor, device, .. } => {
                proved.insert((*distributor, *device));
            }
            EventKind::PaymentToD { distributor, device, .. } if !proved.contains(&(*distributor, *device)) => {
                bad.push(e.clone());
            }
            _ => {}
        }
    }
    LemmaReport::from_counterexample(PAYMENT_ONLY_IF_GENERATE_PROOF, bad)
}

/// Whenever an update is ready for a device, some distributor was paid for
/// that device and generated a proof for that device and update.
pub fn always_paid_if_update_ready(trace: &Trace) -> LemmaReport {
    let mut paid: BTreeSet<(Address, PublicKey)> = BTreeSet::new();
    let mut proved: BTreeSet<(Address, PublicKey, Digest)> = BTreeSet::new();
    for e in trace.events() {
        match &e.event {
            EventKind::PaymentToD { distributor, device, .. } => {
                paid.insert((*distributor, *device));
            }
            EventKind::GenProof {
                distributor,
                device,
                update,
                ..
            } => {
                proved.insert((*distributor, *device, *update));
            }
            _ => {}
        }
    }
    let bad = trace
        .events()
        .iter()
        .filter(|e| match &e.event {
            EventKind::UpdateReadyForIoT { device, update } => !paid
                .iter()
                .any(|(d, dev)| dev == device && proved.contains(&(*d, *device, *update))),
            _ => false,
        })
        .cloned()
        .collect();
    LemmaReport::from_counterexample(ALWAYS_PAID_IF_UPDATE_READY, bad)
}

/// At most one distributor payment per device.
pub fn max_one_payment_for_one_iot(trace: &Trace) -> LemmaReport {
    let mut first: BTreeMap<PublicKey, &TraceEvent> = BTreeMap::new();
    let mut bad = Vec::new();
    for e in trace.events() {
        if let EventKind::PaymentToD { device, .. } = &e.event {
            match first.get(device) {
                None => {
                    first.insert(*device, e);
                }
                Some(prev) => {
                    if bad.is_empty() || !bad.contains(*prev) {
                        bad.push((*prev).clone());
                    }
                    bad.push(e.clone());
                }
            }
        }
    }
    LemmaReport::from_counterexample(MAX_ONE_PAYMENT_FOR_ONE_IOT, bad)
}

/// Every accepted proof was produced earlier for the same public inputs.
pub fn proof_soundness(trace: &Trace) -> LemmaReport {
    let mut produced: BTreeSet<Digest> = BTreeSet::new();
    let mut bad = Vec::new();
    for e in trace.events() {
        match &e.event {
            EventKind::GenProof { public, .. } | EventKind::ExchangeProof { public, .. } => {
                produced.insert(*public);
            }
            EventKind::ZkVerified { public, ok: true, .. } if !produced.contains(public) => bad.push(e.clone()),
            _ => {}
        }
    }
    LemmaReport::from_counterexample(PROOF_SOUNDNESS, bad)
}

pub fn check_all(trace: &Trace) -> Vec<LemmaReport> {
    vec![
        payment_only_if_generate_proof(trace),
        always_paid_if_update_ready(trace),
        max_one_payment_for_one_iot(trace),
        proof_soundness(trace),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    fn dist(b: u8) -> Address {
        Address([b; 32])
    }

    fn dev(b: u8) -> PublicKey {
        PublicKey([b; 32])
    }

    fn gen(d: u8, o: u8) -> EventKind {
        EventKind::GenProof {
            distributor: dist(d),
            device: dev(o),
            update: hash(b"u"),
            public: hash(&[d, o]),
        }
    }

    fn pay(d: u8, o: u8) -> EventKind {
        EventKind::PaymentToD {
            distributor: dist(d),
            device: dev(o),
            amount: 5,
        }
    }

    fn ready(o: u8) -> EventKind {
        EventKind::UpdateReadyForIoT {
            device: dev(o),
            update: hash(b"u"),
        }
    }

    fn trace(events: Vec<EventKind>) -> Trace {
        let mut t = Trace::new();
        for (i, e) in events.into_iter().enumerate() {
            t.record(i as u64, i as u64, "x", e);
        }
        t
    }

    #[test]
    fn empty_trace_holds_vacuously() {
        assert!(check_all(&Trace::new()).iter().all(|r| r.holds));
    }

    #[test]
    fn honest_shape_holds() {
        let t = trace(vec![gen(1, 1), pay(1, 1), ready(1), gen(2, 2), pay(2, 2), ready(2)]);
        assert!(check_all(&t).iter().all(|r| r.holds));
    }

    #[test]
    fn payment_before_proof_fails() {
        let t = trace(vec![pay(1, 1), gen(1, 1)]);
        let r = payment_only_if_generate_proof(&t);
        assert!(!r.holds);
        assert_eq!(r.counterexample.len(), 1);
        assert_eq!(r.counterexample[0].seq, 0);
    }

    #[test]
    fn proof_by_another_distributor_does_not_count() {
        let t = trace(vec![gen(2, 1), pay(1, 1)]);
        assert!(!payment_only_if_generate_proof(&t).holds);
    }

    #[test]
    fn ready_without_payment_fails() {
        let t = trace(vec![gen(1, 1), ready(1)]);
        let r = always_paid_if_update_ready(&t);
        assert!(!r.holds);
        // payment for another device does not help
        let t = trace(vec![gen(1, 1), pay(1, 2), ready(1)]);
        assert!(!always_paid_if_update_ready(&t).holds);
    }

    #[test]
    fn duplicate_payment_reports_both_events() {
        let t = trace(vec![gen(1, 1), gen(2, 1), pay(1, 1), pay(2, 1)]);
        let r = max_one_payment_for_one_iot(&t);
        assert!(!r.holds);
        assert_eq!(r.counterexample.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn accepted_proof_must_have_been_produced() {
        let ok = EventKind::ZkVerified {
            statement: crate::zk::StatementKind::Delivery,
            public: hash(&[1, 1]),
            ok: true,
        };
        assert!(!proof_soundness(&trace(vec![ok.clone()])).holds);
        assert!(proof_soundness(&trace(vec![gen(1, 1), ok])).holds);
    }
}
