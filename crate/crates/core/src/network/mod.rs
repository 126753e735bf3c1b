//! Deterministic message scheduler, DHT peer discovery and the network
//! adversary.
//!
//! Time is counted in message steps; a fixed number of steps makes up one
//! block (see the harness engine).

pub mod adversary;
pub mod dht;
pub mod knowledge;

pub use adversary::{Adversary, AdversaryConfig};
pub use dht::Dht;
pub use knowledge::Knowledge;

use crate::actors::messages::MessageKind;

pub type ActorId = String;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub id: u64,
    pub from: ActorId,
    pub to: ActorId,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
    /// Earliest step at which the envelope may be delivered.
    pub deliver_at: u64,
}

/// In-flight envelopes. Delivery order is `(deliver_at, id)`, which gives
/// FIFO per sender/recipient pair when nothing is delayed.
#[derive(Debug, Clone, Default)]
pub struct Network {
    queue: Vec<Envelope>,
    next_id: u64,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, from: &str, to: &str, kind: MessageKind, payload: Vec<u8>, deliver_at: u64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.queue.push(Envelope {
            id,
            from: from.to_string(),
            to: to.to_string(),
            kind,
            payload,
            deliver_at,
        });
        id
    }

    /// Re-queues an envelope the adversary held back or duplicated. Copies
    /// get a fresh id so ids stay unique.
    pub fn requeue(&mut self, mut env: Envelope, deliver_at: u64, fresh_id: bool) -> u64 {
        if fresh_id {
            env.id = self.next_id;
            self.next_id += 1;
        }
        env.deliver_at = deliver_at;
        let id = env.id;
        self.queue.push(env);
        id
    }

    /// Removes and returns every envelope due at `step`, in delivery order.
    pub fn take_due(&mut self, step: u64) -> Vec<Envelope> {
        let (mut due, rest): (Vec<_>, Vec<_>) = self.queue.drain(..).partition(|e| e.deliver_at <= step);
        self.queue = rest;
        due.sort_by_key(|e| (e.deliver_at, e.id));
        due
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_per_pair_without_delay() {
        let mut n = Network::new();
        for i in 0..5u8 {
            n.send("a", "b", MessageKind::SeedRequest, vec![i], 1);
        }
        n.send("c", "b", MessageKind::SeedRequest, vec![9], 0);
        assert!(n.take_due(0).iter().all(|e| e.from == "c"));
        let due = n.take_due(1);
        assert_eq!(due.iter().map(|e| e.payload[0]).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert!(n.is_empty());
    }

    #[test]
    fn requeue_keeps_ids_unique() {
        let mut n = Network::new();
        let id = n.send("a", "b", MessageKind::SeedRequest, vec![1], 0);
        let env = n.take_due(0).remove(0);
        n.requeue(env.clone(), 3, true);
        n.requeue(env, 2, false);
        let due = n.take_due(3);
        assert_eq!(due.len(), 2);
        assert_eq!(due[0].id, id);
        assert_ne!(due[1].id, id);
    }
}
