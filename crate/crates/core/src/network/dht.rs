//! Content index for peer discovery. Honest actors announce only what they
//! hold; nothing stops a malicious actor from announcing falsely.

use std::collections::BTreeMap;

use crate::crypto::Digest;

use super::ActorId;

#[derive(Debug, Clone, Default)]
pub struct Dht {
    index: BTreeMap<Digest, Vec<ActorId>>,
}

impl Dht {
    pub fn new() -> Self {
        Self::default()
    }

    /// Idempotent; the first announcement fixes the actor's position.
    pub fn announce(&mut self, content: Digest, actor: &str) {
        let holders = self.index.entry(content).or_default();
        if !holders.iter().any(|a| a == actor) {
            holders.push(actor.to_string());
        }
    }

    /// Announcers in insertion order; empty when nobody announced.
    pub fn lookup(&self, content: &Digest) -> &[ActorId] {
        self.index.get(content).map(Vec::as_slice).unwrap_or(&[])
    }
}
