//! Symbolic knowledge of the network adversary.
//!
//! Observed payloads are split along canonical framing into atoms. Hashes
//! and signatures are opaque: the only way to open a ciphertext is a key
//! that is itself known (in practice, one published on the ledger).

use std::collections::BTreeMap;

use crate::crypto::{canonical_decode, contains_subslice, sym_decrypt, Ciphertext, SymKey};

const MIN_CIPHERTEXT: usize = 12 + 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Seen inside an envelope of this kind.
    Observed(crate::actors::messages::MessageKind),
    /// Read from the public ledger.
    Ledger,
    /// Plaintext of a captured ciphertext under a known key.
    Decrypted,
    /// Fresh value the adversary made up.
    Generated,
    /// Result of hashing, signing with its own key, or re-framing known values.
    Computed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Learned {
    pub step: u64,
    pub source: Source,
}

#[derive(Debug, Clone, Default)]
pub struct Knowledge {
    atoms: BTreeMap<Vec<u8>, Learned>,
    keys: Vec<SymKey>,
}

impl Knowledge {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, bytes: &[u8], learned: Learned) -> bool {
        if self.atoms.contains_key(bytes) {
            return false;
        }
        self.atoms.insert(bytes.to_vec(), learned);
        true
    }

    /// Adds `bytes` and, recursively, every component of its framing.
    pub fn learn(&mut self, bytes: &[u8], step: u64, source: Source) {
        if !self.insert(bytes, Learned { step, source }) {
            return;
        }
        if let Ok(msg) = canonical_decode(bytes) {
            for part in &msg.parts {
                self.learn(part, step, source);
            }
        }
        if bytes.len() >= MIN_CIPHERTEXT {
            let keys = self.keys.clone();
            for k in &keys {
                self.try_open(bytes, k, step);
            }
        }
    }

    pub fn generated(&mut self, bytes: &[u8], step: u64) {
        self.insert(bytes, Learned { step, source: Source::Generated });
    }

    pub fn computed(&mut self, bytes: &[u8], step: u64) {
        self.insert(bytes, Learned { step, source: Source::Computed });
    }

    /// Learns a key and opens every captured ciphertext it fits.
    pub fn learn_key(&mut self, key: SymKey, step: u64) {
        if self.keys.contains(&key) {
            return;
        }
        self.keys.push(key);
        self.learn(key.as_bytes(), step, Source::Ledger);
        let candidates: Vec<Vec<u8>> = self
            .atoms
            .keys()
            .filter(|a| a.len() >= MIN_CIPHERTEXT)
            .cloned()
            .collect();
        for c in candidates {
            self.try_open(&c, &key, step);
        }
    }

    fn try_open(&mut self, bytes: &[u8], key: &SymKey, step: u64) {
        let Ok(ct) = Ciphertext::from_bytes(bytes) else { return };
        if let Ok(pt) = sym_decrypt(&ct, key) {
            self.learn(&pt, step, Source::Decrypted);
        }
    }

    pub fn knows(&self, bytes: &[u8]) -> bool {
        self.atoms.contains_key(bytes)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Symbolic derivability: a known atom, or a canonical framing whose
    /// parts are all derivable.
    pub fn derivable(&self, bytes: &[u8]) -> bool {
        if bytes.is_empty() || self.knows(bytes) {
            return true;
        }
        match canonical_decode(bytes) {
            Ok(msg) => msg.parts.iter().all(|p| self.derivable(p)),
            Err(_) => false,
        }
    }

    /// Earliest step at which an atom containing `needle` was learned,
    /// ignoring atoms whose source `skip` rejects.
    pub fn first_containing(&self, needle: &[u8], skip: impl Fn(Source) -> bool) -> Option<u64> {
        self.atoms
            .iter()
            .filter(|(_, l)| !skip(l.source))
            .filter(|(a, _)| contains_subslice(a, needle))
            .map(|(_, l)| l.step)
            .min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::messages::MessageKind;
    use crate::crypto::{canonical_encode, hash, sym_encrypt, Context};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn decomposes_framing_but_not_ciphertext() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let key = SymKey::random(&mut rng);
        let secret = b"firmware image bytes".to_vec();
        let ct = sym_encrypt(&secret, &key, &mut rng).to_bytes();
        let msg = canonical_encode(Context::Wire, &[&[7u8][..], &ct, hash(key.as_bytes()).as_bytes()]);
        let mut k = Knowledge::new();
        k.learn(&msg, 4, Source::Observed(MessageKind::ZkProofDelivery));
        assert!(k.knows(&ct));
        assert!(!k.knows(&secret));
        assert_eq!(k.first_containing(&secret, |_| false), None);
        assert_eq!(k.first_containing(key.as_bytes(), |_| false), None);

        k.learn_key(key, 9);
        assert!(k.knows(&secret));
        assert_eq!(k.first_containing(&secret, |_| false), Some(9));
        assert_eq!(k.first_containing(&secret, |s| s == Source::Decrypted), None);
    }

    #[test]
    fn derivability_follows_framing() {
        let mut k = Knowledge::new();
        k.learn(b"known", 0, Source::Ledger);
        let framed = canonical_encode(Context::Wire, &[&b"known"[..], b""]);
        assert!(k.derivable(&framed));
        let other = canonical_encode(Context::Wire, &[&b"known"[..], b"secret"]);
        assert!(!k.derivable(&other));
        assert!(!k.derivable(b"secret"));
    }
}
