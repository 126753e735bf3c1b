//! Symbolic zk-SNARK backend for the two "encrypted file under committed
//! key" statements.
//!
//! Proofs are tokens minted by a per-run [`ZkSystem`] that holds a secret
//! minting key nobody else sees. A token is a MAC over the setup id and the
//! public inputs, so it can be replayed but not produced for new inputs,
//! and it carries no witness bytes. `prove` refuses to mint unless the
//! witness satisfies the relation, which gives soundness and completeness
//! structurally.

use rand::RngCore;
use serde::Serialize;
use thiserror::Error;

use crate::crypto::{
    canonical_decode, canonical_encode, hash, hash_parts, sym_decrypt, Ciphertext, Context,
    CryptoError, Digest, SymKey,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ZkError {
    #[error("witness does not satisfy the statement")]
    InvalidWitness,
    #[error("proving key and verifying key shapes differ")]
    ShapeMismatch,
    #[error("malformed zk object: {0}")]
    Malformed(&'static str),
}

impl From<CryptoError> for ZkError {
    fn from(_: CryptoError) -> Self {
        ZkError::Malformed("bad framing")
    }
}

/// Which statement: delivery of the update file, or exchange of the package.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StatementKind {
    Delivery,
    Exchange,
}

impl StatementKind {
    fn tag(self) -> u8 {
        match self {
            StatementKind::Delivery => b'D',
            StatementKind::Exchange => b'E',
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            b'D' => Some(StatementKind::Delivery),
            b'E' => Some(StatementKind::Exchange),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StatementShape {
    pub kind: StatementKind,
    /// Octet length of the secret file variable.
    pub payload_size: usize,
}

const SETUP_ID_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProvingKey {
    pub shape: StatementShape,
    pub id: [u8; SETUP_ID_LEN],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VerifyingKey {
    pub shape: StatementShape,
    pub id: [u8; SETUP_ID_LEN],
}

fn key_bytes(role: u8, shape: &StatementShape, id: &[u8; SETUP_ID_LEN]) -> Vec<u8> {
    canonical_encode(
        Context::ZkKey,
        &[
            &[role][..],
            &[shape.kind.tag()][..],
            &(shape.payload_size as u64).to_be_bytes()[..],
            &id[..],
        ],
    )
}

fn parse_key(role: u8, bytes: &[u8]) -> Result<(StatementShape, [u8; SETUP_ID_LEN]), ZkError> {
    let msg = canonical_decode(bytes)?;
    if msg.context != Context::ZkKey || msg.parts.len() != 4 {
        return Err(ZkError::Malformed("zk key framing"));
    }
    if msg.parts[0] != [role] {
        return Err(ZkError::Malformed("zk key role"));
    }
    let kind = match msg.parts[1].as_slice() {
        [t] => StatementKind::from_tag(*t).ok_or(ZkError::Malformed("statement kind"))?,
        _ => return Err(ZkError::Malformed("statement kind")),
    };
    let size: [u8; 8] = msg.parts[2]
        .as_slice()
        .try_into()
        .map_err(|_| ZkError::Malformed("payload size"))?;
    let id: [u8; SETUP_ID_LEN] = msg.parts[3]
        .as_slice()
        .try_into()
        .map_err(|_| ZkError::Malformed("setup id"))?;
    Ok((
        StatementShape {
            kind,
            payload_size: u64::from_be_bytes(size) as usize,
        },
        id,
    ))
}

impl ProvingKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        key_bytes(b'P', &self.shape, &self.id)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ZkError> {
        let (shape, id) = parse_key(b'P', bytes)?;
        Ok(ProvingKey { shape, id })
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }
}

impl VerifyingKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        key_bytes(b'V', &self.shape, &self.id)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ZkError> {
        let (shape, id) = parse_key(b'V', bytes)?;
        Ok(VerifyingKey { shape, id })
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }
}

/// `(file_hash, ciphertext, key_hash)`: `(U_h, U_e, s)` for delivery,
/// `(P_h, P_e, s)` for exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicInputs {
    pub file_hash: Digest,
    pub ciphertext: Ciphertext,
    pub key_hash: Digest,
}

impl PublicInputs {
    /// Stable identity of the public inputs, used in trace events.
    pub fn digest(&self) -> Digest {
        hash_parts(
            Context::ZkPublic,
            &[
                self.file_hash.as_bytes(),
                &self.ciphertext.to_bytes(),
                self.key_hash.as_bytes(),
            ],
        )
    }
}

/// The secret pair. Deliberately neither `Clone` nor serializable.
pub struct Witness<'a> {
    pub file: &'a [u8],
    pub key: &'a SymKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Proof {
    serial: u64,
    tag: [u8; 32],
}

impl Proof {
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_encode(Context::ZkProof, &[&self.serial.to_be_bytes()[..], &self.tag[..]])
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ZkError> {
        let msg = canonical_decode(bytes)?;
        if msg.context != Context::ZkProof || msg.parts.len() != 2 {
            return Err(ZkError::Malformed("proof framing"));
        }
        let serial: [u8; 8] = msg.parts[0]
            .as_slice()
            .try_into()
            .map_err(|_| ZkError::Malformed("proof serial"))?;
        let tag: [u8; 32] = msg.parts[1]
            .as_slice()
            .try_into()
            .map_err(|_| ZkError::Malformed("proof tag"))?;
        Ok(Proof {
            serial: u64::from_be_bytes(serial),
            tag,
        })
    }

    pub fn serial(&self) -> u64 {
        self.serial
    }
}

/// `s = H(r) ∧ file_hash = H(file) ∧ ciphertext = Enc(file, r)`, plus the
/// size constraint baked into the statement shape.
pub fn relation_holds(shape: &StatementShape, public: &PublicInputs, witness: &Witness<'_>) -> bool {
    witness.file.len() == shape.payload_size
        && hash(witness.key.as_bytes()) == public.key_hash
        && hash(witness.file) == public.file_hash
        && sym_decrypt(&public.ciphertext, witness.key).is_ok_and(|pt| pt == witness.file)
}

/// Per-run trusted setup and proof mint.
pub struct ZkSystem {
    mint_key: [u8; 32],
    minted: u64,
}

impl ZkSystem {
    pub fn new<R: RngCore>(rng: &mut R) -> Self {
        let mut mint_key = [0u8; 32];
        rng.fill_bytes(&mut mint_key);
        ZkSystem { mint_key, minted: 0 }
    }

    pub fn minted(&self) -> u64 {
        self.minted
    }

    pub fn setup<R: RngCore>(&self, shape: StatementShape, rng: &mut R) -> (ProvingKey, VerifyingKey) {
        zk_setup(shape, rng)
    }

    fn tag(&self, id: &[u8; SETUP_ID_LEN], serial: u64, public: &PublicInputs) -> [u8; 32] {
        hash_parts(
            Context::ZkProof,
            &[
                &self.mint_key[..],
                &id[..],
                &serial.to_be_bytes()[..],
                public.digest().as_bytes(),
            ],
        )
        .0
    }

    pub fn prove(
        &mut self,
        pk: &ProvingKey,
        public: &PublicInputs,
        witness: &Witness<'_>,
    ) -> Result<Proof, ZkError> {
        if !relation_holds(&pk.shape, public, witness) {
            return Err(ZkError::InvalidWitness);
        }
        let serial = self.minted;
        self.minted += 1;
        Ok(Proof {
            serial,
            tag: self.tag(&pk.id, serial, public),
        })
    }

    pub fn verify(&self, vk: &VerifyingKey, public: &PublicInputs, proof: &Proof) -> bool {
        proof.serial < self.minted && self.tag(&vk.id, proof.serial, public) == proof.tag
    }
}

/// Key generation for one statement shape. Both halves share a fresh id.
pub fn zk_setup<R: RngCore>(shape: StatementShape, rng: &mut R) -> (ProvingKey, VerifyingKey) {
    let mut id = [0u8; SETUP_ID_LEN];
    rng.fill_bytes(&mut id);
    (ProvingKey { shape, id }, VerifyingKey { shape, id })
}
