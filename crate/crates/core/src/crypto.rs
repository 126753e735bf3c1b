//! Byte-level primitives: SHA-256 digests, ChaCha20-Poly1305 symmetric
//! encryption, Ed25519 signatures, and the length-prefixed framing every
//! signed, hashed, or transmitted value goes through.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce as AeadNonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

pub const DIGEST_LEN: usize = 32;
pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;
pub const SIG_LEN: usize = 64;
const AEAD_NONCE_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("authentication failed: wrong key or tampered ciphertext")]
    WrongKey,
    #[error("malformed encoding: {0}")]
    Malformed(&'static str),
}

fn fmt_hex_short(bytes: &[u8], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for b in bytes.iter().take(6) {
        write!(f, "{b:02x}")?;
    }
    Ok(())
}

fn serialize_hex<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&hex::encode(bytes))
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(Digest)
            .map_err(|_| CryptoError::Malformed("digest length"))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Digest(")?;
        fmt_hex_short(&self.0, f)?;
        f.write_str("..)")
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_hex(&self.0, s)
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// 256-bit symmetric key. The delivery and exchange keys `r` are hash
/// outputs, so any digest converts into a key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymKey(pub [u8; KEY_LEN]);

impl SymKey {
    pub fn random<R: RngCore>(rng: &mut R) -> Self {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        SymKey(k)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(SymKey)
            .map_err(|_| CryptoError::Malformed("key length"))
    }
}

impl From<Digest> for SymKey {
    fn from(d: Digest) -> Self {
        SymKey(d.0)
    }
}

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymKey(")?;
        fmt_hex_short(&self.0, f)?;
        f.write_str("..)")
    }
}

/// 16-octet fresh value drawn from the run RNG.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn fresh<R: RngCore>(rng: &mut R) -> Self {
        let mut n = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut n);
        Nonce(n)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(Nonce)
            .map_err(|_| CryptoError::Malformed("nonce length"))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Nonce(")?;
        fmt_hex_short(&self.0, f)?;
        f.write_str("..)")
    }
}

/// AEAD output: a 96-bit nonce followed by the sealed body and tag.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    nonce: [u8; AEAD_NONCE_LEN],
    body: Vec<u8>,
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(AEAD_NONCE_LEN + self.body.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < AEAD_NONCE_LEN + 16 {
            return Err(CryptoError::Malformed("ciphertext too short"));
        }
        let mut nonce = [0u8; AEAD_NONCE_LEN];
        nonce.copy_from_slice(&bytes[..AEAD_NONCE_LEN]);
        Ok(Ciphertext {
            nonce,
            body: bytes[AEAD_NONCE_LEN..].to_vec(),
        })
    }
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ciphertext({} bytes)", AEAD_NONCE_LEN + self.body.len())
    }
}

/// Encrypts under `key`. The AEAD nonce is drawn from `rng`, so equal seeds
/// give equal ciphertexts.
pub fn sym_encrypt<R: RngCore>(plaintext: &[u8], key: &SymKey, rng: &mut R) -> Ciphertext {
    let mut nonce = [0u8; AEAD_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    let body = cipher
        .encrypt(AeadNonce::from_slice(&nonce), plaintext)
        .expect("in-memory encryption cannot fail");
    Ciphertext { nonce, body }
}

pub fn sym_decrypt(ciphertext: &Ciphertext, key: &SymKey) -> Result<Vec<u8>, CryptoError> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    cipher
        .decrypt(AeadNonce::from_slice(&ciphertext.nonce), ciphertext.body.as_slice())
        .map_err(|_| CryptoError::WrongKey)
}

/// Framing tag. The first six are signature contexts; the rest
/// domain-separate hash inputs and serialized objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Context {
    Manufacturer = 1,
    IdResponse = 2,
    PoD = 3,
    PoFD = 4,
    DistributorNonce = 5,
    DdeChallenge = 6,
    DeliveryKey = 16,
    ExchangeKey = 17,
    Package = 18,
    ZkKey = 19,
    ZkPublic = 20,
    ZkProof = 21,
    ContractAddress = 22,
    Wire = 23,
}

impl Context {
    pub const ALL: [Context; 14] = [
        Context::Manufacturer,
        Context::IdResponse,
        Context::PoD,
        Context::PoFD,
        Context::DistributorNonce,
        Context::DdeChallenge,
        Context::DeliveryKey,
        Context::ExchangeKey,
        Context::Package,
        Context::ZkKey,
        Context::ZkPublic,
        Context::ZkProof,
        Context::ContractAddress,
        Context::Wire,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.tag() == tag)
    }
}

/// An ordered list of octet strings under a context tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalMessage {
    pub context: Context,
    pub parts: Vec<Vec<u8>>,
}

impl CanonicalMessage {
    pub fn new<I, P>(context: Context, parts: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[u8]>,
    {
        CanonicalMessage {
            context,
            parts: parts.into_iter().map(|p| p.as_ref().to_vec()).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        canonical_encode(self.context, &self.parts)
    }
}

/// `tag ‖ (len_be32 ‖ part)*`. Injective because every part carries its
/// length and the tag is fixed-width.
pub fn canonical_encode<P: AsRef<[u8]>>(context: Context, parts: &[P]) -> Vec<u8> {
    let total: usize = parts.iter().map(|p| 4 + p.as_ref().len()).sum();
    let mut out = Vec::with_capacity(1 + total);
    out.push(context.tag());
    for p in parts {
        let p = p.as_ref();
        let len = u32::try_from(p.len()).expect("part exceeds 4 GiB");
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(p);
    }
    out
}

pub fn canonical_decode(bytes: &[u8]) -> Result<CanonicalMessage, CryptoError> {
    let (&tag, mut rest) = bytes
        .split_first()
        .ok_or(CryptoError::Malformed("empty encoding"))?;
    let context = Context::from_tag(tag).ok_or(CryptoError::Malformed("unknown context tag"))?;
    let mut parts = Vec::new();
    while !rest.is_empty() {
        if rest.len() < 4 {
            return Err(CryptoError::Malformed("truncated length prefix"));
        }
        let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
        rest = &rest[4..];
        if rest.len() < len {
            return Err(CryptoError::Malformed("truncated part"));
        }
        parts.push(rest[..len].to_vec());
        rest = &rest[len..];
    }
    Ok(CanonicalMessage { context, parts })
}

/// Hash of a framed message. Used for every `H(a ‖ b ‖ ...)` in the protocol.
pub fn hash_parts<P: AsRef<[u8]>>(context: Context, parts: &[P]) -> Digest {
    hash(&canonical_encode(context, parts))
}

/// Ed25519 verification key; doubles as an account address on the ledger.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(PublicKey)
            .map_err(|_| CryptoError::Malformed("public key length"))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PublicKey(")?;
        fmt_hex_short(&self.0, f)?;
        f.write_str("..)")
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_hex(&self.0, s)
    }
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn generate<R: RngCore>(rng: &mut R) -> Self {
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        let signing = SigningKey::from_bytes(&secret);
        let public = PublicKey(signing.verifying_key().to_bytes());
        KeyPair { signing, public }
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, msg: &CanonicalMessage) -> Signature {
        Signature {
            context: msg.context,
            bytes: self.signing.sign(&msg.encode()).to_bytes(),
        }
    }

    /// Signs `data` without framing. Only the legacy identification
    /// response uses this; `context` is a label and is not signed.
    pub fn sign_raw(&self, context: Context, data: &[u8]) -> Signature {
        Signature {
            context,
            bytes: self.signing.sign(data).to_bytes(),
        }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

/// Ed25519 signature plus the context label it was produced under.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub context: Context,
    pub bytes: [u8; SIG_LEN],
}

impl Signature {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + SIG_LEN);
        out.push(self.context.tag());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != 1 + SIG_LEN {
            return Err(CryptoError::Malformed("signature length"));
        }
        let context =
            Context::from_tag(bytes[0]).ok_or(CryptoError::Malformed("signature context"))?;
        let mut sig = [0u8; SIG_LEN];
        sig.copy_from_slice(&bytes[1..]);
        Ok(Signature { context, bytes: sig })
    }

    /// Same signature bytes under another label. Labels are not secret,
    /// so anyone holding a signature can do this.
    pub fn relabel(self, context: Context) -> Self {
        Signature { context, ..self }
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({:?}, ", self.context)?;
        fmt_hex_short(&self.bytes, f)?;
        f.write_str("..)")
    }
}

fn verify_bytes(public: &PublicKey, data: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&public.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.bytes);
    vk.verify(data, &sig).is_ok()
}

/// True iff `sig` carries `msg`'s context label and verifies over the
/// framed encoding of `msg`.
pub fn verify_sig(public: &PublicKey, msg: &CanonicalMessage, sig: &Signature) -> bool {
    sig.context == msg.context && verify_bytes(public, &msg.encode(), sig)
}

/// Verification over unframed bytes (legacy identification responses).
pub fn verify_raw(public: &PublicKey, data: &[u8], sig: &Signature) -> bool {
    verify_bytes(public, data, sig)
}

/// Non-overlapping substring search, used by the witness scanners.
pub fn contains_subslice(haystack: &[u8], needle: &[u8]) -> bool {
    if needle.is_empty() {
        return true;
    }
    if needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}
