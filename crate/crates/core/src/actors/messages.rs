//! Wire messages exchanged over the P2P network and the hub-local link.
//!
//! Every message is framed as `canonical_encode(Wire, [kind, field...])`.
//! Field order per kind is fixed; see `docs/protocol.md`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    canonical_decode, canonical_encode, hash, CanonicalMessage, Ciphertext, Context, CryptoError,
    Digest, Nonce, PublicKey, Signature,
};
use crate::zk::{Proof, ProvingKey, VerifyingKey, ZkError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(&'static str),
}

impl From<CryptoError> for WireError {
    fn from(_: CryptoError) -> Self {
        WireError::Malformed("field encoding")
    }
}

impl From<ZkError> for WireError {
    fn from(_: ZkError) -> Self {
        WireError::Malformed("zk object")
    }
}

/// The bundle distributors hold and trade: `(U, pk_D, vk_D, sig_m)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Package {
    pub update: Vec<u8>,
    pub pk_delivery: ProvingKey,
    pub vk_delivery: VerifyingKey,
    pub sig_m: Signature,
}

impl Package {
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_encode(
            Context::Package,
            &[
                self.update.clone(),
                self.pk_delivery.to_bytes(),
                self.vk_delivery.to_bytes(),
                self.sig_m.to_bytes(),
            ],
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        let msg = canonical_decode(bytes)?;
        if msg.context != Context::Package || msg.parts.len() != 4 {
            return Err(WireError::Malformed("package framing"));
        }
        Ok(Package {
            update: msg.parts[0].clone(),
            pk_delivery: ProvingKey::from_bytes(&msg.parts[1])?,
            vk_delivery: VerifyingKey::from_bytes(&msg.parts[2])?,
            sig_m: Signature::from_bytes(&msg.parts[3])?,
        })
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }

    pub fn update_hash(&self) -> Digest {
        hash(&self.update)
    }
}

/// What the manufacturer signs: the update hash.
pub fn manufacturer_message(update_hash: &Digest) -> CanonicalMessage {
    CanonicalMessage::new(Context::Manufacturer, [update_hash.as_bytes()])
}

pub fn id_response_message(challenge: &[u8], n2: &Nonce) -> CanonicalMessage {
    CanonicalMessage::new(Context::IdResponse, [challenge, n2.as_bytes()])
}

pub fn distributor_nonce_message(n1: &Nonce) -> CanonicalMessage {
    CanonicalMessage::new(Context::DistributorNonce, [n1.as_bytes()])
}

pub fn dde_challenge_message(c: &Nonce) -> CanonicalMessage {
    CanonicalMessage::new(Context::DdeChallenge, [c.as_bytes()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    SeedRequest,
    SeedPackage,
    SeedRefused,
    UpdateRequest,
    DistributorHello,
    IdChallenge,
    IdResponse,
    ZkProofDelivery,
    PodRequest,
    PodForward,
    FinalDelivery,
    PofdForward,
    DdeRequest,
    DdeChallenge,
    DdeChallengeResponse,
    DdeProofDelivery,
}

impl MessageKind {
    pub const ALL: [MessageKind; 16] = [
        MessageKind::SeedRequest,
        MessageKind::SeedPackage,
        MessageKind::SeedRefused,
        MessageKind::UpdateRequest,
        MessageKind::DistributorHello,
        MessageKind::IdChallenge,
        MessageKind::IdResponse,
        MessageKind::ZkProofDelivery,
        MessageKind::PodRequest,
        MessageKind::PodForward,
        MessageKind::FinalDelivery,
        MessageKind::PofdForward,
        MessageKind::DdeRequest,
        MessageKind::DdeChallenge,
        MessageKind::DdeChallengeResponse,
        MessageKind::DdeProofDelivery,
    ];

    pub fn tag(self) -> u8 {
        Self::ALL.iter().position(|k| *k == self).unwrap() as u8 + 1
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get((tag as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::SeedRequest => "SeedRequest",
            MessageKind::SeedPackage => "SeedPackage",
            MessageKind::SeedRefused => "SeedRefused",
            MessageKind::UpdateRequest => "UpdateRequest",
            MessageKind::DistributorHello => "DistributorHello",
            MessageKind::IdChallenge => "IdChallenge",
            MessageKind::IdResponse => "IdResponse",
            MessageKind::ZkProofDelivery => "ZkProofDelivery",
            MessageKind::PodRequest => "PodRequest",
            MessageKind::PodForward => "PodForward",
            MessageKind::FinalDelivery => "FinalDelivery",
            MessageKind::PofdForward => "PofdForward",
            MessageKind::DdeRequest => "DdeRequest",
            MessageKind::DdeChallenge => "DdeChallenge",
            MessageKind::DdeChallengeResponse => "DdeChallengeResponse",
            MessageKind::DdeProofDelivery => "DdeProofDelivery",
        }
    }
}

/// Hub-to-distributor messages carry the hub's request nonce `n1` as the
/// session reference; hub-to-device messages carry a hub-local session id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    SeedRequest {
        package_hash: Digest,
    },
    SeedPackage {
        package: Package,
        pk_exchange: ProvingKey,
        vk_exchange: VerifyingKey,
    },
    SeedRefused {
        package_hash: Digest,
    },
    UpdateRequest {
        update_hash: Digest,
        n1: Nonce,
        device: PublicKey,
    },
    DistributorHello {
        n1: Nonce,
        distributor: PublicKey,
        sig: Signature,
        challenge: Vec<u8>,
    },
    IdChallenge {
        session: Nonce,
        challenge: Vec<u8>,
    },
    /// Device → hub with the hub session id; hub → distributor with `n1`.
    /// `n2` is empty for legacy responses.
    IdResponse {
        session: Nonce,
        device: PublicKey,
        n2: Vec<u8>,
        sig: Signature,
    },
    ZkProofDelivery {
        n1: Nonce,
        proof: Proof,
        ciphertext: Ciphertext,
        s: Digest,
        vk_delivery: VerifyingKey,
        sig_m: Signature,
    },
    PodRequest {
        session: Nonce,
        update_hash: Digest,
        sig_m: Signature,
        s: Digest,
    },
    PodForward {
        session: Nonce,
        device: PublicKey,
        s: Digest,
        pod: Signature,
    },
    FinalDelivery {
        session: Nonce,
        update: Vec<u8>,
    },
    PofdForward {
        session: Nonce,
        device: PublicKey,
        pofd: Signature,
    },
    DdeRequest {
        package_hash: Digest,
    },
    DdeChallenge {
        challenge: Nonce,
    },
    DdeChallengeResponse {
        challenge: Nonce,
        buyer: PublicKey,
        sig: Signature,
    },
    DdeProofDelivery {
        challenge: Nonce,
        seller: PublicKey,
        proof: Proof,
        ciphertext: Ciphertext,
        s: Digest,
        vk_exchange: VerifyingKey,
        pk_exchange: ProvingKey,
    },
}

struct Fields<'a> {
    parts: std::slice::Iter<'a, Vec<u8>>,
}

impl<'a> Fields<'a> {
    fn next(&mut self) -> Result<&'a [u8], WireError> {
        self.parts
            .next()
            .map(Vec::as_slice)
            .ok_or(WireError::Malformed("missing field"))
    }

    fn digest(&mut self) -> Result<Digest, WireError> {
        Ok(Digest::from_slice(self.next()?)?)
    }

    fn nonce(&mut self) -> Result<Nonce, WireError> {
        Ok(Nonce::from_slice(self.next()?)?)
    }

    fn public(&mut self) -> Result<PublicKey, WireError> {
        Ok(PublicKey::from_slice(self.next()?)?)
    }

    fn sig(&mut self) -> Result<Signature, WireError> {
        Ok(Signature::from_bytes(self.next()?)?)
    }

    fn bytes(&mut self) -> Result<Vec<u8>, WireError> {
        Ok(self.next()?.to_vec())
    }

    fn ciphertext(&mut self) -> Result<Ciphertext, WireError> {
        Ok(Ciphertext::from_bytes(self.next()?)?)
    }

    fn finish(mut self) -> Result<(), WireError> {
        match self.parts.next() {
            None => Ok(()),
            Some(_) => Err(WireError::Malformed("trailing field")),
        }
    }
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::SeedRequest { .. } => MessageKind::SeedRequest,
            Message::SeedPackage { .. } => MessageKind::SeedPackage,
            Message::SeedRefused { .. } => MessageKind::SeedRefused,
            Message::UpdateRequest { .. } => MessageKind::UpdateRequest,
            Message::DistributorHello { .. } => MessageKind::DistributorHello,
            Message::IdChallenge { .. } => MessageKind::IdChallenge,
            Message::IdResponse { .. } => MessageKind::IdResponse,
            Message::ZkProofDelivery { .. } => MessageKind::ZkProofDelivery,
            Message::PodRequest { .. } => MessageKind::PodRequest,
            Message::PodForward { .. } => MessageKind::PodForward,
            Message::FinalDelivery { .. } => MessageKind::FinalDelivery,
            Message::PofdForward { .. } => MessageKind::PofdForward,
            Message::DdeRequest { .. } => MessageKind::DdeRequest,
            Message::DdeChallenge { .. } => MessageKind::DdeChallenge,
            Message::DdeChallengeResponse { .. } => MessageKind::DdeChallengeResponse,
            Message::DdeProofDelivery { .. } => MessageKind::DdeProofDelivery,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut parts: Vec<Vec<u8>> = vec![vec![self.kind().tag()]];
        let mut push = |b: &[u8]| parts.push(b.to_vec());
        match self {
            Message::SeedRequest { package_hash } | Message::SeedRefused { package_hash } => {
                push(package_hash.as_bytes())
            }
            Message::SeedPackage { package, pk_exchange, vk_exchange } => {
                push(&package.to_bytes());
                push(&pk_exchange.to_bytes());
                push(&vk_exchange.to_bytes());
            }
            Message::UpdateRequest { update_hash, n1, device } => {
                push(update_hash.as_bytes());
                push(n1.as_bytes());
                push(device.as_bytes());
            }
            Message::DistributorHello { n1, distributor, sig, challenge } => {
                push(n1.as_bytes());
                push(distributor.as_bytes());
                push(&sig.to_bytes());
                push(challenge);
            }
            Message::IdChallenge { session, challenge } => {
                push(session.as_bytes());
                push(challenge);
            }
            Message::IdResponse { session, device, n2, sig } => {
                push(session.as_bytes());
                push(device.as_bytes());
                push(n2);
                push(&sig.to_bytes());
            }
            Message::ZkProofDelivery { n1, proof, ciphertext, s, vk_delivery, sig_m } => {
                push(n1.as_bytes());
                push(&proof.to_bytes());
                push(&ciphertext.to_bytes());
                push(s.as_bytes());
                push(&vk_delivery.to_bytes());
                push(&sig_m.to_bytes());
            }
            Message::PodRequest { session, update_hash, sig_m, s } => {
                push(session.as_bytes());
                push(update_hash.as_bytes());
                push(&sig_m.to_bytes());
                push(s.as_bytes());
            }
            Message::PodForward { session, device, s, pod } => {
                push(session.as_bytes());
                push(device.as_bytes());
                push(s.as_bytes());
                push(&pod.to_bytes());
            }
            Message::FinalDelivery { session, update } => {
                push(session.as_bytes());
                push(update);
            }
            Message::PofdForward { session, device, pofd } => {
                push(session.as_bytes());
                push(device.as_bytes());
                push(&pofd.to_bytes());
            }
            Message::DdeRequest { package_hash } => push(package_hash.as_bytes()),
            Message::DdeChallenge { challenge } => push(challenge.as_bytes()),
            Message::DdeChallengeResponse { challenge, buyer, sig } => {
                push(challenge.as_bytes());
                push(buyer.as_bytes());
                push(&sig.to_bytes());
            }
            Message::DdeProofDelivery { challenge, seller, proof, ciphertext, s, vk_exchange, pk_exchange } => {
                push(challenge.as_bytes());
                push(seller.as_bytes());
                push(&proof.to_bytes());
                push(&ciphertext.to_bytes());
                push(s.as_bytes());
                push(&vk_exchange.to_bytes());
                push(&pk_exchange.to_bytes());
            }
        }
        canonical_encode(Context::Wire, &parts)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let msg = canonical_decode(bytes)?;
        if msg.context != Context::Wire {
            return Err(WireError::Malformed("not a wire message"));
        }
        let mut f = Fields { parts: msg.parts.iter() };
        let kind = match f.next()? {
            [t] => MessageKind::from_tag(*t).ok_or(WireError::Malformed("unknown kind"))?,
            _ => return Err(WireError::Malformed("kind tag")),
        };
        let out = match kind {
            MessageKind::SeedRequest => Message::SeedRequest { package_hash: f.digest()? },
            MessageKind::SeedRefused => Message::SeedRefused { package_hash: f.digest()? },
            MessageKind::SeedPackage => Message::SeedPackage {
                package: Package::from_bytes(f.next()?)?,
                pk_exchange: ProvingKey::from_bytes(f.next()?)?,
                vk_exchange: VerifyingKey::from_bytes(f.next()?)?,
            },
            MessageKind::UpdateRequest => Message::UpdateRequest {
                update_hash: f.digest()?,
                n1: f.nonce()?,
                device: f.public()?,
            },
            MessageKind::DistributorHello => Message::DistributorHello {
                n1: f.nonce()?,
                distributor: f.public()?,
                sig: f.sig()?,
                challenge: f.bytes()?,
            },
            MessageKind::IdChallenge => Message::IdChallenge {
                session: f.nonce()?,
                challenge: f.bytes()?,
            },
            MessageKind::IdResponse => Message::IdResponse {
                session: f.nonce()?,
                device: f.public()?,
                n2: f.bytes()?,
                sig: f.sig()?,
            },
            MessageKind::ZkProofDelivery => Message::ZkProofDelivery {
                n1: f.nonce()?,
                proof: Proof::from_bytes(f.next()?)?,
                ciphertext: f.ciphertext()?,
                s: f.digest()?,
                vk_delivery: VerifyingKey::from_bytes(f.next()?)?,
                sig_m: f.sig()?,
            },
            MessageKind::PodRequest => Message::PodRequest {
                session: f.nonce()?,
                update_hash: f.digest()?,
                sig_m: f.sig()?,
                s: f.digest()?,
            },
            MessageKind::PodForward => Message::PodForward {
                session: f.nonce()?,
                device: f.public()?,
                s: f.digest()?,
                pod: f.sig()?,
            },
            MessageKind::FinalDelivery => Message::FinalDelivery {
                session: f.nonce()?,
                update: f.bytes()?,
            },
            MessageKind::PofdForward => Message::PofdForward {
                session: f.nonce()?,
                device: f.public()?,
                pofd: f.sig()?,
            },
            MessageKind::DdeRequest => Message::DdeRequest { package_hash: f.digest()? },
            MessageKind::DdeChallenge => Message::DdeChallenge { challenge: f.nonce()? },
            MessageKind::DdeChallengeResponse => Message::DdeChallengeResponse {
                challenge: f.nonce()?,
                buyer: f.public()?,
                sig: f.sig()?,
            },
            MessageKind::DdeProofDelivery => Message::DdeProofDelivery {
                challenge: f.nonce()?,
                seller: f.public()?,
                proof: Proof::from_bytes(f.next()?)?,
                ciphertext: f.ciphertext()?,
                s: f.digest()?,
                vk_exchange: VerifyingKey::from_bytes(f.next()?)?,
                pk_exchange: ProvingKey::from_bytes(f.next()?)?,
            },
        };
        f.finish()?;
        Ok(out)
    }
}
