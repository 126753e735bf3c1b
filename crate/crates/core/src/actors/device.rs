use std::collections::BTreeMap;

use thiserror::Error;

use super::messages::{id_response_message, manufacturer_message, Message};
use super::{Ctx, Mode};
use crate::contracts::{pod_message, pofd_message};
use crate::crypto::{hash, verify_sig, Context, Digest, KeyPair, Nonce, PublicKey, Signature};
use crate::harness::trace::EventKind;
use crate::ledger::Address;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("manufacturer signature does not verify")]
    BadManufacturerSignature,
    #[error("received update does not hash to the authenticated value")]
    HashMismatch,
    #[error("no authenticated commitment for this session")]
    NoCommitment,
}

impl DeviceError {
    pub fn check_name(self) -> &'static str {
        match self {
            DeviceError::BadManufacturerSignature => "BadManufacturerSignature",
            DeviceError::HashMismatch => "HashMismatch",
            DeviceError::NoCommitment => "NoCommitment",
        }
    }
}

pub struct Device {
    name: String,
    keypair: KeyPair,
    manufacturer: PublicKey,
    hub: Address,
    mode: Mode,
    commitments: BTreeMap<Nonce, (Digest, Digest)>,
    installed: Option<Digest>,
}

impl Device {
    pub fn new(name: &str, keypair: KeyPair, manufacturer: PublicKey, hub: Address, mode: Mode) -> Self {
        Device {
            name: name.to_string(),
            keypair,
            manufacturer,
            hub,
            mode,
            commitments: BTreeMap::new(),
            installed: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn installed(&self) -> Option<Digest> {
        self.installed
    }

    /// Answer to an identification challenge: `(n2, signature)`.
    pub fn sign_id<R: rand::RngCore>(&self, challenge: &[u8], rng: &mut R) -> (Vec<u8>, Signature) {
        match self.mode {
            Mode::Standard => {
                let n2 = Nonce::fresh(rng);
                let sig = self.keypair.sign(&id_response_message(challenge, &n2));
                (n2.as_bytes().to_vec(), sig)
            }
            Mode::LegacyLeiba => (Vec::new(), self.keypair.sign_raw(Context::IdResponse, challenge)),
        }
    }

    /// Checks `sig_m`, stores the `(U_h, s)` commitment and signs the PoD.
    pub fn issue_pod(
        &mut self,
        session: Nonce,
        update_hash: &Digest,
        sig_m: &Signature,
        s: &Digest,
    ) -> Result<Signature, DeviceError> {
        if !verify_sig(&self.manufacturer, &manufacturer_message(update_hash), sig_m) {
            return Err(DeviceError::BadManufacturerSignature);
        }
        self.commitments.insert(session, (*update_hash, *s));
        Ok(self.keypair.sign(&pod_message(update_hash, s)))
    }

    /// Installs `update` if it matches the session's commitment and returns
    /// the PoFD bound to the device's hub.
    pub fn finalize(&mut self, session: &Nonce, update: &[u8]) -> Result<(Digest, Signature), DeviceError> {
        let (update_hash, _) = self.commitments.get(session).ok_or(DeviceError::NoCommitment)?;
        if hash(update) != *update_hash {
            return Err(DeviceError::HashMismatch);
        }
        self.installed = Some(*update_hash);
        Ok((*update_hash, self.keypair.sign(&pofd_message(update_hash, &self.hub))))
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, msg: Message) {
        let device = self.public();
        match msg {
            Message::IdChallenge { session, challenge } => {
                let (n2, sig) = self.sign_id(&challenge, ctx.rng);
                ctx.send(from, Message::IdResponse { session, device, n2, sig });
            }
            Message::PodRequest { session, update_hash, sig_m, s } => {
                match self.issue_pod(session, &update_hash, &sig_m, &s) {
                    Ok(pod) => ctx.send(from, Message::PodForward { session, device, s, pod }),
                    Err(e) => ctx.violation(e.check_name(), session.to_hex(), e.to_string()),
                }
            }
            Message::FinalDelivery { session, update } => match self.finalize(&session, &update) {
                Ok((update_hash, pofd)) => {
                    ctx.record(EventKind::UpdateInstalled { device, update: update_hash });
                    ctx.send(from, Message::PofdForward { session, device, pofd });
                }
                Err(e) => ctx.violation(e.check_name(), session.to_hex(), e.to_string()),
            },
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::pod_message;
    use crate::crypto::{canonical_decode, verify_raw};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        rng: ChaCha20Rng,
        mfr: KeyPair,
        hub: Address,
    }

    fn fixture() -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mfr = KeyPair::generate(&mut rng);
        let hub = KeyPair::generate(&mut rng).public().into();
        Fixture { rng, mfr, hub }
    }

    fn device(f: &mut Fixture, mode: Mode) -> Device {
        let kp = KeyPair::generate(&mut f.rng);
        Device::new("dev0", kp, f.mfr.public(), f.hub, mode)
    }

    #[test]
    fn id_response_binds_challenge_and_nonce() {
        let mut f = fixture();
        let d = device(&mut f, Mode::Standard);
        let (n2, sig) = d.sign_id(b"challenge", &mut f.rng);
        let n2 = Nonce::from_slice(&n2).unwrap();
        assert!(verify_sig(&d.public(), &id_response_message(b"challenge", &n2), &sig));
        assert!(!verify_sig(&d.public(), &id_response_message(b"challengf", &n2), &sig));
    }

    #[test]
    fn crafted_challenge_is_not_a_pod_in_standard_mode() {
        let mut f = fixture();
        let d = device(&mut f, Mode::Standard);
        let uh = hash(b"update");
        let s = hash(b"key");
        let c = pod_message(&uh, &s).encode();
        let (_, sig) = d.sign_id(&c, &mut f.rng);
        let forged = sig.relabel(Context::PoD);
        assert!(!verify_sig(&d.public(), &pod_message(&uh, &s), &forged));
    }

    #[test]
    fn crafted_challenge_is_a_pod_in_legacy_mode() {
        let mut f = fixture();
        let d = device(&mut f, Mode::LegacyLeiba);
        let uh = hash(b"update");
        let s = hash(b"key");
        let c = pod_message(&uh, &s).encode();
        assert_eq!(canonical_decode(&c).unwrap().context, Context::PoD);
        let (n2, sig) = d.sign_id(&c, &mut f.rng);
        assert!(n2.is_empty());
        assert!(verify_raw(&d.public(), &c, &sig));
        assert!(verify_sig(&d.public(), &pod_message(&uh, &s), &sig.relabel(Context::PoD)));
    }

    #[test]
    fn pod_only_after_manufacturer_signature() {
        let mut f = fixture();
        let mut d = device(&mut f, Mode::Standard);
        let sid = Nonce::fresh(&mut f.rng);
        let uh = hash(b"update");
        let s = hash(b"key");
        let impostor = KeyPair::generate(&mut f.rng);
        let bad = impostor.sign(&manufacturer_message(&uh));
        assert_eq!(d.issue_pod(sid, &uh, &bad, &s), Err(DeviceError::BadManufacturerSignature));
        let wrong_hash = f.mfr.sign(&manufacturer_message(&hash(b"other")));
        assert_eq!(d.issue_pod(sid, &uh, &wrong_hash, &s), Err(DeviceError::BadManufacturerSignature));
        let good = f.mfr.sign(&manufacturer_message(&uh));
        let pod = d.issue_pod(sid, &uh, &good, &s).unwrap();
        assert!(verify_sig(&d.public(), &pod_message(&uh, &s), &pod));
        // another distributor, another s: still signed
        let sid2 = Nonce::fresh(&mut f.rng);
        assert!(d.issue_pod(sid2, &uh, &good, &hash(b"key2")).is_ok());
    }

    #[test]
    fn finalize_checks_commitment_and_hash() {
        let mut f = fixture();
        let mut d = device(&mut f, Mode::Standard);
        let update = b"the update".to_vec();
        let uh = hash(&update);
        let sid = Nonce::fresh(&mut f.rng);
        assert_eq!(d.finalize(&sid, &update), Err(DeviceError::NoCommitment));
        let sig_m = f.mfr.sign(&manufacturer_message(&uh));
        d.issue_pod(sid, &uh, &sig_m, &hash(b"k")).unwrap();
        let mut tampered = update.clone();
        tampered[0] ^= 1;
        assert_eq!(d.finalize(&sid, &tampered), Err(DeviceError::HashMismatch));
        assert_eq!(d.installed(), None);
        let (got, pofd) = d.finalize(&sid, &update).unwrap();
        assert_eq!(got, uh);
        assert_eq!(d.installed(), Some(uh));
        assert!(verify_sig(&d.public(), &pofd_message(&uh, &f.hub), &pofd));
    }
}
