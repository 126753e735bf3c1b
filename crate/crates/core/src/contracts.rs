//! The three contract state machines hosted by the ledger: the
//! manufacturer's factory/score registry (SSC), per-release delivery
//! contracts (DSC), and distributor-to-distributor escrows (ESC).
//!
//! Every entry point validates before it mutates; the ledger additionally
//! rolls back the whole world on any error, so a rejected call never leaves
//! partial effects behind.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::crypto::{
    hash, hash_parts, verify_sig, CanonicalMessage, Context, Digest, PublicKey, Signature, SymKey,
};
use crate::ledger::{Address, LedgerEvent, PayReason, Transaction, World};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error")]
pub enum ContractError {
    #[error("manufacturer already deployed a factory contract")]
    AlreadyDeployed,
    #[error("deposit {attached} below required {required}")]
    InsufficientDeposit { required: u64, attached: u64 },
    #[error("sender is not the owner")]
    NotOwner,
    #[error("insufficient funds: need {needed}, have {available}")]
    InsufficientFunds { needed: u64, available: u64 },
    #[error("contract expired")]
    Expired,
    #[error("device not targeted or already served")]
    UnknownOrServedDevice,
    #[error("r/s equations do not hold")]
    KeyEquationMismatch,
    #[error("signature does not verify")]
    BadSignature,
    #[error("caller is not a child contract")]
    UnauthorizedCaller,
    #[error("escrow already claimed")]
    AlreadyClaimed,
    #[error("sender is not the escrow payee")]
    NotPayee,
    #[error("contract not expired yet")]
    NotExpired,
    #[error("sender is not the contract creator")]
    NotCreator,
    #[error("no contract at target address")]
    UnknownContract,
    #[error("call not supported by target contract")]
    WrongTarget,
    #[error("reward arithmetic overflows")]
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ContractKind {
    Ssc,
    Dsc,
    Esc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreEntry {
    pub score: u64,
    pub last_update: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SscState {
    pub owner: Address,
    pub reset_period: u64,
    pub scores: BTreeMap<Address, ScoreEntry>,
    pub children: BTreeSet<Address>,
}

impl SscState {
    /// Lazy-reset view: 0 when absent or when a full reset period passed
    /// since the last delivery.
    pub fn score_at(&self, distributor: &Address, height: u64) -> u64 {
        match self.scores.get(distributor) {
            Some(e) if height.saturating_sub(e.last_update) < self.reset_period => e.score,
            _ => 0,
        }
    }

    /// Score bookkeeping for one successful delivery by `distributor`.
    pub fn record_delivery(
        &mut self,
        child_caller: &Address,
        distributor: Address,
        height: u64,
    ) -> Result<u64, ContractError> {
        if !self.children.contains(child_caller) {
            return Err(ContractError::UnauthorizedCaller);
        }
        let period = self.reset_period;
        let entry = self.scores.entry(distributor).or_insert(ScoreEntry {
            score: 0,
            last_update: height,
        });
        if entry.score == 0 || height - entry.last_update >= period {
            entry.score = 1;
        } else {
            entry.score += 1;
        }
        entry.last_update = height;
        Ok(entry.score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ServeState {
    pub pod_served_by: Option<Address>,
    pub pofd_served_by: Option<Address>,
}

/// Release parameters the manufacturer sends when creating a DSC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DscParams {
    pub expiry: u64,
    pub update_hash: Digest,
    pub package_hash: Digest,
    pub vk_delivery_hash: Digest,
    pub vk_exchange_hash: Digest,
    pub pk_exchange_hash: Digest,
    pub targets: Vec<PublicKey>,
    pub reward_distributor: u64,
    pub reward_hub: u64,
}

impl DscParams {
    /// `|L_m| · (a_d + a_h)`.
    pub fn required_deposit(&self) -> Option<u64> {
        let per_device = self.reward_distributor.checked_add(self.reward_hub)?;
        (self.targets.len() as u64).checked_mul(per_device)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DscState {
    pub creator: Address,
    pub parent_ssc: Address,
    pub created_at: u64,
    pub expiry: u64,
    pub update_hash: Digest,
    pub package_hash: Digest,
    pub vk_delivery_hash: Digest,
    pub vk_exchange_hash: Digest,
    pub pk_exchange_hash: Digest,
    pub targets: BTreeMap<PublicKey, ServeState>,
    pub reward_distributor: u64,
    pub reward_hub: u64,
}

impl DscState {
    pub fn expired_at(&self, height: u64) -> bool {
        height.saturating_sub(self.created_at) >= self.expiry
    }

    pub fn targets(&self, device: &PublicKey) -> bool {
        self.targets.contains_key(device)
    }

    /// Funds still owed to unserved targets.
    pub fn outstanding(&self) -> u64 {
        self.targets
            .values()
            .map(|s| {
                let d = if s.pod_served_by.is_none() { self.reward_distributor } else { 0 };
                let h = if s.pofd_served_by.is_none() { self.reward_hub } else { 0 };
                d + h
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscState {
    pub creator: Address,
    pub parent_ssc: Address,
    pub payee: Address,
    pub s: Digest,
    pub offer: u64,
    pub created_at: u64,
    pub expiry: u64,
    pub claimed: bool,
}

impl EscState {
    pub fn expired_at(&self, height: u64) -> bool {
        height.saturating_sub(self.created_at) >= self.expiry
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Contract {
    Ssc(SscState),
    Dsc(Box<DscState>),
    Esc(EscState),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Call {
    DeploySsc {
        reset_period: u64,
    },
    CreateDsc(DscParams),
    CreateEsc {
        payee: Address,
        s: Digest,
        expiry: u64,
    },
    SubmitPod {
        device: PublicKey,
        t: [u8; 32],
        r: SymKey,
        s: Digest,
        pod: Signature,
    },
    SubmitPofd {
        device: PublicKey,
        pofd: Signature,
    },
    /// Only honoured as an inner call from a child DSC.
    RecordDelivery {
        distributor: Address,
    },
    ClaimEsc {
        t: [u8; 32],
        r: SymKey,
    },
    Reclaim,
}

impl Call {
    pub fn name(&self) -> &'static str {
        match self {
            Call::DeploySsc { .. } => "ssc_deploy",
            Call::CreateDsc(_) => "ssc_create_dsc",
            Call::CreateEsc { .. } => "ssc_create_esc",
            Call::SubmitPod { .. } => "dsc_submit_pod",
            Call::SubmitPofd { .. } => "dsc_submit_pofd",
            Call::RecordDelivery { .. } => "ssc_record_delivery",
            Call::ClaimEsc { .. } => "esc_claim",
            Call::Reclaim => "reclaim_after_expiry",
        }
    }
}

/// `r = H(t ‖ pk_o ‖ pk_d)` for deliveries.
pub fn delivery_key(t: &[u8; 32], device: &PublicKey, distributor: &Address) -> SymKey {
    hash_parts(
        Context::DeliveryKey,
        &[&t[..], device.as_bytes(), distributor.as_bytes()],
    )
    .into()
}

/// `r = H(t ‖ pk_df)` for exchanges.
pub fn exchange_key(t: &[u8; 32], payee: &Address) -> SymKey {
    hash_parts(Context::ExchangeKey, &[&t[..], payee.as_bytes()]).into()
}

pub fn pod_message(update_hash: &Digest, s: &Digest) -> CanonicalMessage {
    CanonicalMessage::new(Context::PoD, [update_hash.as_bytes(), s.as_bytes()])
}

pub fn pofd_message(update_hash: &Digest, hub: &Address) -> CanonicalMessage {
    CanonicalMessage::new(Context::PoFD, [update_hash.as_bytes(), hub.as_bytes()])
}

fn contract_address(world: &mut World, creator: &Address) -> Address {
    let n = world.deployed;
    world.deployed += 1;
    Address(hash_parts(Context::ContractAddress, &[creator.as_bytes(), &n.to_be_bytes()[..]]).0)
}

fn ssc_mut<'w>(world: &'w mut World, addr: &Address) -> Result<&'w mut SscState, ContractError> {
    match world.contracts.get_mut(addr) {
        Some(Contract::Ssc(s)) => Ok(s),
        Some(_) => Err(ContractError::WrongTarget),
        None => Err(ContractError::UnknownContract),
    }
}

fn dsc_mut<'w>(world: &'w mut World, addr: &Address) -> Result<&'w mut DscState, ContractError> {
    match world.contracts.get_mut(addr) {
        Some(Contract::Dsc(d)) => Ok(d),
        Some(_) => Err(ContractError::WrongTarget),
        None => Err(ContractError::UnknownContract),
    }
}

fn pay(world: &mut World, from: Address, to: Address, amount: u64, reason: PayReason) -> Result<LedgerEvent, ContractError> {
    world.transfer(from, to, amount)?;
    Ok(LedgerEvent::Paid { from, to, amount, reason })
}

/// Runs one transaction against `world` at block `height`. The caller is
/// responsible for rolling back on `Err`.
pub fn execute(world: &mut World, height: u64, tx: &Transaction) -> Result<Vec<LedgerEvent>, ContractError> {
    let sender = tx.sender;
    if let Call::DeploySsc { reset_period } = tx.call {
        if tx.value != 0 {
            return Err(ContractError::WrongTarget);
        }
        return ssc_deploy(world, sender, reset_period).map(|(_, ev)| ev);
    }
    if !world.contracts.contains_key(&tx.target) {
        return Err(ContractError::UnknownContract);
    }
    // attached value moves before the call body runs
    world.transfer(sender, tx.target, tx.value)?;
    match &tx.call {
        Call::DeploySsc { .. } => unreachable!(),
        Call::CreateDsc(params) => {
            ssc_create_dsc(world, height, tx.target, sender, tx.value, params).map(|(_, ev)| ev)
        }
        Call::CreateEsc { payee, s, expiry } => {
            ssc_create_esc(world, height, tx.target, sender, tx.value, *payee, *s, *expiry)
                .map(|(_, ev)| ev)
        }
        Call::SubmitPod { device, t, r, s, pod } => {
            dsc_submit_pod(world, height, tx.target, sender, device, t, r, s, pod)
        }
        Call::SubmitPofd { device, pofd } => {
            dsc_submit_pofd(world, height, tx.target, sender, device, pofd)
        }
        Call::RecordDelivery { distributor } => {
            // external callers are never children
            let score = ssc_mut(world, &tx.target)?.record_delivery(&sender, *distributor, height)?;
            Ok(vec![LedgerEvent::ScoreUpdated { distributor: *distributor, score }])
        }
        Call::ClaimEsc { t, r } => esc_claim(world, height, tx.target, sender, t, r),
        Call::Reclaim => reclaim_after_expiry(world, height, tx.target, sender),
    }
}

pub fn ssc_deploy(world: &mut World, owner: Address, reset_period: u64) -> Result<(Address, Vec<LedgerEvent>), ContractError> {
    if world.ssc_by_owner.contains_key(&owner) {
        return Err(ContractError::AlreadyDeployed);
    }
    let addr = contract_address(world, &owner);
    world.contracts.insert(
        addr,
        Contract::Ssc(SscState {
            owner,
            reset_period,
            scores: BTreeMap::new(),
            children: BTreeSet::new(),
        }),
    );
    world.ssc_by_owner.insert(owner, addr);
    Ok((
        addr,
        vec![LedgerEvent::ContractDeployed {
            address: addr,
            kind: ContractKind::Ssc,
            creator: owner,
        }],
    ))
}

/// `deposit` has already been moved onto the SSC by the ledger.
pub fn ssc_create_dsc(
    world: &mut World,
    height: u64,
    ssc: Address,
    sender: Address,
    deposit: u64,
    params: &DscParams,
) -> Result<(Address, Vec<LedgerEvent>), ContractError> {
    let owner = ssc_mut(world, &ssc)?.owner;
    if owner != sender {
        return Err(ContractError::NotOwner);
    }
    let required = params.required_deposit().ok_or(ContractError::Overflow)?;
    if deposit < required {
        return Err(ContractError::InsufficientDeposit {
            required,
            attached: deposit,
        });
    }
    let addr = contract_address(world, &ssc);
    let dsc = DscState {
        creator: sender,
        parent_ssc: ssc,
        created_at: height,
        expiry: params.expiry,
        update_hash: params.update_hash,
        package_hash: params.package_hash,
        vk_delivery_hash: params.vk_delivery_hash,
        vk_exchange_hash: params.vk_exchange_hash,
        pk_exchange_hash: params.pk_exchange_hash,
        targets: params
            .targets
            .iter()
            .map(|pk| (*pk, ServeState::default()))
            .collect(),
        reward_distributor: params.reward_distributor,
        reward_hub: params.reward_hub,
    };
    world.contracts.insert(addr, Contract::Dsc(Box::new(dsc)));
    ssc_mut(world, &ssc)?.children.insert(addr);
    world.transfer(ssc, addr, deposit)?;
    Ok((
        addr,
        vec![LedgerEvent::ContractDeployed {
            address: addr,
            kind: ContractKind::Dsc,
            creator: sender,
        }],
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn ssc_create_esc(
    world: &mut World,
    height: u64,
    ssc: Address,
    sender: Address,
    offer: u64,
    payee: Address,
    s: Digest,
    expiry: u64,
) -> Result<(Address, Vec<LedgerEvent>), ContractError> {
    ssc_mut(world, &ssc)?;
    let addr = contract_address(world, &ssc);
    world.contracts.insert(
        addr,
        Contract::Esc(EscState {
            creator: sender,
            parent_ssc: ssc,
            payee,
            s,
            offer,
            created_at: height,
            expiry,
            claimed: false,
        }),
    );
    ssc_mut(world, &ssc)?.children.insert(addr);
    world.transfer(ssc, addr, offer)?;
    Ok((
        addr,
        vec![LedgerEvent::ContractDeployed {
            address: addr,
            kind: ContractKind::Esc,
            creator: sender,
        }],
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn dsc_submit_pod(
    world: &mut World,
    height: u64,
    dsc_addr: Address,
    sender: Address,
    device: &PublicKey,
    t: &[u8; 32],
    r: &SymKey,
    s: &Digest,
    pod: &Signature,
) -> Result<Vec<LedgerEvent>, ContractError> {
    let dsc = dsc_mut(world, &dsc_addr)?;
    if dsc.expired_at(height) {
        return Err(ContractError::Expired);
    }
    match dsc.targets.get(device) {
        Some(st) if st.pod_served_by.is_none() => {}
        _ => return Err(ContractError::UnknownOrServedDevice),
    }
    if delivery_key(t, device, &sender) != *r || hash(r.as_bytes()) != *s {
        return Err(ContractError::KeyEquationMismatch);
    }
    if !verify_sig(device, &pod_message(&dsc.update_hash, s), pod) {
        return Err(ContractError::BadSignature);
    }
    dsc.targets.get_mut(device).expect("checked above").pod_served_by = Some(sender);
    let reward = dsc.reward_distributor;
    let ssc = dsc.parent_ssc;

    let mut events = vec![pay(world, dsc_addr, sender, reward, PayReason::Delivery { device: *device })?];
    world.publish_key(*s, *r, height);
    events.push(LedgerEvent::KeyPublished { s: *s, r: *r });
    let score = ssc_mut(world, &ssc)?.record_delivery(&dsc_addr, sender, height)?;
    events.push(LedgerEvent::ScoreUpdated { distributor: sender, score });
    Ok(events)
}

pub fn dsc_submit_pofd(
    world: &mut World,
    height: u64,
    dsc_addr: Address,
    sender: Address,
    device: &PublicKey,
    pofd: &Signature,
) -> Result<Vec<LedgerEvent>, ContractError> {
    let dsc = dsc_mut(world, &dsc_addr)?;
    if dsc.expired_at(height) {
        return Err(ContractError::Expired);
    }
    match dsc.targets.get(device) {
        Some(st) if st.pofd_served_by.is_none() => {}
        _ => return Err(ContractError::UnknownOrServedDevice),
    }
    if !verify_sig(device, &pofd_message(&dsc.update_hash, &sender), pofd) {
        return Err(ContractError::BadSignature);
    }
    dsc.targets.get_mut(device).expect("checked above").pofd_served_by = Some(sender);
    let reward = dsc.reward_hub;
    Ok(vec![pay(
        world,
        dsc_addr,
        sender,
        reward,
        PayReason::FinalDelivery { device: *device },
    )?])
}

pub fn esc_claim(
    world: &mut World,
    height: u64,
    esc_addr: Address,
    sender: Address,
    t: &[u8; 32],
    r: &SymKey,
) -> Result<Vec<LedgerEvent>, ContractError> {
    let esc = match world.contracts.get_mut(&esc_addr) {
        Some(Contract::Esc(e)) => e,
        Some(_) => return Err(ContractError::WrongTarget),
        None => return Err(ContractError::UnknownContract),
    };
    if esc.expired_at(height) {
        return Err(ContractError::Expired);
    }
    if esc.claimed {
        return Err(ContractError::AlreadyClaimed);
    }
    if sender != esc.payee {
        return Err(ContractError::NotPayee);
    }
    if exchange_key(t, &esc.payee) != *r || hash(r.as_bytes()) != esc.s {
        return Err(ContractError::KeyEquationMismatch);
    }
    esc.claimed = true;
    let (s, offer) = (esc.s, esc.offer);
    let paid = pay(world, esc_addr, sender, offer, PayReason::Exchange)?;
    world.publish_key(s, *r, height);
    Ok(vec![paid, LedgerEvent::KeyPublished { s, r: *r }])
}

/// Returns the residual balance of an expired DSC or ESC to its creator.
pub fn reclaim_after_expiry(
    world: &mut World,
    height: u64,
    addr: Address,
    sender: Address,
) -> Result<Vec<LedgerEvent>, ContractError> {
    let (creator, expired) = match world.contracts.get(&addr) {
        Some(Contract::Dsc(d)) => (d.creator, d.expired_at(height)),
        Some(Contract::Esc(e)) => (e.creator, e.expired_at(height)),
        Some(Contract::Ssc(_)) => return Err(ContractError::WrongTarget),
        None => return Err(ContractError::UnknownContract),
    };
    if sender != creator {
        return Err(ContractError::NotCreator);
    }
    if !expired {
        return Err(ContractError::NotExpired);
    }
    let residual = world.balance(&addr);
    Ok(vec![pay(world, addr, creator, residual, PayReason::Refund)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::ledger::Ledger;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    struct Setup {
        rng: ChaCha20Rng,
        ledger: Ledger,
        mfr: Address,
        dist: Address,
        hub: Address,
        devices: Vec<KeyPair>,
        ssc: Address,
        dsc: Address,
    }

    const A_D: u64 = 5;
    const A_H: u64 = 2;

    fn params(devices: &[KeyPair], expiry: u64) -> DscParams {
        DscParams {
            expiry,
            update_hash: hash(b"U"),
            package_hash: hash(b"P"),
            vk_delivery_hash: hash(b"vkD"),
            vk_exchange_hash: hash(b"vkE"),
            pk_exchange_hash: hash(b"pkE"),
            targets: devices.iter().map(KeyPair::public).collect(),
            reward_distributor: A_D,
            reward_hub: A_H,
        }
    }

    fn setup(n: usize, expiry: u64, reset: u64) -> Setup {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let mfr = Address::from(KeyPair::generate(&mut rng).public());
        let dist = Address::from(KeyPair::generate(&mut rng).public());
        let hub = Address::from(KeyPair::generate(&mut rng).public());
        let devices: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate(&mut rng)).collect();
        let mut ledger = Ledger::genesis([(mfr, 1000), (dist, 100), (hub, 0)], 1);
        ledger
            .submit_tx(Transaction {
                sender: mfr,
                target: Address::CREATE,
                value: 0,
                call: Call::DeploySsc { reset_period: reset },
            })
            .unwrap();
        ledger.advance_block();
        let ssc = ledger.ssc_of(&mfr).unwrap();
        let p = params(&devices, expiry);
        ledger
            .submit_tx(Transaction {
                sender: mfr,
                target: ssc,
                value: p.required_deposit().unwrap(),
                call: Call::CreateDsc(p),
            })
            .unwrap();
        ledger.advance_block();
        let dsc = *ledger.dscs().next().unwrap().0;
        Setup { rng, ledger, mfr, dist, hub, devices, ssc, dsc }
    }

    impl Setup {
        fn pod_call(&mut self, device: usize, sender: Address) -> Call {
            let mut t = [0u8; 32];
            self.rng.fill_bytes(&mut t);
            let pk = self.devices[device].public();
            let r = delivery_key(&t, &pk, &sender);
            let s = hash(r.as_bytes());
            let pod = self.devices[device].sign(&pod_message(&hash(b"U"), &s));
            Call::SubmitPod { device: pk, t, r, s, pod }
        }

        fn run(&mut self, sender: Address, target: Address, value: u64, call: Call) -> Result<Vec<LedgerEvent>, ContractError> {
            self.ledger
                .submit_tx(Transaction { sender, target, value, call })
                .unwrap();
            let mut r = self.ledger.advance_block();
            assert_eq!(r.len(), 1);
            r.remove(0).outcome
        }
    }

    #[test]
    fn deposit_boundary() {
        let mut s = setup(3, 10, 100);
        let mut p = params(&s.devices, 10);
        assert_eq!(p.required_deposit(), Some(21));
        let (mfr, ssc) = (s.mfr, s.ssc);
        assert_eq!(
            s.run(mfr, ssc, 20, Call::CreateDsc(p.clone())),
            Err(ContractError::InsufficientDeposit { required: 21, attached: 20 })
        );
        assert!(s.run(mfr, ssc, 21, Call::CreateDsc(p.clone())).is_ok());
        p.reward_hub = u64::MAX;
        assert_eq!(s.run(mfr, ssc, 0, Call::CreateDsc(p)), Err(ContractError::Overflow));
    }

    #[test]
    fn non_owner_cannot_create_dsc() {
        let mut s = setup(1, 10, 100);
        let p = params(&s.devices, 10);
        let (dist, ssc) = (s.dist, s.ssc);
        assert_eq!(s.run(dist, ssc, 7, Call::CreateDsc(p)), Err(ContractError::NotOwner));
        assert_eq!(s.ledger.balance(&dist), 100);
    }

    #[test]
    fn second_deploy_refused() {
        let mut s = setup(1, 10, 100);
        let mfr = s.mfr;
        assert_eq!(
            s.run(mfr, Address::CREATE, 0, Call::DeploySsc { reset_period: 1 }),
            Err(ContractError::AlreadyDeployed)
        );
    }

    #[test]
    fn honest_pod_pays_publishes_and_scores() {
        let mut s = setup(3, 10, 100);
        let (dist, dsc, ssc) = (s.dist, s.dsc, s.ssc);
        let call = s.pod_call(0, dist);
        let Call::SubmitPod { s: sd, r, .. } = call.clone() else { unreachable!() };
        let supply = s.ledger.total_supply();
        let ev = s.run(dist, dsc, 0, call).unwrap();
        assert_eq!(ev.len(), 3);
        assert_eq!(s.ledger.balance(&dist), 100 + A_D);
        assert_eq!(s.ledger.balance(&dsc), 21 - A_D);
        assert_eq!(s.ledger.total_supply(), supply);
        assert_eq!(s.ledger.published_key(&sd), Some(r));
        assert_eq!(s.ledger.score(&ssc, &dist), 1);
    }

    #[test]
    fn double_pod_rejected() {
        let mut s = setup(2, 10, 100);
        let (dist, hub, dsc) = (s.dist, s.hub, s.dsc);
        let c = s.pod_call(0, dist);
        s.run(dist, dsc, 0, c).unwrap();
        let c = s.pod_call(0, hub);
        assert_eq!(s.run(hub, dsc, 0, c), Err(ContractError::UnknownOrServedDevice));
    }

    #[test]
    fn crafted_replay_rejected() {
        let mut s = setup(1, 10, 100);
        let (dist, hub, dsc) = (s.dist, s.hub, s.dsc);
        let Call::SubmitPod { device, t, r, s: sd, pod } = s.pod_call(0, dist) else { unreachable!() };
        // Attacker keeps the PoD but re-derives t', r', s' for itself.
        let t2 = [9u8; 32];
        let r2 = delivery_key(&t2, &device, &hub);
        let s2 = hash(r2.as_bytes());
        let forged = Call::SubmitPod { device, t: t2, r: r2, s: s2, pod };
        assert_eq!(s.run(hub, dsc, 0, forged), Err(ContractError::BadSignature));
        // Reusing the original values under its own address breaks the r equation.
        let replay = Call::SubmitPod { device, t, r, s: sd, pod };
        assert_eq!(s.run(hub, dsc, 0, replay.clone()), Err(ContractError::KeyEquationMismatch));
        assert!(s.run(dist, dsc, 0, replay).is_ok());
    }

    #[test]
    fn expiry_boundary() {
        // created at height 2 with e = 10: height 11 accepted, 12 rejected
        let mut s = setup(2, 10, 100);
        let (dist, dsc) = (s.dist, s.dsc);
        assert_eq!(s.ledger.dsc(&dsc).unwrap().created_at, 2);
        while s.ledger.height() < 10 {
            s.ledger.advance_block();
        }
        let c = s.pod_call(0, dist);
        s.ledger.submit_tx(Transaction { sender: dist, target: dsc, value: 0, call: c }).unwrap();
        let r = s.ledger.advance_block();
        assert_eq!(r[0].height, 11);
        assert!(r[0].ok());
        let c = s.pod_call(1, dist);
        assert_eq!(s.run(dist, dsc, 0, c), Err(ContractError::Expired));
    }

    #[test]
    fn pofd_binds_the_hub() {
        let mut s = setup(1, 10, 100);
        let (hub, dist, dsc) = (s.hub, s.dist, s.dsc);
        let device = s.devices[0].public();
        let pofd = s.devices[0].sign(&pofd_message(&hash(b"U"), &hub));
        assert_eq!(
            s.run(dist, dsc, 0, Call::SubmitPofd { device, pofd }),
            Err(ContractError::BadSignature)
        );
        s.run(hub, dsc, 0, Call::SubmitPofd { device, pofd }).unwrap();
        assert_eq!(s.ledger.balance(&hub), A_H);
        assert_eq!(
            s.run(hub, dsc, 0, Call::SubmitPofd { device, pofd }),
            Err(ContractError::UnknownOrServedDevice)
        );
    }

    #[test]
    fn record_delivery_requires_child() {
        let mut s = setup(1, 10, 100);
        let (dist, ssc) = (s.dist, s.ssc);
        assert_eq!(
            s.run(dist, ssc, 0, Call::RecordDelivery { distributor: dist }),
            Err(ContractError::UnauthorizedCaller)
        );
    }

    #[test]
    fn score_lifecycle() {
        let child = Address([1; 32]);
        let d = Address([2; 32]);
        let mut ssc = SscState {
            owner: Address([3; 32]),
            reset_period: 10,
            scores: BTreeMap::new(),
            children: [child].into(),
        };
        assert_eq!(ssc.score_at(&d, 0), 0);
        assert_eq!(ssc.record_delivery(&child, d, 5), Ok(1));
        assert_eq!(ssc.record_delivery(&child, d, 6), Ok(2));
        assert_eq!(ssc.record_delivery(&child, d, 7), Ok(3));
        assert_eq!(ssc.score_at(&d, 16), 3);
        assert_eq!(ssc.score_at(&d, 17), 0);
        assert_eq!(ssc.record_delivery(&child, d, 17), Ok(1));
    }

    #[test]
    fn esc_escrow_and_claim() {
        let mut s = setup(1, 10, 100);
        let (dist, hub, ssc) = (s.dist, s.hub, s.ssc);
        let t = [4u8; 32];
        let r = exchange_key(&t, &hub);
        let sd = hash(r.as_bytes());
        s.run(dist, ssc, 7, Call::CreateEsc { payee: hub, s: sd, expiry: 5 }).unwrap();
        let esc = *s.ledger.escs().next().unwrap().0;
        assert_eq!(s.ledger.balance(&dist), 93);
        assert_eq!(s.ledger.balance(&esc), 7);

        // observer replays (t, r) from its own account
        assert_eq!(s.run(dist, esc, 0, Call::ClaimEsc { t, r }), Err(ContractError::NotPayee));
        let bad = SymKey([0; 32]);
        assert_eq!(
            s.run(hub, esc, 0, Call::ClaimEsc { t, r: bad }),
            Err(ContractError::KeyEquationMismatch)
        );
        s.run(hub, esc, 0, Call::ClaimEsc { t, r }).unwrap();
        assert_eq!(s.ledger.balance(&hub), 7);
        assert_eq!(s.ledger.published_key(&sd), Some(r));
        assert_eq!(s.run(hub, esc, 0, Call::ClaimEsc { t, r }), Err(ContractError::AlreadyClaimed));
    }

    #[test]
    fn zero_offer_and_overdrawn_offer() {
        let mut s = setup(1, 10, 100);
        let (dist, hub, ssc) = (s.dist, s.hub, s.ssc);
        s.run(dist, ssc, 0, Call::CreateEsc { payee: hub, s: hash(b"s"), expiry: 5 }).unwrap();
        assert!(matches!(
            s.run(dist, ssc, 101, Call::CreateEsc { payee: hub, s: hash(b"s"), expiry: 5 }),
            Err(ContractError::InsufficientFunds { .. })
        ));
    }

    #[test]
    fn reclaim_rules() {
        let mut s = setup(3, 4, 100);
        let (mfr, dist, dsc) = (s.mfr, s.dist, s.dsc);
        let c = s.pod_call(0, dist);
        s.run(dist, dsc, 0, c).unwrap();
        assert_eq!(s.run(mfr, dsc, 0, Call::Reclaim), Err(ContractError::NotExpired));
        while !s.ledger.dsc(&dsc).unwrap().expired_at(s.ledger.height() + 1) {
            s.ledger.advance_block();
        }
        assert_eq!(s.run(dist, dsc, 0, Call::Reclaim), Err(ContractError::NotCreator));
        // residual from served flags: 2 untouched devices plus device 0's hub share
        let expected = s.ledger.dsc(&dsc).unwrap().outstanding();
        assert_eq!(expected, 2 * (A_D + A_H) + A_H);
        let before = s.ledger.balance(&mfr);
        s.run(mfr, dsc, 0, Call::Reclaim).unwrap();
        assert_eq!(s.ledger.balance(&mfr), before + expected);
        assert_eq!(s.ledger.balance(&dsc), 0);
    }
}
