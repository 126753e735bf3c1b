use rand::RngCore;

use super::messages::{manufacturer_message, Message, Package};
use super::{find_release, Ctx};
use crate::contracts::{Call, DscParams};
use crate::crypto::{hash, Digest, KeyPair, PublicKey};
use crate::harness::trace::EventKind;
use crate::ledger::{Address, Transaction, TxId};
use crate::zk::{ProvingKey, StatementKind, StatementShape, VerifyingKey};

#[derive(Debug, Clone)]
pub struct ReleasePlan {
    pub update_size: usize,
    pub targets: Vec<PublicKey>,
    pub expiry: u64,
    pub reward_distributor: u64,
    pub reward_hub: u64,
    pub deposit: u64,
    pub reset_period: u64,
    pub seed_window: u64,
    pub reclaim_on_expiry: bool,
}

#[derive(Debug, Clone)]
struct Built {
    package: Package,
    pk_exchange: ProvingKey,
    vk_exchange: VerifyingKey,
    package_hash: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Start,
    AwaitSsc,
    AwaitDsc(TxId),
    Released { dsc: Address, created_at: u64 },
    Failed,
}

pub struct Manufacturer {
    name: String,
    keypair: KeyPair,
    plan: ReleasePlan,
    stage: Stage,
    built: Option<Built>,
    reclaim: Option<TxId>,
    reclaimed: bool,
}

impl Manufacturer {
    pub fn new(name: &str, keypair: KeyPair, plan: ReleasePlan) -> Self {
        Manufacturer {
            name: name.to_string(),
            keypair,
            plan,
            stage: Stage::Start,
            built: None,
            reclaim: None,
            reclaimed: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn address(&self) -> Address {
        self.keypair.public().into()
    }

    pub fn update(&self) -> Option<&[u8]> {
        self.built.as_ref().map(|b| b.package.update.as_slice())
    }

    pub fn dsc(&self) -> Option<Address> {
        match self.stage {
            Stage::Released { dsc, .. } => Some(dsc),
            _ => None,
        }
    }

    pub fn busy(&self) -> bool {
        match self.stage {
            Stage::Released { .. } => self.plan.reclaim_on_expiry && !self.reclaimed,
            Stage::Failed => false,
            _ => true,
        }
    }

    fn build(&mut self, ctx: &mut Ctx<'_>) -> DscParams {
        let mut update = vec![0u8; self.plan.update_size];
        ctx.rng.fill_bytes(&mut update);
        let update_hash = hash(&update);
        let sig_m = self.keypair.sign(&manufacturer_message(&update_hash));
        let (pk_delivery, vk_delivery) = ctx.zk.setup(
            StatementShape {
                kind: StatementKind::Delivery,
                payload_size: update.len(),
            },
            ctx.rng,
        );
        ctx.secrets.update = Some(update.clone());
        let package = Package {
            update,
            pk_delivery,
            vk_delivery,
            sig_m,
        };
        let package_bytes = package.to_bytes();
        let (pk_exchange, vk_exchange) = ctx.zk.setup(
            StatementShape {
                kind: StatementKind::Exchange,
                payload_size: package_bytes.len(),
            },
            ctx.rng,
        );
        let params = DscParams {
            expiry: self.plan.expiry,
            update_hash,
            package_hash: hash(&package_bytes),
            vk_delivery_hash: vk_delivery.digest(),
            vk_exchange_hash: vk_exchange.digest(),
            pk_exchange_hash: pk_exchange.digest(),
            targets: self.plan.targets.clone(),
            reward_distributor: self.plan.reward_distributor,
            reward_hub: self.plan.reward_hub,
        };
        self.built = Some(Built {
            package_hash: params.package_hash,
            package,
            pk_exchange,
            vk_exchange,
        });
        params
    }

    pub fn on_tick(&mut self, ctx: &mut Ctx<'_>) {
        let me = self.address();
        match self.stage {
            Stage::Start => {
                ctx.submit(Transaction {
                    sender: me,
                    target: Address::CREATE,
                    value: 0,
                    call: Call::DeploySsc {
                        reset_period: self.plan.reset_period,
                    },
                });
                self.stage = Stage::AwaitSsc;
            }
            Stage::AwaitSsc => {
                let Some(ssc) = ctx.ledger.ssc_of(&me) else { return };
                let params = self.build(ctx);
                if let Some(id) = ctx.submit(Transaction {
                    sender: me,
                    target: ssc,
                    value: self.plan.deposit,
                    call: Call::CreateDsc(params),
                }) {
                    self.stage = Stage::AwaitDsc(id);
                }
            }
            Stage::AwaitDsc(id) => match ctx.outcome(id) {
                None => {}
                Some(Ok(())) => {
                    let (dsc, state) = find_release(ctx.ledger, &me).expect("executed release");
                    let built = self.built.as_ref().expect("built before submission");
                    ctx.dht.announce(built.package_hash, &self.name);
                    ctx.record(EventKind::Released {
                        dsc,
                        update: state.update_hash,
                    });
                    self.stage = Stage::Released {
                        dsc,
                        created_at: state.created_at,
                    };
                }
                Some(Err(error)) => {
                    ctx.record(EventKind::ReleaseFailed { error });
                    self.stage = Stage::Failed;
                }
            },
            Stage::Released { dsc, created_at } => {
                if !self.plan.reclaim_on_expiry || self.reclaimed {
                    return;
                }
                match self.reclaim {
                    None if ctx.height.saturating_sub(created_at) >= self.plan.expiry => {
                        self.reclaim = ctx.submit(Transaction {
                            sender: me,
                            target: dsc,
                            value: 0,
                            call: Call::Reclaim,
                        });
                    }
                    Some(id) if ctx.outcome(id).is_some() => self.reclaimed = true,
                    _ => {}
                }
            }
            Stage::Failed => {}
        }
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_>, from: &str, msg: Message) {
        let Message::SeedRequest { package_hash } = msg else { return };
        let (Stage::Released { created_at, .. }, Some(built)) = (self.stage, &self.built) else {
            return;
        };
        if package_hash != built.package_hash {
            return;
        }
        if ctx.height < created_at + self.plan.seed_window {
            ctx.send(
                from,
                Message::SeedPackage {
                    package: built.package.clone(),
                    pk_exchange: built.pk_exchange,
                    vk_exchange: built.vk_exchange,
                },
            );
            ctx.record(EventKind::SeedServed { to: from.to_string() });
        } else {
            ctx.send(from, Message::SeedRefused { package_hash });
            ctx.record(EventKind::SeedRefused { to: from.to_string() });
        }
    }
}
