//! Deterministic simulation of crowd-sourced IoT update delivery with
//! on-chain escrow, zero-knowledge delivery proofs and an active adversary.

pub mod actors;
pub mod contracts;
pub mod crypto;
pub mod harness;
pub mod ledger;
pub mod network;
pub mod zk;
