//! Adaptive bridge distribution with adversarial simulation.
//!
//! The crate has two halves. The protocol half implements a
//! resource-competitive bridge assignment state machine ([`session`]), the
//! cryptographic substrate it rests on ([`field`], [`shamir`], [`prf`]), and
//! the multi-distributor protocols that run the assignment obliviously over
//! secret-shared bridge addresses ([`distributors`]). The evaluation half
//! ([`adversary`], [`sim`], [`metrics`]) wires everything to configurable
//! censor models and records per-round measurements from deterministic,
//! seeded runs.

pub mod adversary;
pub mod distributors;
pub mod field;
pub mod metrics;
pub mod net;
pub mod prf;
pub mod session;
pub mod shamir;
pub mod sim;

pub use adversary::{Adversary, DistributorFault, Strategy};
pub use field::{FieldElement, Polynomial, PrimeField, DEFAULT_MODULUS};
pub use session::{BridgeId, BridgeSupply, SessionState, UserId};
pub use shamir::{Share, SharingPolicy};
pub use sim::{Mode, SimConfig};
