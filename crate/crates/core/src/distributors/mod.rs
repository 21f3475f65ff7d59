//! Multi-distributor bridge distribution.
//!
//! Bridges secret-share their addresses among `m` distributors at
//! registration, so no distributor ever holds a plaintext address. The
//! assignment logic then runs over bridge pseudonyms (registration-order
//! secret ids) in one of two arrangements:
//!
//! * leader-based: one honest-but-curious leader computes assignments
//!   locally and broadcasts the pseudonym table to the group;
//! * fully decentralized: the group generates shared randomness
//!   ([`drg`]) per round and instance, and every honest distributor expands
//!   it into the identical assignment table independently.
//!
//! Either way, each distributor sends every user one bundle per round
//! carrying its shares of the user's assigned bridges, and the user decodes
//! each address from the collected shares, correcting up to a third of them.
//!
//! [`agreement`] supplies the synchronous Byzantine agreement both the
//! randomness protocol and its equivocation detection rest on.

pub mod agreement;
pub mod drg;

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::DistributorFault;
use crate::field::{FieldElement, PrimeField};
use crate::net::{Actor, MessageLog};
use crate::session::UserId;
use crate::shamir::{self, SecretId, Share, ShareError, SharingPolicy};

pub use agreement::NodeIndex;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClusterError {
    #[error("leader (node 1) must be honest in leader-based mode")]
    FaultyLeader,
    #[error("truncated or malformed wire message")]
    MalformedMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Leader,
    Peer,
}

/// One distributor's state. Holds exactly one share per registered bridge
/// and a pseudonym-level replica of the current assignment table; bridge
/// addresses appear nowhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistributorNode {
    pub index: NodeIndex,
    pub role: Role,
    pub honest: bool,
    pub shares: BTreeMap<SecretId, Share>,
    pub session_view: BTreeMap<UserId, Vec<SecretId>>,
}

/// The distributor group plus its fault configuration.
pub struct Cluster {
    pub policy: SharingPolicy,
    pub field: PrimeField,
    nodes: Vec<DistributorNode>,
    faults: BTreeMap<NodeIndex, DistributorFault>,
    node_rngs: Vec<ChaCha8Rng>,
    next_secret: SecretId,
}

/// A per-user per-round delivery: one distributor's shares for every bridge
/// assigned to the user. Counted as a single message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveryBundle {
    pub from: NodeIndex,
    pub user: UserId,
    pub shares: Vec<(SecretId, FieldElement)>,
}

impl Cluster {
    pub fn new(
        policy: SharingPolicy,
        field: PrimeField,
        leader_based: bool,
        faults: BTreeMap<NodeIndex, DistributorFault>,
        node_rngs: Vec<ChaCha8Rng>,
    ) -> Result<Cluster, ClusterError> {
        if leader_based && faults.contains_key(&1) {
            return Err(ClusterError::FaultyLeader);
        }
        let nodes = (1..=policy.m)
            .map(|index| DistributorNode {
                index,
                role: if leader_based && index == 1 {
                    Role::Leader
                } else {
                    Role::Peer
                },
                honest: !faults.contains_key(&index),
                shares: BTreeMap::new(),
                session_view: BTreeMap::new(),
            })
            .collect();
        Ok(Cluster {
            policy,
            field,
            nodes,
            faults,
            node_rngs,
            next_secret: 0,
        })
    }

    pub fn m(&self) -> u32 {
        self.policy.m
    }

    /// Fault tolerance target, `floor(m/3)`.
    pub fn f(&self) -> u32 {
        self.policy.m / 3
    }

    pub fn nodes(&self) -> &[DistributorNode] {
        &self.nodes
    }

    pub fn node_indices(&self) -> impl Iterator<Item = NodeIndex> {
        1..=self.policy.m
    }

    /// Registers one bridge: the bridge host deals shares of its packed
    /// address to every distributor over the rate-limited channel. Returns
    /// the fresh pseudonym. The plaintext address never enters any node.
    pub fn register_bridge(
        &mut self,
        address: FieldElement,
        dealer_rng: &mut ChaCha8Rng,
        log: &mut MessageLog,
    ) -> SecretId {
        let id = self.next_secret;
        self.next_secret += 1;
        let shares = shamir::share(&self.field, address, &self.policy, id, dealer_rng);
        for (node, share) in self.nodes.iter_mut().zip(shares) {
            log.record(Actor::BridgeHost(id), Actor::Distributor(node.index));
            node.shares.insert(id, share);
        }
        id
    }

    pub fn registered(&self) -> SecretId {
        self.next_secret
    }

    /// Installs this round's pseudonym assignment table on every honest
    /// node. In leader mode the table arrives via the leader's broadcast; in
    /// decentralized mode every honest node derives the identical table from
    /// the agreed randomness.
    pub fn install_assignments(&mut self, table: &BTreeMap<UserId, Vec<SecretId>>) {
        for node in &mut self.nodes {
            if node.honest {
                node.session_view = table.clone();
            }
        }
    }

    /// Leader broadcast of the (user, indices) table to all other
    /// distributors: one message per peer.
    pub fn leader_broadcast_assignments(
        &mut self,
        table: &BTreeMap<UserId, Vec<SecretId>>,
        log: &mut MessageLog,
    ) {
        let peers: Vec<Actor> = self
            .nodes
            .iter()
            .filter(|n| n.index != 1)
            .map(|n| Actor::Distributor(n.index))
            .collect();
        log.record_broadcast(Actor::Distributor(1), peers);
        self.install_assignments(table);
    }

    /// Every distributor sends each user one bundle with its shares of the
    /// user's assigned bridges. Faulty nodes drop the bundle or fill it with
    /// garbage field elements according to their fault.
    pub fn deliver_round(
        &mut self,
        table: &BTreeMap<UserId, Vec<SecretId>>,
        log: &mut MessageLog,
    ) -> BTreeMap<UserId, Vec<DeliveryBundle>> {
        let mut inboxes: BTreeMap<UserId, Vec<DeliveryBundle>> = BTreeMap::new();
        for node_pos in 0..self.nodes.len() {
            let index = self.nodes[node_pos].index;
            let fault = self.faults.get(&index).copied();
            if fault == Some(DistributorFault::Silent) {
                continue;
            }
            for (&user, ids) in table {
                let shares: Vec<(SecretId, FieldElement)> = ids
                    .iter()
                    .map(|&id| {
                        let value = match fault {
                            Some(DistributorFault::GarbageShares) => {
                                self.field.random(&mut self.node_rngs[node_pos])
                            }
                            _ => self.nodes[node_pos]
                                .shares
                                .get(&id)
                                .map(|s| s.value)
                                .unwrap_or(FieldElement::ZERO),
                        };
                        (id, value)
                    })
                    .collect();
                log.record(Actor::Distributor(index), Actor::User(user.0));
                inboxes.entry(user).or_default().push(DeliveryBundle {
                    from: index,
                    user,
                    shares,
                });
            }
        }
        inboxes
    }

    /// Behavior each node exhibits inside the randomness protocol.
    pub fn drg_behaviors(&self) -> BTreeMap<NodeIndex, drg::DrgBehavior> {
        self.faults
            .iter()
            .map(|(&i, fault)| {
                let b = match fault {
                    DistributorFault::Silent => drg::DrgBehavior::Absent,
                    DistributorFault::GarbageShares => drg::DrgBehavior::Honest,
                    DistributorFault::EquivocateRandomness => drg::DrgBehavior::EquivocateReveal,
                };
                (i, b)
            })
            .collect()
    }

    pub fn node_rngs_mut(&mut self) -> &mut [ChaCha8Rng] {
        &mut self.node_rngs
    }

    /// Serializable view of every distributor's state, for checkpointing and
    /// for scanning that no plaintext address leaked into any node.
    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.nodes).expect("node state serializes")
    }
}

/// Recovers each assigned bridge address from the bundles one user received
/// in a round. Shares are grouped per pseudonym across distributors and
/// decoded with error correction; a bridge whose shares are corrupted beyond
/// the bound yields an error rather than a silently wrong address.
pub fn user_reconstruct(
    field: &PrimeField,
    policy: &SharingPolicy,
    bundles: &[DeliveryBundle],
) -> BTreeMap<SecretId, Result<FieldElement, ShareError>> {
    let mut by_secret: BTreeMap<SecretId, Vec<Share>> = BTreeMap::new();
    for bundle in bundles {
        for &(secret_id, value) in &bundle.shares {
            by_secret.entry(secret_id).or_default().push(Share {
                index: bundle.from,
                value,
                secret_id,
            });
        }
    }
    by_secret
        .into_iter()
        .map(|(id, shares)| (id, shamir::reconstruct(field, &shares, policy)))
        .collect()
}

/// Collects every distinct u64 stored anywhere in a JSON state snapshot.
/// Used to verify that registered plaintext addresses never appear in
/// distributor state.
pub fn scan_snapshot_values(value: &serde_json::Value, out: &mut BTreeSet<u64>) {
    match value {
        serde_json::Value::Number(n) => {
            if let Some(v) = n.as_u64() {
                out.insert(v);
            }
        }
        serde_json::Value::Array(items) => {
            for item in items {
                scan_snapshot_values(item, out);
            }
        }
        serde_json::Value::Object(map) => {
            for item in map.values() {
                scan_snapshot_values(item, out);
            }
        }
        _ => {}
    }
}

/// Simulated transport records, with field elements encoded big-endian.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireMessage {
    RegisterShare {
        secret_id: u64,
        index: u32,
        value: u64,
    },
    AssignBroadcast {
        user: u64,
        indices: Vec<u64>,
    },
    ShareDelivery {
        user: u64,
        secret_id: u64,
        index: u32,
        value: u64,
    },
    DrgCommit {
        index: u32,
        digest: [u8; 32],
    },
    DrgReveal {
        index: u32,
        value: u64,
        nonce: [u8; 16],
    },
    AgreeMsg {
        phase: u32,
        payload: Vec<u8>,
    },
}

impl WireMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            WireMessage::RegisterShare {
                secret_id,
                index,
                value,
            } => {
                out.push(0);
                out.extend(secret_id.to_be_bytes());
                out.extend(index.to_be_bytes());
                out.extend(value.to_be_bytes());
            }
            WireMessage::AssignBroadcast { user, indices } => {
                out.push(1);
                out.extend(user.to_be_bytes());
                out.extend((indices.len() as u32).to_be_bytes());
                for i in indices {
                    out.extend(i.to_be_bytes());
                }
            }
            WireMessage::ShareDelivery {
                user,
                secret_id,
                index,
                value,
            } => {
                out.push(2);
                out.extend(user.to_be_bytes());
                out.extend(secret_id.to_be_bytes());
                out.extend(index.to_be_bytes());
                out.extend(value.to_be_bytes());
            }
            WireMessage::DrgCommit { index, digest } => {
                out.push(3);
                out.extend(index.to_be_bytes());
                out.extend(digest);
            }
            WireMessage::DrgReveal {
                index,
                value,
                nonce,
            } => {
                out.push(4);
                out.extend(index.to_be_bytes());
                out.extend(value.to_be_bytes());
                out.extend(nonce);
            }
            WireMessage::AgreeMsg { phase, payload } => {
                out.push(5);
                out.extend(phase.to_be_bytes());
                out.extend((payload.len() as u32).to_be_bytes());
                out.extend(payload);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<WireMessage, ClusterError> {
        let mut r = Reader { bytes, pos: 0 };
        let tag = r.u8()?;
        let msg = match tag {
            0 => WireMessage::RegisterShare {
                secret_id: r.u64()?,
                index: r.u32()?,
                value: r.u64()?,
            },
            1 => {
                let user = r.u64()?;
                let len = r.u32()? as usize;
                let mut indices = Vec::with_capacity(len);
                for _ in 0..len {
                    indices.push(r.u64()?);
                }
                WireMessage::AssignBroadcast { user, indices }
            }
            2 => WireMessage::ShareDelivery {
                user: r.u64()?,
                secret_id: r.u64()?,
                index: r.u32()?,
                value: r.u64()?,
            },
            3 => WireMessage::DrgCommit {
                index: r.u32()?,
                digest: r.array()?,
            },
            4 => WireMessage::DrgReveal {
                index: r.u32()?,
                value: r.u64()?,
                nonce: r.array()?,
            },
            5 => {
                let phase = r.u32()?;
                let len = r.u32()? as usize;
                WireMessage::AgreeMsg {
                    phase,
                    payload: r.take(len)?.to_vec(),
                }
            }
            _ => return Err(ClusterError::MalformedMessage),
        };
        if r.pos != bytes.len() {
            return Err(ClusterError::MalformedMessage);
        }
        Ok(msg)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ClusterError> {
        if self.pos + n > self.bytes.len() {
            return Err(ClusterError::MalformedMessage);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ClusterError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ClusterError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ClusterError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ClusterError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}
