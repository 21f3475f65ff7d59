//! Commit-reveal distributed random generation with agreement-backed
//! transcript resolution.
//!
//! Each participant draws a uniform field value, broadcasts a binding
//! commitment, then opens it. Both the commitment vector and the opening
//! vector are settled by parallel Byzantine agreement, so every honest node
//! resolves the identical transcript. A node that committed but whose
//! agreed opening is missing or fails verification is an offender: the
//! round aborts, the offender indices are logged for administrative
//! handling, and the protocol restarts with fresh values. The result of a
//! clean round is the sum of all committed-and-verified values, which no
//! coalition of up to `floor(m/3)` participants can bias or learn early.
//!
//! A batch runs any number of independent value slots in lockstep; the
//! broadcasts and agreement steps bundle all slots into one message per
//! (sender, recipient) pair.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::{FieldElement, PrimeField};

use super::agreement::{run_parallel_agreement, NodeIndex, Silent, Val};

/// How many times the protocol restarts before giving up.
pub const RESTART_CAP: u32 = 10;

pub type Nonce = [u8; 16];
pub type CommitDigest = [u8; 32];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DrgError {
    #[error("randomness generation stalled after {attempts} aborted attempts")]
    Stalled { attempts: u32 },
    #[error("agreement failed: {0}")]
    Agreement(#[from] super::agreement::AgreementError),
}

/// Hash-based binding commitment to a field value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commitment {
    pub digest: CommitDigest,
    pub opened: Option<(FieldElement, Nonce)>,
}

impl Commitment {
    pub fn digest_of(value: FieldElement, nonce: &Nonce) -> CommitDigest {
        let mut h = Sha256::new();
        h.update(value.to_be_bytes());
        h.update(nonce);
        h.finalize().into()
    }

    pub fn verify(digest: &CommitDigest, value: FieldElement, nonce: &Nonce) -> bool {
        &Commitment::digest_of(value, nonce) == digest
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DrgPhase {
    Commit,
    Reveal,
    Agree,
    Done,
    Aborted,
}

/// One honest node's resolved view of a randomness round (first slot of the
/// batch).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrgRound {
    pub phase: DrgPhase,
    pub commitments: BTreeMap<NodeIndex, Commitment>,
    pub reveals: BTreeMap<NodeIndex, FieldElement>,
    pub result: Option<FieldElement>,
}

/// Behavior of one participant across the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrgBehavior {
    Honest,
    /// Commitment-honest but picks this fixed value instead of a uniform one.
    FixedValue(u64),
    /// Never participates at all.
    Absent,
    /// Commits, then never opens.
    WithholdReveal,
    /// Opens correctly toward the highest-indexed honest node and sends a
    /// garbage opening to everyone else; silent during agreement.
    EquivocateReveal,
    /// Sends the true digest to the highest-indexed honest node and a forged
    /// one to everyone else, then opens the true value; silent in agreement.
    EquivocateCommit,
}

impl DrgBehavior {
    fn commits(&self) -> bool {
        !matches!(self, DrgBehavior::Absent)
    }

    fn follows_agreement(&self) -> bool {
        matches!(self, DrgBehavior::Honest | DrgBehavior::FixedValue(_))
    }
}

/// Value domain settled by the agreement: commitment digests and openings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum TranscriptVal {
    Digest(CommitDigest),
    Opening(u64, Nonce),
}

#[derive(Debug, Clone)]
pub struct DrgReport {
    pub outcome: Result<Vec<FieldElement>, DrgError>,
    pub attempts: u32,
    /// Offender sets of the aborted attempts, in order. Identical at every
    /// honest node by construction (asserted during the run).
    pub offender_log: Vec<BTreeSet<NodeIndex>>,
    /// Final-attempt transcript view per honest node, for the first slot.
    pub views: BTreeMap<NodeIndex, DrgRound>,
}

/// Runs `slots` independent randomness values among nodes `1..=m`,
/// restarting on any detected misbehavior, up to [`RESTART_CAP`] attempts.
///
/// `behaviors` defaults missing indices to honest. `node_rngs[j-1]` drives
/// node `j`'s value and nonce draws. `traffic` observes every message
/// bundle.
pub fn run_drg_batch(
    field: &PrimeField,
    m: u32,
    f: u32,
    slots: usize,
    node_rngs: &mut [ChaCha8Rng],
    behaviors: &BTreeMap<NodeIndex, DrgBehavior>,
    traffic: &mut dyn FnMut(NodeIndex, &[NodeIndex]),
) -> DrgReport {
    assert_eq!(node_rngs.len(), m as usize);
    let behavior_of = |j: NodeIndex| behaviors.get(&j).copied().unwrap_or(DrgBehavior::Honest);
    let all: Vec<NodeIndex> = (1..=m).collect();
    let followers: Vec<NodeIndex> = all
        .iter()
        .copied()
        .filter(|&j| behavior_of(j).follows_agreement())
        .collect();
    let ba_corrupt: BTreeSet<NodeIndex> = all
        .iter()
        .copied()
        .filter(|&j| !behavior_of(j).follows_agreement())
        .collect();
    let highest_honest = *followers
        .last()
        .expect("at least one protocol-following node");

    let mut offender_log: Vec<BTreeSet<NodeIndex>> = Vec::new();
    let mut last_views: BTreeMap<NodeIndex, DrgRound> = BTreeMap::new();

    for attempt in 1..=RESTART_CAP {
        // Commit phase: draw values, broadcast digests.
        let mut values: BTreeMap<NodeIndex, Vec<FieldElement>> = BTreeMap::new();
        let mut nonces: BTreeMap<NodeIndex, Vec<Nonce>> = BTreeMap::new();
        for &j in &all {
            let b = behavior_of(j);
            if !b.commits() {
                continue;
            }
            let rng = &mut node_rngs[j as usize - 1];
            let vs: Vec<FieldElement> = (0..slots)
                .map(|_| match b {
                    DrgBehavior::FixedValue(v) => field.element(v),
                    _ => field.random(rng),
                })
                .collect();
            let ns: Vec<Nonce> = (0..slots).map(|_| rng.random()).collect();
            values.insert(j, vs);
            nonces.insert(j, ns);
        }

        // commit_rx[recipient][sender][slot]
        let mut commit_rx: BTreeMap<NodeIndex, BTreeMap<NodeIndex, Vec<CommitDigest>>> =
            BTreeMap::new();
        for &j in &all {
            let b = behavior_of(j);
            if !b.commits() {
                continue;
            }
            let digests: Vec<CommitDigest> = (0..slots)
                .map(|s| Commitment::digest_of(values[&j][s], &nonces[&j][s]))
                .collect();
            let recipients: Vec<NodeIndex> = all.iter().copied().filter(|&i| i != j).collect();
            traffic(j, &recipients);
            for &i in &followers {
                if i == j {
                    continue;
                }
                let payload = match b {
                    DrgBehavior::EquivocateCommit if i != highest_honest => (0..slots)
                        .map(|s| {
                            let mut forged = nonces[&j][s];
                            forged[0] ^= 0xff;
                            Commitment::digest_of(values[&j][s], &forged)
                        })
                        .collect(),
                    _ => digests.clone(),
                };
                commit_rx.entry(i).or_default().insert(j, payload);
            }
        }

        // Reveal phase: broadcast openings.
        let mut reveal_rx: BTreeMap<NodeIndex, BTreeMap<NodeIndex, Vec<(u64, Nonce)>>> =
            BTreeMap::new();
        for &j in &all {
            let b = behavior_of(j);
            if !b.commits() || b == DrgBehavior::WithholdReveal {
                continue;
            }
            let recipients: Vec<NodeIndex> = all.iter().copied().filter(|&i| i != j).collect();
            traffic(j, &recipients);
            for &i in &followers {
                if i == j {
                    continue;
                }
                let payload: Vec<(u64, Nonce)> = (0..slots)
                    .map(|s| {
                        let (v, n) = (values[&j][s], nonces[&j][s]);
                        match b {
                            DrgBehavior::EquivocateReveal if i != highest_honest => {
                                (field.add(v, FieldElement::ONE).value(), n)
                            }
                            _ => (v.value(), n),
                        }
                    })
                    .collect();
                reveal_rx.entry(i).or_default().insert(j, payload);
            }
        }

        // Agreement phase: settle the commit and reveal vectors. Slot
        // layout: first m*slots commit entries, then m*slots reveal entries.
        let mut ba_inputs: Vec<BTreeMap<NodeIndex, Val<TranscriptVal>>> =
            vec![BTreeMap::new(); 2 * m as usize * slots];
        for &i in &followers {
            // A node includes its own broadcast values directly.
            for &j in &all {
                for s in 0..slots {
                    let commit_val: Val<TranscriptVal> = if i == j {
                        values.get(&j).map(|vs| {
                            TranscriptVal::Digest(Commitment::digest_of(vs[s], &nonces[&j][s]))
                        })
                    } else {
                        commit_rx
                            .get(&i)
                            .and_then(|m| m.get(&j))
                            .map(|d| TranscriptVal::Digest(d[s]))
                    };
                    let reveal_val: Val<TranscriptVal> = if i == j {
                        values
                            .get(&j)
                            .filter(|_| behavior_of(j) != DrgBehavior::WithholdReveal)
                            .map(|vs| TranscriptVal::Opening(vs[s].value(), nonces[&j][s]))
                    } else {
                        reveal_rx
                            .get(&i)
                            .and_then(|m| m.get(&j))
                            .map(|r| TranscriptVal::Opening(r[s].0, r[s].1))
                    };
                    let base = (j as usize - 1) * slots + s;
                    ba_inputs[base].insert(i, commit_val);
                    ba_inputs[m as usize * slots + base].insert(i, reveal_val);
                }
            }
        }
        let decisions =
            match run_parallel_agreement(m, f, &ba_inputs, &ba_corrupt, &mut Silent, traffic) {
                Ok(d) => d,
                Err(e) => {
                    return DrgReport {
                        outcome: Err(DrgError::Agreement(e)),
                        attempts: attempt,
                        offender_log,
                        views: last_views,
                    }
                }
            };

        // Resolution: identical at every follower because it reads only the
        // agreed vectors. Computed per node and cross-checked.
        let mut per_node: BTreeMap<NodeIndex, (DrgRound, BTreeSet<NodeIndex>, Vec<FieldElement>)> =
            BTreeMap::new();
        for &i in &followers {
            let mut offenders = BTreeSet::new();
            let mut sums = vec![FieldElement::ZERO; slots];
            let mut round = DrgRound {
                phase: DrgPhase::Agree,
                commitments: BTreeMap::new(),
                reveals: BTreeMap::new(),
                result: None,
            };
            let mut participants_short = false;
            for s in 0..slots {
                let mut participants = 0u32;
                for &j in &all {
                    let base = (j as usize - 1) * slots + s;
                    let commit = decisions[base][&i].clone();
                    let reveal = decisions[m as usize * slots + base][&i].clone();
                    let Some(TranscriptVal::Digest(digest)) = commit else {
                        continue;
                    };
                    participants += 1;
                    let opened = match reveal {
                        Some(TranscriptVal::Opening(v, n))
                            if Commitment::verify(&digest, field.element(v), &n) =>
                        {
                            Some((field.element(v), n))
                        }
                        _ => None,
                    };
                    if s == 0 {
                        round.commitments.insert(j, Commitment { digest, opened });
                        if let Some((v, _)) = opened {
                            round.reveals.insert(j, v);
                        }
                    }
                    match opened {
                        Some((v, _)) => sums[s] = field.add(sums[s], v),
                        None => {
                            offenders.insert(j);
                        }
                    }
                }
                if (participants + f) < m {
                    participants_short = true;
                }
            }
            if offenders.is_empty() && !participants_short {
                round.phase = DrgPhase::Done;
                round.result = Some(sums[0]);
            } else {
                round.phase = DrgPhase::Aborted;
            }
            per_node.insert(i, (round, offenders, sums));
        }
        let canonical = per_node[&followers[0]].clone();
        for (node, view) in &per_node {
            assert_eq!(
                (&view.0, &view.1),
                (&canonical.0, &canonical.1),
                "node {node} resolved a different transcript"
            );
        }
        last_views = per_node.iter().map(|(&n, v)| (n, v.0.clone())).collect();
        let (round, offenders, sums) = canonical;
        if round.phase == DrgPhase::Done {
            return DrgReport {
                outcome: Ok(sums),
                attempts: attempt,
                offender_log,
                views: last_views,
            };
        }
        offender_log.push(offenders);
    }
    DrgReport {
        outcome: Err(DrgError::Stalled {
            attempts: RESTART_CAP,
        }),
        attempts: RESTART_CAP,
        offender_log,
        views: last_views,
    }
}
