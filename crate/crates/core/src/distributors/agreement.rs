//! Simplified synchronous Byzantine agreement for a small distributor group.
//!
//! King-style agreement tolerating `f` arbitrary faults among `m` nodes with
//! `3f < m`, in `f + 1` phases of three broadcast steps each:
//!
//! 1. every node broadcasts its current value and, where some value was
//!    received at least `m - f` times, proposes it;
//! 2. a value proposed by at least `f + 1` senders is adopted (at most one
//!    value can reach that count);
//! 3. the phase's king broadcasts its value, and every node that did not see
//!    `m - f` proposals for its adopted value defers to the king.
//!
//! With at most one honest king phase required, all honest nodes decide the
//! same value after `f + 1` phases, and a value held unanimously by honest
//! nodes at the start is the value decided. The agreement domain is
//! `Option<V>`: `None` stands for "nothing received" and is agreeable like
//! any other value, which lets callers detect broadcasts that never reached
//! a consistent state.
//!
//! Any number of agreement instances can run in lockstep; one broadcast
//! step then carries every instance's payload in a single message per
//! recipient, which is how the message accounting counts them.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

/// 1-based participant index.
pub type NodeIndex = u32;

/// Agreement domain value. `None` is the distinguished "nothing" value.
pub type Val<V> = Option<V>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgreementError {
    #[error("fault bound violated: need 3f < m, got m={m}, f={f}")]
    FaultBoundExceeded { m: u32, f: u32 },
    #[error("honest inputs missing for some non-corrupt node")]
    IncompleteInputs,
}

/// Broadcast stage within a phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Value,
    Propose,
    King,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub phase: u32,
    pub stage: Stage,
}

/// Per-recipient message control for corrupt participants. Returning `None`
/// means staying silent toward that recipient at that step.
pub trait FaultySender<V> {
    fn send(&mut self, step: Step, slot: usize, from: NodeIndex, to: NodeIndex) -> Option<Val<V>>;
}

/// Always-silent corrupt participant.
pub struct Silent;

impl<V> FaultySender<V> for Silent {
    fn send(&mut self, _: Step, _: usize, _: NodeIndex, _: NodeIndex) -> Option<Val<V>> {
        None
    }
}

/// Scripted corrupt behavior used by the tests and the randomness protocol.
pub enum Script<V> {
    /// Say nothing, ever.
    Silent,
    /// Send `values[recipient mod len]` at every step: different recipients
    /// may consistently see different values.
    Conflicting(Vec<Val<V>>),
    /// Pick per (step, recipient) from the list by a rolling counter.
    Rotating(Vec<Val<V>>),
}

pub struct ScriptedFaults<V> {
    scripts: BTreeMap<NodeIndex, Script<V>>,
    counter: u64,
}

impl<V: Clone> ScriptedFaults<V> {
    pub fn new(scripts: BTreeMap<NodeIndex, Script<V>>) -> ScriptedFaults<V> {
        ScriptedFaults {
            scripts,
            counter: 0,
        }
    }
}

impl<V: Clone> FaultySender<V> for ScriptedFaults<V> {
    fn send(&mut self, _: Step, _: usize, from: NodeIndex, to: NodeIndex) -> Option<Val<V>> {
        match self.scripts.get(&from) {
            None | Some(Script::Silent) => None,
            Some(Script::Conflicting(vals)) => Some(vals[(to as usize - 1) % vals.len()].clone()),
            Some(Script::Rotating(vals)) => {
                self.counter = self.counter.wrapping_add(1);
                Some(vals[self.counter as usize % vals.len()].clone())
            }
        }
    }
}

/// Runs `inputs.len()` lockstep agreement instances among nodes `1..=m`.
///
/// `inputs[slot]` maps every non-corrupt node to its initial value. Returns
/// the per-slot decisions of every non-corrupt node; the agreement property
/// makes all of a slot's decisions equal. `traffic` is invoked once per
/// broadcast bundle (sender, recipients).
pub fn run_parallel_agreement<V: Clone + Eq + Ord>(
    m: u32,
    f: u32,
    inputs: &[BTreeMap<NodeIndex, Val<V>>],
    corrupt_set: &BTreeSet<NodeIndex>,
    fault: &mut dyn FaultySender<V>,
    traffic: &mut dyn FnMut(NodeIndex, &[NodeIndex]),
) -> Result<Vec<BTreeMap<NodeIndex, Val<V>>>, AgreementError> {
    if 3 * f >= m {
        return Err(AgreementError::FaultBoundExceeded { m, f });
    }
    let all: Vec<NodeIndex> = (1..=m).collect();
    let honest: Vec<NodeIndex> = all
        .iter()
        .copied()
        .filter(|i| !corrupt_set.contains(i))
        .collect();
    for slot_inputs in inputs {
        if honest.iter().any(|h| !slot_inputs.contains_key(h)) {
            return Err(AgreementError::IncompleteInputs);
        }
    }
    let slots = inputs.len();
    let quorum = (m - f) as usize;
    let adopt_at = (f + 1) as usize;

    // cur[slot][node]
    let mut cur: Vec<BTreeMap<NodeIndex, Val<V>>> = inputs.to_vec();

    for phase in 1..=f + 1 {
        let king = phase as NodeIndex;

        // Stage 1: broadcast values; silence counts as the "nothing" value.
        let step = Step {
            phase,
            stage: Stage::Value,
        };
        let received = exchange(
            &all,
            &honest,
            &cur,
            corrupt_set,
            fault,
            step,
            slots,
            traffic,
        );
        // proposals[slot][node] = the value this node proposes, if any
        let mut proposals: Vec<BTreeMap<NodeIndex, Val<V>>> = vec![BTreeMap::new(); slots];
        for slot in 0..slots {
            for &node in &honest {
                let mut counts: BTreeMap<Val<V>, usize> = BTreeMap::new();
                for &sender in &all {
                    // Silence collapses to the "nothing" value.
                    let v: Val<V> = received[slot][&node]
                        .get(&sender)
                        .cloned()
                        .flatten()
                        .flatten();
                    *counts.entry(v).or_insert(0) += 1;
                }
                if let Some((v, _)) = counts.into_iter().find(|&(_, c)| c >= quorum) {
                    proposals[slot].insert(node, v);
                }
            }
        }

        // Stage 2: broadcast proposals; a value backed by f+1 senders is
        // adopted (only one value can be). Nodes that saw a full m-f quorum
        // of proposals for it will ignore the king.
        let step = Step {
            phase,
            stage: Stage::Propose,
        };
        let received = exchange_opt(
            &all,
            &honest,
            &proposals,
            corrupt_set,
            fault,
            step,
            slots,
            traffic,
        );
        let mut keep: Vec<BTreeMap<NodeIndex, bool>> = vec![BTreeMap::new(); slots];
        for slot in 0..slots {
            for &node in &honest {
                let mut counts: BTreeMap<Val<V>, usize> = BTreeMap::new();
                for &sender in &all {
                    if let Some(Some(prop)) = received[slot][&node].get(&sender) {
                        *counts.entry(prop.clone()).or_insert(0) += 1;
                    }
                }
                // Prefer concrete values over "nothing" on equal counts.
                let best = counts.into_iter().max_by(|(va, ca), (vb, cb)| {
                    ca.cmp(cb).then_with(|| match (va, vb) {
                        (Some(_), None) => std::cmp::Ordering::Greater,
                        (None, Some(_)) => std::cmp::Ordering::Less,
                        (a, b) => b.cmp(a),
                    })
                });
                let mut kept = false;
                if let Some((v, c)) = best {
                    if c >= adopt_at {
                        kept = c >= quorum;
                        cur[slot].insert(node, v);
                    }
                }
                keep[slot].insert(node, kept);
            }
        }

        // Stage 3: the king's value settles everyone who lacked a quorum.
        let step = Step {
            phase,
            stage: Stage::King,
        };
        let king_recipients: Vec<NodeIndex> = all.iter().copied().filter(|&i| i != king).collect();
        let king_honest = !corrupt_set.contains(&king);
        let mut king_msgs: Vec<BTreeMap<NodeIndex, Val<V>>> = vec![BTreeMap::new(); slots];
        if king_honest {
            traffic(king, &king_recipients);
            for slot in 0..slots {
                let v = cur[slot][&king].clone();
                for &to in &king_recipients {
                    king_msgs[slot].insert(to, v.clone());
                }
            }
        } else {
            let mut spoke = Vec::new();
            for &to in &honest {
                let mut any = false;
                for slot in 0..slots {
                    if let Some(msg) = fault.send(step, slot, king, to) {
                        any = true;
                        king_msgs[slot].insert(to, msg);
                    }
                }
                if any {
                    spoke.push(to);
                }
            }
            if !spoke.is_empty() {
                traffic(king, &spoke);
            }
        }
        for slot in 0..slots {
            for &node in &honest {
                if keep[slot][&node] {
                    continue;
                }
                let from_king = if node == king {
                    cur[slot][&king].clone()
                } else {
                    king_msgs[slot].get(&node).cloned().unwrap_or(None)
                };
                cur[slot].insert(node, from_king);
            }
        }
    }
    Ok(cur)
}

/// One agreement instance; returns the common decision of the non-corrupt
/// nodes.
pub fn run_agreement<V: Clone + Eq + Ord>(
    m: u32,
    f: u32,
    inputs: &BTreeMap<NodeIndex, Val<V>>,
    corrupt_set: &BTreeSet<NodeIndex>,
    fault: &mut dyn FaultySender<V>,
) -> Result<BTreeMap<NodeIndex, Val<V>>, AgreementError> {
    let mut out = run_parallel_agreement(
        m,
        f,
        std::slice::from_ref(inputs),
        corrupt_set,
        fault,
        &mut |_, _| {},
    )?;
    Ok(out.pop().unwrap())
}

type ReceivedMatrix<V> = Vec<BTreeMap<NodeIndex, BTreeMap<NodeIndex, Option<Val<V>>>>>;

/// Full exchange where honest nodes always send their current value.
#[allow(clippy::too_many_arguments)]
fn exchange<V: Clone + Eq + Ord>(
    all: &[NodeIndex],
    honest: &[NodeIndex],
    cur: &[BTreeMap<NodeIndex, Val<V>>],
    corrupt_set: &BTreeSet<NodeIndex>,
    fault: &mut dyn FaultySender<V>,
    step: Step,
    slots: usize,
    traffic: &mut dyn FnMut(NodeIndex, &[NodeIndex]),
) -> ReceivedMatrix<V> {
    let always: Vec<BTreeMap<NodeIndex, Option<Val<V>>>> = cur
        .iter()
        .map(|m| m.iter().map(|(&n, v)| (n, Some(v.clone()))).collect())
        .collect();
    deliver(
        all,
        honest,
        &always,
        corrupt_set,
        fault,
        step,
        slots,
        traffic,
    )
}

/// Exchange where honest nodes send only when they hold a payload.
#[allow(clippy::too_many_arguments)]
fn exchange_opt<V: Clone + Eq + Ord>(
    all: &[NodeIndex],
    honest: &[NodeIndex],
    payloads: &[BTreeMap<NodeIndex, Val<V>>],
    corrupt_set: &BTreeSet<NodeIndex>,
    fault: &mut dyn FaultySender<V>,
    step: Step,
    slots: usize,
    traffic: &mut dyn FnMut(NodeIndex, &[NodeIndex]),
) -> ReceivedMatrix<V> {
    let opt: Vec<BTreeMap<NodeIndex, Option<Val<V>>>> = (0..slots)
        .map(|slot| {
            honest
                .iter()
                .map(|&n| (n, payloads[slot].get(&n).cloned().map(Some).unwrap_or(None)))
                .collect()
        })
        .collect();
    deliver(all, honest, &opt, corrupt_set, fault, step, slots, traffic)
}

#[allow(clippy::too_many_arguments)]
fn deliver<V: Clone + Eq + Ord>(
    all: &[NodeIndex],
    honest: &[NodeIndex],
    honest_payloads: &[BTreeMap<NodeIndex, Option<Val<V>>>],
    corrupt_set: &BTreeSet<NodeIndex>,
    fault: &mut dyn FaultySender<V>,
    step: Step,
    slots: usize,
    traffic: &mut dyn FnMut(NodeIndex, &[NodeIndex]),
) -> ReceivedMatrix<V> {
    let mut received: ReceivedMatrix<V> = vec![BTreeMap::new(); slots];
    for slot in 0..slots {
        for &node in honest {
            received[slot].insert(node, BTreeMap::new());
        }
    }
    for &sender in all {
        if corrupt_set.contains(&sender) {
            let mut spoke = Vec::new();
            for &to in honest {
                if to == sender {
                    continue;
                }
                let mut any = false;
                for slot in 0..slots {
                    let msg = fault.send(step, slot, sender, to);
                    any |= msg.is_some();
                    received[slot].get_mut(&to).unwrap().insert(sender, msg);
                }
                if any {
                    spoke.push(to);
                }
            }
            if !spoke.is_empty() {
                traffic(sender, &spoke);
            }
        } else {
            let recipients: Vec<NodeIndex> = all.iter().copied().filter(|&i| i != sender).collect();
            traffic(sender, &recipients);
            for slot in 0..slots {
                let payload = honest_payloads[slot].get(&sender).cloned().unwrap_or(None);
                for &to in honest {
                    received[slot]
                        .get_mut(&to)
                        .unwrap()
                        .insert(sender, payload.clone());
                }
            }
        }
    }
    received
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_faults() -> ScriptedFaults<u64> {
        ScriptedFaults::new(BTreeMap::new())
    }

    fn assert_agreement(out: &BTreeMap<NodeIndex, Val<u64>>) -> Val<u64> {
        let first = *out.values().next().unwrap();
        for v in out.values() {
            assert_eq!(v, &first, "honest decisions diverged");
        }
        first
    }

    #[test]
    fn unanimous_inputs_decide_that_value() {
        let inputs: BTreeMap<NodeIndex, Val<u64>> = (1..=4).map(|i| (i, Some(7u64))).collect();
        let out = run_agreement(4, 1, &inputs, &BTreeSet::new(), &mut no_faults()).unwrap();
        assert_eq!(assert_agreement(&out), Some(7));
    }

    #[test]
    fn fault_bound_is_enforced() {
        let inputs: BTreeMap<NodeIndex, Val<u64>> = (1..=9).map(|i| (i, Some(1u64))).collect();
        let err = run_agreement(9, 3, &inputs, &BTreeSet::new(), &mut no_faults());
        assert_eq!(err, Err(AgreementError::FaultBoundExceeded { m: 9, f: 3 }));
        let inputs4: BTreeMap<NodeIndex, Val<u64>> = (1..=4).map(|i| (i, Some(1u64))).collect();
        let err = run_agreement(4, 2, &inputs4, &BTreeSet::new(), &mut no_faults());
        assert_eq!(err, Err(AgreementError::FaultBoundExceeded { m: 4, f: 2 }));
    }

    #[test]
    fn exhaustive_m4_f1_scripts_agree_and_respect_validity() {
        // Every corrupt position, every scripted behavior, every honest
        // input combination over a small value set.
        let behaviors: Vec<fn() -> Script<u64>> = vec![
            || Script::Silent,
            || Script::Conflicting(vec![Some(90), Some(91), Some(92), None]),
            || Script::Conflicting(vec![Some(5), Some(5), None, Some(6)]),
            || Script::Rotating(vec![Some(1), None, Some(2), Some(3)]),
        ];
        let domain: [Val<u64>; 3] = [Some(0), Some(1), None];
        for corrupt in 1..=4u32 {
            let honest: Vec<NodeIndex> = (1..=4).filter(|&i| i != corrupt).collect();
            for mk in &behaviors {
                for a in domain.iter() {
                    for b in domain.iter() {
                        for c in domain.iter() {
                            let vals = [*a, *b, *c];
                            let inputs: BTreeMap<NodeIndex, Val<u64>> =
                                honest.iter().copied().zip(vals.iter().cloned()).collect();
                            let corrupt_set: BTreeSet<NodeIndex> = [corrupt].into();
                            let mut faults =
                                ScriptedFaults::new([(corrupt, mk())].into_iter().collect());
                            let out =
                                run_agreement(4, 1, &inputs, &corrupt_set, &mut faults).unwrap();
                            let decided = assert_agreement(&out);
                            if vals.iter().all(|v| v == a) {
                                assert_eq!(decided, a.clone(), "validity violated");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn randomized_m10_f3_agreement() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let mut corrupt_set = BTreeSet::new();
            while corrupt_set.len() < 3 {
                corrupt_set.insert(rng.random_range(1..=10u32));
            }
            let honest: Vec<NodeIndex> = (1..=10).filter(|i| !corrupt_set.contains(i)).collect();
            let unanimous = rng.random_bool(0.5);
            let common = rng.random_range(0..5u64);
            let inputs: BTreeMap<NodeIndex, Val<u64>> = honest
                .iter()
                .map(|&h| {
                    let v = if unanimous {
                        common
                    } else {
                        rng.random_range(0..5u64)
                    };
                    (h, Some(v))
                })
                .collect();
            let scripts: BTreeMap<NodeIndex, Script<u64>> = corrupt_set
                .iter()
                .map(|&c| {
                    let vals: Vec<Val<u64>> = (0..4)
                        .map(|_| {
                            if rng.random_bool(0.3) {
                                None
                            } else {
                                Some(rng.random_range(0..5))
                            }
                        })
                        .collect();
                    (c, Script::Rotating(vals))
                })
                .collect();
            let mut faults = ScriptedFaults::new(scripts);
            let out = run_agreement(10, 3, &inputs, &corrupt_set, &mut faults).unwrap();
            let decided = assert_agreement(&out);
            if unanimous {
                assert_eq!(decided, Some(common));
            }
        }
    }
}
