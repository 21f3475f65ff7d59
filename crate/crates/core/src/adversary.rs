//! Adversary models: an adaptive censor controlling up to `t` users and up
//! to `floor(m/3)` distributors.
//!
//! Corrupt users leak every bridge assignment they receive into the censor's
//! knowledge set; the censor may only ever block bridges it has learned this
//! way. Blocking is budgeted per round: each corrupt user performs at most
//! one blocking action per round, matching the per-round accounting that
//! each corrupt user is assigned (and can burn) one bridge per instance.
//!
//! Three blocking strategies are implemented:
//!
//! * `Prudent` forces round advances at minimum cost. It spends bridges only
//!   when its budget can sustain the pace, i.e. when it controls at least as
//!   many users as the current pool holds bridges; coverage of a pool by
//!   uniformly assigned corrupt users crosses the 60% advance threshold
//!   right around that point. When it acts, it blocks exactly the threshold
//!   count in the single instance where it knows the most unblocked
//!   bridges; otherwise it blocks nothing and saves budget.
//! * `Aggressive` blocks what it learns immediately: every corrupt user
//!   burns one of its learned unblocked bridges each round.
//! * `Stochastic(q)` has each corrupt user block one of its learned bridges
//!   with probability `q` each round.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{advance_threshold, BridgeId, UserId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AdversaryError {
    #[error("corruption budget exceeded: budget {budget}, requested total {requested}")]
    BudgetExceeded { budget: usize, requested: usize },
    #[error("at most floor(m/3) = {max} distributors may be corrupted, got {got}")]
    TooManyDistributors { max: u32, got: u32 },
}

/// Blocking strategy. `Stochastic` carries the per-bridge blocking
/// probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Prudent,
    Aggressive,
    Stochastic(f64),
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Prudent => write!(f, "prudent"),
            Strategy::Aggressive => write!(f, "aggressive"),
            Strategy::Stochastic(q) => write!(f, "stochastic:{q}"),
        }
    }
}

/// What a corrupt distributor does with its protocol obligations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistributorFault {
    /// Drops every message it should send.
    Silent,
    /// Sends uniformly random field elements instead of its shares.
    GarbageShares,
    /// Reveals different randomness values to different peers.
    EquivocateRandomness,
}

#[derive(Debug, Clone)]
pub struct Adversary {
    budget: usize,
    strategy: Strategy,
    corrupted: BTreeSet<UserId>,
    known: HashSet<BridgeId>,
    blocked: HashSet<BridgeId>,
    /// Learned, believed-unblocked bridges per instance; the prudent
    /// strategy's targeting state. Unblocked bridges are retained across
    /// pool rebuilds, so membership in the current pool is implied.
    instance_known: Vec<HashSet<BridgeId>>,
    /// Current-round assignments of corrupted users; drives the per-user
    /// blocking actions of the aggressive and stochastic strategies.
    assignments: BTreeMap<UserId, Vec<(usize, BridgeId)>>,
    /// Unique bridges of corrupted users once the fallback is engaged.
    fallback_held: BTreeMap<UserId, BridgeId>,
    corrupt_distributors: BTreeSet<u32>,
    rng: ChaCha8Rng,
}

impl Adversary {
    pub fn new(budget: usize, strategy: Strategy, rng: ChaCha8Rng) -> Adversary {
        Adversary {
            budget,
            strategy,
            corrupted: BTreeSet::new(),
            known: HashSet::new(),
            blocked: HashSet::new(),
            instance_known: Vec::new(),
            assignments: BTreeMap::new(),
            fallback_held: BTreeMap::new(),
            corrupt_distributors: BTreeSet::new(),
            rng,
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn corrupted(&self) -> &BTreeSet<UserId> {
        &self.corrupted
    }

    pub fn known_bridges(&self) -> &HashSet<BridgeId> {
        &self.known
    }

    pub fn corrupt_distributors(&self) -> &BTreeSet<u32> {
        &self.corrupt_distributors
    }

    /// Marks distributor indices as corrupted, bounded by `floor(m/3)`.
    pub fn corrupt_distributors_set(
        &mut self,
        indices: BTreeSet<u32>,
        m: u32,
    ) -> Result<(), AdversaryError> {
        let max = m / 3;
        if indices.len() as u32 > max {
            return Err(AdversaryError::TooManyDistributors {
                max,
                got: indices.len() as u32,
            });
        }
        self.corrupt_distributors = indices;
        Ok(())
    }

    /// Samples `count` targets among the not-yet-corrupted users.
    pub fn pick_targets(&mut self, population: &[UserId], count: usize) -> Vec<UserId> {
        let mut free: Vec<UserId> = population
            .iter()
            .copied()
            .filter(|u| !self.corrupted.contains(u))
            .collect();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count.min(free.len()) {
            let i = self.rng.random_range(0..free.len());
            out.push(free.swap_remove(i));
        }
        out
    }

    /// Corrupts users; their full current assignments enter the knowledge
    /// set immediately.
    pub fn corrupt_users(
        &mut self,
        new: &[UserId],
        current_assignments: impl Fn(UserId) -> Vec<(usize, BridgeId)>,
    ) -> Result<(), AdversaryError> {
        let fresh: Vec<UserId> = new
            .iter()
            .copied()
            .filter(|u| !self.corrupted.contains(u))
            .collect();
        let requested = self.corrupted.len() + fresh.len();
        if requested > self.budget {
            return Err(AdversaryError::BudgetExceeded {
                budget: self.budget,
                requested,
            });
        }
        for user in fresh {
            self.corrupted.insert(user);
            let assigned = current_assignments(user);
            self.absorb(user, &assigned);
        }
        Ok(())
    }

    /// Records a round's assignment delivery. Only corrupted users leak.
    pub fn observe_delivery(&mut self, user: UserId, assigned: &[(usize, BridgeId)]) {
        if self.corrupted.contains(&user) {
            self.absorb(user, assigned);
        }
    }

    /// Records a fallback-mode unique bridge delivery.
    pub fn observe_fallback(&mut self, user: UserId, bridge: BridgeId) {
        if self.corrupted.contains(&user) {
            self.known.insert(bridge);
            self.fallback_held.insert(user, bridge);
        }
    }

    fn absorb(&mut self, user: UserId, assigned: &[(usize, BridgeId)]) {
        let track_instances = matches!(self.strategy, Strategy::Prudent);
        for &(instance, bridge) in assigned {
            self.known.insert(bridge);
            if track_instances {
                if self.instance_known.len() <= instance {
                    self.instance_known.resize_with(instance + 1, HashSet::new);
                }
                if !self.blocked.contains(&bridge) {
                    self.instance_known[instance].insert(bridge);
                }
            }
        }
        if !track_instances {
            let slot = self.assignments.entry(user).or_default();
            slot.clear();
            slot.extend_from_slice(assigned);
        }
    }

    /// Chooses this round's blocking set. Every returned bridge was learned
    /// through a corrupted user and is not yet blocked.
    pub fn decide_blocks(&mut self, pool_size: u64, fallback: bool) -> BTreeSet<BridgeId> {
        let chosen = match self.strategy {
            Strategy::Prudent => self.prudent_blocks(pool_size, fallback),
            Strategy::Aggressive => self.unit_action_blocks(fallback, 1.0),
            Strategy::Stochastic(q) => self.unit_action_blocks(fallback, q),
        };
        for &b in &chosen {
            self.blocked.insert(b);
            for inst in &mut self.instance_known {
                inst.remove(&b);
            }
        }
        chosen
    }

    fn prudent_blocks(&mut self, pool_size: u64, fallback: bool) -> BTreeSet<BridgeId> {
        if fallback {
            // Terminal phase; no further round to force.
            return BTreeSet::new();
        }
        if (self.corrupted.len() as u64) < pool_size {
            // Sustaining the pace needs at least pool_size corrupt users;
            // below that, spending bridges cannot add rounds.
            return BTreeSet::new();
        }
        let threshold = advance_threshold(pool_size) as usize;
        let Some(best) = self
            .instance_known
            .iter()
            .max_by_key(|s| s.len())
            .filter(|s| s.len() >= threshold)
        else {
            return BTreeSet::new();
        };
        // Deterministic pick: lowest bridge ids of the best-known instance.
        let mut candidates: Vec<BridgeId> = best.iter().copied().collect();
        candidates.sort_unstable();
        candidates.into_iter().take(threshold).collect()
    }

    /// One blocking action per corrupt user: each burns one of its learned,
    /// unblocked bridges (with probability `q` per user).
    fn unit_action_blocks(&mut self, fallback: bool, q: f64) -> BTreeSet<BridgeId> {
        let mut chosen = BTreeSet::new();
        let users: Vec<UserId> = self.corrupted.iter().copied().collect();
        for user in users {
            if q < 1.0 && self.rng.random::<f64>() >= q {
                continue;
            }
            let candidates: Vec<BridgeId> = if fallback {
                self.fallback_held
                    .get(&user)
                    .copied()
                    .filter(|b| !self.blocked.contains(b) && !chosen.contains(b))
                    .into_iter()
                    .collect()
            } else {
                self.assignments
                    .get(&user)
                    .map(|a| {
                        a.iter()
                            .map(|&(_, b)| b)
                            .filter(|b| !self.blocked.contains(b) && !chosen.contains(b))
                            .collect()
                    })
                    .unwrap_or_default()
            };
            if candidates.is_empty() {
                continue;
            }
            let pick = candidates[self.rng.random_range(0..candidates.len())];
            chosen.insert(pick);
        }
        chosen
    }
}
