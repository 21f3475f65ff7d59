//! Single-distributor bridge assignment state machine.
//!
//! The session runs `L = max(1, ceil(3*log2(n)))` parallel assignment
//! instances that all share one round counter. A round distributes a pool of
//! `2^(round+4)` unblocked bridges per instance and gives every user one
//! uniformly chosen bridge from each pool. The session advances to the next
//! round only when the number of blocked bridges in some instance reaches
//! 0.6 of its pool; the shared counter means one crossing moves every
//! instance forward, which defeats attempts to stall instances one at a
//! time. Once a pool would be at least as large as the user count the
//! session falls back to handing every user a distinct unblocked bridge and
//! becomes terminal.
//!
//! Round bookkeeping starts from a sentinel blocked count of 16, so the
//! first advance check always fires and the opening distribution happens at
//! round 1 with 32 bridges per instance. The sentinel never appears in any
//! metric.
//!
//! Pools are rebuilt by retaining every unblocked bridge from the instance's
//! previous pool and topping up with fresh supply; reused bridges stay
//! within their instance.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prf::expand_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BridgeId(pub u64);

impl std::fmt::Display for UserId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "u{}", self.0)
    }
}

impl std::fmt::Display for BridgeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "b{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error("a session needs at least one user")]
    EmptyUserSet,
    #[error("user {0} is already registered")]
    DuplicateUser(UserId),
    #[error("user {0} is not registered")]
    UnknownUser(UserId),
    #[error("bridge supply exhausted: needed {needed} fresh bridges, {available} available")]
    SupplyExhausted { needed: u64, available: u64 },
}

/// Hands out fresh bridge identifiers and remembers which bridges are
/// blocked. A blocked bridge is never handed out again: identifiers are
/// issued once, in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeSupply {
    next: u64,
    capacity: Option<u64>,
    blocked: BTreeSet<BridgeId>,
}

impl BridgeSupply {
    pub fn unbounded() -> BridgeSupply {
        BridgeSupply {
            next: 0,
            capacity: None,
            blocked: BTreeSet::new(),
        }
    }

    pub fn with_capacity(capacity: u64) -> BridgeSupply {
        BridgeSupply {
            next: 0,
            capacity: Some(capacity),
            blocked: BTreeSet::new(),
        }
    }

    pub fn remaining(&self) -> Option<u64> {
        self.capacity.map(|c| c.saturating_sub(self.next))
    }

    /// Total identifiers issued so far.
    pub fn issued(&self) -> u64 {
        self.next
    }

    pub fn is_blocked(&self, id: BridgeId) -> bool {
        self.blocked.contains(&id)
    }

    pub fn blocked(&self) -> &BTreeSet<BridgeId> {
        &self.blocked
    }

    pub fn mark_blocked(&mut self, id: BridgeId) {
        debug_assert!(
            id.0 < self.next,
            "blocking an identifier that was never issued"
        );
        self.blocked.insert(id);
    }

    fn ensure(&self, needed: u64) -> Result<(), SessionError> {
        if let Some(cap) = self.capacity {
            let available = cap.saturating_sub(self.next);
            if available < needed {
                return Err(SessionError::SupplyExhausted { needed, available });
            }
        }
        Ok(())
    }

    fn fresh(&mut self, count: u64) -> Result<Vec<BridgeId>, SessionError> {
        self.ensure(count)?;
        let out = (self.next..self.next + count).map(BridgeId).collect();
        self.next += count;
        Ok(out)
    }
}

/// Where per-user assignment indices come from: a private session RNG in
/// single-distributor mode, agreed per-instance seeds expanded with a public
/// PRF when a distributor group must draw identically, or fully precomputed
/// per-(instance, user) indices for the strict one-value-per-user protocol.
pub enum AssignmentSource<'a> {
    Rng(&'a mut ChaCha8Rng),
    Shared { seeds: &'a [u64], round: u32 },
    PerUser(&'a BTreeMap<(usize, u64), u64>),
}

impl AssignmentSource<'_> {
    fn choose(&mut self, instance: usize, user: UserId, bound: u64) -> u64 {
        match self {
            AssignmentSource::Rng(rng) => rng.random_range(0..bound),
            AssignmentSource::Shared { seeds, round } => {
                let seed = seeds
                    .get(instance)
                    .unwrap_or_else(|| panic!("no shared seed for instance {instance}"));
                expand_index(*seed, *round, instance as u32, user.0, bound)
            }
            AssignmentSource::PerUser(map) => {
                let k = map
                    .get(&(instance, user.0))
                    .unwrap_or_else(|| panic!("no agreed index for instance {instance}, {user}"));
                debug_assert!(*k < bound);
                *k
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceState {
    pool: Vec<BridgeId>,
    blocked_count: u64,
    /// Sorted by user id; rebuilt wholesale each round, so pushes stay in
    /// order and lookups are binary searches.
    assignment: Vec<(UserId, u32)>,
}

impl InstanceState {
    fn empty() -> InstanceState {
        InstanceState {
            pool: Vec::new(),
            blocked_count: 0,
            assignment: Vec::new(),
        }
    }

    pub fn pool(&self) -> &[BridgeId] {
        &self.pool
    }

    pub fn blocked_count(&self) -> u64 {
        self.blocked_count
    }

    fn assigned_index(&self, user: UserId) -> Option<u32> {
        self.assignment
            .binary_search_by_key(&user, |&(u, _)| u)
            .ok()
            .map(|pos| self.assignment[pos].1)
    }

    fn set_assignment(&mut self, user: UserId, k: u32) {
        match self.assignment.binary_search_by_key(&user, |&(u, _)| u) {
            Ok(pos) => self.assignment[pos].1 = k,
            Err(pos) => self.assignment.insert(pos, (user, k)),
        }
    }

    fn remove_assignment(&mut self, user: UserId) {
        if let Ok(pos) = self.assignment.binary_search_by_key(&user, |&(u, _)| u) {
            self.assignment.remove(pos);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundPlan {
    pub round: u32,
    pub pool_size: u64,
    pub fresh_recruited: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FallbackPlan {
    pub round: u32,
    pub users_assigned: usize,
    pub fresh_recruited: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvanceOutcome {
    NoAdvance,
    Distributed(RoundPlan),
    FallbackEngaged(FallbackPlan),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthOutcome {
    NotDue,
    Grown {
        new_instances: usize,
        fresh_recruited: u64,
    },
}

/// Smallest blocked count that crosses the advance threshold for a pool of
/// `pool_size` bridges, i.e. the ceiling of `0.6 * pool_size`.
pub fn advance_threshold(pool_size: u64) -> u64 {
    (3 * pool_size).div_ceil(5)
}

fn crosses_threshold(blocked: u64, pool_size: u64) -> bool {
    // blocked >= 0.6 * pool_size, compared on exact rationals.
    5 * blocked >= 3 * pool_size
}

fn ceil_log2(x: u128) -> u32 {
    if x <= 1 {
        0
    } else {
        128 - (x - 1).leading_zeros()
    }
}

/// `max(1, ceil(3 * log2(n)))` parallel instances for `n` users.
pub fn instance_count_for(n: usize) -> usize {
    (ceil_log2((n as u128).pow(3)) as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionState {
    round: u32,
    bootstrap: bool,
    instances: Vec<InstanceState>,
    users: BTreeSet<UserId>,
    fallback: Option<BTreeMap<UserId, BridgeId>>,
    bridges_used: u64,
    growth_baseline: usize,
}

impl SessionState {
    /// Creates a session at round 0. Nothing is distributed yet; the first
    /// `advance_if_triggered` call always fires (sentinel) and performs the
    /// opening distribution at round 1.
    pub fn new(user_ids: BTreeSet<UserId>) -> Result<SessionState, SessionError> {
        if user_ids.is_empty() {
            return Err(SessionError::EmptyUserSet);
        }
        let l = instance_count_for(user_ids.len());
        Ok(SessionState {
            round: 0,
            bootstrap: true,
            instances: (0..l).map(|_| InstanceState::empty()).collect(),
            growth_baseline: user_ids.len(),
            users: user_ids,
            fallback: None,
            bridges_used: 0,
        })
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.users.iter().copied()
    }

    pub fn contains_user(&self, user: UserId) -> bool {
        self.users.contains(&user)
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    pub fn instances(&self) -> &[InstanceState] {
        &self.instances
    }

    pub fn in_fallback(&self) -> bool {
        self.fallback.is_some()
    }

    /// Unique bridges handed out so far (the sentinel is not counted).
    pub fn bridges_used(&self) -> u64 {
        self.bridges_used
    }

    /// Pool size of the current round, `2^(round+4)`.
    pub fn pool_size(&self) -> u64 {
        1u64 << (self.round + 4)
    }

    pub fn max_blocked_count(&self) -> u64 {
        self.instances
            .iter()
            .map(|i| i.blocked_count)
            .max()
            .unwrap_or(0)
    }

    /// True when some instance currently meets the advance condition.
    pub fn threshold_crossed(&self) -> bool {
        if self.fallback.is_some() {
            return false;
        }
        if self.bootstrap {
            // Sentinel: b = 16 against 0.6 * 16.
            return true;
        }
        let pool = self.pool_size();
        self.instances
            .iter()
            .any(|i| crosses_threshold(i.blocked_count, pool))
    }

    /// Runs one advance check. Increments the shared round counter and
    /// redistributes when triggered; engages the unique-bridge fallback once
    /// the per-instance pool would reach the user count.
    pub fn advance_if_triggered(
        &mut self,
        supply: &mut BridgeSupply,
        source: &mut AssignmentSource,
    ) -> Result<AdvanceOutcome, SessionError> {
        if self.fallback.is_some() || self.users.is_empty() || !self.threshold_crossed() {
            return Ok(AdvanceOutcome::NoAdvance);
        }
        self.round += 1;
        self.bootstrap = false;
        let d = self.pool_size();
        if d >= self.users.len() as u64 {
            let plan = self.engage_fallback(supply)?;
            return Ok(AdvanceOutcome::FallbackEngaged(plan));
        }
        let blocked_lookup: std::collections::HashSet<BridgeId> =
            supply.blocked().iter().copied().collect();
        let retained: Vec<Vec<BridgeId>> = self
            .instances
            .iter()
            .map(|inst| {
                inst.pool
                    .iter()
                    .copied()
                    .filter(|b| !blocked_lookup.contains(b))
                    .collect()
            })
            .collect();
        let needed: u64 = retained.iter().map(|r| d - r.len() as u64).sum();
        supply.ensure(needed)?;
        let mut fresh_total = 0;
        let users: Vec<UserId> = self.users.iter().copied().collect();
        for (idx, (inst, mut kept)) in self.instances.iter_mut().zip(retained).enumerate() {
            let need = d - kept.len() as u64;
            kept.extend(supply.fresh(need)?);
            fresh_total += need;
            inst.pool = kept;
            inst.blocked_count = 0;
            inst.assignment.clear();
            inst.assignment.reserve(users.len());
            for &user in &users {
                let k = source.choose(idx, user, d);
                inst.assignment.push((user, k as u32));
            }
        }
        self.bridges_used += fresh_total;
        Ok(AdvanceOutcome::Distributed(RoundPlan {
            round: self.round,
            pool_size: d,
            fresh_recruited: fresh_total,
        }))
    }

    fn engage_fallback(&mut self, supply: &mut BridgeSupply) -> Result<FallbackPlan, SessionError> {
        let n = self.users.len();
        let mut unique: Vec<BridgeId> = self
            .instances
            .iter()
            .flat_map(|inst| inst.pool.iter().copied())
            .filter(|&b| !supply.is_blocked(b))
            .take(n)
            .collect();
        let fresh = (n - unique.len()) as u64;
        unique.extend(supply.fresh(fresh)?);
        let map: BTreeMap<UserId, BridgeId> = self.users.iter().copied().zip(unique).collect();
        for inst in &mut self.instances {
            inst.pool.clear();
            inst.blocked_count = 0;
            inst.assignment.clear();
        }
        self.bridges_used += fresh;
        self.fallback = Some(map);
        Ok(FallbackPlan {
            round: self.round,
            users_assigned: n,
            fresh_recruited: fresh,
        })
    }

    /// Marks bridges blocked and recomputes every instance's blocked count
    /// over its current pool. In fallback mode each blocked unique bridge is
    /// replaced one-for-one with a fresh one; returns the replacement count.
    pub fn report_blocked(
        &mut self,
        supply: &mut BridgeSupply,
        bridge_ids: &BTreeSet<BridgeId>,
    ) -> Result<u64, SessionError> {
        for &id in bridge_ids {
            supply.mark_blocked(id);
        }
        if self.bootstrap {
            return Ok(0);
        }
        if let Some(map) = &mut self.fallback {
            let hit: Vec<UserId> = map
                .iter()
                .filter(|(_, &b)| supply.is_blocked(b))
                .map(|(&u, _)| u)
                .collect();
            supply.ensure(hit.len() as u64)?;
            let count = hit.len() as u64;
            for user in hit {
                let fresh = supply.fresh(1)?[0];
                map.insert(user, fresh);
            }
            self.bridges_used += count;
            return Ok(count);
        }
        let blocked_lookup: std::collections::HashSet<BridgeId> =
            supply.blocked().iter().copied().collect();
        for inst in &mut self.instances {
            inst.blocked_count = inst
                .pool
                .iter()
                .filter(|b| blocked_lookup.contains(b))
                .count() as u64;
        }
        Ok(0)
    }

    /// The bridges currently assigned to a user: one per instance, or the
    /// single unique bridge in fallback mode. Empty before the first
    /// distribution.
    pub fn assignments_for(&self, user: UserId) -> Result<Vec<BridgeId>, SessionError> {
        if !self.users.contains(&user) {
            return Err(SessionError::UnknownUser(user));
        }
        if let Some(map) = &self.fallback {
            return Ok(vec![map[&user]]);
        }
        if self.bootstrap {
            return Ok(Vec::new());
        }
        Ok(self
            .instances
            .iter()
            .filter_map(|inst| inst.assigned_index(user).map(|k| inst.pool[k as usize]))
            .collect())
    }

    /// Visits the user's current (instance, bridge) assignments without
    /// allocating. Nothing is visited before the first distribution or in
    /// fallback mode (the unique bridge is not instance-bound).
    pub fn for_each_assignment(&self, user: UserId, mut f: impl FnMut(usize, BridgeId)) {
        if self.fallback.is_some() || self.bootstrap {
            return;
        }
        for (idx, inst) in self.instances.iter().enumerate() {
            if let Some(k) = inst.assigned_index(user) {
                f(idx, inst.pool[k as usize]);
            }
        }
    }

    /// True when the user currently holds at least one unblocked bridge.
    /// Allocation-free; called per user per round by the harness.
    pub fn user_has_unblocked(&self, user: UserId, supply: &BridgeSupply) -> bool {
        if let Some(map) = &self.fallback {
            return map.get(&user).is_some_and(|&b| !supply.is_blocked(b));
        }
        if self.bootstrap {
            return false;
        }
        self.instances.iter().any(|inst| {
            inst.assigned_index(user)
                .is_some_and(|k| !supply.is_blocked(inst.pool[k as usize]))
        })
    }

    /// Adds a user mid-session: one uniform bridge from every instance's
    /// current pool (no new bridges are recruited), or a fresh unique bridge
    /// in fallback mode. Fires the doubling check afterwards.
    pub fn join_user(
        &mut self,
        user: UserId,
        supply: &mut BridgeSupply,
        source: &mut AssignmentSource,
    ) -> Result<GrowthOutcome, SessionError> {
        if self.users.contains(&user) {
            return Err(SessionError::DuplicateUser(user));
        }
        self.users.insert(user);
        if let Some(map) = &mut self.fallback {
            let fresh = supply.fresh(1)?[0];
            map.insert(user, fresh);
            self.bridges_used += 1;
            return Ok(GrowthOutcome::NotDue);
        }
        if !self.bootstrap {
            for (idx, inst) in self.instances.iter_mut().enumerate() {
                let d = inst.pool.len() as u64;
                let k = source.choose(idx, user, d);
                inst.set_assignment(user, k as u32);
            }
        }
        self.handle_growth(supply, source)
    }

    /// Doubling rule: once `n` reaches twice its value at the last growth
    /// event, add 3 instances with fresh pools of the current size and give
    /// every user one uniform bridge from each. No-op below the doubling
    /// point and in fallback mode.
    pub fn handle_growth(
        &mut self,
        supply: &mut BridgeSupply,
        source: &mut AssignmentSource,
    ) -> Result<GrowthOutcome, SessionError> {
        if self.users.len() < 2 * self.growth_baseline || self.fallback.is_some() {
            return Ok(GrowthOutcome::NotDue);
        }
        self.growth_baseline = self.users.len();
        if self.bootstrap {
            // No pools exist yet; the first distribution covers the new
            // instances along with the old ones.
            for _ in 0..3 {
                self.instances.push(InstanceState::empty());
            }
            return Ok(GrowthOutcome::Grown {
                new_instances: 3,
                fresh_recruited: 0,
            });
        }
        let d = self.pool_size();
        supply.ensure(3 * d)?;
        let users: Vec<UserId> = self.users.iter().copied().collect();
        for _ in 0..3 {
            let idx = self.instances.len();
            let pool = supply.fresh(d)?;
            let mut assignment = Vec::with_capacity(users.len());
            for &user in &users {
                let k = source.choose(idx, user, d);
                assignment.push((user, k as u32));
            }
            self.instances.push(InstanceState {
                pool,
                blocked_count: 0,
                assignment,
            });
        }
        self.bridges_used += 3 * d;
        Ok(GrowthOutcome::Grown {
            new_instances: 3,
            fresh_recruited: 3 * d,
        })
    }

    /// Removes a user. Nothing is redistributed; only `n` changes.
    pub fn leave_user(&mut self, user: UserId) -> Result<(), SessionError> {
        if !self.users.remove(&user) {
            return Err(SessionError::UnknownUser(user));
        }
        for inst in &mut self.instances {
            inst.remove_assignment(user);
        }
        if let Some(map) = &mut self.fallback {
            map.remove(&user);
        }
        Ok(())
    }

    /// JSON-serializable checkpoint of the distribution state.
    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            round: self.round,
            instances: self
                .instances
                .iter()
                .map(|inst| InstanceSnapshot {
                    pool: inst.pool.iter().map(|b| b.0).collect(),
                    blocked_count: inst.blocked_count,
                    assignment: inst.assignment.iter().map(|&(u, k)| (u.0, k)).collect(),
                })
                .collect(),
            users: self.users.iter().map(|u| u.0).collect(),
            metrics: SnapshotMetrics {
                bridges_used: self.bridges_used,
                fallback: self.fallback.is_some(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub round: u32,
    pub instances: Vec<InstanceSnapshot>,
    pub users: Vec<u64>,
    pub metrics: SnapshotMetrics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSnapshot {
    pub pool: Vec<u64>,
    pub blocked_count: u64,
    pub assignment: Vec<(u64, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub bridges_used: u64,
    pub fallback: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn users(n: u64) -> BTreeSet<UserId> {
        (0..n).map(UserId).collect()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn instance_count_formula() {
        assert_eq!(instance_count_for(1024), 30);
        assert_eq!(instance_count_for(65536), 48);
        assert_eq!(instance_count_for(256), 24);
        assert_eq!(instance_count_for(1000), 30);
        assert_eq!(instance_count_for(1), 1);
        assert_eq!(instance_count_for(2), 3);
    }

    #[test]
    fn threshold_arithmetic() {
        assert_eq!(advance_threshold(16), 10);
        assert_eq!(advance_threshold(32), 20);
        assert_eq!(advance_threshold(64), 39);
        assert_eq!(advance_threshold(128), 77);
        assert_eq!(advance_threshold(256), 154);
        assert_eq!(advance_threshold(512), 308);
        assert_eq!(advance_threshold(1024), 615);
        assert!(crosses_threshold(20, 32));
        assert!(!crosses_threshold(19, 32));
        assert!(crosses_threshold(16, 16));
    }

    #[test]
    fn new_session_shape() {
        let s = SessionState::new(users(1024)).unwrap();
        assert_eq!(s.instance_count(), 30);
        assert_eq!(s.round(), 0);
        let s1 = SessionState::new(users(1)).unwrap();
        assert_eq!(s1.instance_count(), 1);
        assert_eq!(
            SessionState::new(BTreeSet::new()),
            Err(SessionError::EmptyUserSet)
        );
    }

    #[test]
    fn sentinel_fires_first_distribution_at_round_one() {
        let mut s = SessionState::new(users(1024)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(1);
        let out = s
            .advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        match out {
            AdvanceOutcome::Distributed(plan) => {
                assert_eq!(plan.round, 1);
                assert_eq!(plan.pool_size, 32);
                assert_eq!(plan.fresh_recruited, 32 * 30);
            }
            other => panic!("expected distribution, got {other:?}"),
        }
        assert_eq!(s.bridges_used(), 960);
        for u in 0..1024 {
            let a = s.assignments_for(UserId(u)).unwrap();
            assert_eq!(a.len(), 30);
        }
    }

    #[test]
    fn no_advance_below_threshold_and_advance_at_it() {
        let mut s = SessionState::new(users(1024)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(2);
        s.advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        // Block 19 of instance 0's 32 bridges: 19 < 0.6*32 = 19.2.
        let pool: Vec<BridgeId> = s.instances()[0].pool().to_vec();
        let nineteen: BTreeSet<BridgeId> = pool.iter().copied().take(19).collect();
        s.report_blocked(&mut supply, &nineteen).unwrap();
        assert_eq!(s.max_blocked_count(), 19);
        assert!(!s.threshold_crossed());
        let out = s
            .advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        assert_eq!(out, AdvanceOutcome::NoAdvance);
        // One more blocked bridge reaches 20 >= 19.2 and the round advances.
        let twenty: BTreeSet<BridgeId> = pool.iter().copied().take(20).collect();
        s.report_blocked(&mut supply, &twenty).unwrap();
        assert!(s.threshold_crossed());
        let out = s
            .advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        match out {
            AdvanceOutcome::Distributed(plan) => {
                assert_eq!(plan.round, 2);
                assert_eq!(plan.pool_size, 64);
                // Targeted instance retains 12 unblocked, the other 29 keep
                // their full 32: fresh = 29*32 + 52.
                assert_eq!(plan.fresh_recruited, 29 * 32 + 52);
            }
            other => panic!("expected distribution, got {other:?}"),
        }
        // Rebuilt pools contain no blocked bridge.
        for inst in s.instances() {
            assert_eq!(inst.pool().len(), 64);
            assert!(inst.pool().iter().all(|&b| !supply.is_blocked(b)));
            assert_eq!(inst.blocked_count(), 0);
        }
    }

    #[test]
    fn fallback_when_pool_reaches_user_count() {
        // n=24: the opening pool of 32 already covers every user.
        let mut s = SessionState::new(users(24)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(3);
        let out = s
            .advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        match out {
            AdvanceOutcome::FallbackEngaged(plan) => {
                assert_eq!(plan.round, 1);
                assert_eq!(plan.users_assigned, 24);
                assert_eq!(plan.fresh_recruited, 24);
            }
            other => panic!("expected fallback, got {other:?}"),
        }
        assert!(s.in_fallback());
        let mut seen = BTreeSet::new();
        for u in 0..24 {
            let a = s.assignments_for(UserId(u)).unwrap();
            assert_eq!(a.len(), 1);
            assert!(seen.insert(a[0]), "unique bridges must not repeat");
        }
        // Terminal: further advance checks are inert.
        let out = s
            .advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        assert_eq!(out, AdvanceOutcome::NoAdvance);
    }

    #[test]
    fn fallback_replaces_blocked_unique_bridges() {
        let mut s = SessionState::new(users(16)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(4);
        s.advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        assert!(s.in_fallback());
        let victim = s.assignments_for(UserId(3)).unwrap()[0];
        let used_before = s.bridges_used();
        let replaced = s
            .report_blocked(&mut supply, &BTreeSet::from([victim]))
            .unwrap();
        assert_eq!(replaced, 1);
        let fresh = s.assignments_for(UserId(3)).unwrap()[0];
        assert_ne!(fresh, victim);
        assert!(!supply.is_blocked(fresh));
        assert_eq!(s.bridges_used(), used_before + 1);
    }

    #[test]
    fn report_blocked_empty_set_is_a_noop() {
        let mut s = SessionState::new(users(100)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(5);
        s.advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        let before = s.clone();
        s.report_blocked(&mut supply, &BTreeSet::new()).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn blocked_count_saturates_at_pool_size() {
        let mut s = SessionState::new(users(100)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(6);
        s.advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        let pool: BTreeSet<BridgeId> = s.instances()[0].pool().iter().copied().collect();
        s.report_blocked(&mut supply, &pool).unwrap();
        assert_eq!(s.instances()[0].blocked_count(), 32);
    }

    #[test]
    fn shared_bridge_counts_in_both_instances() {
        // A bridge sitting in two pools bumps both counters when blocked.
        let shared = BridgeId(0);
        let mut supply = BridgeSupply::unbounded();
        let ids = supply.fresh(3).unwrap();
        let mk = |pool: Vec<BridgeId>| InstanceState {
            pool,
            blocked_count: 0,
            assignment: Vec::new(),
        };
        let mut s = SessionState {
            round: 1,
            bootstrap: false,
            instances: vec![mk(vec![ids[0], ids[1]]), mk(vec![ids[2], ids[0]])],
            users: users(2),
            fallback: None,
            bridges_used: 3,
            growth_baseline: 2,
        };
        s.report_blocked(&mut supply, &BTreeSet::from([shared]))
            .unwrap();
        assert_eq!(s.instances()[0].blocked_count(), 1);
        assert_eq!(s.instances()[1].blocked_count(), 1);
    }

    #[test]
    fn join_draws_from_existing_pools_only() {
        let mut s = SessionState::new(users(200)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(7);
        s.advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        let used = s.bridges_used();
        let issued = supply.issued();
        s.join_user(UserId(999), &mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        assert_eq!(s.bridges_used(), used, "join must not recruit");
        assert_eq!(supply.issued(), issued);
        let a = s.assignments_for(UserId(999)).unwrap();
        assert_eq!(a.len(), s.instance_count());
        let err = s.join_user(UserId(999), &mut supply, &mut AssignmentSource::Rng(&mut r));
        assert_eq!(err, Err(SessionError::DuplicateUser(UserId(999))));
    }

    #[test]
    fn doubling_adds_three_instances_and_recruits() {
        let mut s = SessionState::new(users(200)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(8);
        s.advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        let l0 = s.instance_count();
        let d = s.pool_size();
        let mut grew = false;
        for u in 200..400u64 {
            let out = s
                .join_user(UserId(u), &mut supply, &mut AssignmentSource::Rng(&mut r))
                .unwrap();
            if let GrowthOutcome::Grown {
                new_instances,
                fresh_recruited,
            } = out
            {
                assert_eq!(new_instances, 3);
                assert_eq!(fresh_recruited, 3 * d);
                grew = true;
                assert_eq!(s.user_count(), 400);
            }
        }
        assert!(grew);
        assert_eq!(s.instance_count(), l0 + 3);
        // Every user now holds one bridge in each new instance as well.
        let a = s.assignments_for(UserId(0)).unwrap();
        assert_eq!(a.len(), l0 + 3);
        // Below the next doubling point nothing happens.
        let out = s
            .join_user(
                UserId(10_000),
                &mut supply,
                &mut AssignmentSource::Rng(&mut r),
            )
            .unwrap();
        assert_eq!(out, GrowthOutcome::NotDue);
    }

    #[test]
    fn fallback_join_gets_fresh_unique_bridge_and_no_growth() {
        let mut s = SessionState::new(users(20)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(9);
        s.advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        assert!(s.in_fallback());
        let l = s.instance_count();
        for u in 20..60u64 {
            let out = s
                .join_user(UserId(u), &mut supply, &mut AssignmentSource::Rng(&mut r))
                .unwrap();
            assert_eq!(out, GrowthOutcome::NotDue);
        }
        assert_eq!(s.instance_count(), l, "no instance growth after fallback");
        let mut seen = BTreeSet::new();
        for u in 0..60u64 {
            let a = s.assignments_for(UserId(u)).unwrap();
            assert_eq!(a.len(), 1);
            assert!(seen.insert(a[0]));
        }
    }

    #[test]
    fn leave_then_rejoin_is_a_fresh_join() {
        let mut s = SessionState::new(users(100)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(10);
        s.advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        s.leave_user(UserId(5)).unwrap();
        assert_eq!(s.user_count(), 99);
        assert_eq!(
            s.assignments_for(UserId(5)),
            Err(SessionError::UnknownUser(UserId(5)))
        );
        assert_eq!(
            s.leave_user(UserId(5)),
            Err(SessionError::UnknownUser(UserId(5)))
        );
        s.join_user(UserId(5), &mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        assert_eq!(
            s.assignments_for(UserId(5)).unwrap().len(),
            s.instance_count()
        );
    }

    #[test]
    fn all_users_may_leave() {
        let mut s = SessionState::new(users(2)).unwrap();
        s.leave_user(UserId(0)).unwrap();
        s.leave_user(UserId(1)).unwrap();
        assert_eq!(s.user_count(), 0);
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(11);
        let out = s
            .advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        assert_eq!(out, AdvanceOutcome::NoAdvance);
    }

    #[test]
    fn supply_exhaustion_is_reported() {
        let mut s = SessionState::new(users(1024)).unwrap();
        let mut supply = BridgeSupply::with_capacity(100);
        let mut r = rng(12);
        let err = s.advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r));
        assert_eq!(
            err,
            Err(SessionError::SupplyExhausted {
                needed: 960,
                available: 100
            })
        );
    }

    #[test]
    fn snapshot_roundtrips_through_json() {
        let mut s = SessionState::new(users(50)).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut r = rng(13);
        s.advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut r))
            .unwrap();
        let snap = s.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back: SessionSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(snap, back);
        assert_eq!(back.round, 1);
        assert_eq!(back.users.len(), 50);
    }

    #[test]
    fn shared_source_draws_identically() {
        let seeds = vec![7u64; 40];
        let mk = || {
            let mut s = SessionState::new(users(100)).unwrap();
            let mut supply = BridgeSupply::unbounded();
            let mut src = AssignmentSource::Shared {
                seeds: &seeds,
                round: 1,
            };
            s.advance_if_triggered(&mut supply, &mut src).unwrap();
            s
        };
        assert_eq!(mk(), mk());
    }
}
