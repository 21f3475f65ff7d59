//! Deterministic synchronous simulation harness.
//!
//! A trial wires one censor model against the distribution machinery and
//! steps rounds: (1) distribution/advance, (2) delivery to users, (3)
//! adversary corruption and blocking decisions, (4) blocked-bridge
//! reporting, (5) metrics snapshot. The trial ends when no instance has
//! crossed its advance threshold and every honest user holds an unblocked
//! bridge, when the unique-bridge fallback engages, or at the safety cap.
//!
//! Every random choice flows from the config seed through labeled
//! sub-seeds, so a (config, seed) pair reproduces its output bit for bit in
//! all three modes.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{Adversary, AdversaryError, DistributorFault, Strategy};
use crate::distributors::drg::{run_drg_batch, DrgError};
use crate::distributors::{user_reconstruct, Cluster, ClusterError, DeliveryBundle};
use crate::field::{FieldError, PrimeField, DEFAULT_MODULUS};
use crate::metrics::{MetricsSeries, RoundMetrics, SweepTable, TerminalMetrics};
use crate::net::{Actor, MessageLog};
use crate::prf::{derive_seed, map_to_range};
use crate::session::{
    AdvanceOutcome, AssignmentSource, BridgeId, BridgeSupply, SessionError, SessionState, UserId,
};
use crate::shamir::{pack_endpoint, SecretId, SharingPolicy};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Randomness(#[from] DrgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Basic,
    Leader,
    Decentralized,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Basic => write!(f, "basic"),
            Mode::Leader => write!(f, "leader"),
            Mode::Decentralized => write!(f, "decentralized"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChurnAction {
    Join(u64),
    Leave(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub round: u32,
    pub action: ChurnAction,
}

/// The number of rounds the minimum-cost censor needs: with an opening pool
/// of 32 doubling each round, `ceil(log2(ceil((t+1)/32))) + 1`.
pub fn adaptive_round_bound(t: usize) -> u32 {
    let c = (t as u64 + 1).div_ceil(32);
    let log = if c <= 1 {
        0
    } else {
        64 - (c - 1).leading_zeros()
    };
    log + 1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: Mode,
    /// Initial user count.
    pub n: usize,
    /// Adversary budget (corrupt users).
    pub t: usize,
    /// Distributor count; 1 in basic mode.
    pub m: u32,
    pub strategy: Strategy,
    pub seed: u64,
    pub trials: u32,
    /// Safety cap; defaults to twice the adaptive round bound plus four.
    pub max_rounds: Option<u32>,
    /// Field modulus; defaults to 2^61 - 1.
    pub modulus: u64,
    pub churn: Vec<ChurnEvent>,
    /// Corrupted distributors (highest indices first, never the leader).
    pub corrupt_distributors: u32,
    pub distributor_fault: DistributorFault,
    /// Decentralized only: one agreed value per (user, instance) instead of
    /// one per instance.
    pub strict_per_user_randomness: bool,
    /// Corruption schedule as (round, count) entries; empty means the whole
    /// budget is corrupted at round 1.
    pub corruption_schedule: Vec<(u32, usize)>,
    /// Bridge supply cap, unbounded when absent.
    pub supply_capacity: Option<u64>,
}

impl SimConfig {
    pub fn basic(n: usize, t: usize, strategy: Strategy, seed: u64) -> SimConfig {
        SimConfig {
            mode: Mode::Basic,
            n,
            t,
            m: 1,
            strategy,
            seed,
            trials: 1,
            max_rounds: None,
            modulus: DEFAULT_MODULUS,
            churn: Vec::new(),
            corrupt_distributors: 0,
            distributor_fault: DistributorFault::GarbageShares,
            strict_per_user_randomness: false,
            corruption_schedule: Vec::new(),
            supply_capacity: None,
        }
    }

    pub fn multi(
        mode: Mode,
        n: usize,
        t: usize,
        m: u32,
        strategy: Strategy,
        seed: u64,
    ) -> SimConfig {
        SimConfig {
            mode,
            m,
            ..SimConfig::basic(n, t, strategy, seed)
        }
    }

    pub fn effective_max_rounds(&self) -> u32 {
        self.max_rounds
            .unwrap_or(2 * adaptive_round_bound(self.t) + 4)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::ConfigInvalid(msg));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.t >= self.n {
            return fail(format!("t must be below n, got t={} n={}", self.t, self.n));
        }
        match self.mode {
            Mode::Basic => {
                if self.m != 1 {
                    return fail(format!("basic mode runs one distributor, got m={}", self.m));
                }
            }
            Mode::Leader => {
                if self.m < 2 {
                    return fail(format!("leader mode needs m >= 2, got m={}", self.m));
                }
            }
            Mode::Decentralized => {
                if self.m < 4 {
                    return fail(format!("decentralized mode needs m >= 4, got m={}", self.m));
                }
            }
        }
        if let Strategy::Stochastic(q) = self.strategy {
            if !(0.0..=1.0).contains(&q) {
                return fail(format!("stochastic probability must be in [0,1], got {q}"));
            }
        }
        if self.corrupt_distributors > self.m / 3 {
            return fail(format!(
                "at most floor(m/3) = {} corrupt distributors, got {}",
                self.m / 3,
                self.corrupt_distributors
            ));
        }
        if self.strict_per_user_randomness {
            if self.mode != Mode::Decentralized {
                return fail("per-user randomness only applies to decentralized mode".into());
            }
            if !self.churn.is_empty() {
                return fail("per-user randomness does not support churn schedules".into());
            }
        }
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        let scheduled: usize = self.corruption_schedule.iter().map(|&(_, c)| c).sum();
        if scheduled > self.t {
            return fail(format!(
                "corruption schedule exceeds budget: {} scheduled, t={}",
                scheduled, self.t
            ));
        }
        PrimeField::new(self.modulus)?;
        Ok(())
    }

    fn corrupt_distributor_indices(&self) -> BTreeSet<u32> {
        // Highest indices; index 1 (the leader) is never picked here.
        (1..=self.m)
            .rev()
            .take(self.corrupt_distributors as usize)
            .collect()
    }
}

/// Deterministic synthetic endpoint for a registered bridge pseudonym.
fn bridge_address(field: &PrimeField, id: SecretId) -> crate::field::FieldElement {
    let ip = [10u8, (id >> 16) as u8, (id >> 8) as u8, id as u8];
    field.element(pack_endpoint(ip, 443))
}

struct MultiState {
    cluster: Cluster,
    policy: SharingPolicy,
    /// Registered plaintext addresses by pseudonym, held by the simulator in
    /// the role of the bridge hosts themselves.
    directory: Vec<crate::field::FieldElement>,
    dealer_rng: ChaCha8Rng,
    last_seeds: Vec<u64>,
}

/// Snapshot handed to a trial observer after each round's metrics.
pub struct RoundObservation<'a> {
    pub round: u32,
    pub session: &'a SessionState,
    pub cluster: Option<&'a Cluster>,
    /// Registered plaintext addresses by pseudonym (multi modes only).
    pub addresses: &'a [crate::field::FieldElement],
}

/// Runs one seeded trial to completion.
pub fn run_trial(config: &SimConfig) -> Result<MetricsSeries, SimError> {
    run_trial_observed(config, &mut |_| {})
}

/// As [`run_trial`], invoking `observer` once per simulated round.
pub fn run_trial_observed(
    config: &SimConfig,
    observer: &mut dyn FnMut(RoundObservation<'_>),
) -> Result<MetricsSeries, SimError> {
    config.validate()?;
    let field = PrimeField::new(config.modulus)?;
    let master = config.seed;
    let mut session_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, "session", 0));
    let adv_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, "adversary", 0));
    let mut supply = match config.supply_capacity {
        Some(cap) => BridgeSupply::with_capacity(cap),
        None => BridgeSupply::unbounded(),
    };
    let users: BTreeSet<UserId> = (0..config.n as u64).map(UserId).collect();
    let mut session = SessionState::new(users)?;
    let mut adversary = Adversary::new(config.t, config.strategy, adv_rng);
    let mut log = MessageLog::new();

    let mut multi = match config.mode {
        Mode::Basic => None,
        Mode::Leader | Mode::Decentralized => {
            let policy = SharingPolicy::with_default_tau(config.m)
                .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
            let corrupt = config.corrupt_distributor_indices();
            adversary.corrupt_distributors_set(corrupt.clone(), config.m)?;
            let faults: BTreeMap<u32, DistributorFault> = corrupt
                .into_iter()
                .map(|i| (i, config.distributor_fault))
                .collect();
            let node_rngs: Vec<ChaCha8Rng> = (1..=config.m)
                .map(|j| ChaCha8Rng::seed_from_u64(derive_seed(master, "dist-node", j as u64)))
                .collect();
            let cluster = Cluster::new(
                policy,
                field,
                config.mode == Mode::Leader,
                faults,
                node_rngs,
            )?;
            Some(MultiState {
                cluster,
                policy,
                directory: Vec::new(),
                dealer_rng: ChaCha8Rng::seed_from_u64(derive_seed(master, "bridge-dealer", 0)),
                last_seeds: Vec::new(),
            })
        }
    };

    let schedule: Vec<(u32, usize)> = if config.corruption_schedule.is_empty() {
        vec![(1, config.t)]
    } else {
        config.corruption_schedule.clone()
    };

    let max_rounds = config.effective_max_rounds();
    let mut rounds: Vec<RoundMetrics> = Vec::new();
    let mut success = false;

    for iteration in 1..=max_rounds {
        // Scheduled churn lands before the round's distribution.
        for ev in config.churn.iter().filter(|e| e.round == iteration) {
            match ev.action {
                ChurnAction::Join(u) => {
                    let mut source = match &multi {
                        None => AssignmentSource::Rng(&mut session_rng),
                        Some(ms) => AssignmentSource::Shared {
                            seeds: &ms.last_seeds,
                            round: session.round(),
                        },
                    };
                    session.join_user(UserId(u), &mut supply, &mut source)?;
                }
                ChurnAction::Leave(u) => session.leave_user(UserId(u))?,
            }
        }

        // Phase 1: distribution / advance.
        match &mut multi {
            None => {
                session.advance_if_triggered(
                    &mut supply,
                    &mut AssignmentSource::Rng(&mut session_rng),
                )?;
            }
            Some(ms) => {
                advance_multi(
                    config,
                    &field,
                    &mut session,
                    &mut supply,
                    ms,
                    &mut session_rng,
                    &mut log,
                )?;
            }
        }
        if let Some(ms) = &mut multi {
            // Register any freshly recruited pseudonyms: each new bridge
            // deals one share to every distributor.
            while ms.cluster.registered() < supply.issued() {
                let id = ms.cluster.registered();
                let addr = bridge_address(&field, id);
                ms.directory.push(addr);
                ms.cluster
                    .register_bridge(addr, &mut ms.dealer_rng, &mut log);
            }
        }

        // Phase 2: delivery. Every user gets one bundle per distributor (a
        // single message in basic mode); corrupted users leak what they got.
        let user_list: Vec<UserId> = session.users().collect();
        let mut reconstruct_ok: BTreeMap<UserId, BTreeSet<BridgeId>> = BTreeMap::new();
        let mut scratch: Vec<(usize, BridgeId)> = Vec::new();
        match &mut multi {
            None => {
                for &user in &user_list {
                    log.record(Actor::Distributor(1), Actor::User(user.0));
                    observe_user(&session, &mut adversary, user, &mut scratch);
                }
            }
            Some(ms) => {
                let table: BTreeMap<UserId, Vec<SecretId>> = user_list
                    .iter()
                    .map(|&u| {
                        let ids = session
                            .assignments_for(u)
                            .map(|v| v.into_iter().map(|b| b.0).collect::<Vec<_>>())
                            .unwrap_or_default();
                        (u, ids)
                    })
                    .collect();
                if config.mode == Mode::Leader {
                    ms.cluster.leader_broadcast_assignments(&table, &mut log);
                } else {
                    ms.cluster.install_assignments(&table);
                }
                let inboxes = ms.cluster.deliver_round(&table, &mut log);
                for &user in &user_list {
                    observe_user(&session, &mut adversary, user, &mut scratch);
                    let empty: Vec<DeliveryBundle> = Vec::new();
                    let bundles = inboxes.get(&user).unwrap_or(&empty);
                    let decoded = user_reconstruct(&field, &ms.policy, bundles);
                    let ok: BTreeSet<BridgeId> = decoded
                        .into_iter()
                        .filter_map(|(id, res)| match res {
                            Ok(addr) if ms.directory.get(id as usize) == Some(&addr) => {
                                Some(BridgeId(id))
                            }
                            _ => None,
                        })
                        .collect();
                    reconstruct_ok.insert(user, ok);
                }
            }
        }

        // Phase 3: adversary corruption and blocking.
        for &(when, count) in &schedule {
            if when == iteration && count > 0 {
                let targets = adversary.pick_targets(&user_list, count);
                adversary.corrupt_users(&targets, |u| {
                    if session.in_fallback() {
                        // Unique bridges are not instance-bound; they are
                        // recorded through the fallback observation below.
                        return Vec::new();
                    }
                    session
                        .assignments_for(u)
                        .map(|v| v.into_iter().enumerate().collect())
                        .unwrap_or_default()
                })?;
                if session.in_fallback() {
                    for &u in &targets {
                        if let Ok(a) = session.assignments_for(u) {
                            if let Some(&b) = a.first() {
                                adversary.observe_fallback(u, b);
                            }
                        }
                    }
                }
            }
        }
        let blocks = adversary.decide_blocks(session.pool_size(), session.in_fallback());

        // Phase 4: the distributor learns of the blocks.
        session.report_blocked(&mut supply, &blocks)?;

        // Phase 5: metrics snapshot. One usability pass over the users.
        let corrupted = adversary.corrupted();
        let mut thirsty = 0u64;
        let mut honest_ok = true;
        for &user in &user_list {
            let usable = match &multi {
                None => session.user_has_unblocked(user, &supply),
                Some(_) => reconstruct_ok
                    .get(&user)
                    .map(|ok| ok.iter().any(|&b| !supply.is_blocked(b)))
                    .unwrap_or(false),
            };
            if !usable {
                thirsty += 1;
                if !corrupted.contains(&user) {
                    honest_ok = false;
                }
            }
        }
        let traffic = log.finish_round(user_list.iter().map(|u| u.0), 1..=config.m);
        rounds.push(RoundMetrics {
            round: session.round(),
            thirsty,
            distributed: if session.in_fallback() {
                session.user_count() as u64
            } else {
                session.pool_size()
            },
            blocked: session.max_blocked_count(),
            used: session.bridges_used(),
            msgs_user: traffic.max_user_received,
            msgs_user_min: traffic.min_user_received,
            msgs_dist: traffic.max_distributor_total,
        });
        observer(RoundObservation {
            round: session.round(),
            session: &session,
            cluster: multi.as_ref().map(|ms| &ms.cluster),
            addresses: multi
                .as_ref()
                .map(|ms| ms.directory.as_slice())
                .unwrap_or(&[]),
        });

        if session.in_fallback() {
            success = honest_ok;
            break;
        }
        if !session.threshold_crossed() && honest_ok {
            success = true;
            break;
        }
    }

    Ok(MetricsSeries {
        rounds,
        terminal: TerminalMetrics {
            latency_rounds: session.round(),
            success,
            bridges_used: session.bridges_used(),
        },
    })
}

fn observe_user(
    session: &SessionState,
    adversary: &mut Adversary,
    user: UserId,
    scratch: &mut Vec<(usize, BridgeId)>,
) {
    if !adversary.corrupted().contains(&user) {
        return;
    }
    if session.in_fallback() {
        if let Ok(assigned) = session.assignments_for(user) {
            if let Some(&b) = assigned.first() {
                adversary.observe_fallback(user, b);
            }
        }
    } else {
        scratch.clear();
        session.for_each_assignment(user, |i, b| scratch.push((i, b)));
        adversary.observe_delivery(user, scratch);
    }
}

/// Decentralized and leader-mode advance. The leader draws privately; the
/// decentralized group first agrees on fresh randomness for every instance
/// (or every (instance, user) slot in strict mode) and every honest replica
/// expands it into the identical assignment table.
fn advance_multi(
    config: &SimConfig,
    field: &PrimeField,
    session: &mut SessionState,
    supply: &mut BridgeSupply,
    ms: &mut MultiState,
    leader_rng: &mut ChaCha8Rng,
    log: &mut MessageLog,
) -> Result<AdvanceOutcome, SimError> {
    if config.mode == Mode::Leader {
        return Ok(session.advance_if_triggered(supply, &mut AssignmentSource::Rng(leader_rng))?);
    }
    if !session.threshold_crossed() {
        return Ok(AdvanceOutcome::NoAdvance);
    }
    let next_pool = 1u64 << (session.round() + 5);
    if next_pool >= session.user_count() as u64 {
        // Unique-bridge fallback needs no randomness; the assignment is the
        // deterministic pool order at every replica.
        return Ok(session.advance_if_triggered(
            supply,
            &mut AssignmentSource::Shared {
                seeds: &[],
                round: session.round() + 1,
            },
        )?);
    }
    let instances = session.instance_count();
    let m = config.m;
    let f = ms.cluster.f();
    let behaviors = ms.cluster.drg_behaviors();
    let mut traffic = |from: u32, to: &[u32]| {
        let recipients: Vec<Actor> = to.iter().map(|&i| Actor::Distributor(i)).collect();
        log.record_broadcast(Actor::Distributor(from), recipients);
    };
    if config.strict_per_user_randomness {
        let users: Vec<UserId> = session.users().collect();
        let slots = instances * users.len();
        let reject = config.modulus < (1 << 32);
        for _ in 0..crate::distributors::drg::RESTART_CAP {
            let report = run_drg_batch(
                field,
                m,
                f,
                slots,
                ms.cluster.node_rngs_mut(),
                &behaviors,
                &mut traffic,
            );
            let values = report.outcome?;
            let mut map: BTreeMap<(usize, u64), u64> = BTreeMap::new();
            let mut rejected = false;
            for (i, v) in values.iter().enumerate() {
                let inst = i / users.len();
                let user = users[i % users.len()];
                match map_to_range(v.value(), config.modulus, next_pool, reject) {
                    Some(k) => {
                        map.insert((inst, user.0), k);
                    }
                    None => {
                        rejected = true;
                        break;
                    }
                }
            }
            if rejected {
                continue;
            }
            return Ok(session.advance_if_triggered(supply, &mut AssignmentSource::PerUser(&map))?);
        }
        return Err(SimError::Randomness(DrgError::Stalled {
            attempts: crate::distributors::drg::RESTART_CAP,
        }));
    }
    let report = run_drg_batch(
        field,
        m,
        f,
        instances,
        ms.cluster.node_rngs_mut(),
        &behaviors,
        &mut traffic,
    );
    let seeds: Vec<u64> = report.outcome?.iter().map(|v| v.value()).collect();
    let round = session.round() + 1;
    let outcome = session.advance_if_triggered(
        supply,
        &mut AssignmentSource::Shared {
            seeds: &seeds,
            round,
        },
    )?;
    ms.last_seeds = seeds;
    Ok(outcome)
}

/// Aggregates every config over its trial count, deriving one sub-seed per
/// trial. Row parameters are the configs' adversary budgets.
pub fn run_experiment(configs: &[SimConfig]) -> Result<SweepTable, SimError> {
    let mut table = SweepTable::default();
    for config in configs {
        let trials = run_config_trials(config)?;
        table
            .rows
            .push(SweepTable::aggregate(config.t as u64, &trials));
    }
    Ok(table)
}

/// Runs all trials of one config, seeds derived per trial index.
pub fn run_config_trials(config: &SimConfig) -> Result<Vec<MetricsSeries>, SimError> {
    let mut out = Vec::with_capacity(config.trials as usize);
    for k in 0..config.trials {
        let mut c = config.clone();
        c.seed = derive_seed(config.seed, "trial", k as u64);
        out.push(run_trial(&c)?);
    }
    Ok(out)
}

/// Budget sweep helper: one row per `t` value.
pub fn run_sweep(base: &SimConfig, t_values: &[usize]) -> Result<SweepTable, SimError> {
    let configs: Vec<SimConfig> = t_values
        .iter()
        .map(|&t| {
            let mut c = base.clone();
            c.t = t;
            c
        })
        .collect();
    run_experiment(&configs)
}
