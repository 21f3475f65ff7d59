//! Protocol-level invariants that cut across modules: load balancing of the
//! uniform assignment, end-to-end runs of the multi-distributor modes,
//! replica consistency, and the large-n configuration.

mod common;

use std::collections::BTreeSet;

use bridgedist::adversary::{DistributorFault, Strategy};
use bridgedist::prf::derive_seed;
use bridgedist::session::{AdvanceOutcome, AssignmentSource, BridgeSupply, SessionState, UserId};
use bridgedist::sim::{run_trial, run_trial_observed, ChurnAction, ChurnEvent, Mode, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Balls-into-bins shape of one distribution round at n=4096: with z =
/// ln n / ln ln n, the max per-bridge load stays below e*mu*z and the min
/// above mu/(e*z), violated in at most a 2/n fraction of seeds.
#[test]
fn load_balancing_poisson_bounds() {
    let n = 4096usize;
    let z = (n as f64).ln() / (n as f64).ln().ln();
    let seeds = 1000u64;
    let allowed_violations = ((seeds as f64) * 2.0 / n as f64).ceil() as u64;
    let mut violations = 0u64;
    for seed in 0..seeds {
        let users: BTreeSet<UserId> = (0..n as u64).map(UserId).collect();
        let mut session = SessionState::new(users).unwrap();
        let mut supply = BridgeSupply::unbounded();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(2024, "load", seed));
        let out = session
            .advance_if_triggered(&mut supply, &mut AssignmentSource::Rng(&mut rng))
            .unwrap();
        let d = match out {
            AdvanceOutcome::Distributed(plan) => plan.pool_size,
            other => panic!("expected a distribution, got {other:?}"),
        };
        let mu = n as f64 / d as f64;
        let max_bound = std::f64::consts::E * mu * z;
        let min_bound = mu / (std::f64::consts::E * z);
        let snap = session.snapshot();
        let mut this_seed_violated = false;
        for inst in &snap.instances {
            let mut loads = vec![0u64; d as usize];
            for &(_, k) in &inst.assignment {
                loads[k as usize] += 1;
            }
            let max = *loads.iter().max().unwrap() as f64;
            let min = *loads.iter().min().unwrap() as f64;
            if max > max_bound || min < min_bound {
                this_seed_violated = true;
            }
        }
        if this_seed_violated {
            violations += 1;
        }
    }
    assert!(
        violations <= allowed_violations,
        "{violations} of {seeds} seeds violated the load bounds (allowed {allowed_violations})"
    );
}

/// Statistical privacy: with threshold 2, the joint distribution of two
/// fixed share values is uniform whatever the secret is (chi-square at 0.01
/// over 10^4 sampled sharings per secret).
#[test]
fn share_pairs_are_uniform_for_every_secret() {
    let field = bridgedist::field::PrimeField::new(7).unwrap();
    let policy = bridgedist::shamir::SharingPolicy::new(5, 2).unwrap();
    let crit = common::chi_square_critical(48.0, 0.01);
    for secret in 0..7u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(31, "privacy", secret));
        let mut counts = vec![0u64; 49];
        for _ in 0..10_000 {
            let shares =
                bridgedist::shamir::share(&field, field.element(secret), &policy, 0, &mut rng);
            let cell = shares[0].value.value() * 7 + shares[2].value.value();
            counts[cell as usize] += 1;
        }
        let stat = common::chi_square_uniform(&counts);
        assert!(
            stat < crit,
            "secret {secret}: chi-square {stat:.2} >= {crit:.2}"
        );
    }
}

#[test]
fn large_n_prudent_matches_bound() {
    // The t=180 configuration at n=65536 terminates in exactly 4 rounds.
    let out = run_trial(&SimConfig::basic(65536, 180, Strategy::Prudent, 77)).unwrap();
    assert_eq!(out.terminal.latency_rounds, 4);
    assert!(out.terminal.success);
    // Instance count at that scale and the one-message-per-round shape.
    assert!(out.rounds.iter().all(|r| r.msgs_user == 1));
    assert_eq!(out.rounds[0].distributed, 32);
    assert_eq!(out.rounds[0].used, 32 * 48);
}

#[test]
fn decentralized_end_to_end_with_garbage_third_and_corrupt_users() {
    // m=10 with 3 garbage distributors and 8 corrupt users: every honest
    // user can still decode at least one unblocked address each round, and
    // every honest replica holds the identical assignment table.
    let mut cfg = SimConfig::multi(Mode::Decentralized, 64, 8, 10, Strategy::Aggressive, 4242);
    cfg.corrupt_distributors = 3;
    cfg.distributor_fault = DistributorFault::GarbageShares;
    let mut rounds_seen = 0;
    let out = run_trial_observed(&cfg, &mut |obs| {
        rounds_seen += 1;
        let cluster = obs.cluster.unwrap();
        let honest_views: Vec<_> = cluster
            .nodes()
            .iter()
            .filter(|n| n.honest)
            .map(|n| &n.session_view)
            .collect();
        for view in &honest_views[1..] {
            assert_eq!(*view, honest_views[0], "replica assignment tables diverged");
        }
        // Every user's table entry carries one pseudonym per instance.
        let expected = obs.session.instance_count();
        for ids in honest_views[0].values() {
            assert_eq!(ids.len(), expected);
        }
    })
    .unwrap();
    assert!(rounds_seen >= 1);
    assert!(out.terminal.success, "honest users must end connected");
    for row in &out.rounds {
        // Silent/garbage faults do not change the one-bundle-per-distributor
        // shape: every user hears from all 10.
        assert_eq!(row.msgs_user, 10);
    }
}

#[test]
fn decentralized_silent_third_still_succeeds() {
    let mut cfg = SimConfig::multi(Mode::Decentralized, 64, 8, 10, Strategy::Prudent, 555);
    cfg.corrupt_distributors = 3;
    cfg.distributor_fault = DistributorFault::Silent;
    let out = run_trial(&cfg).unwrap();
    assert!(out.terminal.success);
    for row in &out.rounds {
        assert_eq!(
            row.msgs_user, 7,
            "three silent distributors drop their bundles"
        );
    }
}

#[test]
fn equivocating_distributor_stalls_the_run() {
    let mut cfg = SimConfig::multi(Mode::Decentralized, 64, 8, 4, Strategy::Prudent, 556);
    cfg.corrupt_distributors = 1;
    cfg.distributor_fault = DistributorFault::EquivocateRandomness;
    match run_trial(&cfg) {
        Err(bridgedist::sim::SimError::Randomness(_)) => {}
        other => panic!("expected a stalled randomness protocol, got {other:?}"),
    }
}

#[test]
fn leader_mode_fallback_run_succeeds() {
    // Small population: the opening pool covers every user, so the first
    // advance engages the unique-bridge fallback through the pseudonym path.
    let cfg = SimConfig::multi(Mode::Leader, 24, 4, 7, Strategy::Aggressive, 557);
    let out = run_trial(&cfg).unwrap();
    assert!(out.terminal.success);
    assert_eq!(out.terminal.latency_rounds, 1);
    assert_eq!(out.rounds[0].distributed, 24);
}

#[test]
fn strict_per_user_randomness_mode_runs_and_reproduces() {
    let mut cfg = SimConfig::multi(Mode::Decentralized, 40, 4, 4, Strategy::Prudent, 558);
    cfg.strict_per_user_randomness = true;
    let a = run_trial(&cfg).unwrap();
    let b = run_trial(&cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.terminal.success);
    assert_eq!(a.rounds[0].msgs_user, 4);
}

#[test]
fn growth_fires_through_scripted_churn() {
    // t=32 forces a second round, so the round-2 churn actually lands.
    let mut cfg = SimConfig::basic(100, 32, Strategy::Prudent, 559);
    cfg.churn = (0..101u64)
        .map(|k| ChurnEvent {
            round: 2,
            action: ChurnAction::Join(10_000 + k),
        })
        .collect();
    cfg.max_rounds = Some(6);
    let mut max_instances = 0;
    let out = run_trial_observed(&cfg, &mut |obs| {
        max_instances = max_instances.max(obs.session.instance_count());
    })
    .unwrap();
    // 100 -> 201 users crosses the doubling point: three instances join the
    // original ceil(3*log2(100)) = 20.
    assert_eq!(max_instances, 23);
    assert!(out.terminal.success);
}

#[test]
fn thirsty_metric_counts_corrupt_self_blocking() {
    // An aggressive censor burning its own bridges can leave its corrupt
    // users thirsty while every honest user stays connected.
    let out = run_trial(&SimConfig::basic(64, 8, Strategy::Aggressive, 560)).unwrap();
    assert!(out.terminal.success);
    for row in &out.rounds {
        assert!(row.thirsty <= 8, "only corrupt users may end up dry");
    }
}
