//! Built-in invariant suite: a quick structural check of every protocol
//! layer, printing one line per check. Any failure makes the process exit
//! with the contract-violation code.

use std::collections::{BTreeMap, BTreeSet};

use bridgedist::adversary::{DistributorFault, Strategy};
use bridgedist::distributors::agreement::{run_agreement, Script, ScriptedFaults};
use bridgedist::distributors::drg::{run_drg_batch, DrgBehavior, DrgError, RESTART_CAP};
use bridgedist::distributors::scan_snapshot_values;
use bridgedist::field::{berlekamp_welch_decode, field_inverse, PrimeField};
use bridgedist::prf::derive_seed;
use bridgedist::shamir::{self, SharingPolicy};
use bridgedist::sim::{run_trial, run_trial_observed, Mode, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = (&'static str, fn() -> Result<String, String>);

pub fn run_all() -> bool {
    let checks: Vec<Check> = vec![
        ("field inverse (exhaustive p=101)", field_inverse_exhaustive),
        ("error-corrected decoding", error_decoding),
        ("secret sharing robustness", sharing_robustness),
        ("byzantine agreement (m=4, f=1)", agreement_small),
        ("shared randomness uniformity", randomness_uniformity),
        ("equivocation detection", equivocation_restarts),
        ("determinism", determinism),
        ("adaptive latency staircase", latency_staircase),
        ("bridge cost bound", bridge_cost),
        ("assignment obliviousness", obliviousness),
        ("per-user message count", message_shape),
    ];
    let mut ok = true;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("selftest {name}: PASS ({detail})"),
            Err(err) => {
                ok = false;
                println!("selftest {name}: FAIL ({err})");
            }
        }
    }
    ok
}

fn field_inverse_exhaustive() -> Result<String, String> {
    let f = PrimeField::new(101).map_err(|e| e.to_string())?;
    for a in 1..101u64 {
        let inv = field_inverse(&f, f.element(a)).map_err(|e| e.to_string())?;
        if a * inv.value() % 101 != 1 {
            return Err(format!("inverse of {a} wrong"));
        }
    }
    Ok("100 elements".into())
}

fn error_decoding() -> Result<String, String> {
    let f = PrimeField::production();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let poly = bridgedist::field::Polynomial::new((0..4).map(|_| f.random(&mut rng)).collect());
        let mut pts: Vec<_> = (1..=10u64)
            .map(|x| (f.element(x), poly.eval(&f, f.element(x))))
            .collect();
        for k in [1usize, 4, 7] {
            pts[k].1 = f.random(&mut rng);
        }
        let out = berlekamp_welch_decode(&f, &pts, 3, 3).map_err(|e| e.to_string())?;
        if out != poly {
            return Err(format!("trial {trial} decoded a wrong polynomial"));
        }
    }
    Ok("20 corrupted codewords".into())
}

fn sharing_robustness() -> Result<String, String> {
    let f = PrimeField::production();
    let policy = SharingPolicy::new(10, 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let secret = f.random(&mut rng);
        let mut shares = shamir::share(&f, secret, &policy, 0, &mut rng);
        for k in [0usize, 5, 9] {
            shares[k].value = f.random(&mut rng);
        }
        match shamir::reconstruct(&f, &shares, &policy) {
            Ok(v) if v == secret => {}
            other => return Err(format!("reconstruction failed: {other:?}")),
        }
    }
    Ok("50 corruption patterns".into())
}

fn agreement_small() -> Result<String, String> {
    let domain = [Some(0u64), Some(1), None];
    let mut cases = 0;
    for corrupt in 1..=4u32 {
        let honest: Vec<u32> = (1..=4).filter(|&i| i != corrupt).collect();
        for x in &domain {
            for y in &domain {
                for z in &domain {
                    let inputs: BTreeMap<u32, Option<u64>> =
                        honest.iter().copied().zip([*x, *y, *z]).collect();
                    let mut faults = ScriptedFaults::new(
                        [(
                            corrupt,
                            Script::Conflicting(vec![Some(9), None, Some(8), Some(7)]),
                        )]
                        .into_iter()
                        .collect(),
                    );
                    let out = run_agreement(4, 1, &inputs, &BTreeSet::from([corrupt]), &mut faults)
                        .map_err(|e| e.to_string())?;
                    let first = out.values().next().unwrap();
                    if !out.values().all(|v| v == first) {
                        return Err("agreement violated".into());
                    }
                    if x == y && y == z && first != x {
                        return Err("validity violated".into());
                    }
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} scripted cases"))
}

fn randomness_uniformity() -> Result<String, String> {
    let field = PrimeField::new(17).unwrap();
    let behaviors: BTreeMap<u32, DrgBehavior> = [(3, DrgBehavior::FixedValue(5))].into();
    let mut node_rngs: Vec<ChaCha8Rng> = (0..4)
        .map(|j| ChaCha8Rng::seed_from_u64(derive_seed(13, "st-drg", j)))
        .collect();
    let mut counts = [0u64; 17];
    for _ in 0..2000 {
        let report = run_drg_batch(&field, 4, 1, 1, &mut node_rngs, &behaviors, &mut |_, _| {});
        let v = report.outcome.map_err(|e| e.to_string())?[0];
        counts[v.value() as usize] += 1;
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / 17.0;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let crit = ChiSquared::new(16.0).unwrap().inverse_cdf(0.99);
    if stat >= crit {
        return Err(format!("chi-square {stat:.2} >= {crit:.2}"));
    }
    Ok(format!("chi-square {stat:.2} < {crit:.2} over 2000 runs"))
}

fn equivocation_restarts() -> Result<String, String> {
    let field = PrimeField::new(17).unwrap();
    let mut node_rngs: Vec<ChaCha8Rng> = (0..4)
        .map(|j| ChaCha8Rng::seed_from_u64(derive_seed(14, "st-eq", j)))
        .collect();
    let behaviors: BTreeMap<u32, DrgBehavior> = [(2, DrgBehavior::EquivocateReveal)].into();
    let report = run_drg_batch(&field, 4, 1, 1, &mut node_rngs, &behaviors, &mut |_, _| {});
    if report.outcome
        != Err(DrgError::Stalled {
            attempts: RESTART_CAP,
        })
    {
        return Err("equivocation did not stall the protocol".into());
    }
    if !report
        .offender_log
        .iter()
        .all(|o| o == &BTreeSet::from([2]))
    {
        return Err("offender log did not identify the equivocator".into());
    }
    Ok(format!(
        "{} aborted attempts, offender identified",
        report.offender_log.len()
    ))
}

fn determinism() -> Result<String, String> {
    for cfg in [
        SimConfig::basic(256, 32, Strategy::Aggressive, 99),
        SimConfig::multi(Mode::Decentralized, 64, 8, 4, Strategy::Prudent, 99),
    ] {
        let a = run_trial(&cfg).map_err(|e| e.to_string())?;
        let b = run_trial(&cfg).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{} mode diverged across identical runs", cfg.mode));
        }
    }
    Ok("basic and decentralized reproduce bit-for-bit".into())
}

fn latency_staircase() -> Result<String, String> {
    for (t, expect) in [(0usize, 1u32), (32, 2), (180, 4)] {
        let out = run_trial(&SimConfig::basic(1024, t, Strategy::Prudent, 15))
            .map_err(|e| e.to_string())?;
        if out.terminal.latency_rounds != expect {
            return Err(format!(
                "t={t}: {} rounds, expected {expect}",
                out.terminal.latency_rounds
            ));
        }
        let agg = run_trial(&SimConfig::basic(1024, t, Strategy::Aggressive, 15))
            .map_err(|e| e.to_string())?;
        if agg.terminal.latency_rounds > expect {
            return Err(format!("aggressive t={t} exceeded the bound"));
        }
    }
    Ok("t in {0,32,180} at n=1024".into())
}

fn bridge_cost() -> Result<String, String> {
    for t in [0usize, 32, 180] {
        let out = run_trial(&SimConfig::basic(1024, t, Strategy::Prudent, 16))
            .map_err(|e| e.to_string())?;
        let bound = (10 * t as u64 + 96) * 10;
        if out.terminal.bridges_used > bound {
            return Err(format!(
                "t={t}: used {} > {bound}",
                out.terminal.bridges_used
            ));
        }
    }
    Ok("within (10t+96)*log2 n".into())
}

fn obliviousness() -> Result<String, String> {
    let mut cfg = SimConfig::multi(Mode::Leader, 64, 8, 4, Strategy::Aggressive, 17);
    cfg.corrupt_distributors = 1;
    cfg.distributor_fault = DistributorFault::GarbageShares;
    let mut leaked = false;
    let mut scanned = 0u32;
    run_trial_observed(&cfg, &mut |obs| {
        let mut stored = BTreeSet::new();
        scan_snapshot_values(&obs.cluster.unwrap().snapshot(), &mut stored);
        if obs.addresses.iter().any(|a| stored.contains(&a.value())) {
            leaked = true;
        }
        scanned += 1;
    })
    .map_err(|e| e.to_string())?;
    if leaked {
        return Err("a plaintext address appeared in distributor state".into());
    }
    Ok(format!("{scanned} round snapshots clean"))
}

fn message_shape() -> Result<String, String> {
    for mode in [Mode::Leader, Mode::Decentralized] {
        let cfg = SimConfig::multi(mode, 64, 8, 4, Strategy::Prudent, 18);
        let out = run_trial(&cfg).map_err(|e| e.to_string())?;
        for row in &out.rounds {
            if row.msgs_user != 4 || row.msgs_user_min != 4 {
                return Err(format!(
                    "{mode}: user received {} messages, expected 4",
                    row.msgs_user
                ));
            }
        }
    }
    Ok("every user hears from all m distributors each round".into())
}
