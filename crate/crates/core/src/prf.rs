//! Deterministic derivation helpers: independent sub-seeds from one master
//! seed, and expansion of an agreed random value into per-(instance, user)
//! assignment indices that every honest replica computes identically.

use sha2::{Digest, Sha256};

/// Derives an independent 64-bit seed from a master seed, a domain label,
/// and a counter. Used for per-trial, per-node, and per-component RNG streams.
pub fn derive_seed(master: u64, label: &str, k: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_be_bytes());
    h.update(label.as_bytes());
    h.update(k.to_be_bytes());
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().unwrap())
}

/// Expands an agreed random value into a uniform index in `[0, bound)` for
/// one (round, instance, user) slot. Unbiased: the 64-bit PRF output is
/// rejection-sampled, re-hashing with a counter until it falls below the
/// largest multiple of `bound`.
pub fn expand_index(seed: u64, round: u32, instance: u32, user: u64, bound: u64) -> u64 {
    assert!(bound > 0);
    let cap = u64::MAX - u64::MAX % bound;
    for ctr in 0u32.. {
        let mut h = Sha256::new();
        h.update(seed.to_be_bytes());
        h.update(round.to_be_bytes());
        h.update(instance.to_be_bytes());
        h.update(user.to_be_bytes());
        h.update(ctr.to_be_bytes());
        let out = h.finalize();
        let v = u64::from_be_bytes(out[..8].try_into().unwrap());
        if v < cap {
            return v % bound;
        }
    }
    unreachable!("rejection sampling terminates");
}

/// Maps an agreed field value directly onto `[0, bound)`.
///
/// With `reject` set, values in the biased tail are refused (`None`) and the
/// caller re-runs the randomness protocol; this gives an exactly uniform
/// index and is intended for small test fields. Without it the plain
/// remainder is returned, whose bias is at most `bound / p` and negligible
/// for the production modulus.
pub fn map_to_range(value: u64, modulus: u64, bound: u64, reject: bool) -> Option<u64> {
    assert!(bound > 0 && bound <= modulus);
    if reject {
        let cap = modulus - modulus % bound;
        if value >= cap {
            return None;
        }
    }
    Some(value % bound)
}
