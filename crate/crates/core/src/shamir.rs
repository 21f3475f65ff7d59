//! Shamir secret sharing of bridge endpoints among `m` distributors, with
//! robust reconstruction that corrects invalid shares via error-correcting
//! decoding.
//!
//! A dealer hides the secret at `f(0)` of a random degree-`tau` polynomial
//! and hands share `(j, f(j))` to distributor `j`. Any `tau` or fewer shares
//! reveal nothing; reconstruction collects `eta` shares and tolerates up to
//! `epsilon < (eta - tau + 1)/2` corrupted ones.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{berlekamp_welch_decode, FieldElement, FieldError, Polynomial, PrimeField};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShareError {
    #[error("policy requires 1 <= m and tau < m, got m={m}, tau={tau}")]
    InvalidPolicy { m: u32, tau: u32 },
    #[error("two shares carry the same index")]
    DuplicateIndex,
    #[error("no shares supplied")]
    NoShares,
    #[error("reconstruction failed: {0}")]
    ReconstructFailure(#[from] FieldError),
}

/// Stable pseudonym for a shared secret; assigned by the registration
/// pipeline as a plain counter.
pub type SecretId = u64;

/// One distributor's view of a shared secret: the evaluation point `j`
/// (1-based; x = 0 is reserved for the secret itself) and `f(j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    pub index: u32,
    pub value: FieldElement,
    pub secret_id: SecretId,
}

/// Number of distributors and the privacy threshold.
///
/// `tau` shares reveal nothing about the secret. The default threshold is
/// `floor(m/3)`, which keeps the secret hidden from exactly the coalition the
/// fault bound allows while leaving enough honest shares for error-corrected
/// reconstruction when up to `floor(m/3)` of them are invalid. `tau = 0`
/// degenerates to plain replication and is accepted for completeness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingPolicy {
    pub m: u32,
    pub tau: u32,
}

impl SharingPolicy {
    pub fn new(m: u32, tau: u32) -> Result<SharingPolicy, ShareError> {
        if m < 1 || tau >= m {
            return Err(ShareError::InvalidPolicy { m, tau });
        }
        Ok(SharingPolicy { m, tau })
    }

    /// Policy with `tau = floor(m/3)`.
    pub fn with_default_tau(m: u32) -> Result<SharingPolicy, ShareError> {
        SharingPolicy::new(m, m / 3)
    }

    /// Largest number of invalid shares reconstruction corrects uniquely
    /// from `eta` distinct-index shares: the classic radius
    /// `floor((eta - tau - 1)/2)`. At this radius only one polynomial of
    /// degree `tau` can be consistent, so decoding never lands on a wrong
    /// secret.
    pub fn max_errors(&self, eta: usize) -> usize {
        eta.saturating_sub(self.tau as usize + 1) / 2
    }
}

/// Splits `secret` into `m` shares with threshold `tau`, drawing the
/// non-constant coefficients uniformly from the field.
pub fn share(
    field: &PrimeField,
    secret: FieldElement,
    policy: &SharingPolicy,
    secret_id: SecretId,
    rng: &mut impl Rng,
) -> Vec<Share> {
    let coeffs: Vec<FieldElement> = (0..policy.tau).map(|_| field.random(rng)).collect();
    share_from_coefficients(field, secret, &coeffs, policy, secret_id)
}

/// Deterministic seam used by `share` and by tests that pin coefficients.
pub fn share_from_coefficients(
    field: &PrimeField,
    secret: FieldElement,
    coeffs: &[FieldElement],
    policy: &SharingPolicy,
    secret_id: SecretId,
) -> Vec<Share> {
    debug_assert_eq!(coeffs.len(), policy.tau as usize);
    // Evaluation points 1..=m must be distinct and nonzero in the field.
    assert!(
        (policy.m as u64) < field.modulus(),
        "m = {} does not fit field of order {}",
        policy.m,
        field.modulus()
    );
    let mut poly_coeffs = Vec::with_capacity(policy.tau as usize + 1);
    poly_coeffs.push(secret);
    poly_coeffs.extend_from_slice(coeffs);
    let f = Polynomial::new(poly_coeffs);
    (1..=policy.m)
        .map(|j| Share {
            index: j,
            value: f.eval(field, field.element(j as u64)),
            secret_id,
        })
        .collect()
}

/// Recovers the secret from shares, correcting invalid values as long as
/// their count stays below `(eta - tau + 1)/2`.
pub fn reconstruct(
    field: &PrimeField,
    shares: &[Share],
    policy: &SharingPolicy,
) -> Result<FieldElement, ShareError> {
    if shares.is_empty() {
        return Err(ShareError::NoShares);
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in shares {
        if !seen.insert(s.index) {
            return Err(ShareError::DuplicateIndex);
        }
    }
    let points: Vec<(FieldElement, FieldElement)> = shares
        .iter()
        .map(|s| (field.element(s.index as u64), s.value))
        .collect();
    let epsilon = policy.max_errors(points.len());
    let f = berlekamp_welch_decode(field, &points, policy.tau as usize, epsilon)?;
    Ok(f.eval(field, FieldElement::ZERO))
}

/// Packs an IPv4 endpoint into a 48-bit integer, big-endian: four address
/// octets followed by the two port bytes. Every endpoint therefore fits any
/// field with modulus above 2^48, in particular the production field.
pub fn pack_endpoint(ip: [u8; 4], port: u16) -> u64 {
    let mut v: u64 = 0;
    for b in ip {
        v = v << 8 | b as u64;
    }
    v << 16 | port as u64
}

/// Inverse of [`pack_endpoint`].
pub fn unpack_endpoint(v: u64) -> ([u8; 4], u16) {
    let port = (v & 0xffff) as u16;
    let ip = ((v >> 16) as u32).to_be_bytes();
    (ip, port)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn f7() -> PrimeField {
        PrimeField::new(7).unwrap()
    }

    #[test]
    fn policy_validation() {
        assert!(SharingPolicy::new(10, 3).is_ok());
        assert!(SharingPolicy::new(3, 3).is_err());
        assert!(SharingPolicy::new(0, 0).is_err());
        assert_eq!(SharingPolicy::with_default_tau(10).unwrap().tau, 3);
        assert_eq!(SharingPolicy::with_default_tau(4).unwrap().tau, 1);
    }

    #[test]
    fn zero_threshold_replicates_the_secret() {
        let f = f7();
        let policy = SharingPolicy::new(3, 0).unwrap();
        let shares = share_from_coefficients(&f, f.element(5), &[], &policy, 0);
        assert!(shares.iter().all(|s| s.value == f.element(5)));
    }

    #[test]
    fn fixed_coefficient_shares_mod_seven() {
        // f(x) = 5 + 2x over F_7: f(1)=0, f(2)=2, f(3)=4.
        let f = f7();
        let policy = SharingPolicy::new(3, 1).unwrap();
        let shares = share_from_coefficients(&f, f.element(5), &[f.element(2)], &policy, 9);
        let got: Vec<(u32, u64)> = shares.iter().map(|s| (s.index, s.value.value())).collect();
        assert_eq!(got, vec![(1, 0), (2, 2), (3, 4)]);
        assert!(shares.iter().all(|s| s.secret_id == 9));
    }

    #[test]
    fn two_shares_reveal_nothing_exhaustively() {
        // tau = 2, m = 10 over F_31: for any two fixed share indices, the
        // joint value over all coefficient pairs sweeps the full 31x31 grid
        // exactly once, for every secret. The pair distribution is therefore
        // identical whatever the secret is.
        let f = PrimeField::new(31).unwrap();
        let policy = SharingPolicy::new(10, 2).unwrap();
        let full_grid: Vec<(u64, u64)> =
            (0..31).flat_map(|x| (0..31).map(move |y| (x, y))).collect();
        for (i, j) in [(0usize, 1usize), (2, 9)] {
            for s in [0u64, 1, 17, 30] {
                let mut pairs = Vec::new();
                for a in 0..31u64 {
                    for b in 0..31u64 {
                        let shares = share_from_coefficients(
                            &f,
                            f.element(s),
                            &[f.element(a), f.element(b)],
                            &policy,
                            0,
                        );
                        pairs.push((shares[i].value.value(), shares[j].value.value()));
                    }
                }
                pairs.sort_unstable();
                assert_eq!(pairs, full_grid, "secret {s}, indices {i},{j}");
            }
        }
    }

    #[test]
    fn roundtrip_small_field_exhaustive() {
        let f = f7();
        let policy = SharingPolicy::new(5, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in 0..7u64 {
            let shares = share(&f, f.element(s), &policy, 0, &mut rng);
            assert_eq!(reconstruct(&f, &shares, &policy).unwrap(), f.element(s));
        }
    }

    #[test]
    fn all_honest_shares_reconstruct() {
        let f = PrimeField::production();
        let policy = SharingPolicy::with_default_tau(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shares = share(&f, f.element(5), &policy, 0, &mut rng);
        assert_eq!(reconstruct(&f, &shares, &policy).unwrap(), f.element(5));
    }

    #[test]
    fn three_corruptions_of_ten_are_corrected() {
        // m=10, tau=3: epsilon = 3 < (10-3+1)/2 = 4 is inside the bound.
        let f = PrimeField::production();
        let policy = SharingPolicy::new(10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let secret = f.random(&mut rng);
        let mut shares = share(&f, secret, &policy, 0, &mut rng);
        for k in [1usize, 4, 8] {
            shares[k].value = f.random(&mut rng);
        }
        assert_eq!(reconstruct(&f, &shares, &policy).unwrap(), secret);
    }

    #[test]
    fn four_corruptions_never_silently_succeed() {
        // Beyond the bound the decoder must fail or still land on the true
        // secret; returning a different value would be silent corruption.
        let f = PrimeField::production();
        let policy = SharingPolicy::new(10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let secret = f.random(&mut rng);
            let mut shares = share(&f, secret, &policy, 0, &mut rng);
            for k in [0usize, 3, 5, 9] {
                let mut wrong = f.random(&mut rng);
                while wrong == shares[k].value {
                    wrong = f.random(&mut rng);
                }
                shares[k].value = wrong;
            }
            match reconstruct(&f, &shares, &policy) {
                Err(_) => {}
                Ok(v) => assert_eq!(v, secret, "silent wrong reconstruction"),
            }
        }
    }

    #[test]
    fn duplicate_share_index_rejected() {
        let f = f7();
        let policy = SharingPolicy::new(3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut shares = share(&f, f.element(2), &policy, 0, &mut rng);
        shares[2].index = shares[0].index;
        assert_eq!(
            reconstruct(&f, &shares, &policy),
            Err(ShareError::DuplicateIndex)
        );
    }

    #[test]
    fn endpoint_packing_roundtrip() {
        let v = pack_endpoint([203, 0, 113, 7], 443);
        assert_eq!(unpack_endpoint(v), ([203, 0, 113, 7], 443));
        assert!(v < 1 << 48);
        assert_eq!(pack_endpoint([0, 0, 0, 0], 0), 0);
        assert_eq!(pack_endpoint([255, 255, 255, 255], 65535), (1 << 48) - 1);
    }
}
