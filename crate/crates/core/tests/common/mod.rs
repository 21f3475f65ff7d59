//! Independent oracles shared by the integration suites. Everything here is
//! implemented from first principles, separate from the library's own code
//! paths, so the tests check the implementation against something it cannot
//! share bugs with.

#![allow(dead_code)]

use bridgedist::field::{FieldElement, Polynomial, PrimeField};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Number of rounds the minimum-cost censor with budget `t` forces:
/// `ceil(log2(ceil((t+1)/32))) + 1`, computed by plain counting.
pub fn latency_oracle(t: u64) -> u32 {
    let mut c = (t + 1) / 32;
    if !(t + 1).is_multiple_of(32) {
        c += 1;
    }
    let mut log = 0u32;
    let mut pow = 1u64;
    while pow < c {
        pow *= 2;
        log += 1;
    }
    log + 1
}

/// Chi-square statistic of observed counts against the uniform distribution.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// Upper critical value of the chi-square distribution.
pub fn chi_square_critical(df: f64, significance: f64) -> f64 {
    ChiSquared::new(df).unwrap().inverse_cdf(1.0 - significance)
}

/// Brute force: every polynomial of degree <= `tau` over the (small) field
/// that agrees with at least `eta - epsilon` of the points.
pub fn consistent_polynomials(
    field: &PrimeField,
    points: &[(FieldElement, FieldElement)],
    tau: usize,
    epsilon: usize,
) -> Vec<Polynomial> {
    let p = field.modulus();
    let eta = points.len();
    let mut out = Vec::new();
    let mut coeffs = vec![0u64; tau + 1];
    loop {
        let poly = Polynomial::new(coeffs.iter().map(|&c| field.element(c)).collect());
        let agree = points
            .iter()
            .filter(|&&(x, y)| poly.eval(field, x) == y)
            .count();
        if agree + epsilon >= eta {
            out.push(poly);
        }
        // Odometer over all coefficient vectors.
        let mut k = 0;
        loop {
            if k > tau {
                out.dedup();
                return out;
            }
            coeffs[k] += 1;
            if coeffs[k] < p {
                break;
            }
            coeffs[k] = 0;
            k += 1;
        }
    }
}

/// All `k`-element index subsets of `0..n`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

#[test]
fn oracle_sanity() {
    assert_eq!(latency_oracle(0), 1);
    assert_eq!(latency_oracle(31), 1);
    assert_eq!(latency_oracle(32), 2);
    assert_eq!(latency_oracle(180), 4);
    assert_eq!(latency_oracle(1023), 6);
    assert_eq!(subsets(4, 2).len(), 6);
    assert!((chi_square_critical(16.0, 0.01) - 32.0).abs() < 0.1);
}
