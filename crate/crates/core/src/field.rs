//! Prime-field arithmetic, polynomial evaluation and interpolation, and
//! error-correcting decoding of polynomial evaluations.
//!
//! All arithmetic is carried out modulo a fixed public prime `p`. The
//! [`PrimeField`] type holds the modulus and exposes the operations; a
//! [`FieldElement`] is a reduced residue owned by one field. The production
//! modulus is [`DEFAULT_MODULUS`] (2^61 - 1), which leaves headroom for any
//! 48-bit packed IPv4:port endpoint. Test configurations use small primes so
//! that exhaustive oracles stay cheap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Production modulus: the Mersenne prime 2^61 - 1.
pub const DEFAULT_MODULUS: u64 = (1 << 61) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("two interpolation points share an x-coordinate")]
    DuplicateX,
    #[error(
        "error budget {epsilon} violates epsilon < (eta - tau + 1)/2 for eta={eta}, tau={tau}"
    )]
    ErrorBudgetTooLarge {
        eta: usize,
        tau: usize,
        epsilon: usize,
    },
    #[error(
        "no polynomial of degree <= {tau} is consistent with the points under {epsilon} errors"
    )]
    DecodeFailure { tau: usize, epsilon: usize },
}

/// A residue in `[0, p)`. Only meaningful together with the field it was
/// reduced by; mixing elements of different fields is a caller bug.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    #[inline]
    pub fn value(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    /// Big-endian 8-byte encoding used on the wire and in commitments.
    #[inline]
    pub fn to_be_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }
}

/// A prime field of order `p`, `p < 2^62`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimeField {
    modulus: u64,
}

impl PrimeField {
    /// Builds a field, checking primality of the modulus once up front.
    pub fn new(modulus: u64) -> Result<PrimeField, FieldError> {
        if modulus < 2 || !is_prime(modulus) {
            return Err(FieldError::NotPrime(modulus));
        }
        Ok(PrimeField { modulus })
    }

    /// The production field over 2^61 - 1.
    pub fn production() -> PrimeField {
        PrimeField {
            modulus: DEFAULT_MODULUS,
        }
    }

    #[inline]
    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// Reduces an arbitrary integer into the field.
    #[inline]
    pub fn element(&self, v: u64) -> FieldElement {
        FieldElement(v % self.modulus)
    }

    #[inline]
    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        let s = a.0 + b.0;
        FieldElement(if s >= self.modulus {
            s - self.modulus
        } else {
            s
        })
    }

    #[inline]
    pub fn sub(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if a.0 >= b.0 {
            FieldElement(a.0 - b.0)
        } else {
            FieldElement(a.0 + self.modulus - b.0)
        }
    }

    #[inline]
    pub fn neg(&self, a: FieldElement) -> FieldElement {
        if a.0 == 0 {
            a
        } else {
            FieldElement(self.modulus - a.0)
        }
    }

    #[inline]
    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(((a.0 as u128 * b.0 as u128) % self.modulus as u128) as u64)
    }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, FieldError> {
        if a.0 == 0 {
            return Err(FieldError::ZeroInverse);
        }
        let (mut t, mut new_t): (i128, i128) = (0, 1);
        let (mut r, mut new_r): (i128, i128) = (self.modulus as i128, a.0 as i128);
        while new_r != 0 {
            let q = r / new_r;
            (t, new_t) = (new_t, t - q * new_t);
            (r, new_r) = (new_r, r - q * new_r);
        }
        debug_assert_eq!(r, 1, "modulus is prime, gcd must be 1");
        let t = t.rem_euclid(self.modulus as i128) as u64;
        Ok(FieldElement(t))
    }

    pub fn div(&self, a: FieldElement, b: FieldElement) -> Result<FieldElement, FieldError> {
        Ok(self.mul(a, self.inv(b)?))
    }

    /// Uniform element sampled by rejection from the RNG's 64-bit output.
    pub fn random(&self, rng: &mut impl rand::Rng) -> FieldElement {
        let bound = u64::MAX - u64::MAX % self.modulus;
        loop {
            let v = rng.random::<u64>();
            if v < bound {
                return FieldElement(v % self.modulus);
            }
        }
    }
}

/// Deterministic Miller-Rabin, exact for all u64 with this witness set.
fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n.is_multiple_of(p) {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 0..s - 1 {
            x = ((x as u128 * x as u128) % n as u128) as u64;
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn pow_mod(base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc: u128 = 1;
    let mut b = base as u128 % m as u128;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * b % m as u128;
        }
        b = b * b % m as u128;
        exp >>= 1;
    }
    acc as u64
}

/// Dense polynomial, coefficients lowest degree first. Normalized: no
/// trailing zero coefficients, so the zero polynomial has an empty
/// coefficient list and degree -1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polynomial {
    coeffs: Vec<FieldElement>,
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<FieldElement>) -> Polynomial {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        Polynomial { coeffs }
    }

    pub fn zero() -> Polynomial {
        Polynomial { coeffs: Vec::new() }
    }

    pub fn constant(c: FieldElement) -> Polynomial {
        Polynomial::new(vec![c])
    }

    /// Degree, with the zero polynomial at -1.
    pub fn degree(&self) -> isize {
        self.coeffs.len() as isize - 1
    }

    pub fn coeffs(&self) -> &[FieldElement] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Horner evaluation.
    pub fn eval(&self, field: &PrimeField, x: FieldElement) -> FieldElement {
        let mut acc = FieldElement::ZERO;
        for &c in self.coeffs.iter().rev() {
            acc = field.add(field.mul(acc, x), c);
        }
        acc
    }

    fn add(&self, field: &PrimeField, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let a = self.coeffs.get(i).copied().unwrap_or(FieldElement::ZERO);
            let b = other.coeffs.get(i).copied().unwrap_or(FieldElement::ZERO);
            out.push(field.add(a, b));
        }
        Polynomial::new(out)
    }

    fn mul(&self, field: &PrimeField, other: &Polynomial) -> Polynomial {
        if self.is_zero() || other.is_zero() {
            return Polynomial::zero();
        }
        let mut out = vec![FieldElement::ZERO; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] = field.add(out[i + j], field.mul(a, b));
            }
        }
        Polynomial::new(out)
    }

    fn scale(&self, field: &PrimeField, k: FieldElement) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|&c| field.mul(c, k)).collect())
    }

    /// Long division; returns `(quotient, remainder)`.
    fn div_rem(&self, field: &PrimeField, divisor: &Polynomial) -> (Polynomial, Polynomial) {
        assert!(!divisor.is_zero(), "division by zero polynomial");
        if self.degree() < divisor.degree() {
            return (Polynomial::zero(), self.clone());
        }
        let mut rem = self.coeffs.clone();
        let dlead = *divisor.coeffs.last().unwrap();
        let dlead_inv = field.inv(dlead).expect("leading coefficient is nonzero");
        let dn = divisor.coeffs.len();
        let mut quot = vec![FieldElement::ZERO; rem.len() - dn + 1];
        for k in (0..quot.len()).rev() {
            let lead = rem[k + dn - 1];
            if lead.is_zero() {
                continue;
            }
            let q = field.mul(lead, dlead_inv);
            quot[k] = q;
            for (i, &dc) in divisor.coeffs.iter().enumerate() {
                rem[k + i] = field.sub(rem[k + i], field.mul(q, dc));
            }
        }
        (Polynomial::new(quot), Polynomial::new(rem))
    }
}

/// Multiplicative inverse of `a` in the field.
pub fn field_inverse(field: &PrimeField, a: FieldElement) -> Result<FieldElement, FieldError> {
    field.inv(a)
}

/// Evaluates `f` at `x`.
pub fn poly_eval(field: &PrimeField, f: &Polynomial, x: FieldElement) -> FieldElement {
    f.eval(field, x)
}

/// Unique polynomial of degree `< points.len()` through all points.
pub fn lagrange_interpolate(
    field: &PrimeField,
    points: &[(FieldElement, FieldElement)],
) -> Result<Polynomial, FieldError> {
    check_distinct_x(points)?;
    assert!(
        !points.is_empty(),
        "at least one interpolation point required"
    );
    let mut acc = Polynomial::zero();
    for (i, &(xi, yi)) in points.iter().enumerate() {
        // basis_i(x) = prod_{j != i} (x - x_j) / (x_i - x_j)
        let mut basis = Polynomial::constant(FieldElement::ONE);
        let mut denom = FieldElement::ONE;
        for (j, &(xj, _)) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            basis = basis.mul(
                field,
                &Polynomial::new(vec![field.neg(xj), FieldElement::ONE]),
            );
            denom = field.mul(denom, field.sub(xi, xj));
        }
        let k = field.mul(yi, field.inv(denom)?);
        acc = acc.add(field, &basis.scale(field, k));
    }
    Ok(acc)
}

/// Berlekamp-Welch decoding: recovers the polynomial `P` of degree <= `tau`
/// that agrees with at least `eta - epsilon` of the `eta` points, tolerating
/// up to `epsilon < (eta - tau + 1)/2` erroneous points.
///
/// The solver posits a monic error locator `E` of degree `e` and a product
/// polynomial `Q = P * E` of degree <= `e + tau`, solves the linear system
/// `y_i * E(x_i) = Q(x_i)` by Gaussian elimination, and accepts when the
/// division `Q / E` is exact and the quotient disagrees with at most
/// `epsilon` points. It tries `e = 0, 1, ..., epsilon`: the smallest error
/// count that explains the points wins, and while `eta >= 2e + tau + 1`
/// every solution of the system factors into the same quotient. At the
/// loose end of the admissible budget (`2*epsilon = eta - tau`, one short
/// of that guarantee) the remaining candidates are found by interpolating
/// point subsets directly, which is exhaustive over the codewords within
/// distance `epsilon`.
pub fn berlekamp_welch_decode(
    field: &PrimeField,
    points: &[(FieldElement, FieldElement)],
    tau: usize,
    epsilon: usize,
) -> Result<Polynomial, FieldError> {
    check_distinct_x(points)?;
    let eta = points.len();
    if 2 * epsilon > eta.saturating_sub(tau) {
        // epsilon < (eta - tau + 1)/2  <=>  2*epsilon <= eta - tau (integers)
        return Err(FieldError::ErrorBudgetTooLarge { eta, tau, epsilon });
    }
    for e in 0..=epsilon {
        if 2 * e + tau + 1 > eta {
            // Boundary ring: the linear system is short one equation and
            // its solutions need not factor. Interpolate instead.
            if let Some(candidate) = decode_by_subsets(field, points, tau, epsilon) {
                return Ok(candidate);
            }
            break;
        }
        if let Some(candidate) = try_decode_with_locator_degree(field, points, tau, e) {
            let disagreements = points
                .iter()
                .filter(|&&(x, y)| candidate.eval(field, x) != y)
                .count();
            if disagreements <= epsilon && candidate.degree() <= tau as isize {
                return Ok(candidate);
            }
        }
    }
    Err(FieldError::DecodeFailure { tau, epsilon })
}

/// Exhaustive completion for the boundary budget: every polynomial of
/// degree <= `tau` agreeing with at least `eta - epsilon` points passes
/// through some `tau + 1` of its agreement points, so enumerating subsets
/// in index order finds such a polynomial deterministically if any exists.
fn decode_by_subsets(
    field: &PrimeField,
    points: &[(FieldElement, FieldElement)],
    tau: usize,
    epsilon: usize,
) -> Option<Polynomial> {
    let eta = points.len();
    if tau + 1 > eta {
        return None;
    }
    let mut indices: Vec<usize> = (0..=tau).collect();
    loop {
        let subset: Vec<(FieldElement, FieldElement)> =
            indices.iter().map(|&i| points[i]).collect();
        if let Ok(candidate) = lagrange_interpolate(field, &subset) {
            if candidate.degree() <= tau as isize {
                let disagreements = points
                    .iter()
                    .filter(|&&(x, y)| candidate.eval(field, x) != y)
                    .count();
                if disagreements <= epsilon {
                    return Some(candidate);
                }
            }
        }
        // Next (tau+1)-combination of 0..eta in lexicographic order.
        let k = indices.len();
        let mut i = k;
        loop {
            if i == 0 {
                return None;
            }
            i -= 1;
            if indices[i] != i + eta - k {
                break;
            }
        }
        indices[i] += 1;
        for j in i + 1..k {
            indices[j] = indices[j - 1] + 1;
        }
    }
}

fn try_decode_with_locator_degree(
    field: &PrimeField,
    points: &[(FieldElement, FieldElement)],
    tau: usize,
    e: usize,
) -> Option<Polynomial> {
    let eta = points.len();
    // Unknowns: e locator coefficients (E is monic, so e_e = 1 is fixed)
    // followed by e + tau + 1 coefficients of Q.
    let q_len = e + tau + 1;
    let cols = e + q_len;
    let mut rows = Vec::with_capacity(eta);
    for &(x, y) in points {
        let mut row = vec![FieldElement::ZERO; cols + 1];
        let mut xp = FieldElement::ONE;
        for k in 0..e {
            row[k] = field.mul(y, xp);
            xp = field.mul(xp, x);
        }
        // xp is now x^e; move y * x^e to the right-hand side.
        row[cols] = field.neg(field.mul(y, xp));
        let mut xq = FieldElement::ONE;
        for j in 0..q_len {
            row[e + j] = field.neg(xq);
            xq = field.mul(xq, x);
        }
        rows.push(row);
    }
    let solution = solve_linear_system(field, &mut rows, cols)?;
    let mut e_coeffs: Vec<FieldElement> = solution[..e].to_vec();
    e_coeffs.push(FieldElement::ONE);
    let locator = Polynomial::new(e_coeffs);
    let q = Polynomial::new(solution[e..].to_vec());
    let (p, rem) = q.div_rem(field, &locator);
    if rem.is_zero() {
        Some(p)
    } else {
        None
    }
}

/// Gaussian elimination over the field. Rows hold `cols` coefficients plus
/// the right-hand side. Partial pivoting picks the first row with a nonzero
/// entry, scanning in index order; free variables are fixed to zero. Returns
/// `None` when the system is inconsistent.
fn solve_linear_system(
    field: &PrimeField,
    rows: &mut [Vec<FieldElement>],
    cols: usize,
) -> Option<Vec<FieldElement>> {
    let mut pivot_of_col = vec![usize::MAX; cols];
    let mut next_row = 0;
    for col in 0..cols {
        let Some(pivot) = (next_row..rows.len()).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(next_row, pivot);
        let inv = field.inv(rows[next_row][col]).expect("pivot is nonzero");
        for v in rows[next_row].iter_mut() {
            *v = field.mul(*v, inv);
        }
        for r in 0..rows.len() {
            if r != next_row && !rows[r][col].is_zero() {
                let factor = rows[r][col];
                for c in col..=cols {
                    let sub = field.mul(factor, rows[next_row][c]);
                    rows[r][c] = field.sub(rows[r][c], sub);
                }
            }
        }
        pivot_of_col[col] = next_row;
        next_row += 1;
        if next_row == rows.len() {
            break;
        }
    }
    // A row of zeros with a nonzero right-hand side means no solution.
    for row in rows.iter() {
        if row[..cols].iter().all(|v| v.is_zero()) && !row[cols].is_zero() {
            return None;
        }
    }
    let mut solution = vec![FieldElement::ZERO; cols];
    for col in 0..cols {
        if pivot_of_col[col] != usize::MAX {
            solution[col] = rows[pivot_of_col[col]][cols];
        }
    }
    Some(solution)
}

fn check_distinct_x(points: &[(FieldElement, FieldElement)]) -> Result<(), FieldError> {
    let mut seen = std::collections::BTreeSet::new();
    for &(x, _) in points {
        if !seen.insert(x.value()) {
            return Err(FieldError::DuplicateX);
        }
    }
    Ok(())
}
