//! Closed-form security and robustness bounds.
//!
//! * `epsilon_secret = min(C(n, k) (m + 1) / |F|, 1)`
//! * `epsilon_auth = min(s / |F|, 1)` for tagged messages of `s` elements
//! * the whole protocol is `epsilon_secret + 2 n epsilon_auth` secure
//! * with at most `min(n - k, k - 1)` compromised hubs it aborts with
//!   probability at most `epsilon_secret`
//!
//! Binomials are exact; floating point only appears in the final ratios.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BoundsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
}

/// Exact `C(n, k)`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

fn check(n: u64, k: u64, m: u64, field_bits: u32) -> Result<(), BoundsError> {
    if k == 0 || k > n {
        return Err(BoundsError::InvalidParams("need 1 <= k <= n"));
    }
    if m == 0 {
        return Err(BoundsError::InvalidParams("need m >= 1"));
    }
    if field_bits == 0 {
        return Err(BoundsError::InvalidParams("need field_bits >= 1"));
    }
    Ok(())
}

/// `min(numerator / 2^bits, 1)`
fn clamped_ratio(numerator: &BigUint, bits: u32) -> f64 {
    if numerator.bits() > bits as u64 {
        return 1.0;
    }
    let one = BigUint::one() << bits as usize;
    if *numerator >= one {
        return 1.0;
    }
    let x = numerator.to_f64().unwrap_or(f64::INFINITY);
    libm::ldexp(x, -(bits as i32)).min(1.0)
}

/// log2 of a positive big integer, accurate to f64 precision.
pub fn log2_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits == 0 {
        return f64::NEG_INFINITY;
    }
    if bits <= 1000 {
        return libm::log2(x.to_f64().unwrap());
    }
    let shift = bits - 64;
    let top = (x >> shift as usize).to_u64().unwrap();
    libm::log2(top as f64) + shift as f64
}

/// Probability bound that a wrong secret passes validation, over all
/// `C(n, k)` candidate subsets.
pub fn epsilon_secret(n: u64, k: u64, m: u64, field_bits: u32) -> Result<f64, BoundsError> {
    check(n, k, m, field_bits)?;
    Ok(clamped_ratio(&(binomial(n, k) * (m + 1)), field_bits))
}

/// Forgery bound for one tagged message of `s` elements.
pub fn epsilon_auth(s: u64, field_bits: u32) -> f64 {
    if s == 0 {
        return 0.0;
    }
    clamped_ratio(&BigUint::from(s), field_bits)
}

pub fn robustness_ok(n: u64, k: u64, compromised: u64) -> Result<bool, BoundsError> {
    if k == 0 || k > n {
        return Err(BoundsError::InvalidParams("need 1 <= k <= n"));
    }
    if compromised > n {
        return Err(BoundsError::InvalidParams("compromised exceeds n"));
    }
    Ok(compromised <= (n - k).min(k - 1))
}

/// Bits of security lost to the `C(n, k)` multiplier, `log2 C(n, k)`.
pub fn security_loss_bits(n: u64, k: u64) -> f64 {
    log2_big(&binomial(n, k))
}

/// Tag-field blocks `s` for a tagged byte string of `len` bytes after the
/// one-byte-minimum padding.
pub fn message_blocks(len: usize, element_bytes: usize) -> u64 {
    (len / element_bytes + 1) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub n: u64,
    pub k: u64,
    pub m: u64,
    pub field_bits: u32,
    pub msg_blocks: u64,
    pub compromised: u64,
    pub subsets: BigUint,
    pub epsilon_secret: f64,
    pub epsilon_auth: f64,
    /// `epsilon_secret + 2 n epsilon_auth`; each term is clamped, the sum is not.
    pub epsilon_total: f64,
    pub security_loss_bits: f64,
    /// `field_bits - log2(C(n, k) (m + 1))`, floored at zero.
    pub security_bits: f64,
    pub robustness_ok: bool,
}

pub fn report(
    n: u64,
    k: u64,
    m: u64,
    field_bits: u32,
    msg_blocks: u64,
    compromised: u64,
) -> Result<BoundReport, BoundsError> {
    let epsilon_secret = epsilon_secret(n, k, m, field_bits)?;
    let epsilon_auth = epsilon_auth(msg_blocks, field_bits);
    let subsets = binomial(n, k);
    let security_bits = (field_bits as f64 - log2_big(&(&subsets * (m + 1)))).max(0.0);
    Ok(BoundReport {
        n,
        k,
        m,
        field_bits,
        msg_blocks,
        compromised,
        security_loss_bits: log2_big(&subsets),
        subsets,
        epsilon_secret,
        epsilon_auth,
        epsilon_total: epsilon_secret + 2.0 * n as f64 * epsilon_auth,
        security_bits,
        robustness_ok: robustness_ok(n, k, compromised)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_and_small_cases() {
        assert_eq!(epsilon_secret(1, 1, 1, 1).unwrap(), 1.0);
        assert_eq!(epsilon_auth(0, 128), 0.0);
        assert_eq!(epsilon_auth(256, 8), 1.0);
        assert_eq!(epsilon_auth(4, 128), libm::ldexp(1.0, -126));
        assert!(epsilon_secret(3, 4, 1, 8).is_err());
        assert!(epsilon_secret(3, 2, 0, 8).is_err());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(11, 6), BigUint::from(462u32));
        assert_eq!(binomial(5, 3), BigUint::from(10u32));
        assert_eq!(binomial(3, 4), BigUint::zero());
        assert_eq!(binomial(7, 0), BigUint::one());
    }

    #[test]
    fn robustness_examples() {
        assert!(robustness_ok(9, 5, 4).unwrap());
        assert!(robustness_ok(3, 2, 1).unwrap());
        assert!(!robustness_ok(3, 2, 2).unwrap());
        assert!(!robustness_ok(5, 1, 1).unwrap());
        assert!(robustness_ok(5, 1, 0).unwrap());
        assert!(robustness_ok(3, 2, 4).is_err());
    }

    #[test]
    fn large_binomial_log() {
        let x = binomial(4000, 2000);
        let exact_bits = x.bits() as f64;
        let l = log2_big(&x);
        assert!(l <= exact_bits && l > exact_bits - 1.0);
    }
}
