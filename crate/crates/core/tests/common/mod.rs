//! Reference arithmetic written independently of the library: plain
//! shift-and-reduce products, inverse by search or Fermat, and polynomial
//! interpolation by Gaussian elimination on the Vandermonde system.

#![allow(dead_code, clippy::needless_range_loop)]

pub fn mul8(mut a: u8, mut b: u8) -> u8 {
    let mut r = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            r ^= a;
        }
        let carry = a & 0x80 != 0;
        a <<= 1;
        if carry {
            a ^= 0x1B;
        }
        b >>= 1;
    }
    r
}

pub fn mul128(mut a: u128, mut b: u128) -> u128 {
    let mut r = 0u128;
    while b != 0 {
        if b & 1 != 0 {
            r ^= a;
        }
        let carry = a >> 127 != 0;
        a <<= 1;
        if carry {
            a ^= 0x87;
        }
        b >>= 1;
    }
    r
}

pub fn inv8(a: u8) -> u8 {
    (1..=255u8).find(|&b| mul8(a, b) == 1).expect("nonzero input")
}

pub fn inv128(a: u128) -> u128 {
    // a^(2^128 - 2)
    let mut result = 1u128;
    let mut base = a;
    for i in 0..128 {
        if i != 0 {
            result = mul128(result, base);
        }
        base = mul128(base, base);
    }
    result
}

pub fn mul(bits: u32, a: u128, b: u128) -> u128 {
    if bits == 8 {
        mul8(a as u8, b as u8) as u128
    } else {
        mul128(a, b)
    }
}

pub fn inv(bits: u32, a: u128) -> u128 {
    if bits == 8 {
        inv8(a as u8) as u128
    } else {
        inv128(a)
    }
}

/// Coefficients `a_0..a_{k-1}` of the polynomial through `(xs[i], ys[i])`.
pub fn solve_vandermonde(bits: u32, xs: &[u128], ys: &[u128]) -> Vec<u128> {
    let k = xs.len();
    let mut rows: Vec<Vec<u128>> = (0..k)
        .map(|i| {
            let mut row = Vec::with_capacity(k + 1);
            let mut p = 1u128;
            for _ in 0..k {
                row.push(p);
                p = mul(bits, p, xs[i]);
            }
            row.push(ys[i]);
            row
        })
        .collect();
    for col in 0..k {
        let pivot = (col..k).find(|&r| rows[r][col] != 0).expect("distinct x");
        rows.swap(col, pivot);
        let scale = inv(bits, rows[col][col]);
        for v in rows[col].iter_mut() {
            *v = mul(bits, *v, scale);
        }
        for r in 0..k {
            if r != col && rows[r][col] != 0 {
                let f = rows[r][col];
                for c in 0..=k {
                    let sub = mul(bits, f, rows[col][c]);
                    rows[r][c] ^= sub;
                }
            }
        }
    }
    rows.iter().map(|r| r[k]).collect()
}

pub fn eval_poly(bits: u32, coeffs: &[u128], x: u128) -> u128 {
    let mut acc = 0u128;
    for &c in coeffs.iter().rev() {
        acc = mul(bits, acc, x) ^ c;
    }
    acc
}

/// `d + sum_{j=1..s} c^j v_j` by explicit powers.
pub fn poly_hash(bits: u32, c: u128, d: u128, v: &[u128]) -> u128 {
    let mut acc = d;
    let mut p = c;
    for &vj in v {
        acc ^= mul(bits, p, vj);
        p = mul(bits, p, c);
    }
    acc
}

/// `d + c e + sum_{j=1..m} c^{j+1} y_j` by explicit powers.
pub fn secret_hash(bits: u32, c: u128, d: u128, e: u128, y: &[u128]) -> u128 {
    let mut acc = d ^ mul(bits, c, e);
    let mut p = mul(bits, c, c);
    for &yj in y {
        acc ^= mul(bits, p, yj);
        p = mul(bits, p, c);
    }
    acc
}

/// Upper edge of a 3-sigma binomial interval around rate `p` over `n` draws.
pub fn three_sigma_limit(p: f64, n: u64) -> f64 {
    p + 3.0 * (p * (1.0 - p) / n as f64).sqrt()
}
