//! Binary Galois fields GF(2^8) and GF(2^128).
//!
//! Elements are stored as `u128` values whose bit `i` is the coefficient of
//! `x^i`. Byte encodings are little-endian, so byte 0 carries `x^0..x^7`.
//!
//! Reduction polynomials:
//! - GF(2^8): `x^8 + x^4 + x^3 + x + 1` (0x11B)
//! - GF(2^128): `x^128 + x^7 + x^2 + x + 1`
//!
//! Arithmetic is not constant time.

use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("field mismatch: {left} vs {right}")]
    FieldMismatch { left: FieldId, right: FieldId },
    #[error("division by zero")]
    DivisionByZero,
    #[error("index {index} does not fit in {field}")]
    IndexOverflow { index: u64, field: FieldId },
    #[error("value does not fit in {0}")]
    ValueOutOfRange(FieldId),
    #[error("byte length {len} is not a multiple of the {field} element width")]
    BadLength { len: usize, field: FieldId },
}

/// One of the two supported binary field widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldId {
    Gf8,
    Gf128,
}

impl FieldId {
    pub const fn bits(self) -> u32 {
        match self {
            FieldId::Gf8 => 8,
            FieldId::Gf128 => 128,
        }
    }

    /// Width of one element in bytes.
    pub const fn byte_len(self) -> usize {
        self.bits() as usize / 8
    }

    pub const fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(FieldId::Gf8),
            128 => Some(FieldId::Gf128),
            _ => None,
        }
    }

    const fn mask(self) -> u128 {
        match self {
            FieldId::Gf8 => 0xff,
            FieldId::Gf128 => u128::MAX,
        }
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GF(2^{})", self.bits())
    }
}

// ---------------------------------------------------------------------------
// GF(2^8)
// ---------------------------------------------------------------------------

const fn gf8_mul_slow(mut a: u8, mut b: u8) -> u8 {
    let mut r = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            r ^= a;
        }
        let hi = a & 0x80;
        a <<= 1;
        if hi != 0 {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    r
}

// 0x03 generates the multiplicative group under 0x11B.
const fn build_gf8_tables() -> ([u8; 512], [u8; 256]) {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x = 1u8;
    let mut i = 0;
    while i < 255 {
        exp[i] = x;
        exp[i + 255] = x;
        log[x as usize] = i as u8;
        x = gf8_mul_slow(x, 3);
        i += 1;
    }
    (exp, log)
}

const GF8_TABLES: ([u8; 512], [u8; 256]) = build_gf8_tables();
static GF8_EXP: [u8; 512] = GF8_TABLES.0;
static GF8_LOG: [u8; 256] = GF8_TABLES.1;

#[inline]
pub fn gf8_mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    GF8_EXP[GF8_LOG[a as usize] as usize + GF8_LOG[b as usize] as usize]
}

/// Inverse of a nonzero GF(2^8) element. Returns 0 for 0.
#[inline]
pub fn gf8_inv(a: u8) -> u8 {
    if a == 0 {
        return 0;
    }
    GF8_EXP[255 - GF8_LOG[a as usize] as usize]
}

/// Multiplication table row for a fixed GF(2^8) scalar.
pub fn gf8_mul_row(scalar: u8) -> [u8; 256] {
    let mut row = [0u8; 256];
    if scalar != 0 {
        let ls = GF8_LOG[scalar as usize] as usize;
        for (v, out) in row.iter_mut().enumerate().skip(1) {
            *out = GF8_EXP[GF8_LOG[v] as usize + ls];
        }
    }
    row
}

// ---------------------------------------------------------------------------
// GF(2^128)
// ---------------------------------------------------------------------------

const GF128_POLY_LOW: u128 = 0x87;

// h * x^128 mod P for every 4-bit h.
const GF128_REDUCE4: [u128; 16] = {
    let mut t = [0u128; 16];
    let mut h = 0;
    while h < 16 {
        let mut acc = 0u128;
        let mut bit = 0;
        while bit < 4 {
            if (h >> bit) & 1 == 1 {
                acc ^= GF128_POLY_LOW << bit;
            }
            bit += 1;
        }
        t[h] = acc;
        h += 1;
    }
    t
};

#[inline]
fn gf128_mul_x(a: u128) -> u128 {
    let carry = a >> 127;
    (a << 1) ^ (carry * GF128_POLY_LOW)
}

/// Precomputed 4-bit window table for repeated multiplication by one
/// GF(2^128) element.
#[derive(Clone)]
pub struct Gf128Multiplier {
    table: [u128; 16],
}

impl Gf128Multiplier {
    pub fn new(a: u128) -> Self {
        let mut table = [0u128; 16];
        table[1] = a;
        table[2] = gf128_mul_x(a);
        table[4] = gf128_mul_x(table[2]);
        table[8] = gf128_mul_x(table[4]);
        for i in 3..16usize {
            if !i.is_power_of_two() {
                let high = 1usize << (usize::BITS - 1 - i.leading_zeros());
                table[i] = table[high] ^ table[i ^ high];
            }
        }
        Self { table }
    }

    #[inline]
    pub fn mul(&self, b: u128) -> u128 {
        let mut r = 0u128;
        let mut shift = 128;
        while shift > 0 {
            shift -= 4;
            r = (r << 4) ^ GF128_REDUCE4[(r >> 124) as usize];
            r ^= self.table[((b >> shift) & 0xf) as usize];
        }
        r
    }
}

/// `t * x^128 mod P` for every byte `t`.
const GF128_REDUCE8: [u128; 256] = {
    let mut t = [0u128; 256];
    let mut h = 0;
    while h < 256 {
        let mut acc = 0u128;
        let mut bit = 0;
        while bit < 8 {
            if (h >> bit) & 1 == 1 {
                acc ^= GF128_POLY_LOW << bit;
            }
            bit += 1;
        }
        t[h] = acc;
        h += 1;
    }
    t
};

/// 8-bit window variant of [`Gf128Multiplier`]: a larger table, half the
/// steps per product. Worth it for long runs with one multiplier.
#[derive(Clone)]
pub struct Gf128WideMultiplier {
    table: [u128; 256],
}

impl Gf128WideMultiplier {
    pub fn new(a: u128) -> Self {
        let mut table = [0u128; 256];
        let mut p = a;
        let mut bit = 1usize;
        while bit < 256 {
            table[bit] = p;
            for low in 1..bit {
                table[bit | low] = p ^ table[low];
            }
            p = gf128_mul_x(p);
            bit <<= 1;
        }
        Self { table }
    }

    #[inline]
    pub fn mul(&self, b: u128) -> u128 {
        let bytes = b.to_be_bytes();
        let mut r = self.table[bytes[0] as usize];
        for &byte in &bytes[1..] {
            r = (r << 8) ^ GF128_REDUCE8[(r >> 120) as usize];
            r ^= self.table[byte as usize];
        }
        r
    }
}

#[inline]
pub fn gf128_mul(a: u128, b: u128) -> u128 {
    Gf128Multiplier::new(a).mul(b)
}

/// Inverse via `a^(2^128 - 2)`. Returns 0 for 0.
pub fn gf128_inv(a: u128) -> u128 {
    fn sqr_n(mut x: u128, n: u32) -> u128 {
        for _ in 0..n {
            x = gf128_mul(x, x);
        }
        x
    }
    // f(i) = a^(2^i - 1); f(i + j) = f(i)^(2^j) * f(j).
    // Chain 1, 2, 3, 6, 7, 14, 15, 30, 31, 62, 63, 126, 127.
    let mut f = a;
    let mut ones = 1u32;
    while ones < 127 {
        f = gf128_mul(sqr_n(f, ones), f);
        ones *= 2;
        f = gf128_mul(sqr_n(f, 1), a);
        ones += 1;
    }
    gf128_mul(f, f)
}

// ---------------------------------------------------------------------------
// FieldElement
// ---------------------------------------------------------------------------

/// A value of GF(2^8) or GF(2^128).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    field: FieldId,
    value: u128,
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.field {
            FieldId::Gf8 => write!(f, "gf8:{:#04x}", self.value),
            FieldId::Gf128 => write!(f, "gf128:{:#034x}", self.value),
        }
    }
}

#[allow(clippy::should_implement_trait)]
impl FieldElement {
    pub fn new(field: FieldId, value: u128) -> Result<Self, FieldError> {
        if value & !field.mask() != 0 {
            return Err(FieldError::ValueOutOfRange(field));
        }
        Ok(Self { field, value })
    }

    pub(crate) const fn new_unchecked(field: FieldId, value: u128) -> Self {
        Self { field, value }
    }

    pub const fn zero(field: FieldId) -> Self {
        Self { field, value: 0 }
    }

    pub const fn one(field: FieldId) -> Self {
        Self { field, value: 1 }
    }

    pub const fn field(&self) -> FieldId {
        self.field
    }

    pub const fn value(&self) -> u128 {
        self.value
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0
    }

    /// Reads one element from exactly `field.byte_len()` little-endian bytes.
    pub fn from_le_bytes(field: FieldId, bytes: &[u8]) -> Result<Self, FieldError> {
        if bytes.len() != field.byte_len() {
            return Err(FieldError::BadLength { len: bytes.len(), field });
        }
        let mut buf = [0u8; 16];
        buf[..bytes.len()].copy_from_slice(bytes);
        Ok(Self { field, value: u128::from_le_bytes(buf) })
    }

    /// Appends the little-endian encoding of this element.
    pub fn write_le_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.value.to_le_bytes()[..self.field.byte_len()]);
    }

    fn check(&self, other: &Self) -> Result<(), FieldError> {
        if self.field != other.field {
            return Err(FieldError::FieldMismatch { left: self.field, right: other.field });
        }
        Ok(())
    }

    pub fn add(self, other: Self) -> Result<Self, FieldError> {
        self.check(&other)?;
        Ok(Self { field: self.field, value: self.value ^ other.value })
    }

    /// Identical to [`add`](Self::add) in characteristic 2.
    pub fn sub(self, other: Self) -> Result<Self, FieldError> {
        self.add(other)
    }

    pub fn mul(self, other: Self) -> Result<Self, FieldError> {
        self.check(&other)?;
        Ok(Self { field: self.field, value: raw_mul(self.field, self.value, other.value) })
    }

    pub fn inv(self) -> Result<Self, FieldError> {
        if self.value == 0 {
            return Err(FieldError::DivisionByZero);
        }
        let value = match self.field {
            FieldId::Gf8 => gf8_inv(self.value as u8) as u128,
            FieldId::Gf128 => gf128_inv(self.value),
        };
        Ok(Self { field: self.field, value })
    }

    pub fn pow(self, mut exp: u64) -> Self {
        let mut base = self.value;
        let mut acc = 1u128;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = raw_mul(self.field, acc, base);
            }
            base = raw_mul(self.field, base, base);
            exp >>= 1;
        }
        Self { field: self.field, value: acc }
    }
}

#[inline]
pub(crate) fn raw_mul(field: FieldId, a: u128, b: u128) -> u128 {
    match field {
        FieldId::Gf8 => gf8_mul(a as u8, b as u8) as u128,
        FieldId::Gf128 => gf128_mul(a, b),
    }
}

/// Maps a party index to its evaluation point. Index 0 is the secret's
/// point `x_0`, the zero element.
pub fn encode_index(index: u64, field: FieldId) -> Result<FieldElement, FieldError> {
    if field.bits() < 64 && index >> field.bits() != 0 {
        return Err(FieldError::IndexOverflow { index, field });
    }
    Ok(FieldElement { field, value: index as u128 })
}

// ---------------------------------------------------------------------------
// ElementVector
// ---------------------------------------------------------------------------

/// An ordered sequence of elements of one field, stored as packed
/// little-endian bytes.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ElementVector {
    field: FieldId,
    bytes: Vec<u8>,
}

impl fmt::Debug for ElementVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter()).finish()
    }
}

impl ElementVector {
    pub fn new(field: FieldId) -> Self {
        Self { field, bytes: Vec::new() }
    }

    pub fn zeros(field: FieldId, len: usize) -> Self {
        Self { field, bytes: alloc::vec![0u8; len * field.byte_len()] }
    }

    pub fn from_bytes(field: FieldId, bytes: Vec<u8>) -> Result<Self, FieldError> {
        if !bytes.len().is_multiple_of(field.byte_len()) {
            return Err(FieldError::BadLength { len: bytes.len(), field });
        }
        Ok(Self { field, bytes })
    }

    pub fn from_elements<I>(field: FieldId, elements: I) -> Result<Self, FieldError>
    where
        I: IntoIterator<Item = FieldElement>,
    {
        let mut v = Self::new(field);
        for e in elements {
            v.push(e)?;
        }
        Ok(v)
    }

    /// Builds a vector from raw values, rejecting any that do not fit.
    pub fn from_values(field: FieldId, values: &[u128]) -> Result<Self, FieldError> {
        let mut v = Self::new(field);
        for &x in values {
            v.push(FieldElement::new(field, x)?)?;
        }
        Ok(v)
    }

    pub fn field(&self) -> FieldId {
        self.field
    }

    pub fn len(&self) -> usize {
        self.bytes.len() / self.field.byte_len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub(crate) fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn get(&self, index: usize) -> Option<FieldElement> {
        let w = self.field.byte_len();
        let chunk = self.bytes.get(index * w..(index + 1) * w)?;
        Some(read_element(self.field, chunk))
    }

    pub fn push(&mut self, e: FieldElement) -> Result<(), FieldError> {
        if e.field != self.field {
            return Err(FieldError::FieldMismatch { left: self.field, right: e.field });
        }
        e.write_le_bytes(&mut self.bytes);
        Ok(())
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = FieldElement> + '_ {
        let field = self.field;
        self.bytes.chunks_exact(field.byte_len()).map(move |c| read_element(field, c))
    }

    pub fn is_zero(&self) -> bool {
        self.bytes.iter().all(|&b| b == 0)
    }

    /// Elementwise addition (XOR) in place.
    pub fn add_assign(&mut self, other: &Self) -> Result<(), FieldError> {
        self.check_shape(other)?;
        for (a, b) in self.bytes.iter_mut().zip(&other.bytes) {
            *a ^= *b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self, FieldError> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, FieldError> {
        self.add(other)
    }

    /// `self += scalar * other`, elementwise.
    pub fn add_scaled(&mut self, scalar: FieldElement, other: &Self) -> Result<(), FieldError> {
        self.check_shape(other)?;
        if scalar.field != self.field {
            return Err(FieldError::FieldMismatch { left: self.field, right: scalar.field });
        }
        axpy(self.field, &mut self.bytes, scalar.value, &other.bytes);
        Ok(())
    }

    /// Splits into `[0, at)` and `[at, len)`.
    pub fn split_at(&self, at: usize) -> (Self, Self) {
        let cut = (at * self.field.byte_len()).min(self.bytes.len());
        (
            Self { field: self.field, bytes: self.bytes[..cut].to_vec() },
            Self { field: self.field, bytes: self.bytes[cut..].to_vec() },
        )
    }

    pub fn slice(&self, start: usize, len: usize) -> Option<Self> {
        let w = self.field.byte_len();
        let bytes = self.bytes.get(start * w..(start + len) * w)?;
        Some(Self { field: self.field, bytes: bytes.to_vec() })
    }

    pub fn extend(&mut self, other: &Self) -> Result<(), FieldError> {
        if other.field != self.field {
            return Err(FieldError::FieldMismatch { left: self.field, right: other.field });
        }
        self.bytes.extend_from_slice(&other.bytes);
        Ok(())
    }

    fn check_shape(&self, other: &Self) -> Result<(), FieldError> {
        if self.field != other.field {
            return Err(FieldError::FieldMismatch { left: self.field, right: other.field });
        }
        if self.bytes.len() != other.bytes.len() {
            return Err(FieldError::BadLength { len: other.bytes.len(), field: other.field });
        }
        Ok(())
    }
}

#[inline]
fn read_element(field: FieldId, chunk: &[u8]) -> FieldElement {
    let value = match field {
        FieldId::Gf8 => chunk[0] as u128,
        FieldId::Gf128 => {
            let mut buf = [0u8; 16];
            buf.copy_from_slice(chunk);
            u128::from_le_bytes(buf)
        }
    };
    FieldElement::new_unchecked(field, value)
}

// Below this many bytes the 256-entry table costs more than it saves.
const WIDE_TABLE_MIN_BYTES: usize = 16 * 64;

/// `dst += scalar * src` over packed element bytes of equal length.
pub(crate) fn axpy(field: FieldId, dst: &mut [u8], scalar: u128, src: &[u8]) {
    debug_assert_eq!(dst.len(), src.len());
    if scalar == 0 {
        return;
    }
    match field {
        FieldId::Gf8 => {
            if scalar == 1 {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d ^= *s;
                }
                return;
            }
            let row = gf8_mul_row(scalar as u8);
            for (d, s) in dst.iter_mut().zip(src) {
                *d ^= row[*s as usize];
            }
        }
        FieldId::Gf128 if src.len() >= WIDE_TABLE_MIN_BYTES => {
            let m = Gf128WideMultiplier::new(scalar);
            for (d, s) in dst.chunks_exact_mut(16).zip(src.chunks_exact(16)) {
                let mut sb = [0u8; 16];
                sb.copy_from_slice(s);
                let mut db = [0u8; 16];
                db.copy_from_slice(d);
                let r = u128::from_le_bytes(db) ^ m.mul(u128::from_le_bytes(sb));
                d.copy_from_slice(&r.to_le_bytes());
            }
        }
        FieldId::Gf128 => {
            let m = Gf128Multiplier::new(scalar);
            for (d, s) in dst.chunks_exact_mut(16).zip(src.chunks_exact(16)) {
                let mut sb = [0u8; 16];
                sb.copy_from_slice(s);
                let mut db = [0u8; 16];
                db.copy_from_slice(d);
                let r = u128::from_le_bytes(db) ^ m.mul(u128::from_le_bytes(sb));
                d.copy_from_slice(&r.to_le_bytes());
            }
        }
    }
}

/// `dst *= scalar`, elementwise over packed bytes.
pub(crate) fn scale_in_place(field: FieldId, dst: &mut [u8], scalar: u128) {
    match field {
        FieldId::Gf8 => {
            let row = gf8_mul_row(scalar as u8);
            for d in dst.iter_mut() {
                *d = row[*d as usize];
            }
        }
        FieldId::Gf128 => {
            let m = Gf128Multiplier::new(scalar);
            for d in dst.chunks_exact_mut(16) {
                let mut db = [0u8; 16];
                db.copy_from_slice(d);
                d.copy_from_slice(&m.mul(u128::from_le_bytes(db)).to_le_bytes());
            }
        }
    }
}

/// Splits bytes into field elements after appending `0x80` and zero padding
/// up to a whole element. Injective on byte strings.
pub fn bytes_to_elements(data: &[u8], field: FieldId) -> ElementVector {
    let w = field.byte_len();
    let mut bytes = Vec::with_capacity((data.len() / w + 1) * w);
    bytes.extend_from_slice(data);
    bytes.push(0x80);
    while bytes.len() % w != 0 {
        bytes.push(0);
    }
    ElementVector { field, bytes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e8(v: u8) -> FieldElement {
        FieldElement::new(FieldId::Gf8, v as u128).unwrap()
    }

    #[test]
    fn add_examples() {
        assert_eq!(e8(0x57).add(e8(0x83)).unwrap(), e8(0xd4));
        for a in 0..=255u8 {
            assert!(e8(a).add(e8(a)).unwrap().is_zero());
            assert_eq!(e8(a).add(e8(0)).unwrap(), e8(a));
        }
    }

    #[test]
    fn mixed_fields_are_rejected() {
        let a = FieldElement::one(FieldId::Gf8);
        let b = FieldElement::one(FieldId::Gf128);
        assert!(matches!(a.add(b), Err(FieldError::FieldMismatch { .. })));
        assert!(matches!(a.mul(b), Err(FieldError::FieldMismatch { .. })));
    }

    #[test]
    fn mul_and_inv_examples() {
        assert_eq!(e8(0x02).mul(e8(0x80)).unwrap(), e8(0x1b));
        assert_eq!(e8(0x02).inv().unwrap(), e8(0x8d));
        assert_eq!(e8(1).inv().unwrap(), e8(1));
        assert_eq!(e8(0).inv(), Err(FieldError::DivisionByZero));
        assert_eq!(FieldElement::zero(FieldId::Gf128).inv(), Err(FieldError::DivisionByZero));
    }

    #[test]
    fn gf128_wraps_through_reduction() {
        let x127 = FieldElement::new(FieldId::Gf128, 1u128 << 127).unwrap();
        let x = FieldElement::new(FieldId::Gf128, 2).unwrap();
        assert_eq!(x127.mul(x).unwrap().value(), 0x87);
    }

    #[test]
    fn encode_index_range() {
        assert_eq!(encode_index(0, FieldId::Gf8).unwrap().value(), 0);
        assert_eq!(encode_index(1, FieldId::Gf8).unwrap().value(), 1);
        assert_eq!(encode_index(255, FieldId::Gf8).unwrap().value(), 0xff);
        assert_eq!(encode_index(256, FieldId::Gf8), Err(FieldError::IndexOverflow { index: 256, field: FieldId::Gf8 }));
        assert_eq!(encode_index(u64::MAX, FieldId::Gf128).unwrap().value(), u64::MAX as u128);
    }

    #[test]
    fn padding_blocks() {
        let empty = bytes_to_elements(&[], FieldId::Gf128);
        assert_eq!(empty.len(), 1);
        assert_eq!(empty.get(0).unwrap().value(), 0x80);

        let zeros = bytes_to_elements(&[0u8; 16], FieldId::Gf128);
        assert_eq!(zeros.len(), 2);
        assert!(zeros.get(0).unwrap().is_zero());
        assert_eq!(zeros.get(1).unwrap().value(), 0x80);

        assert_ne!(bytes_to_elements(&[0], FieldId::Gf8), bytes_to_elements(&[0, 0], FieldId::Gf8));
    }

    #[test]
    fn element_vector_rejects_foreign_elements() {
        let mut v = ElementVector::new(FieldId::Gf8);
        assert!(v.push(FieldElement::one(FieldId::Gf128)).is_err());
        assert!(FieldElement::new(FieldId::Gf8, 0x100).is_err());
        assert!(ElementVector::from_bytes(FieldId::Gf128, alloc::vec![0; 15]).is_err());
    }
}
