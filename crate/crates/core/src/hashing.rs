//! Polynomial universal hash families used for tags.
//!
//! * message tags: `h_{c,d}(v) = d + sum_{j=1..s} c^j v_j`
//! * secret-authenticating tags: `h'_{c,d,e}(y) = d + c e + sum_{j=1..m} c^(j+1) y_j`
//!
//! Both are evaluated with Horner's rule. Keys are single use; that is
//! enforced by PSRD consumption, not here.

use thiserror::Error;

use crate::field::{
    bytes_to_elements, gf8_mul_row, raw_mul, ElementVector, FieldElement, FieldError, FieldId, Gf128WideMultiplier,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum HashError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("secret tags need at least one secret element")]
    EmptySecret,
    #[error("key needs {expected} elements, got {got}")]
    KeyLength { expected: usize, got: usize },
}

/// `(c, d)` for [`message_tag`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageTagKey {
    c: FieldElement,
    d: FieldElement,
}

impl MessageTagKey {
    pub fn new(c: FieldElement, d: FieldElement) -> Result<Self, HashError> {
        if c.field() != d.field() {
            return Err(FieldError::FieldMismatch { left: c.field(), right: d.field() }.into());
        }
        Ok(Self { c, d })
    }

    /// Reads `(c, d)` from a two-element vector.
    pub fn from_vector(v: &ElementVector) -> Result<Self, HashError> {
        if v.len() != 2 {
            return Err(HashError::KeyLength { expected: 2, got: v.len() });
        }
        Self::new(v.get(0).unwrap(), v.get(1).unwrap())
    }

    pub fn field(&self) -> FieldId {
        self.c.field()
    }

    pub fn c(&self) -> FieldElement {
        self.c
    }

    pub fn d(&self) -> FieldElement {
        self.d
    }
}

/// `(c, d, e)` for [`secret_tag`]; the first three elements of a
/// reconstructed `Y_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecretTagKey {
    c: FieldElement,
    d: FieldElement,
    e: FieldElement,
}

impl SecretTagKey {
    pub fn new(c: FieldElement, d: FieldElement, e: FieldElement) -> Result<Self, HashError> {
        for other in [d, e] {
            if other.field() != c.field() {
                return Err(FieldError::FieldMismatch { left: c.field(), right: other.field() }.into());
            }
        }
        Ok(Self { c, d, e })
    }

    pub fn from_vector(v: &ElementVector) -> Result<Self, HashError> {
        if v.len() != 3 {
            return Err(HashError::KeyLength { expected: 3, got: v.len() });
        }
        Self::new(v.get(0).unwrap(), v.get(1).unwrap(), v.get(2).unwrap())
    }

    pub fn field(&self) -> FieldId {
        self.c.field()
    }

    pub fn c(&self) -> FieldElement {
        self.c
    }

    pub fn d(&self) -> FieldElement {
        self.d
    }

    pub fn e(&self) -> FieldElement {
        self.e
    }

    pub fn to_vector(&self) -> ElementVector {
        ElementVector::from_elements(self.field(), [self.c, self.d, self.e]).expect("key elements share one field")
    }
}

// sum_{j=1..s} c^j v_j
fn power_sum(c: FieldElement, values: &ElementVector) -> u128 {
    let bytes = values.as_bytes();
    match c.field() {
        FieldId::Gf8 => {
            let row = gf8_mul_row(c.value() as u8);
            let mut acc = 0u8;
            for &b in bytes.iter().rev() {
                acc = row[(acc ^ b) as usize];
            }
            acc as u128
        }
        FieldId::Gf128 => {
            let by_c = Gf128WideMultiplier::new(c.value());
            let mut acc = 0u128;
            for chunk in bytes.chunks_exact(16).rev() {
                acc ^= u128::from_le_bytes(chunk.try_into().unwrap());
                acc = by_c.mul(acc);
            }
            acc
        }
    }
}

/// Message tag `d + sum_{j=1..s} c^j v_j`.
pub fn message_tag(key: &MessageTagKey, msg: &ElementVector) -> Result<FieldElement, HashError> {
    if msg.field() != key.field() {
        return Err(FieldError::FieldMismatch { left: key.field(), right: msg.field() }.into());
    }
    let sum = FieldElement::new(key.field(), power_sum(key.c, msg))?;
    Ok(key.d.add(sum)?)
}

/// Message tag over a byte string, mapped into the key's field with the
/// `0x80` padding of [`bytes_to_elements`].
pub fn message_tag_bytes(key: &MessageTagKey, msg: &[u8]) -> FieldElement {
    let elements = bytes_to_elements(msg, key.field());
    message_tag(key, &elements).expect("padded message is in the key field")
}

/// Secret-authenticating tag `d + c e + sum_{j=1..m} c^(j+1) y_j`.
pub fn secret_tag(key: &SecretTagKey, secret: &ElementVector) -> Result<FieldElement, HashError> {
    if secret.is_empty() {
        return Err(HashError::EmptySecret);
    }
    if secret.field() != key.field() {
        return Err(FieldError::FieldMismatch { left: key.field(), right: secret.field() }.into());
    }
    let field = key.field();
    let inner = key.e.value() ^ power_sum(key.c, secret);
    let value = key.d.value() ^ raw_mul(field, key.c.value(), inner);
    Ok(FieldElement::new(field, value)?)
}
