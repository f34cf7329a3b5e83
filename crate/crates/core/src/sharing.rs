//! (n, k) threshold sharing run as `3 + m` parallel schemes over one
//! payload vector.
//!
//! Two interpolation routes are provided. [`reconstruct`] evaluates at
//! `x_0 = 0` with Lagrange weights shared across all coordinates.
//! [`CoefficientBatch`] derives the monomial coefficients of every
//! coordinate polynomial (Newton divided differences, then expansion) and
//! evaluates them anywhere; share generation uses it.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use thiserror::Error;

use crate::field::{axpy, encode_index, scale_in_place, ElementVector, FieldElement, FieldError, FieldId};
use crate::hashing::{secret_tag, SecretTagKey};

/// Number of leading payload elements that form the secret tag key `u`.
pub const TAG_KEY_LEN: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SharingError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid sharing parameters: {0}")]
    InvalidParams(&'static str),
    #[error("expected {expected} anchors, got {got}")]
    AnchorCount { expected: usize, got: usize },
    #[error("expected payload length {expected}, got {got}")]
    PayloadLength { expected: usize, got: usize },
    #[error("duplicate x coordinate")]
    DuplicateCoordinate,
    #[error("x coordinate equals the secret point x_0")]
    ZeroCoordinate,
    #[error("need {needed} shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
}

/// `n` hubs, threshold `k`, secret length `m` elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SharingParams {
    n: usize,
    k: usize,
    m: usize,
    field: FieldId,
}

impl SharingParams {
    pub fn new(n: usize, k: usize, m: usize, field: FieldId) -> Result<Self, SharingError> {
        if n == 0 {
            return Err(SharingError::InvalidParams("n must be at least 1"));
        }
        if k == 0 || k > n {
            return Err(SharingError::InvalidParams("k must satisfy 1 <= k <= n"));
        }
        if m == 0 {
            return Err(SharingError::InvalidParams("m must be at least 1"));
        }
        if field.bits() < 64 && (n as u64) >> field.bits() != 0 {
            return Err(SharingError::InvalidParams("n must be below the field size"));
        }
        Ok(Self { n, k, m, field })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn field(&self) -> FieldId {
        self.field
    }

    /// `3 + m`
    pub fn payload_len(&self) -> usize {
        TAG_KEY_LEN + self.m
    }

    pub fn x(&self, hub_index: usize) -> FieldElement {
        encode_index(hub_index as u64, self.field).expect("n < |F| checked at construction")
    }
}

/// One hub's share `Y_i` at `x_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareBundle {
    pub hub_index: usize,
    pub x: FieldElement,
    pub payload: ElementVector,
}

/// `(u, S, o)` formed from one reconstructed `Y_0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretCandidate {
    pub tag_key: SecretTagKey,
    pub secret: ElementVector,
    pub tag: FieldElement,
}

impl SecretCandidate {
    /// Partitions `Y_0 =: u || S`.
    pub fn from_y0(y0: &ElementVector, tag: FieldElement) -> Result<Self, SharingError> {
        if y0.len() <= TAG_KEY_LEN {
            return Err(SharingError::PayloadLength { expected: TAG_KEY_LEN + 1, got: y0.len() });
        }
        let (u, secret) = y0.split_at(TAG_KEY_LEN);
        let tag_key = SecretTagKey::from_vector(&u).expect("three elements of one field");
        Ok(Self { tag_key, secret, tag })
    }

    /// `o == h'_u(S)`
    pub fn is_valid(&self) -> bool {
        self.tag.field() == self.tag_key.field() && secret_tag(&self.tag_key, &self.secret).is_ok_and(|t| t == self.tag)
    }
}

// ---------------------------------------------------------------------------
// Coefficient route
// ---------------------------------------------------------------------------

/// Monomial coefficients of `len` parallel polynomials of degree `< k`.
#[derive(Debug, Clone)]
pub struct CoefficientBatch {
    field: FieldId,
    // coefficients[j] holds the x^j coefficient of every coordinate
    coefficients: Vec<Vec<u8>>,
}

impl CoefficientBatch {
    /// Interpolates through `(x_i, y_i)` for every coordinate at once.
    pub fn interpolate(xs: &[FieldElement], ys: &[&ElementVector]) -> Result<Self, SharingError> {
        check_points(xs, ys, false)?;
        let field = xs[0].field();
        let k = xs.len();

        // Newton divided differences, in place.
        let mut dd: Vec<Vec<u8>> = ys.iter().map(|y| y.as_bytes().to_vec()).collect();
        for level in 1..k {
            for i in (level..k).rev() {
                let denom = xs[i].add(xs[i - level])?.inv()?;
                let (lo, hi) = dd.split_at_mut(i);
                let cur = &mut hi[0];
                xor_into(cur, &lo[i - 1]);
                scale_in_place(field, cur, denom.value());
            }
        }

        // Expand p(x) = dd_0 + (x - x_0)(dd_1 + (x - x_1)(...)) into monomials.
        let len = dd[0].len();
        let mut coefficients: Vec<Vec<u8>> = Vec::with_capacity(k);
        coefficients.push(dd[k - 1].clone());
        for i in (0..k - 1).rev() {
            let top = coefficients.last().unwrap().clone();
            coefficients.push(top);
            let d = coefficients.len() - 1;
            let xi = xs[i].value();
            for j in (1..d).rev() {
                let (lo, hi) = coefficients.split_at_mut(j);
                scale_in_place(field, &mut hi[0], xi);
                xor_into(&mut hi[0], &lo[j - 1]);
            }
            scale_in_place(field, &mut coefficients[0], xi);
            xor_into(&mut coefficients[0], &dd[i]);
        }
        debug_assert!(coefficients.iter().all(|c| c.len() == len));
        Ok(Self { field, coefficients })
    }

    pub fn degree_bound(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficient(&self, j: usize) -> Option<ElementVector> {
        let bytes = self.coefficients.get(j)?.clone();
        Some(ElementVector::from_bytes(self.field, bytes).expect("whole elements"))
    }

    /// Horner evaluation of every coordinate at `x`.
    pub fn evaluate(&self, x: FieldElement) -> Result<ElementVector, SharingError> {
        if x.field() != self.field {
            return Err(FieldError::FieldMismatch { left: self.field, right: x.field() }.into());
        }
        if x.is_zero() {
            return Ok(self.coefficient(0).expect("at least one coefficient"));
        }
        let mut acc = self.coefficients.last().unwrap().clone();
        for c in self.coefficients.iter().rev().skip(1) {
            scale_in_place(self.field, &mut acc, x.value());
            xor_into(&mut acc, c);
        }
        Ok(ElementVector::from_bytes(self.field, acc).expect("whole elements"))
    }
}

fn xor_into(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= *s;
    }
}

fn check_points(xs: &[FieldElement], ys: &[&ElementVector], forbid_zero: bool) -> Result<(), SharingError> {
    if xs.is_empty() {
        return Err(SharingError::InsufficientShares { needed: 1, got: 0 });
    }
    if xs.len() != ys.len() {
        return Err(SharingError::AnchorCount { expected: xs.len(), got: ys.len() });
    }
    let field = xs[0].field();
    let len = ys[0].len();
    for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
        if x.field() != field {
            return Err(FieldError::FieldMismatch { left: field, right: x.field() }.into());
        }
        if y.field() != field {
            return Err(FieldError::FieldMismatch { left: field, right: y.field() }.into());
        }
        if y.len() != len {
            return Err(SharingError::PayloadLength { expected: len, got: y.len() });
        }
        if forbid_zero && x.is_zero() {
            return Err(SharingError::ZeroCoordinate);
        }
        if xs[..i].contains(x) {
            return Err(SharingError::DuplicateCoordinate);
        }
    }
    Ok(())
}

/// Builds all `n` shares and `Y_0` from the `k` anchors `R_1..R_k`, which
/// become the shares of hubs `1..k` unchanged.
pub fn generate_shares(
    anchors: &[ElementVector],
    params: &SharingParams,
) -> Result<(ElementVector, Vec<ShareBundle>), SharingError> {
    if anchors.len() != params.k() {
        return Err(SharingError::AnchorCount { expected: params.k(), got: anchors.len() });
    }
    for a in anchors {
        if a.field() != params.field() {
            return Err(FieldError::FieldMismatch { left: params.field(), right: a.field() }.into());
        }
        if a.len() != params.payload_len() {
            return Err(SharingError::PayloadLength { expected: params.payload_len(), got: a.len() });
        }
    }
    let xs: Vec<FieldElement> = (1..=params.k()).map(|i| params.x(i)).collect();
    let ys: Vec<&ElementVector> = anchors.iter().collect();
    let batch = CoefficientBatch::interpolate(&xs, &ys)?;

    let mut shares = Vec::with_capacity(params.n());
    for (i, anchor) in anchors.iter().enumerate() {
        shares.push(ShareBundle { hub_index: i + 1, x: xs[i], payload: anchor.clone() });
    }
    for i in params.k() + 1..=params.n() {
        let x = params.x(i);
        shares.push(ShareBundle { hub_index: i, x, payload: batch.evaluate(x)? });
    }
    let y0 = batch.evaluate(FieldElement::zero(params.field()))?;
    Ok((y0, shares))
}

// ---------------------------------------------------------------------------
// Lagrange route
// ---------------------------------------------------------------------------

/// `lambda_i = prod_{j != i} x_j / (x_j - x_i)`, the weights that evaluate
/// the interpolating polynomial at zero.
pub fn lagrange_weights_at_zero(xs: &[FieldElement]) -> Result<Vec<FieldElement>, SharingError> {
    let k = xs.len();
    let field = match xs.first() {
        Some(x) => x.field(),
        None => return Err(SharingError::InsufficientShares { needed: 1, got: 0 }),
    };
    let mut nums = Vec::with_capacity(k);
    let mut dens = Vec::with_capacity(k);
    for (i, xi) in xs.iter().enumerate() {
        let mut num = FieldElement::one(field);
        let mut den = FieldElement::one(field);
        for (j, xj) in xs.iter().enumerate() {
            if i != j {
                num = num.mul(*xj)?;
                den = den.mul(xj.add(*xi)?)?;
            }
        }
        if den.is_zero() {
            return Err(SharingError::DuplicateCoordinate);
        }
        nums.push(num);
        dens.push(den);
    }

    // One inversion for all denominators.
    let mut prefix = Vec::with_capacity(k);
    let mut acc = FieldElement::one(field);
    for d in &dens {
        prefix.push(acc);
        acc = acc.mul(*d)?;
    }
    let mut inv_acc = acc.inv()?;
    let mut weights = alloc::vec![FieldElement::zero(field); k];
    for i in (0..k).rev() {
        let inv_d = inv_acc.mul(prefix[i])?;
        inv_acc = inv_acc.mul(dens[i])?;
        weights[i] = nums[i].mul(inv_d)?;
    }
    Ok(weights)
}

/// `Y_0 = sum_i lambda_i Y_i` for `k` points with distinct nonzero `x`.
pub fn reconstruct(points: &[(FieldElement, &ElementVector)]) -> Result<ElementVector, SharingError> {
    let xs: Vec<FieldElement> = points.iter().map(|p| p.0).collect();
    let ys: Vec<&ElementVector> = points.iter().map(|p| p.1).collect();
    check_points(&xs, &ys, true)?;
    let weights = lagrange_weights_at_zero(&xs)?;
    let field = xs[0].field();
    let mut out = ElementVector::zeros(field, ys[0].len());
    for (w, y) in weights.iter().zip(&ys) {
        axpy(field, out.bytes_mut(), w.value(), y.as_bytes());
    }
    Ok(out)
}

/// Coefficient-route counterpart of [`reconstruct`].
pub fn reconstruct_via_coefficients(points: &[(FieldElement, &ElementVector)]) -> Result<ElementVector, SharingError> {
    let xs: Vec<FieldElement> = points.iter().map(|p| p.0).collect();
    let ys: Vec<&ElementVector> = points.iter().map(|p| p.1).collect();
    check_points(&xs, &ys, true)?;
    let field = xs[0].field();
    CoefficientBatch::interpolate(&xs, &ys)?.evaluate(FieldElement::zero(field))
}

// ---------------------------------------------------------------------------
// Candidate enumeration
// ---------------------------------------------------------------------------

/// Lexicographic `k`-subsets of `0..n`.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Self { n, idx: (0..k).collect(), done: k > n }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Lazily reconstructs one candidate per `k`-subset of the received
/// shares, in lexicographic order of `x`, skipping duplicate `Y_0` values.
pub struct Candidates<'a> {
    points: Vec<(FieldElement, &'a ElementVector)>,
    subsets: Combinations,
    seen: BTreeSet<Vec<u8>>,
    tag: FieldElement,
}

impl<'a> Candidates<'a> {
    pub fn new(
        bundles: &'a [(FieldElement, ElementVector)],
        k: usize,
        tag: FieldElement,
    ) -> Result<Self, SharingError> {
        if k == 0 {
            return Err(SharingError::InvalidParams("k must be at least 1"));
        }
        if bundles.len() < k {
            return Err(SharingError::InsufficientShares { needed: k, got: bundles.len() });
        }
        let mut points: Vec<(FieldElement, &ElementVector)> = bundles.iter().map(|(x, y)| (*x, y)).collect();
        points.sort_by_key(|p| p.0.value());
        Ok(Self { subsets: Combinations::new(points.len(), k), points, seen: BTreeSet::new(), tag })
    }
}

impl Iterator for Candidates<'_> {
    type Item = Result<SecretCandidate, SharingError>;

    fn next(&mut self) -> Option<Self::Item> {
        for subset in self.subsets.by_ref() {
            let chosen: Vec<(FieldElement, &ElementVector)> = subset.iter().map(|&i| self.points[i]).collect();
            let y0 = match reconstruct(&chosen) {
                Ok(y0) => y0,
                Err(e) => return Some(Err(e)),
            };
            if !self.seen.insert(y0.as_bytes().to_vec()) {
                continue;
            }
            return Some(SecretCandidate::from_y0(&y0, self.tag));
        }
        None
    }
}

/// All distinct candidates, in first-seen order.
pub fn candidate_secrets(
    bundles: &[(FieldElement, ElementVector)],
    k: usize,
    tag: FieldElement,
) -> Result<Vec<SecretCandidate>, SharingError> {
    Candidates::new(bundles, k, tag)?.collect()
}
