//! Pre-shared random data tables.
//!
//! A table holds uniform field elements shared by one client and one hub for
//! one direction. Every element can be handed out once; consuming a span
//! sets its used flags and overwrites the stored values with zeros.
//!
//! Serialized layout (all integers big-endian):
//!
//! ```text
//! "DSKT" | version u8 = 1 | field bits u16 | direction u8
//! | client id (u16 len + bytes) | hub id (u16 len + bytes)
//! | element count u64 | next_offset u64
//! | consumed bitmap, ceil(count / 8) bytes, LSB first
//! | element bytes, little-endian per element
//! ```

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::ops::Range;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_core::RngCore;
use thiserror::Error;

use crate::field::{ElementVector, FieldId};
use crate::protocol::Identity;

pub const TABLE_MAGIC: &[u8; 4] = b"DSKT";
pub const TABLE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PsrdError {
    #[error("table must hold at least one element")]
    EmptyTable,
    #[error("element {index} was already consumed")]
    ReuseAttempt { index: u64 },
    #[error("span {offset}+{len} exceeds table of {count} elements")]
    OutOfRange { offset: u64, len: u64, count: u64 },
    #[error("malformed table file: {0}")]
    Format(&'static str),
}

/// Which way the table's randomness flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// Used by the client to send and by the hub to receive.
    ClientToHub,
    /// Used by the hub to send and by the client to receive.
    HubToClient,
}

impl Direction {
    pub fn code(self) -> u8 {
        match self {
            Direction::ClientToHub => 0,
            Direction::HubToClient => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Direction::ClientToHub),
            1 => Some(Direction::HubToClient),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Direction::ClientToHub => "c2h",
            Direction::HubToClient => "h2c",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyKind {
    SeededDeterministic,
    SystemRandom,
}

/// Randomness used to fill tables.
pub struct EntropySource {
    kind: EntropyKind,
    rng: Box<dyn RngCore + Send>,
}

impl EntropySource {
    /// ChaCha20 keyed from `seed`; identical seeds give identical tables.
    pub fn seeded(seed: u64) -> Self {
        Self { kind: EntropyKind::SeededDeterministic, rng: Box::new(ChaCha20Rng::seed_from_u64(seed)) }
    }

    /// Wraps an operating-system or hardware generator.
    pub fn system<R: RngCore + Send + 'static>(rng: R) -> Self {
        Self { kind: EntropyKind::SystemRandom, rng: Box::new(rng) }
    }

    pub fn kind(&self) -> EntropyKind {
        self.kind
    }

    pub fn fill(&mut self, buf: &mut [u8]) {
        self.rng.fill_bytes(buf);
    }
}

impl core::fmt::Debug for EntropySource {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("EntropySource").field("kind", &self.kind).finish_non_exhaustive()
    }
}

/// A consumable table of pre-shared random field elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsrdTable {
    client_id: Identity,
    hub_id: Identity,
    direction: Direction,
    field: FieldId,
    count: u64,
    next_offset: u64,
    consumed: Vec<u8>,
    data: Vec<u8>,
    // spans consumed since the last take_dirty(), for incremental persistence
    dirty: Vec<Range<u64>>,
}

/// Draws `len` elements from `src`. Clone the result for the second party.
pub fn generate_table(
    len: u64,
    field: FieldId,
    src: &mut EntropySource,
    client_id: Identity,
    hub_id: Identity,
    direction: Direction,
) -> Result<PsrdTable, PsrdError> {
    if len == 0 {
        return Err(PsrdError::EmptyTable);
    }
    let mut data = alloc::vec![0u8; len as usize * field.byte_len()];
    src.fill(&mut data);
    Ok(PsrdTable {
        client_id,
        hub_id,
        direction,
        field,
        count: len,
        next_offset: 0,
        consumed: alloc::vec![0u8; bitmap_len(len)],
        data,
        dirty: Vec::new(),
    })
}

/// Generates the client copy and hub copy of one table.
pub fn generate_pair(
    len: u64,
    field: FieldId,
    src: &mut EntropySource,
    client_id: Identity,
    hub_id: Identity,
    direction: Direction,
) -> Result<(PsrdTable, PsrdTable), PsrdError> {
    let t = generate_table(len, field, src, client_id, hub_id, direction)?;
    Ok((t.clone(), t))
}

fn bitmap_len(count: u64) -> usize {
    count.div_ceil(8) as usize
}

impl PsrdTable {
    pub fn client_id(&self) -> &Identity {
        &self.client_id
    }

    pub fn hub_id(&self) -> &Identity {
        &self.hub_id
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn field(&self) -> FieldId {
        self.field
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn next_offset(&self) -> u64 {
        self.next_offset
    }

    pub fn is_consumed(&self, index: u64) -> bool {
        index < self.count && self.consumed[(index / 8) as usize] >> (index % 8) & 1 == 1
    }

    pub fn consumed_count(&self) -> u64 {
        self.consumed.iter().map(|b| b.count_ones() as u64).sum()
    }

    /// Elements left from `next_offset` to the end.
    pub fn remaining(&self) -> u64 {
        self.count - self.next_offset
    }

    /// True iff [`consume_span`](Self::consume_span) would succeed.
    pub fn peek_available(&self, offset: u64, len: u64) -> bool {
        match offset.checked_add(len) {
            Some(end) if end <= self.count => (offset..end).all(|i| !self.is_consumed(i)),
            _ => false,
        }
    }

    /// Returns `[offset, offset + len)`, marks it used and zeroes the stored
    /// values. Nothing changes on error.
    pub fn consume_span(&mut self, offset: u64, len: u64) -> Result<ElementVector, PsrdError> {
        let end = offset.checked_add(len).filter(|&end| end <= self.count).ok_or(PsrdError::OutOfRange {
            offset,
            len,
            count: self.count,
        })?;
        if let Some(index) = (offset..end).find(|&i| self.is_consumed(i)) {
            return Err(PsrdError::ReuseAttempt { index });
        }
        let w = self.field.byte_len();
        let bytes = &mut self.data[offset as usize * w..end as usize * w];
        let out = bytes.to_vec();
        bytes.fill(0);
        for i in offset..end {
            self.consumed[(i / 8) as usize] |= 1 << (i % 8);
        }
        self.next_offset = self.next_offset.max(end);
        if len > 0 {
            self.dirty.push(offset..end);
        }
        Ok(ElementVector::from_bytes(self.field, out).expect("whole elements"))
    }

    /// Consumes `len` elements at `next_offset`, returning the offset used.
    pub fn consume_next(&mut self, len: u64) -> Result<(u64, ElementVector), PsrdError> {
        let offset = self.next_offset;
        Ok((offset, self.consume_span(offset, len)?))
    }

    /// Spans consumed since the previous call.
    pub fn take_dirty(&mut self) -> Vec<Range<u64>> {
        core::mem::take(&mut self.dirty)
    }

    /// Raw element bytes, zeros where consumed.
    pub fn element_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn bitmap(&self) -> &[u8] {
        &self.consumed
    }

    pub fn layout(&self) -> TableLayout {
        let header = 4 + 1 + 2 + 1 + 2 + self.client_id.len() + 2 + self.hub_id.len();
        let next_offset_at = header + 8;
        let bitmap_at = next_offset_at + 8;
        let elements_at = bitmap_at + self.consumed.len();
        TableLayout {
            next_offset_at,
            bitmap_at,
            elements_at,
            total: elements_at + self.data.len(),
            element_width: self.field.byte_len(),
        }
    }

    pub fn save(&self) -> Vec<u8> {
        let layout = self.layout();
        let mut out = Vec::with_capacity(layout.total);
        out.extend_from_slice(TABLE_MAGIC);
        out.push(TABLE_VERSION);
        out.extend_from_slice(&(self.field.bits() as u16).to_be_bytes());
        out.push(self.direction.code());
        for id in [&self.client_id, &self.hub_id] {
            out.extend_from_slice(&(id.len() as u16).to_be_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out.extend_from_slice(&self.count.to_be_bytes());
        out.extend_from_slice(&self.next_offset.to_be_bytes());
        out.extend_from_slice(&self.consumed);
        out.extend_from_slice(&self.data);
        debug_assert_eq!(out.len(), layout.total);
        out
    }

    pub fn load(bytes: &[u8]) -> Result<Self, PsrdError> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != TABLE_MAGIC {
            return Err(PsrdError::Format("bad magic"));
        }
        if r.u8()? != TABLE_VERSION {
            return Err(PsrdError::Format("unsupported version"));
        }
        let field = FieldId::from_bits(r.u16()? as u32).ok_or(PsrdError::Format("unsupported field"))?;
        let direction = Direction::from_code(r.u8()?).ok_or(PsrdError::Format("bad direction"))?;
        let client_id = r.identity()?;
        let hub_id = r.identity()?;
        let count = r.u64()?;
        let next_offset = r.u64()?;
        if count == 0 {
            return Err(PsrdError::Format("empty table"));
        }
        if next_offset > count {
            return Err(PsrdError::Format("next_offset past end"));
        }
        let data_len = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(field.byte_len()))
            .ok_or(PsrdError::Format("element count too large"))?;
        let consumed = r.take(bitmap_len(count))?.to_vec();
        let data = r.take(data_len)?.to_vec();
        if !r.buf.is_empty() {
            return Err(PsrdError::Format("trailing bytes"));
        }
        Ok(Self { client_id, hub_id, direction, field, count, next_offset, consumed, data, dirty: Vec::new() })
    }
}

/// Byte positions inside a serialized table, for in-place updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableLayout {
    pub next_offset_at: usize,
    pub bitmap_at: usize,
    pub elements_at: usize,
    pub total: usize,
    pub element_width: usize,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PsrdError> {
        if self.buf.len() < n {
            return Err(PsrdError::Format("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, PsrdError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PsrdError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PsrdError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn identity(&mut self) -> Result<Identity, PsrdError> {
        let len = self.u16()? as usize;
        Identity::new(self.take(len)?).map_err(|_| PsrdError::Format("bad identity"))
    }
}
