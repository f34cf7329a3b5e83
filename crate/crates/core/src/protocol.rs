//! Sender, hub and receiver roles, and the share message frame.
//!
//! One protocol iteration on a table consumes `5 + m` elements at offset
//! `j`: the mask `R` (`3 + m` elements) followed by the message tag key `v`
//! (2 elements). The sharing field also carries both tags.
//!
//! Wire frame (integers big-endian, elements little-endian):
//!
//! ```text
//! "DSKE" | version u8 = 1 | type u8 (0x01 client->hub, 0x02 hub->client)
//! | sender | receiver | origin          each u16 length + bytes
//! | key_id u64 | offset u64 | m u32 | field bits u16
//! | Z ((3 + m) * bits / 8 bytes) | o (16 bytes) | t (16 bytes)
//! ```
//!
//! `sender` is the link-level sender (the origin client, or the relaying
//! hub), `receiver` the destination client and `origin` the client that
//! created the secret. The tag `t` covers every byte before it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::field::{ElementVector, FieldElement, FieldId};
use crate::hashing::{message_tag_bytes, secret_tag, MessageTagKey};
use crate::psrd::{Direction, PsrdTable};
use crate::sharing::{generate_shares, Candidates, SharingError, SharingParams};

pub const FRAME_MAGIC: &[u8; 4] = b"DSKE";
pub const FRAME_VERSION: u8 = 1;
pub const MAX_IDENTITY_LEN: usize = 64;
const TAG_BYTES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("identity must be 1..=64 bytes")]
    BadIdentity,
    #[error("hub {hub_index} has too little PSRD left")]
    InsufficientPsrd { hub_index: usize },
    #[error("no table for {0}")]
    MissingTable(Identity),
    #[error("configuration mismatch: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
}

/// Why a received message was dropped. Discards are never signalled on the
/// wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DiscardReason {
    AclDisallowed,
    WrongRouting,
    TableDepleted,
    BadTag,
    Malformed,
}

impl DiscardReason {
    pub const ALL: [DiscardReason; 5] = [
        DiscardReason::AclDisallowed,
        DiscardReason::WrongRouting,
        DiscardReason::TableDepleted,
        DiscardReason::BadTag,
        DiscardReason::Malformed,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DiscardReason::AclDisallowed => "acl_disallowed",
            DiscardReason::WrongRouting => "wrong_routing",
            DiscardReason::TableDepleted => "table_depleted",
            DiscardReason::BadTag => "bad_tag",
            DiscardReason::Malformed => "malformed",
        }
    }
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A party identifier, 1 to 64 bytes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Identity(Vec<u8>);

impl Identity {
    pub fn new(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.is_empty() || bytes.len() > MAX_IDENTITY_LEN {
            return Err(ProtocolError::BadIdentity);
        }
        Ok(Self(bytes.to_vec()))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_string_lossy(&self) -> String {
        String::from_utf8_lossy(&self.0).into_owned()
    }
}

impl core::str::FromStr for Identity {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s.as_bytes())
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.0))
    }
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Identity({self})")
    }
}

/// Per-sender key counter value `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyId(pub u64);

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    ClientToHub,
    HubToClient,
}

impl MessageKind {
    fn code(self) -> u8 {
        match self {
            MessageKind::ClientToHub => 0x01,
            MessageKind::HubToClient => 0x02,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(MessageKind::ClientToHub),
            0x02 => Some(MessageKind::HubToClient),
            _ => None,
        }
    }
}

/// `M || t` on one hub leg.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareMessage {
    pub kind: MessageKind,
    pub sender: Identity,
    pub receiver: Identity,
    pub origin: Identity,
    pub key_id: KeyId,
    pub offset: u64,
    pub z: ElementVector,
    pub o: FieldElement,
    pub t: FieldElement,
}

impl ShareMessage {
    pub fn field(&self) -> FieldId {
        self.z.field()
    }

    /// Secret length implied by `Z`.
    pub fn m(&self) -> usize {
        self.z.len().saturating_sub(3)
    }

    /// Canonical bytes of everything the message tag covers.
    pub fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.z.as_bytes().len());
        out.extend_from_slice(FRAME_MAGIC);
        out.push(FRAME_VERSION);
        out.push(self.kind.code());
        for id in [&self.sender, &self.receiver, &self.origin] {
            out.extend_from_slice(&(id.len() as u16).to_be_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        out.extend_from_slice(&self.key_id.0.to_be_bytes());
        out.extend_from_slice(&self.offset.to_be_bytes());
        out.extend_from_slice(&(self.m() as u32).to_be_bytes());
        out.extend_from_slice(&(self.field().bits() as u16).to_be_bytes());
        out.extend_from_slice(self.z.as_bytes());
        out.extend_from_slice(&self.o.value().to_le_bytes());
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.body_bytes();
        out.extend_from_slice(&self.t.value().to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        decode_message(bytes)
    }

    fn expected_tag(&self, key: &MessageTagKey) -> FieldElement {
        message_tag_bytes(key, &self.body_bytes())
    }
}

pub fn encode_message(msg: &ShareMessage) -> Vec<u8> {
    msg.encode()
}

/// Total frame length given the fixed prefix, or `None` if `prefix` is too
/// short to tell. Lets stream readers pull exactly one frame.
pub fn frame_len(prefix: &[u8]) -> Result<Option<usize>, ProtocolError> {
    let mut pos = 6;
    if prefix.len() >= 4 && &prefix[..4] != FRAME_MAGIC {
        return Err(ProtocolError::Malformed("bad magic"));
    }
    for _ in 0..3 {
        if prefix.len() < pos + 2 {
            return Ok(None);
        }
        let len = u16::from_be_bytes([prefix[pos], prefix[pos + 1]]) as usize;
        pos += 2 + len;
    }
    let fixed = pos + 8 + 8 + 4 + 2;
    if prefix.len() < fixed {
        return Ok(None);
    }
    let m = u32::from_be_bytes(prefix[fixed - 6..fixed - 2].try_into().unwrap()) as usize;
    let bits = u16::from_be_bytes(prefix[fixed - 2..fixed].try_into().unwrap());
    let field = FieldId::from_bits(bits as u32).ok_or(ProtocolError::Malformed("bad field"))?;
    let z = (3 + m).checked_mul(field.byte_len()).ok_or(ProtocolError::Malformed("m too large"))?;
    Ok(Some(fixed + z + 2 * TAG_BYTES))
}

pub fn decode_message(bytes: &[u8]) -> Result<ShareMessage, ProtocolError> {
    let mut r = Cursor { buf: bytes };
    if r.take(4)? != FRAME_MAGIC {
        return Err(ProtocolError::Malformed("bad magic"));
    }
    if r.u8()? != FRAME_VERSION {
        return Err(ProtocolError::Malformed("unsupported version"));
    }
    let kind = MessageKind::from_code(r.u8()?).ok_or(ProtocolError::Malformed("bad type"))?;
    let sender = r.identity()?;
    let receiver = r.identity()?;
    let origin = r.identity()?;
    let key_id = KeyId(r.u64()?);
    let offset = r.u64()?;
    let m = r.u32()? as usize;
    let field = FieldId::from_bits(r.u16()? as u32).ok_or(ProtocolError::Malformed("bad field"))?;
    if m == 0 {
        return Err(ProtocolError::Malformed("m must be at least 1"));
    }
    let z_len = (3 + m).checked_mul(field.byte_len()).ok_or(ProtocolError::Malformed("m too large"))?;
    let z = ElementVector::from_bytes(field, r.take(z_len)?.to_vec()).map_err(|_| ProtocolError::Malformed("bad Z"))?;
    let o = r.tag(field)?;
    let t = r.tag(field)?;
    if !r.buf.is_empty() {
        return Err(ProtocolError::Malformed("trailing bytes"));
    }
    Ok(ShareMessage { kind, sender, receiver, origin, key_id, offset, z, o, t })
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        if self.buf.len() < n {
            return Err(ProtocolError::Malformed("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ProtocolError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn identity(&mut self) -> Result<Identity, ProtocolError> {
        let len = self.u16()? as usize;
        Identity::new(self.take(len)?).map_err(|_| ProtocolError::Malformed("bad identity"))
    }

    fn tag(&mut self, field: FieldId) -> Result<FieldElement, ProtocolError> {
        let value = u128::from_le_bytes(self.take(TAG_BYTES)?.try_into().unwrap());
        FieldElement::new(field, value).map_err(|_| ProtocolError::Malformed("tag out of range"))
    }
}

// ---------------------------------------------------------------------------
// Tables and policy
// ---------------------------------------------------------------------------

/// Lookup of the table shared with a counterpart in one direction.
pub trait TableStore {
    fn table_mut(&mut self, counterpart: &Identity, direction: Direction) -> Option<&mut PsrdTable>;
}

/// In-memory tables keyed by counterpart identity.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TableSet {
    tables: BTreeMap<(Identity, Direction), PsrdTable>,
}

impl TableSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// A client's tables, keyed by hub.
    pub fn for_client<I: IntoIterator<Item = PsrdTable>>(tables: I) -> Self {
        let mut set = Self::new();
        for t in tables {
            set.insert(t.hub_id().clone(), t);
        }
        set
    }

    /// A hub's tables, keyed by client.
    pub fn for_hub<I: IntoIterator<Item = PsrdTable>>(tables: I) -> Self {
        let mut set = Self::new();
        for t in tables {
            set.insert(t.client_id().clone(), t);
        }
        set
    }

    pub fn insert(&mut self, counterpart: Identity, table: PsrdTable) {
        self.tables.insert((counterpart, table.direction()), table);
    }

    pub fn get(&self, counterpart: &Identity, direction: Direction) -> Option<&PsrdTable> {
        self.tables.get(&(counterpart.clone(), direction))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(Identity, Direction), &PsrdTable)> {
        self.tables.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&(Identity, Direction), &mut PsrdTable)> {
        self.tables.iter_mut()
    }
}

impl TableStore for TableSet {
    fn table_mut(&mut self, counterpart: &Identity, direction: Direction) -> Option<&mut PsrdTable> {
        self.tables.get_mut(&(counterpart.clone(), direction))
    }
}

/// Allowed `(hub, origin, receiver)` triples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Acl {
    allow_all: bool,
    entries: BTreeSet<(Identity, Identity, Identity)>,
}

impl Acl {
    pub fn allow_all() -> Self {
        Self { allow_all: true, entries: BTreeSet::new() }
    }

    pub fn deny_all() -> Self {
        Self::default()
    }

    pub fn allow(&mut self, hub: Identity, origin: Identity, receiver: Identity) {
        self.entries.insert((hub, origin, receiver));
    }

    pub fn allows(&self, hub: &Identity, origin: &Identity, receiver: &Identity) -> bool {
        self.allow_all || self.entries.contains(&(hub.clone(), origin.clone(), receiver.clone()))
    }
}

/// `5 + m`
pub fn iteration_len(m: usize) -> u64 {
    m as u64 + 5
}

fn split_keys(span: &ElementVector, m: usize) -> (ElementVector, MessageTagKey) {
    let (r, v) = span.split_at(3 + m);
    (r, MessageTagKey::from_vector(&v).expect("two elements of one field"))
}

// ---------------------------------------------------------------------------
// Sender (Alice)
// ---------------------------------------------------------------------------

/// The tuple both ends hold after a completed session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionKey {
    pub peer_a: Identity,
    pub peer_b: Identity,
    pub key_id: KeyId,
    pub secret: ElementVector,
}

/// A message bound for one hub.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub hub_index: usize,
    pub hub: Identity,
    pub message: ShareMessage,
}

/// Share generation and distribution for one secret. `hubs[i - 1]` is hub
/// `i`; `tables` must hold a client-to-hub table for each of them.
pub fn alice_initiate<S: TableStore>(
    params: &SharingParams,
    sender: &Identity,
    peer: &Identity,
    hubs: &[Identity],
    tables: &mut S,
    key_id: KeyId,
) -> Result<(SessionKey, Vec<Outgoing>), ProtocolError> {
    if hubs.len() != params.n() {
        return Err(ProtocolError::Config("hub list length differs from n"));
    }
    let need = iteration_len(params.m());
    for (i, hub) in hubs.iter().enumerate() {
        let table =
            tables.table_mut(hub, Direction::ClientToHub).ok_or_else(|| ProtocolError::MissingTable(hub.clone()))?;
        if table.field() != params.field() {
            return Err(ProtocolError::Config("table field differs from sharing field"));
        }
        if !table.peek_available(table.next_offset(), need) {
            return Err(ProtocolError::InsufficientPsrd { hub_index: i + 1 });
        }
    }

    let mut offsets = Vec::with_capacity(hubs.len());
    let mut masks = Vec::with_capacity(hubs.len());
    let mut tag_keys = Vec::with_capacity(hubs.len());
    for hub in hubs {
        let table = tables.table_mut(hub, Direction::ClientToHub).expect("checked above");
        let (offset, span) = table.consume_next(need).expect("availability checked above");
        let (r, v) = split_keys(&span, params.m());
        offsets.push(offset);
        masks.push(r);
        tag_keys.push(v);
    }

    let (y0, shares) = generate_shares(&masks[..params.k()], params)?;
    let (u, secret) = y0.split_at(3);
    let u = crate::hashing::SecretTagKey::from_vector(&u).expect("three elements");
    let o = secret_tag(&u, &secret).expect("m >= 1 in the sharing field");

    let mut out = Vec::with_capacity(hubs.len());
    for (i, share) in shares.iter().enumerate() {
        let z = share.payload.sub(&masks[i]).expect("same shape");
        let mut message = ShareMessage {
            kind: MessageKind::ClientToHub,
            sender: sender.clone(),
            receiver: peer.clone(),
            origin: sender.clone(),
            key_id,
            offset: offsets[i],
            z,
            o,
            t: FieldElement::zero(params.field()),
        };
        message.t = message.expected_tag(&tag_keys[i]);
        out.push(Outgoing { hub_index: i + 1, hub: hubs[i].clone(), message });
    }
    let key = SessionKey { peer_a: sender.clone(), peer_b: peer.clone(), key_id, secret };
    Ok((key, out))
}

/// Alice's side with a monotone key counter.
#[derive(Debug, Clone)]
pub struct Sender {
    identity: Identity,
    hubs: Vec<Identity>,
    params: SharingParams,
    next_key_id: u64,
}

impl Sender {
    pub fn new(identity: Identity, hubs: Vec<Identity>, params: SharingParams) -> Self {
        Self::with_first_key_id(identity, hubs, params, 0)
    }

    pub fn with_first_key_id(identity: Identity, hubs: Vec<Identity>, params: SharingParams, next_key_id: u64) -> Self {
        Self { identity, hubs, params, next_key_id }
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn params(&self) -> &SharingParams {
        &self.params
    }

    pub fn hubs(&self) -> &[Identity] {
        &self.hubs
    }

    pub fn next_key_id(&self) -> KeyId {
        KeyId(self.next_key_id)
    }

    /// Reserves `count` consecutive key ids.
    pub fn reserve_key_ids(&mut self, count: u64) -> KeyId {
        let first = self.next_key_id;
        self.next_key_id += count;
        KeyId(first)
    }

    pub fn initiate<S: TableStore>(
        &mut self,
        peer: &Identity,
        tables: &mut S,
    ) -> Result<(SessionKey, Vec<Outgoing>), ProtocolError> {
        let key_id = KeyId(self.next_key_id);
        let out = self.initiate_with_id(peer, tables, key_id)?;
        self.next_key_id = self.next_key_id.max(key_id.0 + 1);
        Ok(out)
    }

    /// Runs one session under a previously reserved key id.
    pub fn initiate_with_id<S: TableStore>(
        &self,
        peer: &Identity,
        tables: &mut S,
        key_id: KeyId,
    ) -> Result<(SessionKey, Vec<Outgoing>), ProtocolError> {
        alice_initiate(&self.params, &self.identity, peer, &self.hubs, tables, key_id)
    }
}

// ---------------------------------------------------------------------------
// Hub
// ---------------------------------------------------------------------------

/// A share a hub has decrypted from the sender leg.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HubReceived {
    pub origin: Identity,
    pub receiver: Identity,
    pub key_id: KeyId,
    pub y: ElementVector,
    pub o: FieldElement,
}

/// Sender-leg checks and decryption. Spans are consumed only once the
/// ACL, routing and availability checks pass; a bad tag still consumes.
pub fn hub_receive<S: TableStore>(
    hub: &Identity,
    msg: &ShareMessage,
    transport_peer: &Identity,
    tables: &mut S,
    acl: &Acl,
) -> Result<HubReceived, DiscardReason> {
    if msg.kind != MessageKind::ClientToHub || msg.z.len() < 4 {
        return Err(DiscardReason::Malformed);
    }
    if !acl.allows(hub, &msg.origin, &msg.receiver) {
        return Err(DiscardReason::AclDisallowed);
    }
    if transport_peer != &msg.sender || msg.sender != msg.origin {
        return Err(DiscardReason::WrongRouting);
    }
    let m = msg.m();
    let table = tables.table_mut(&msg.origin, Direction::ClientToHub).ok_or(DiscardReason::AclDisallowed)?;
    if table.field() != msg.field() {
        return Err(DiscardReason::Malformed);
    }
    if !table.peek_available(msg.offset, iteration_len(m)) {
        return Err(DiscardReason::TableDepleted);
    }
    let span = table.consume_span(msg.offset, iteration_len(m)).expect("peeked");
    let (r, v) = split_keys(&span, m);
    if msg.expected_tag(&v) != msg.t {
        return Err(DiscardReason::BadTag);
    }
    let y = msg.z.add(&r).expect("same shape");
    Ok(HubReceived { origin: msg.origin.clone(), receiver: msg.receiver.clone(), key_id: msg.key_id, y, o: msg.o })
}

/// Re-encrypts `y` under the receiver-leg table and tags the result. A
/// compromised hub may pass any `(y, o)` here.
pub fn hub_forward<S: TableStore>(
    hub: &Identity,
    received: &HubReceived,
    y: &ElementVector,
    o: FieldElement,
    tables: &mut S,
) -> Result<ShareMessage, DiscardReason> {
    if y.len() < 4 || o.field() != y.field() {
        return Err(DiscardReason::Malformed);
    }
    let m = y.len() - 3;
    let table = tables.table_mut(&received.receiver, Direction::HubToClient).ok_or(DiscardReason::AclDisallowed)?;
    if table.field() != y.field() {
        return Err(DiscardReason::Malformed);
    }
    if !table.peek_available(table.next_offset(), iteration_len(m)) {
        return Err(DiscardReason::TableDepleted);
    }
    let (offset, span) = table.consume_next(iteration_len(m)).expect("peeked");
    let (r, v) = split_keys(&span, m);
    let mut message = ShareMessage {
        kind: MessageKind::HubToClient,
        sender: hub.clone(),
        receiver: received.receiver.clone(),
        origin: received.origin.clone(),
        key_id: received.key_id,
        offset,
        z: y.sub(&r).expect("same shape"),
        o,
        t: FieldElement::zero(y.field()),
    };
    message.t = message.expected_tag(&v);
    Ok(message)
}

/// Honest relay: [`hub_receive`] then [`hub_forward`] of the same share.
pub fn hub_relay<S: TableStore>(
    hub: &Identity,
    msg: &ShareMessage,
    transport_peer: &Identity,
    tables: &mut S,
    acl: &Acl,
) -> Result<ShareMessage, DiscardReason> {
    let received = hub_receive(hub, msg, transport_peer, tables, acl)?;
    hub_forward(hub, &received, &received.y, received.o, tables)
}

// ---------------------------------------------------------------------------
// Receiver (Bob)
// ---------------------------------------------------------------------------

/// Shares with the same `(A, B, K, o)` land in one group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupKey {
    pub origin: Identity,
    pub receiver: Identity,
    pub key_id: KeyId,
    pub tag: FieldElement,
}

#[derive(Debug, Clone)]
struct Group {
    key: GroupKey,
    shares: Vec<(usize, FieldElement, ElementVector)>,
}

impl Group {
    fn points(&self) -> Vec<(FieldElement, ElementVector)> {
        self.shares.iter().map(|(_, x, y)| (*x, y.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ingested {
    /// Stored; the group now holds this many shares.
    Stored { group: GroupKey, group_size: usize },
    /// The hub already delivered a share for this group.
    DuplicateHub,
    /// The key id was already finalized.
    Late,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FinalizeError {
    #[error("no candidate secret passed validation")]
    Abort,
    #[error("need {needed} shares, have {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("unknown group")]
    UnknownGroup,
}

/// Bob's accumulated shares and discard counters.
#[derive(Debug, Clone)]
pub struct ReceiverState {
    identity: Identity,
    hubs: Vec<Identity>,
    params: SharingParams,
    groups: Vec<Group>,
    finalized: BTreeSet<(Identity, KeyId)>,
    discards: BTreeMap<DiscardReason, u64>,
}

impl ReceiverState {
    pub fn new(identity: Identity, hubs: Vec<Identity>, params: SharingParams) -> Self {
        Self { identity, hubs, params, groups: Vec::new(), finalized: BTreeSet::new(), discards: BTreeMap::new() }
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn params(&self) -> &SharingParams {
        &self.params
    }

    pub fn discards(&self) -> &BTreeMap<DiscardReason, u64> {
        &self.discards
    }

    pub fn group_size(&self, group: &GroupKey) -> Option<usize> {
        self.groups.iter().find(|g| &g.key == group).map(|g| g.shares.len())
    }

    /// Groups for one `(A, K)`, in first-seen order.
    pub fn groups_for(&self, origin: &Identity, key_id: KeyId) -> Vec<GroupKey> {
        self.groups
            .iter()
            .filter(|g| &g.key.origin == origin && g.key.key_id == key_id)
            .map(|g| g.key.clone())
            .collect()
    }

    /// Accepted shares for one `(A, K)` across all of its groups.
    pub fn shares_for(&self, origin: &Identity, key_id: KeyId) -> usize {
        self.groups.iter().filter(|g| &g.key.origin == origin && g.key.key_id == key_id).map(|g| g.shares.len()).sum()
    }

    pub fn pending(&self) -> Vec<(Identity, KeyId)> {
        let mut out: Vec<(Identity, KeyId)> = Vec::new();
        for g in &self.groups {
            let id = (g.key.origin.clone(), g.key.key_id);
            if !out.contains(&id) {
                out.push(id);
            }
        }
        out
    }

    pub fn is_finalized(&self, origin: &Identity, key_id: KeyId) -> bool {
        self.finalized.contains(&(origin.clone(), key_id))
    }

    fn discard(&mut self, reason: DiscardReason) -> DiscardReason {
        *self.discards.entry(reason).or_default() += 1;
        reason
    }

    /// Receiver-leg checks, decryption and grouping.
    pub fn ingest<S: TableStore>(
        &mut self,
        msg: &ShareMessage,
        transport_peer: &Identity,
        tables: &mut S,
        acl: &Acl,
    ) -> Result<Ingested, DiscardReason> {
        if msg.kind != MessageKind::HubToClient
            || msg.field() != self.params.field()
            || msg.m() != self.params.m()
            || msg.z.len() < 4
        {
            return Err(self.discard(DiscardReason::Malformed));
        }
        if !acl.allows(&msg.sender, &msg.origin, &msg.receiver) {
            return Err(self.discard(DiscardReason::AclDisallowed));
        }
        let hub_index = match self.hubs.iter().position(|h| h == &msg.sender) {
            Some(i) => i + 1,
            None => return Err(self.discard(DiscardReason::WrongRouting)),
        };
        if transport_peer != &msg.sender || msg.receiver != self.identity {
            return Err(self.discard(DiscardReason::WrongRouting));
        }
        let m = msg.m();
        let span = match tables.table_mut(&msg.sender, Direction::HubToClient) {
            None => return Err(self.discard(DiscardReason::AclDisallowed)),
            Some(t) if t.field() != msg.field() => {
                return Err(self.discard(DiscardReason::Malformed));
            }
            Some(t) if !t.peek_available(msg.offset, iteration_len(m)) => {
                return Err(self.discard(DiscardReason::TableDepleted));
            }
            Some(t) => t.consume_span(msg.offset, iteration_len(m)).expect("peeked"),
        };
        let (r, v) = split_keys(&span, m);
        if msg.expected_tag(&v) != msg.t {
            return Err(self.discard(DiscardReason::BadTag));
        }
        if self.is_finalized(&msg.origin, msg.key_id) {
            return Ok(Ingested::Late);
        }
        let y = msg.z.add(&r).expect("same shape");
        let key =
            GroupKey { origin: msg.origin.clone(), receiver: msg.receiver.clone(), key_id: msg.key_id, tag: msg.o };
        let x = self.params.x(hub_index);
        let group = match self.groups.iter_mut().position(|g| g.key == key) {
            Some(i) => &mut self.groups[i],
            None => {
                self.groups.push(Group { key: key.clone(), shares: Vec::new() });
                self.groups.last_mut().unwrap()
            }
        };
        if group.shares.iter().any(|(i, _, _)| *i == hub_index) {
            return Ok(Ingested::DuplicateHub);
        }
        group.shares.push((hub_index, x, y));
        Ok(Ingested::Stored { group: key, group_size: group.shares.len() })
    }

    fn validate_group(&self, group: &Group) -> Result<SessionKey, FinalizeError> {
        let k = self.params.k();
        if group.shares.len() < k {
            return Err(FinalizeError::InsufficientShares { needed: k, got: group.shares.len() });
        }
        let points = group.points();
        let candidates = Candidates::new(&points, k, group.key.tag)
            .map_err(|_| FinalizeError::InsufficientShares { needed: k, got: points.len() })?;
        for candidate in candidates.flatten() {
            if candidate.is_valid() {
                return Ok(SessionKey {
                    peer_a: group.key.origin.clone(),
                    peer_b: group.key.receiver.clone(),
                    key_id: group.key.key_id,
                    secret: candidate.secret,
                });
            }
        }
        Err(FinalizeError::Abort)
    }

    /// Reconstructs and validates one group. The first candidate, in
    /// lexicographic subset order, whose tag checks out is returned.
    pub fn finalize(&mut self, group: &GroupKey) -> Result<SessionKey, FinalizeError> {
        let g = self.groups.iter().find(|g| &g.key == group).ok_or(FinalizeError::UnknownGroup)?;
        let result = self.validate_group(g);
        if !matches!(result, Err(FinalizeError::InsufficientShares { .. })) {
            self.close(&group.origin, group.key_id);
        }
        result
    }

    /// Tries every group of one `(A, K)`, largest first, and closes the key
    /// id on success or abort.
    pub fn finalize_key(&mut self, origin: &Identity, key_id: KeyId) -> Result<SessionKey, FinalizeError> {
        let mut groups: Vec<&Group> =
            self.groups.iter().filter(|g| &g.key.origin == origin && g.key.key_id == key_id).collect();
        if groups.is_empty() {
            return Err(FinalizeError::UnknownGroup);
        }
        groups.sort_by_key(|g| core::cmp::Reverse(g.shares.len()));
        let k = self.params.k();
        let most = groups[0].shares.len();
        if most < k {
            return Err(FinalizeError::InsufficientShares { needed: k, got: most });
        }
        let mut result = Err(FinalizeError::Abort);
        for g in groups {
            if let Ok(key) = self.validate_group(g) {
                result = Ok(key);
                break;
            }
        }
        self.close(origin, key_id);
        result
    }

    fn close(&mut self, origin: &Identity, key_id: KeyId) {
        self.groups.retain(|g| !(&g.key.origin == origin && g.key.key_id == key_id));
        self.finalized.insert((origin.clone(), key_id));
    }
}

/// Free-function form of [`ReceiverState::ingest`].
pub fn bob_ingest<S: TableStore>(
    state: &mut ReceiverState,
    msg: &ShareMessage,
    transport_peer: &Identity,
    tables: &mut S,
    acl: &Acl,
) -> Result<Ingested, DiscardReason> {
    state.ingest(msg, transport_peer, tables, acl)
}

/// Free-function form of [`ReceiverState::finalize`].
pub fn bob_finalize(state: &mut ReceiverState, group: &GroupKey) -> Result<SessionKey, FinalizeError> {
    state.finalize(group)
}
