//! Deterministic in-process network for adversarial protocol runs.
//!
//! Every trial provisions fresh tables, runs one session from `alice` to
//! `bob` through hubs `hub-1..hub-n`, and records whether Bob completed with
//! Alice's secret, completed with a different one, or aborted. Links deliver
//! encoded frames with authenticated sender labels; channel actions act on
//! the frame bytes below the label.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;
use thiserror::Error;

use crate::field::{ElementVector, FieldId};
use crate::protocol::{
    hub_forward, hub_receive, iteration_len, Acl, DiscardReason, Identity, Ingested, ReceiverState, Sender,
    ShareMessage, TableSet,
};
use crate::psrd::{generate_pair, Direction, EntropySource};
use crate::sharing::SharingParams;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// What a compromised hub does with shares it relays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HubStrategy {
    ForwardHonest,
    /// Decrypts and never forwards.
    Drop,
    /// Forwards an independent uniform `Y` per hub, keeping `o`.
    SubstituteRandom,
    /// All compromised hubs forward one shared uniform `Y`, keeping `o`.
    SubstituteConsistent,
}

impl HubStrategy {
    pub fn label(self) -> &'static str {
        match self {
            HubStrategy::ForwardHonest => "forward-honest",
            HubStrategy::Drop => "drop",
            HubStrategy::SubstituteRandom => "substitute-random",
            HubStrategy::SubstituteConsistent => "substitute-consistent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            HubStrategy::ForwardHonest,
            HubStrategy::Drop,
            HubStrategy::SubstituteRandom,
            HubStrategy::SubstituteConsistent,
        ]
        .into_iter()
        .find(|h| h.label() == s)
    }
}

/// One direction of one hub's links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Link {
    /// Alice to hub `i`.
    ToHub(usize),
    /// Hub `i` to Bob.
    FromHub(usize),
}

impl Link {
    pub fn hub_index(self) -> usize {
        match self {
            Link::ToHub(i) | Link::FromHub(i) => i,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelAction {
    Drop,
    /// XOR `mask` into the byte `from_end` positions before the frame's end.
    Tamper {
        from_end: usize,
        mask: u8,
    },
    Duplicate,
    /// Holds the frame back behind later traffic.
    Reorder,
}

impl ChannelAction {
    fn is_active_attack(self) -> bool {
        matches!(self, ChannelAction::Drop | ChannelAction::Tamper { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Compromise {
    /// These hub indices, every trial.
    Fixed(BTreeSet<usize>),
    /// A fresh uniform choice of this many hubs per trial.
    Random(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdversaryConfig {
    pub compromised: Compromise,
    pub strategy: HubStrategy,
    pub channel_actions: Vec<(Link, ChannelAction)>,
    /// Passive Eve leaves honest-hub links alone.
    pub passive: bool,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl AdversaryConfig {
    pub fn none() -> Self {
        Self {
            compromised: Compromise::Fixed(BTreeSet::new()),
            strategy: HubStrategy::ForwardHonest,
            channel_actions: Vec::new(),
            passive: true,
        }
    }

    pub fn compromised_fixed<I: IntoIterator<Item = usize>>(hubs: I, strategy: HubStrategy) -> Self {
        Self { compromised: Compromise::Fixed(hubs.into_iter().collect()), strategy, ..Self::none() }
    }

    pub fn compromised_random(count: usize, strategy: HubStrategy) -> Self {
        Self { compromised: Compromise::Random(count), strategy, ..Self::none() }
    }

    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        match &self.compromised {
            Compromise::Fixed(set) => {
                if let Some(bad) = set.iter().find(|&&i| i == 0 || i > n) {
                    return Err(SimError::Invalid(format!("hub index {bad} outside 1..={n}")));
                }
            }
            Compromise::Random(count) => {
                if *count > n {
                    return Err(SimError::Invalid(format!("{count} compromised hubs of {n}")));
                }
            }
        }
        for (link, action) in &self.channel_actions {
            let i = link.hub_index();
            if i == 0 || i > n {
                return Err(SimError::Invalid(format!("link to hub {i} outside 1..={n}")));
            }
            if self.passive && action.is_active_attack() {
                let compromised = match &self.compromised {
                    Compromise::Fixed(set) => set.contains(&i),
                    Compromise::Random(_) => false,
                };
                if !compromised {
                    return Err(SimError::Invalid(format!(
                        "passive adversary cannot drop or tamper on honest hub {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScenarioReport {
    pub trials: u64,
    pub completed: u64,
    pub aborted: u64,
    /// Aborts where Bob never held `k` shares of any group.
    pub aborted_insufficient: u64,
    pub wrong_secret: u64,
    pub tampered: u64,
    pub tampered_accepted: u64,
    pub discard_histogram: BTreeMap<DiscardReason, u64>,
    pub seed: u64,
}

impl ScenarioReport {
    /// `key=value` lines, stable across runs with the same seed.
    pub fn to_lines(&self) -> Vec<String> {
        let mut out = alloc::vec![
            format!("seed={}", self.seed),
            format!("trials={}", self.trials),
            format!("completed={}", self.completed),
            format!("aborted={}", self.aborted),
            format!("aborted_insufficient={}", self.aborted_insufficient),
            format!("wrong_secret={}", self.wrong_secret),
            format!("tampered={}", self.tampered),
            format!("tampered_accepted={}", self.tampered_accepted),
        ];
        for reason in DiscardReason::ALL {
            let count = self.discard_histogram.get(&reason).copied().unwrap_or(0);
            out.push(format!("discard.{}={}", reason.label(), count));
        }
        out
    }

    pub fn discards(&self, reason: DiscardReason) -> u64 {
        self.discard_histogram.get(&reason).copied().unwrap_or(0)
    }

    fn discard(&mut self, reason: DiscardReason) {
        *self.discard_histogram.entry(reason).or_default() += 1;
    }

    pub fn merge(&mut self, other: &ScenarioReport) {
        self.trials += other.trials;
        self.completed += other.completed;
        self.aborted += other.aborted;
        self.aborted_insufficient += other.aborted_insufficient;
        self.wrong_secret += other.wrong_secret;
        self.tampered += other.tampered;
        self.tampered_accepted += other.tampered_accepted;
        for (reason, count) in &other.discard_histogram {
            *self.discard_histogram.entry(*reason).or_default() += count;
        }
    }
}

/// SplitMix64 step, used to derive per-trial seeds.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    let mut z = seed ^ trial.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn identity(s: &str) -> Identity {
    Identity::new(s.as_bytes()).expect("static identity")
}

pub fn hub_identity(i: usize) -> Identity {
    identity(&format!("hub-{i}"))
}

struct Delivery {
    link: Link,
    frame: Vec<u8>,
    tampered: bool,
}

struct EventQueue {
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    pending: BTreeMap<u64, Delivery>,
    seq: u64,
}

impl EventQueue {
    fn new() -> Self {
        Self { heap: BinaryHeap::new(), pending: BTreeMap::new(), seq: 0 }
    }

    fn push(&mut self, at: u64, delivery: Delivery) {
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq)));
        self.pending.insert(self.seq, delivery);
    }

    fn pop(&mut self) -> Option<(u64, Delivery)> {
        let Reverse((at, seq)) = self.heap.pop()?;
        Some((at, self.pending.remove(&seq).expect("queued")))
    }
}

fn random_vector(rng: &mut ChaCha8Rng, field: FieldId, len: usize) -> ElementVector {
    let mut bytes = alloc::vec![0u8; len * field.byte_len()];
    rng.fill_bytes(&mut bytes);
    ElementVector::from_bytes(field, bytes).expect("whole elements")
}

fn pick_compromised(rng: &mut ChaCha8Rng, n: usize, c: &Compromise) -> BTreeSet<usize> {
    match c {
        Compromise::Fixed(set) => set.clone(),
        Compromise::Random(count) => {
            // partial Fisher-Yates over 1..=n
            let mut pool: Vec<usize> = (1..=n).collect();
            for i in 0..*count {
                let j = i + (rng.next_u64() % (n - i) as u64) as usize;
                pool.swap(i, j);
            }
            pool[..*count].iter().copied().collect()
        }
    }
}

fn schedule(
    queue: &mut EventQueue,
    rng: &mut ChaCha8Rng,
    now: u64,
    link: Link,
    msg: &ShareMessage,
    adversary: &AdversaryConfig,
    report: &mut ScenarioReport,
) {
    let mut frame = msg.encode();
    let mut copies = 1;
    let mut delay = 1 + rng.next_u64() % 10;
    let mut tampered = false;
    for (l, action) in &adversary.channel_actions {
        if *l != link {
            continue;
        }
        match *action {
            ChannelAction::Drop => return,
            ChannelAction::Tamper { from_end, mask } => {
                let len = frame.len();
                frame[len - 1 - from_end % len] ^= mask;
                tampered |= mask != 0;
            }
            ChannelAction::Duplicate => copies += 1,
            ChannelAction::Reorder => delay += 100,
        }
    }
    if tampered {
        report.tampered += copies;
    }
    for c in 0..copies {
        queue.push(now + delay + c, Delivery { link, frame: frame.clone(), tampered });
    }
}

/// Runs `trials` independent sessions.
pub fn run_scenario(
    params: &SharingParams,
    adversary: &AdversaryConfig,
    trials: u64,
    seed: u64,
) -> Result<ScenarioReport, SimError> {
    adversary.validate(params.n())?;
    let mut report = ScenarioReport { seed, ..ScenarioReport::default() };
    for trial in 0..trials {
        run_trial(params, adversary, trial_seed(seed, trial), &mut report);
    }
    Ok(report)
}

/// Runs one session; exposed so harnesses can spread trials over workers.
pub fn run_trial(params: &SharingParams, adversary: &AdversaryConfig, seed: u64, report: &mut ScenarioReport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n();
    let field = params.field();
    let alice = identity("alice");
    let bob = identity("bob");
    let hubs: Vec<Identity> = (1..=n).map(hub_identity).collect();
    let need = iteration_len(params.m());

    let mut src = EntropySource::seeded(rng.next_u64());
    let mut alice_tables = TableSet::new();
    let mut bob_tables = TableSet::new();
    let mut hub_tables: Vec<TableSet> = Vec::with_capacity(n);
    for hub in &hubs {
        let mut ht = TableSet::new();
        let (a, h) = generate_pair(need, field, &mut src, alice.clone(), hub.clone(), Direction::ClientToHub)
            .expect("nonzero length");
        alice_tables.insert(hub.clone(), a);
        ht.insert(alice.clone(), h);
        let (b, h) = generate_pair(need, field, &mut src, bob.clone(), hub.clone(), Direction::HubToClient)
            .expect("nonzero length");
        bob_tables.insert(hub.clone(), b);
        ht.insert(bob.clone(), h);
        hub_tables.push(ht);
    }

    let compromised = pick_compromised(&mut rng, n, &adversary.compromised);
    let collusion_y = random_vector(&mut rng, field, params.payload_len());
    let acl = Acl::allow_all();

    let mut sender = Sender::new(alice.clone(), hubs.clone(), *params);
    let (alice_key, outgoing) = sender.initiate(&bob, &mut alice_tables).expect("tables sized for one session");
    let mut receiver = ReceiverState::new(bob.clone(), hubs.clone(), *params);

    let mut queue = EventQueue::new();
    for out in &outgoing {
        schedule(&mut queue, &mut rng, 0, Link::ToHub(out.hub_index), &out.message, adversary, report);
    }

    while let Some((now, delivery)) = queue.pop() {
        let msg = match ShareMessage::decode(&delivery.frame) {
            Ok(msg) => msg,
            Err(_) => {
                report.discard(DiscardReason::Malformed);
                continue;
            }
        };
        match delivery.link {
            Link::ToHub(i) => {
                let hub = &hubs[i - 1];
                let tables = &mut hub_tables[i - 1];
                let received = match hub_receive(hub, &msg, &alice, tables, &acl) {
                    Ok(r) => r,
                    Err(reason) => {
                        report.discard(reason);
                        continue;
                    }
                };
                if delivery.tampered {
                    report.tampered_accepted += 1;
                }
                let (y, o) = if compromised.contains(&i) {
                    match adversary.strategy {
                        HubStrategy::ForwardHonest => (received.y.clone(), received.o),
                        HubStrategy::Drop => continue,
                        HubStrategy::SubstituteRandom => {
                            (random_vector(&mut rng, field, params.payload_len()), received.o)
                        }
                        HubStrategy::SubstituteConsistent => (collusion_y.clone(), received.o),
                    }
                } else {
                    (received.y.clone(), received.o)
                };
                match hub_forward(hub, &received, &y, o, tables) {
                    Ok(fwd) => schedule(&mut queue, &mut rng, now, Link::FromHub(i), &fwd, adversary, report),
                    Err(reason) => report.discard(reason),
                }
            }
            Link::FromHub(i) => match receiver.ingest(&msg, &hubs[i - 1], &mut bob_tables, &acl) {
                Ok(Ingested::Stored { .. }) if delivery.tampered => report.tampered_accepted += 1,
                Ok(_) => {}
                Err(reason) => report.discard(reason),
            },
        }
    }

    report.trials += 1;
    match receiver.finalize_key(&alice, alice_key.key_id) {
        Ok(bob_key) => {
            report.completed += 1;
            if bob_key.secret != alice_key.secret {
                report.wrong_secret += 1;
            }
        }
        Err(crate::protocol::FinalizeError::Abort) => report.aborted += 1,
        Err(_) => {
            report.aborted += 1;
            report.aborted_insufficient += 1;
        }
    }
}
