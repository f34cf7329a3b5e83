//! Client key agent.
//!
//! Holds one connection per hub, plays sender for local key requests and
//! receiver for frames relayed from peers, and serves a local key API:
//! newline-delimited JSON over TCP.
//!
//! ```text
//! -> {"op":"get_key","peer":"bob","size_bits":256}
//! <- {"ok":true,"key_id":0,"key":"9f..","size_bits":256}
//! -> {"op":"get_key_by_id","peer":"alice","key_id":0,"size_bits":256}
//! <- {"ok":true,"key_id":0,"key":"9f..","size_bits":256}
//! -> {"op":"status"}
//! <- {"ok":true,"identity":"bob","hubs_connected":3,"psrd_remaining":{..}}
//! <- {"ok":false,"error":".."}
//! ```
//!
//! A request larger than one session runs several sessions under
//! consecutive key ids; the peer asks for the first id and the same size.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use dske_core::protocol::{
    iteration_len, Acl, FinalizeError, Identity, Ingested, KeyId, ReceiverState, Sender, ShareMessage,
};
use dske_core::psrd::Direction;
use dske_core::sharing::SharingParams;
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::config::ClientConfig;
use crate::tables::FileTables;
use crate::wire::{read_frame, read_hello, write_hello};
use crate::Error;

const CONNECT_TIMEOUT: Duration = Duration::from_millis(500);
const RECONNECT_EVERY: Duration = Duration::from_millis(250);
const TICK: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveredKey {
    pub key_id: KeyId,
    pub key: Vec<u8>,
}

enum Inbound {
    Ready(Vec<u8>),
    Aborted,
}

struct State {
    sender: Sender,
    tables: FileTables,
    receiver: ReceiverState,
    inbound: HashMap<(Identity, u64), Inbound>,
    kth_seen: HashMap<(Identity, u64), Instant>,
    delivered: HashSet<(Identity, u64)>,
}

struct Link {
    hub: Identity,
    address: String,
    writer: Mutex<Option<TcpStream>>,
    last_attempt: Mutex<Option<Instant>>,
}

struct Agent {
    identity: Identity,
    params: SharingParams,
    state: Mutex<State>,
    changed: Condvar,
    links: Vec<Link>,
    deadline: Duration,
    timeout: Duration,
    key_id_path: PathBuf,
    stop: AtomicBool,
}

fn session_bits(params: &SharingParams) -> u64 {
    params.m() as u64 * params.field().bits() as u64
}

fn sessions_for(params: &SharingParams, size_bits: u64) -> Result<u64, Error> {
    if size_bits == 0 || !size_bits.is_multiple_of(8) {
        return Err(Error::Request("size_bits must be a positive multiple of 8".into()));
    }
    Ok(size_bits.div_ceil(session_bits(params)))
}

fn read_key_counter(path: &PathBuf) -> Result<u64, Error> {
    match std::fs::read_to_string(path) {
        Ok(s) => s.trim().parse().map_err(|_| Error::Config(format!("{}: bad counter", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
        Err(e) => Err(e.into()),
    }
}

fn write_key_counter(path: &PathBuf, next: u64, sync: bool) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        writeln!(f, "{next}")?;
        if sync {
            f.sync_all()?;
        }
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

impl Agent {
    fn load(config: &ClientConfig) -> Result<Self, Error> {
        let identity = config.client_identity()?;
        let params = config.params()?;
        let hubs = config.hub_identities()?;
        let mut tables = FileTables::new(config.sync);
        for hub in &hubs {
            for direction in [Direction::ClientToHub, Direction::HubToClient] {
                tables.open(&config.table_dir, &identity, &identity, hub, direction)?;
            }
        }
        let key_id_path = config.table_dir.join(format!("{identity}.keyid"));
        let next = read_key_counter(&key_id_path)?;
        let links = config
            .hubs
            .iter()
            .zip(&hubs)
            .map(|(ep, id)| Link {
                hub: id.clone(),
                address: ep.address.clone(),
                writer: Mutex::new(None),
                last_attempt: Mutex::new(None),
            })
            .collect();
        Ok(Self {
            state: Mutex::new(State {
                sender: Sender::with_first_key_id(identity.clone(), hubs.clone(), params, next),
                tables,
                receiver: ReceiverState::new(identity.clone(), hubs, params),
                inbound: HashMap::new(),
                kth_seen: HashMap::new(),
                delivered: HashSet::new(),
            }),
            identity,
            params,
            changed: Condvar::new(),
            links,
            deadline: Duration::from_millis(config.finalize_deadline_ms),
            timeout: Duration::from_millis(config.request_timeout_ms),
            key_id_path,
            stop: AtomicBool::new(false),
        })
    }

    fn connected(&self) -> usize {
        self.links.iter().filter(|l| l.writer.lock().unwrap().is_some()).count()
    }

    /// Tries to open links that are down. `force` skips the retry backoff.
    fn connect_missing(self: &Arc<Self>, force: bool) {
        for (i, link) in self.links.iter().enumerate() {
            if link.writer.lock().unwrap().is_some() {
                continue;
            }
            {
                let mut last = link.last_attempt.lock().unwrap();
                if !force && last.is_some_and(|t| t.elapsed() < RECONNECT_EVERY) {
                    continue;
                }
                *last = Some(Instant::now());
            }
            match self.open_link(link) {
                Ok(stream) => {
                    let reader = match stream.try_clone() {
                        Ok(r) => r,
                        Err(_) => continue,
                    };
                    *link.writer.lock().unwrap() = Some(stream);
                    info!("{}: connected to {}", self.identity, link.hub);
                    let agent = self.clone();
                    std::thread::spawn(move || agent.read_link(i, reader));
                }
                Err(e) => debug!("{}: {} unreachable: {e}", self.identity, link.hub),
            }
        }
    }

    fn open_link(&self, link: &Link) -> Result<TcpStream, Error> {
        let addr = link
            .address
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::Config(format!("cannot resolve {}", link.address)))?;
        let mut stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(CONNECT_TIMEOUT))?;
        write_hello(&mut stream, &self.identity)?;
        let hub = read_hello(&mut stream)?;
        if hub != link.hub {
            return Err(Error::Config(format!("{} answered as {hub}", link.address)));
        }
        stream.set_read_timeout(None)?;
        Ok(stream)
    }

    fn read_link(self: Arc<Self>, index: usize, stream: TcpStream) {
        let link = &self.links[index];
        let mut reader = BufReader::new(stream);
        loop {
            match read_frame(&mut reader) {
                Ok(Some(frame)) => self.handle_frame(&link.hub, &frame),
                Ok(None) => break,
                Err(e) => {
                    debug!("{}: link to {} failed: {e}", self.identity, link.hub);
                    break;
                }
            }
        }
        let mut w = link.writer.lock().unwrap();
        if let Some(s) = w.take() {
            let _ = s.shutdown(Shutdown::Both);
        }
        info!("{}: disconnected from {}", self.identity, link.hub);
    }

    fn handle_frame(&self, hub: &Identity, frame: &[u8]) {
        let msg = match ShareMessage::decode(frame) {
            Ok(m) => m,
            Err(e) => {
                debug!("{}: undecodable frame from {hub}: {e}", self.identity);
                return;
            }
        };
        let mut st = self.state.lock().unwrap();
        let st = &mut *st;
        let result = st.receiver.ingest(&msg, hub, &mut st.tables, &Acl::allow_all());
        if let Err(e) = st.tables.persist() {
            warn!("{}: persisting tables failed: {e}", self.identity);
        }
        match result {
            Ok(Ingested::Stored { group, group_size }) => {
                let id = (group.origin.clone(), group.key_id.0);
                if group_size >= self.params.n() {
                    self.finalize(st, &group.origin, group.key_id);
                } else if group_size >= self.params.k() {
                    st.kth_seen.entry(id).or_insert_with(Instant::now);
                }
            }
            Ok(other) => debug!("{}: frame from {hub} ignored: {other:?}", self.identity),
            Err(reason) => debug!("{}: discarded frame from {hub}: {reason}", self.identity),
        }
    }

    fn finalize(&self, st: &mut State, origin: &Identity, key_id: KeyId) {
        let id = (origin.clone(), key_id.0);
        st.kth_seen.remove(&id);
        match st.receiver.finalize_key(origin, key_id) {
            Ok(key) => {
                debug!("{}: key {key_id} from {origin} established", self.identity);
                st.inbound.insert(id, Inbound::Ready(key.secret.into_bytes()));
            }
            Err(FinalizeError::Abort) => {
                warn!("{}: key {key_id} from {origin} aborted", self.identity);
                st.inbound.insert(id, Inbound::Aborted);
            }
            Err(e) => debug!("{}: key {key_id} from {origin} not ready: {e}", self.identity),
        }
        self.changed.notify_all();
    }

    fn tick(self: &Arc<Self>) {
        self.connect_missing(false);
        let mut st = self.state.lock().unwrap();
        let due: Vec<(Identity, u64)> =
            st.kth_seen.iter().filter(|(_, t)| t.elapsed() >= self.deadline).map(|(id, _)| id.clone()).collect();
        for (origin, key_id) in due {
            self.finalize(&mut st, &origin, KeyId(key_id));
        }
    }

    fn request_key(self: &Arc<Self>, peer: &Identity, size_bits: u64) -> Result<DeliveredKey, Error> {
        let sessions = sessions_for(&self.params, size_bits)?;
        self.connect_missing(true);
        let k = self.params.k();
        let up = self.connected();
        if up < k {
            return Err(Error::PeerUnreachable { reachable: up, needed: k });
        }

        let (first, outgoing, mut key) = {
            let mut st = self.state.lock().unwrap();
            let st = &mut *st;
            let need = sessions * iteration_len(self.params.m());
            for (i, hub) in st.sender.hubs().iter().enumerate() {
                let t = st.tables.get(hub, Direction::ClientToHub).ok_or(Error::InsufficientPsrd(i + 1))?;
                if !t.peek_available(t.next_offset(), need) {
                    return Err(Error::InsufficientPsrd(i + 1));
                }
            }
            let first = st.sender.reserve_key_ids(sessions);
            write_key_counter(&self.key_id_path, st.sender.next_key_id().0, true)?;
            let mut frames: Vec<Vec<u8>> = vec![Vec::new(); self.links.len()];
            let mut key = Vec::with_capacity((sessions * session_bits(&self.params) / 8) as usize);
            for s in 0..sessions {
                let (session, outs) = st.sender.initiate_with_id(peer, &mut st.tables, KeyId(first.0 + s))?;
                key.extend_from_slice(session.secret.as_bytes());
                for out in outs {
                    frames[out.hub_index - 1].extend(out.message.encode());
                }
            }
            // spans must be durable before any frame leaves
            st.tables.persist()?;
            (first, frames, key)
        };

        let mut accepted = 0;
        for (link, frames) in self.links.iter().zip(&outgoing) {
            let mut w = link.writer.lock().unwrap();
            let ok = match w.as_mut() {
                Some(stream) => {
                    let mut bw = BufWriter::new(&*stream);
                    bw.write_all(frames).and_then(|_| bw.flush()).is_ok()
                }
                None => false,
            };
            if ok {
                accepted += 1;
            } else if let Some(s) = w.take() {
                let _ = s.shutdown(Shutdown::Both);
            }
        }
        if accepted < k {
            return Err(Error::PeerUnreachable { reachable: accepted, needed: k });
        }
        key.truncate((size_bits / 8) as usize);
        Ok(DeliveredKey { key_id: first, key })
    }

    fn get_key_by_id(&self, peer: &Identity, key_id: KeyId, size_bits: u64) -> Result<DeliveredKey, Error> {
        let sessions = sessions_for(&self.params, size_bits)?;
        let ids: Vec<(Identity, u64)> = (0..sessions).map(|s| (peer.clone(), key_id.0 + s)).collect();
        let deadline = Instant::now() + self.timeout;
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(id) = ids.iter().find(|id| st.delivered.contains(id)) {
                return Err(Error::AlreadyDelivered(id.1));
            }
            if let Some(id) = ids.iter().find(|id| matches!(st.inbound.get(id), Some(Inbound::Aborted))) {
                return Err(Error::KeyAborted(id.1));
            }
            if ids.iter().all(|id| st.inbound.contains_key(id)) {
                break;
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Timeout(key_id.0));
            }
            st = self.changed.wait_timeout(st, (deadline - now).min(Duration::from_millis(50))).unwrap().0;
        }
        let mut key = Vec::new();
        for id in ids {
            if let Some(Inbound::Ready(bytes)) = st.inbound.remove(&id) {
                key.extend_from_slice(&bytes);
            }
            st.delivered.insert(id);
        }
        key.truncate((size_bits / 8) as usize);
        Ok(DeliveredKey { key_id, key })
    }

    fn status(&self) -> serde_json::Value {
        let st = self.state.lock().unwrap();
        let mut remaining = BTreeMap::new();
        for link in &self.links {
            let c2h = st.tables.get(&link.hub, Direction::ClientToHub).map(|t| t.remaining());
            let h2c = st.tables.get(&link.hub, Direction::HubToClient).map(|t| t.remaining());
            remaining.insert(link.hub.to_string(), serde_json::json!({"c2h": c2h, "h2c": h2c}));
        }
        serde_json::json!({
            "ok": true,
            "identity": self.identity.to_string(),
            "hubs_connected": self.connected(),
            "next_key_id": st.sender.next_key_id().0,
            "psrd_remaining": remaining,
        })
    }
}

/// Requests accepted on the local key API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ApiRequest {
    GetKey { peer: String, size_bits: u64 },
    GetKeyById { peer: String, key_id: u64, size_bits: u64 },
    Status,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiKey {
    pub ok: bool,
    pub key_id: u64,
    pub key: String,
    pub size_bits: u64,
}

fn api_error(e: impl std::fmt::Display) -> serde_json::Value {
    serde_json::json!({"ok": false, "error": e.to_string()})
}

fn key_reply(k: DeliveredKey, size_bits: u64) -> serde_json::Value {
    serde_json::to_value(ApiKey { ok: true, key_id: k.key_id.0, key: hex::encode(k.key), size_bits })
        .expect("plain struct")
}

fn serve_api(agent: Arc<Agent>, stream: TcpStream) {
    let mut writer = match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    };
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<ApiRequest>(&line) {
            Err(e) => api_error(format!("bad request: {e}")),
            Ok(ApiRequest::Status) => agent.status(),
            Ok(ApiRequest::GetKey { peer, size_bits }) => match peer.parse::<Identity>() {
                Err(e) => api_error(e),
                Ok(peer) => match agent.request_key(&peer, size_bits) {
                    Ok(k) => key_reply(k, size_bits),
                    Err(e) => api_error(e),
                },
            },
            Ok(ApiRequest::GetKeyById { peer, key_id, size_bits }) => match peer.parse::<Identity>() {
                Err(e) => api_error(e),
                Ok(peer) => match agent.get_key_by_id(&peer, KeyId(key_id), size_bits) {
                    Ok(k) => key_reply(k, size_bits),
                    Err(e) => api_error(e),
                },
            },
        };
        if writeln!(writer, "{reply}").is_err() {
            break;
        }
    }
}

/// A running agent.
pub struct AgentHandle {
    agent: Arc<Agent>,
    api_addr: SocketAddr,
    threads: Vec<JoinHandle<()>>,
}

impl AgentHandle {
    pub fn identity(&self) -> &Identity {
        &self.agent.identity
    }

    pub fn api_addr(&self) -> SocketAddr {
        self.api_addr
    }

    pub fn hubs_connected(&self) -> usize {
        self.agent.connected()
    }

    /// Runs as many sessions as `size_bits` needs and returns the key.
    pub fn request_key(&self, peer: &Identity, size_bits: u64) -> Result<DeliveredKey, Error> {
        self.agent.request_key(peer, size_bits)
    }

    /// Waits for the key `peer` started under `key_id`; each key is handed
    /// out once.
    pub fn get_key_by_id(&self, peer: &Identity, key_id: KeyId, size_bits: u64) -> Result<DeliveredKey, Error> {
        self.agent.get_key_by_id(peer, key_id, size_bits)
    }

    pub fn psrd_remaining(&self, hub: &Identity, direction: Direction) -> Option<u64> {
        self.agent.state.lock().unwrap().tables.get(hub, direction).map(|t| t.remaining())
    }

    /// Blocks until shutdown.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.agent.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.api_addr);
        for link in &self.agent.links {
            if let Some(s) = link.writer.lock().unwrap().take() {
                let _ = s.shutdown(Shutdown::Both);
            }
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.stop_now();
        }
    }
}

pub fn agent_start(config: &ClientConfig) -> Result<AgentHandle, Error> {
    let agent = Arc::new(Agent::load(config)?);
    let listener =
        TcpListener::bind(&config.api_listen).map_err(|e| Error::Io(format!("bind {}: {e}", config.api_listen)))?;
    let api_addr = listener.local_addr()?;
    info!("{}: key API on {api_addr}", agent.identity);
    agent.connect_missing(true);

    let ticker = {
        let agent = agent.clone();
        std::thread::spawn(move || {
            while !agent.stop.load(Ordering::SeqCst) {
                agent.tick();
                std::thread::sleep(TICK);
            }
        })
    };
    let api = {
        let agent = agent.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                if agent.stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = stream {
                    let agent = agent.clone();
                    std::thread::spawn(move || serve_api(agent, stream));
                }
            }
        })
    };
    Ok(AgentHandle { agent, api_addr, threads: vec![ticker, api] })
}

/// Sends one request to an agent's key API and returns the parsed reply.
pub fn api_call(addr: &str, request: &ApiRequest) -> Result<serde_json::Value, Error> {
    let stream = TcpStream::connect(addr).map_err(|e| Error::Io(format!("connect {addr}: {e}")))?;
    let mut w = stream.try_clone()?;
    writeln!(w, "{}", serde_json::to_string(request).expect("plain enum"))?;
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line)?;
    serde_json::from_str(&line).map_err(|e| Error::Request(format!("bad reply: {e}")))
}
