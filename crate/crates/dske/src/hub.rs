//! Security hub daemon.
//!
//! One thread accepts connections; each connection gets a reader thread and
//! a writer thread. Frames for receivers that are not connected wait in a
//! bounded per-receiver queue. Table spans are written to disk before the
//! frame that used them leaves the hub.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use dske_core::protocol::{hub_relay, Acl, DiscardReason, Identity, ShareMessage};
use dske_core::psrd::Direction;
use log::{debug, info, warn};

use crate::config::HubConfig;
use crate::tables::FileTables;
use crate::wire::{read_frame, read_hello, write_hello};
use crate::Error;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HubStats {
    pub relayed: u64,
    pub queued: u64,
    pub dropped: u64,
    pub discards: BTreeMap<DiscardReason, u64>,
}

struct Route {
    conn: u64,
    tx: Sender<Vec<u8>>,
}

#[derive(Default)]
struct Routes {
    online: HashMap<Identity, Route>,
    queued: HashMap<Identity, VecDeque<Vec<u8>>>,
}

struct Hub {
    identity: Identity,
    acl: Acl,
    tables: Mutex<FileTables>,
    routes: Mutex<Routes>,
    queue_depth: usize,
    stats: Mutex<HubStats>,
    next_conn: AtomicU64,
}

impl Hub {
    fn load(config: &HubConfig) -> Result<Self, Error> {
        let identity = config.hub_identity()?;
        let mut acl = Acl::deny_all();
        for e in &config.acl {
            acl.allow(identity.clone(), e.client.parse()?, e.peer.parse()?);
        }
        let mut tables = FileTables::new(config.sync);
        for client in config.clients()? {
            for direction in [Direction::ClientToHub, Direction::HubToClient] {
                tables.open(&config.table_dir, &identity, &client, &identity, direction)?;
            }
        }
        Ok(Self {
            identity,
            acl,
            tables: Mutex::new(tables),
            routes: Mutex::new(Routes::default()),
            queue_depth: config.queue_depth,
            stats: Mutex::new(HubStats::default()),
            next_conn: AtomicU64::new(0),
        })
    }

    fn discard(&self, reason: DiscardReason) {
        *self.stats.lock().unwrap().discards.entry(reason).or_default() += 1;
    }

    fn handle_frame(&self, frame: &[u8], peer: &Identity) {
        let msg = match ShareMessage::decode(frame) {
            Ok(m) => m,
            Err(e) => {
                debug!("{}: undecodable frame from {peer}: {e}", self.identity);
                self.discard(DiscardReason::Malformed);
                return;
            }
        };
        let result = {
            let mut tables = self.tables.lock().unwrap();
            let result = hub_relay(&self.identity, &msg, peer, &mut *tables, &self.acl);
            if let Err(e) = tables.persist() {
                // never emit a frame whose table state is not durable
                warn!("{}: persisting tables failed, frame dropped: {e}", self.identity);
                return;
            }
            result
        };
        match result {
            Ok(fwd) => {
                debug!("{}: relayed key {} from {} to {}", self.identity, fwd.key_id, fwd.origin, fwd.receiver);
                self.stats.lock().unwrap().relayed += 1;
                self.route(&fwd.receiver, fwd.encode());
            }
            Err(reason) => {
                debug!("{}: discarded frame from {peer}: {reason}", self.identity);
                self.discard(reason);
            }
        }
    }

    fn route(&self, receiver: &Identity, frame: Vec<u8>) {
        let mut routes = self.routes.lock().unwrap();
        let frame = match routes.online.get(receiver) {
            Some(route) => match route.tx.send(frame) {
                Ok(()) => return,
                Err(e) => e.0,
            },
            None => frame,
        };
        let q = routes.queued.entry(receiver.clone()).or_default();
        let mut stats = self.stats.lock().unwrap();
        if q.len() >= self.queue_depth {
            warn!("{}: queue for {receiver} full, frame dropped", self.identity);
            stats.dropped += 1;
        } else {
            q.push_back(frame);
            stats.queued += 1;
        }
    }

    fn register(&self, peer: &Identity, conn: u64, tx: Sender<Vec<u8>>) {
        let mut routes = self.routes.lock().unwrap();
        if let Some(q) = routes.queued.remove(peer) {
            for frame in q {
                let _ = tx.send(frame);
            }
        }
        routes.online.insert(peer.clone(), Route { conn, tx });
    }

    fn unregister(&self, peer: &Identity, conn: u64) {
        let mut routes = self.routes.lock().unwrap();
        if routes.online.get(peer).is_some_and(|r| r.conn == conn) {
            routes.online.remove(peer);
        }
    }

    fn serve_connection(self: Arc<Self>, stream: TcpStream) {
        let _ = stream.set_nodelay(true);
        let mut reader = BufReader::new(match stream.try_clone() {
            Ok(s) => s,
            Err(_) => return,
        });
        let peer = match read_hello(&mut reader) {
            Ok(p) => p,
            Err(e) => {
                debug!("{}: bad hello: {e}", self.identity);
                return;
            }
        };
        let mut writer = BufWriter::new(stream);
        if write_hello(&mut writer, &self.identity).is_err() {
            return;
        }
        let conn = self.next_conn.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = channel::<Vec<u8>>();
        let writer_thread = std::thread::spawn(move || {
            while let Ok(frame) = rx.recv() {
                if writer.write_all(&frame).is_err() {
                    break;
                }
                // coalesce whatever else is already waiting
                while let Ok(more) = rx.try_recv() {
                    if writer.write_all(&more).is_err() {
                        return;
                    }
                }
                if writer.flush().is_err() {
                    break;
                }
            }
        });
        info!("{}: {peer} connected", self.identity);
        self.register(&peer, conn, tx);
        loop {
            match read_frame(&mut reader) {
                Ok(Some(frame)) => self.handle_frame(&frame, &peer),
                Ok(None) => break,
                Err(e) => {
                    debug!("{}: connection from {peer} closed: {e}", self.identity);
                    break;
                }
            }
        }
        self.unregister(&peer, conn);
        let _ = reader.get_ref().shutdown(Shutdown::Both);
        let _ = writer_thread.join();
        info!("{}: {peer} disconnected", self.identity);
    }
}

/// A running hub.
pub struct HubHandle {
    addr: SocketAddr,
    hub: Arc<Hub>,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl HubHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn identity(&self) -> &Identity {
        &self.hub.identity
    }

    pub fn stats(&self) -> HubStats {
        self.hub.stats.lock().unwrap().clone()
    }

    /// PSRD elements left in the table shared with `client`.
    pub fn remaining(&self, client: &Identity, direction: Direction) -> Option<u64> {
        self.hub.tables.lock().unwrap().get(client, direction).map(|t| t.remaining())
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Closes the listener and every connection.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        for s in self.conns.lock().unwrap().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for HubHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_now();
        }
    }
}

/// Loads tables, binds, and starts serving in the background.
pub fn hub_start(config: &HubConfig) -> Result<HubHandle, Error> {
    let hub = Arc::new(Hub::load(config)?);
    let listener = TcpListener::bind(&config.listen).map_err(|e| Error::Io(format!("bind {}: {e}", config.listen)))?;
    let addr = listener.local_addr()?;
    info!("{} listening on {addr}", hub.identity);
    let stop = Arc::new(AtomicBool::new(false));
    let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::new(Mutex::new(Vec::new()));
    let accept = {
        let (hub, stop, conns) = (hub.clone(), stop.clone(), conns.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let stream = match stream {
                    Ok(s) => s,
                    Err(e) => {
                        warn!("accept failed: {e}");
                        continue;
                    }
                };
                if let Ok(clone) = stream.try_clone() {
                    let mut list = conns.lock().unwrap();
                    list.retain(|s| s.peer_addr().is_ok());
                    list.push(clone);
                }
                let hub = hub.clone();
                std::thread::spawn(move || hub.serve_connection(stream));
            }
        })
    };
    Ok(HubHandle { addr, hub, stop, conns, accept: Some(accept) })
}

/// Runs a hub until the process is killed.
pub fn hub_serve(config: &HubConfig) -> Result<(), Error> {
    hub_start(config)?.wait();
    Ok(())
}
