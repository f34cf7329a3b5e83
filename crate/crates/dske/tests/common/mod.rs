#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use dske::agent::{agent_start, AgentHandle};
use dske::config::{AclEntry, ClientConfig, HubConfig, HubEndpoint};
use dske::core::field::FieldId;
use dske::core::protocol::Identity;
use dske::core::psrd::EntropySource;
use dske::hub::{hub_start, HubHandle};
use dske::tables::provision_pair;
use dske::wire::{read_hello, write_hello};
use tempfile::TempDir;

pub fn id(s: &str) -> Identity {
    s.parse().unwrap()
}

pub struct Options {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub field_bits: u32,
    pub len: u64,
    pub clients: Vec<&'static str>,
    /// `(client, peer)`; every ordered pair of clients when `None`.
    pub acl: Option<Vec<(&'static str, &'static str)>>,
    /// Clients that get a running agent.
    pub agents: Vec<&'static str>,
    /// Route agent traffic through recording proxies.
    pub tap: bool,
    pub seed: u64,
    pub deadline_ms: u64,
    pub timeout_ms: u64,
    /// fsync table files on every consumption.
    pub sync: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            n: 3,
            k: 2,
            m: 4,
            field_bits: 128,
            len: 20_000,
            clients: vec!["alice", "bob"],
            acl: None,
            agents: vec!["alice", "bob"],
            tap: false,
            seed: 1,
            deadline_ms: 200,
            timeout_ms: 5_000,
            sync: false,
        }
    }
}

/// Forwards one hub's traffic and keeps a copy of every byte in both
/// directions.
pub struct Tap {
    pub addr: SocketAddr,
    pub seen: Arc<Mutex<Vec<u8>>>,
}

impl Tap {
    fn start(upstream: SocketAddr) -> Tap {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for down in listener.incoming() {
                let Ok(down) = down else { continue };
                let Ok(up) = TcpStream::connect(upstream) else {
                    let _ = down.shutdown(Shutdown::Both);
                    continue;
                };
                for (from, to) in [(down.try_clone().unwrap(), up.try_clone().unwrap()), (up, down)] {
                    let log = log.clone();
                    std::thread::spawn(move || pump(from, to, log));
                }
            }
        });
        Tap { addr, seen }
    }
}

fn pump(mut from: TcpStream, mut to: TcpStream, log: Arc<Mutex<Vec<u8>>>) {
    let mut buf = [0u8; 16 * 1024];
    loop {
        match from.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                log.lock().unwrap().extend_from_slice(&buf[..n]);
                if to.write_all(&buf[..n]).is_err() {
                    break;
                }
            }
        }
    }
    let _ = to.shutdown(Shutdown::Both);
    let _ = from.shutdown(Shutdown::Both);
}

pub struct Cluster {
    pub dir: TempDir,
    pub opts: Options,
    pub hub_configs: Vec<HubConfig>,
    pub hubs: Vec<Option<HubHandle>>,
    pub client_configs: BTreeMap<&'static str, ClientConfig>,
    pub agents: BTreeMap<&'static str, AgentHandle>,
    pub taps: Vec<Tap>,
}

impl Cluster {
    pub fn start(opts: Options) -> Cluster {
        let dir = tempfile::tempdir().unwrap();
        let field = if opts.field_bits == 8 { FieldId::Gf8 } else { FieldId::Gf128 };
        let mut src = EntropySource::seeded(opts.seed);
        let acl: Vec<AclEntry> = match &opts.acl {
            Some(list) => list.iter().map(|(c, p)| AclEntry { client: c.to_string(), peer: p.to_string() }).collect(),
            None => opts
                .clients
                .iter()
                .flat_map(|c| opts.clients.iter().filter(move |p| *p != c).map(move |p| (c, p)))
                .map(|(c, p)| AclEntry { client: c.to_string(), peer: p.to_string() })
                .collect(),
        };

        let mut hub_configs = Vec::new();
        let mut hubs = Vec::new();
        let mut taps = Vec::new();
        for i in 1..=opts.n {
            let hub = format!("hub-{i}");
            let hub_dir = dir.path().join(&hub);
            for c in &opts.clients {
                provision_pair(&id(c), &id(&hub), opts.len, field, &mut src, &dir.path().join(c), &hub_dir).unwrap();
            }
            let mut cfg = HubConfig {
                identity: hub,
                listen: "127.0.0.1:0".into(),
                table_dir: hub_dir,
                acl: acl.clone(),
                queue_depth: 1024,
                sync: opts.sync,
            };
            let handle = hub_start(&cfg).unwrap();
            cfg.listen = handle.addr().to_string();
            if opts.tap {
                taps.push(Tap::start(handle.addr()));
            }
            hub_configs.push(cfg);
            hubs.push(Some(handle));
        }

        let mut client_configs = BTreeMap::new();
        for c in &opts.clients {
            let endpoints = hub_configs
                .iter()
                .enumerate()
                .map(|(i, h)| HubEndpoint {
                    identity: h.identity.clone(),
                    address: if opts.tap { taps[i].addr.to_string() } else { h.listen.clone() },
                })
                .collect();
            client_configs.insert(
                *c,
                ClientConfig {
                    identity: c.to_string(),
                    table_dir: dir.path().join(c),
                    api_listen: "127.0.0.1:0".into(),
                    hubs: endpoints,
                    k: opts.k,
                    m: opts.m,
                    field_bits: opts.field_bits,
                    finalize_deadline_ms: opts.deadline_ms,
                    request_timeout_ms: opts.timeout_ms,
                    sync: opts.sync,
                },
            );
        }
        let mut cluster = Cluster { dir, opts, hub_configs, hubs, client_configs, agents: BTreeMap::new(), taps };
        for a in cluster.opts.agents.clone() {
            cluster.start_agent(a);
        }
        cluster
    }

    pub fn start_agent(&mut self, name: &'static str) {
        let handle = agent_start(&self.client_configs[name]).unwrap();
        self.agents.insert(name, handle);
        self.wait_connected(name, self.up_hubs());
    }

    pub fn agent(&self, name: &str) -> &AgentHandle {
        &self.agents[name]
    }

    pub fn up_hubs(&self) -> usize {
        self.hubs.iter().filter(|h| h.is_some()).count()
    }

    /// Waits until `name` has `count` hub links, or panics after 5 s.
    pub fn wait_connected(&self, name: &str, count: usize) {
        let start = Instant::now();
        while self.agents[name].hubs_connected() != count {
            assert!(start.elapsed() < Duration::from_secs(5), "{name} never reached {count} hub links");
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    /// `i` is 1-based.
    pub fn stop_hub(&mut self, i: usize) {
        if let Some(h) = self.hubs[i - 1].take() {
            h.shutdown();
        }
    }

    pub fn restart_hub(&mut self, i: usize) {
        assert!(self.hubs[i - 1].is_none());
        let start = Instant::now();
        let handle = loop {
            match hub_start(&self.hub_configs[i - 1]) {
                Ok(h) => break h,
                Err(e) if start.elapsed() < Duration::from_secs(5) => {
                    let _ = e;
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => panic!("hub-{i} would not restart: {e}"),
            }
        };
        self.hubs[i - 1] = Some(handle);
    }

    pub fn hub(&self, i: usize) -> &HubHandle {
        self.hubs[i - 1].as_ref().expect("hub is running")
    }

    pub fn client_dir(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn wire_bytes(&self) -> Vec<u8> {
        let mut all = Vec::new();
        for t in &self.taps {
            all.extend_from_slice(&t.seen.lock().unwrap());
        }
        all
    }
}

/// A bare connection to a hub that has said hello as `who`.
pub fn raw_connect(addr: SocketAddr, who: &str) -> TcpStream {
    let mut s = TcpStream::connect(addr).unwrap();
    write_hello(&mut s, &id(who)).unwrap();
    read_hello(&mut s).unwrap();
    s
}

/// Polls `cond` for up to 5 s.
pub fn eventually(mut cond: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    while start.elapsed() < Duration::from_secs(5) {
        if cond() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    cond()
}

/// Whether any `window`-byte slice of `needle` occurs in `hay`.
pub fn contains_window(hay: &[u8], needle: &[u8], window: usize) -> bool {
    if needle.len() < window {
        return false;
    }
    let wanted: std::collections::HashSet<&[u8]> = needle.windows(window).collect();
    hay.windows(window).any(|h| wanted.contains(h))
}
