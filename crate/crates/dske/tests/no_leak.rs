mod common;

use std::sync::Mutex;

use common::{contains_window, id, Cluster, Options};
use log::{LevelFilter, Log, Metadata, Record};

static LINES: Mutex<Vec<String>> = Mutex::new(Vec::new());

struct Capture;

impl Log for Capture {
    fn enabled(&self, _: &Metadata) -> bool {
        true
    }

    fn log(&self, record: &Record) {
        LINES.lock().unwrap().push(format!("{} {}", record.target(), record.args()));
    }

    fn flush(&self) {}
}

#[test]
fn keys_never_reach_logs_or_wire() {
    log::set_logger(&Capture).unwrap();
    log::set_max_level(LevelFilter::Trace);

    let c = Cluster::start(Options { tap: true, seed: 77, ..Options::default() });
    let mut keys = Vec::new();
    for _ in 0..100 {
        let sent = c.agent("alice").request_key(&id("bob"), 256).unwrap();
        let got = c.agent("bob").get_key_by_id(&id("alice"), sent.key_id, 256).unwrap();
        assert_eq!(sent, got);
        keys.push(sent.key);
    }

    let wire = c.wire_bytes();
    // 100 sessions, n = 3 hubs, two legs each
    assert!(wire.len() > 100 * 3 * 2 * 64);
    let logs = LINES.lock().unwrap().join("\n");
    assert!(logs.contains("relayed key"), "trace logging was not captured");
    for key in &keys {
        assert!(!contains_window(&wire, key, 8));
        assert!(!contains_window(logs.as_bytes(), key, 8));
        assert!(!contains_window(logs.as_bytes(), hex::encode(key).as_bytes(), 16));
    }
}
