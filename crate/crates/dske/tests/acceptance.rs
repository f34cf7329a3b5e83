//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

mod common;
#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::collections::BTreeSet;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};

use common::{eventually, id, raw_connect, Cluster, Options};
use dske::bench::{default_grid, run_bench};
use dske::core::bounds::{binomial, log2_big, report as bound_report};
use dske::core::field::{ElementVector, FieldElement, FieldId};
use dske::core::hashing::{message_tag, secret_tag, MessageTagKey, SecretTagKey};
use dske::core::protocol::{iteration_len, DiscardReason, Identity, Sender};
use dske::core::psrd::{generate_table, Direction, EntropySource, PsrdTable};
use dske::core::sharing::{generate_shares, reconstruct, reconstruct_via_coefficients, SharingParams};
use dske::core::simnet::{run_scenario, AdversaryConfig, HubStrategy, ScenarioReport};
use dske::tables::{table_file_name, FileTables, TableFile};
use dske::Error;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn sim(n: usize, k: usize, m: usize, field: FieldId, adv: &AdversaryConfig, trials: u64, seed: u64) -> ScenarioReport {
    let p = SharingParams::new(n, k, m, field).unwrap();
    run_scenario(&p, adv, trials, seed).unwrap()
}

fn honest_sessions() -> Outcome {
    let start = Instant::now();
    let mut sessions = 0;
    for n in 1..=6 {
        for k in 1..=n {
            for m in [1, 4, 64] {
                let r = sim(n, k, m, FieldId::Gf128, &AdversaryConfig::none(), 100, (n * 100 + k * 10 + m) as u64);
                check(r.completed == 100 && r.aborted == 0 && r.wrong_secret == 0, || {
                    format!("n={n} k={k} m={m}: {}", r.to_lines().join(" "))
                })?;
                sessions += r.trials;
            }
        }
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(60), || format!("took {t:?}"))?;
    Ok(format!("{sessions} sessions, S_A == S_B in all, 0 aborts, {:.1} s", t.as_secs_f64()))
}

fn random_vec(rng: &mut StdRng, field: FieldId, len: usize) -> ElementVector {
    let mut b = vec![0u8; len * field.byte_len()];
    rng.fill_bytes(&mut b);
    ElementVector::from_bytes(field, b).unwrap()
}

fn all_subsets() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5B5E7);
    let mut checked = 0;
    for field in [FieldId::Gf8, FieldId::Gf128] {
        let p = SharingParams::new(5, 3, 4, field).unwrap();
        let len = p.payload_len();
        let anchors: Vec<ElementVector> = (0..3).map(|_| random_vec(&mut rng, field, len)).collect();
        let (y0, shares) = generate_shares(&anchors, &p).unwrap();
        let bits = field.bits();
        for a in 0..5 {
            for b in a + 1..5 {
                for c in b + 1..5 {
                    let pick = [&shares[a], &shares[b], &shares[c]];
                    let pts: Vec<(FieldElement, &ElementVector)> = pick.iter().map(|s| (s.x, &s.payload)).collect();
                    let by_weights = reconstruct(&pts).unwrap();
                    let by_coeffs = reconstruct_via_coefficients(&pts).unwrap();
                    check(by_weights == y0 && by_coeffs == y0, || format!("{field:?} subset {a}{b}{c} differs"))?;
                    // independent interpolation per coordinate
                    let xs: Vec<u128> = pick.iter().map(|s| s.x.value()).collect();
                    for j in 0..len {
                        let ys: Vec<u128> = pick.iter().map(|s| s.payload.get(j).unwrap().value()).collect();
                        let coeffs = oracle::solve_vandermonde(bits, &xs, &ys);
                        check(coeffs[0] == y0.get(j).unwrap().value(), || format!("oracle disagrees at {j}"))?;
                    }
                    checked += 1;
                }
            }
        }
    }
    check(checked == 2 * binomial(5, 3).to_string().parse::<usize>().unwrap(), || "subset count".into())?;
    Ok(format!("{checked} subsets (10 per field, GF(2^8) and GF(2^128)) reconstruct Y_0 exactly"))
}

fn confidentiality() -> Outcome {
    let p = SharingParams::new(3, 2, 1, FieldId::Gf8).unwrap();
    // counts[secret][hub][share value]
    let mut counts = vec![[[0u16; 256]; 3]; 256];
    for a in 0..=255u8 {
        for b in 0..=255u8 {
            let r1 = ElementVector::from_bytes(FieldId::Gf8, vec![a; 4]).unwrap();
            let r2 = ElementVector::from_bytes(FieldId::Gf8, vec![b; 4]).unwrap();
            let (y0, shares) = generate_shares(&[r1, r2], &p).unwrap();
            let secret = y0.get(3).unwrap().value() as usize;
            for (h, s) in shares.iter().enumerate() {
                counts[secret][h][s.payload.get(3).unwrap().value() as usize] += 1;
            }
        }
    }
    for (s, per_secret) in counts.iter().enumerate() {
        for (h, per_hub) in per_secret.iter().enumerate() {
            check(per_hub.iter().all(|&c| c == 1), || format!("secret {s}: hub {} share not uniform", h + 1))?;
        }
    }
    Ok("65536 sharings: every single share is exactly uniform for each of 256 secrets".into())
}

fn e8(v: u8) -> FieldElement {
    FieldElement::new(FieldId::Gf8, v as u128).unwrap()
}

fn v8(vals: &[u8]) -> ElementVector {
    ElementVector::from_bytes(FieldId::Gf8, vals.to_vec()).unwrap()
}

fn forgery() -> Outcome {
    const TRIALS: u64 = 100_000;
    let mut rng = StdRng::seed_from_u64(0xF04);
    let byte = |rng: &mut StdRng| rng.random::<u8>();
    let nonzero = |rng: &mut StdRng| rng.random_range(1..=255u8);

    let s = 2u64;
    let mut wins = 0u64;
    for _ in 0..TRIALS {
        let key = MessageTagKey::new(e8(byte(&mut rng)), e8(byte(&mut rng))).unwrap();
        let msg = [byte(&mut rng), byte(&mut rng)];
        let tag = message_tag(&key, &v8(&msg)).unwrap();
        check(
            tag.value() == oracle::poly_hash(8, key.c().value(), key.d().value(), &[msg[0] as u128, msg[1] as u128]),
            || "tag disagrees with oracle".into(),
        )?;
        let forged = [msg[0] ^ byte(&mut rng), msg[1] ^ nonzero(&mut rng)];
        if message_tag(&key, &v8(&forged)).unwrap() == tag {
            wins += 1;
        }
    }
    let forge_rate = wins as f64 / TRIALS as f64;
    let forge_limit = oracle::three_sigma_limit(s as f64 / 256.0, TRIALS);
    check(forge_rate <= forge_limit, || format!("forgery {forge_rate} > {forge_limit}"))?;

    let m = 1u64;
    let mut accepted = 0u64;
    for _ in 0..TRIALS {
        let (c, d, e, y) = (byte(&mut rng), byte(&mut rng), byte(&mut rng), byte(&mut rng));
        let key = SecretTagKey::new(e8(c), e8(d), e8(e)).unwrap();
        let t = secret_tag(&key, &v8(&[y])).unwrap();
        let (tp, cp, dp, ep, yp) = (byte(&mut rng), byte(&mut rng), byte(&mut rng), byte(&mut rng), nonzero(&mut rng));
        let altered = SecretTagKey::new(e8(c ^ cp), e8(d ^ dp), e8(e ^ ep)).unwrap();
        if t.add(e8(tp)).unwrap() == secret_tag(&altered, &v8(&[y ^ yp])).unwrap() {
            accepted += 1;
        }
    }
    let alter_rate = accepted as f64 / TRIALS as f64;
    let alter_limit = oracle::three_sigma_limit((m + 1) as f64 / 256.0, TRIALS);
    check(alter_rate <= alter_limit, || format!("alteration {alter_rate} > {alter_limit}"))?;
    Ok(format!(
        "message forgery {forge_rate:.5} <= {forge_limit:.5} (s=2); secret alteration {alter_rate:.5} <= {alter_limit:.5} (m=1); 1e5 trials each"
    ))
}

fn robustness() -> Outcome {
    let start = Instant::now();
    let mut cells = 0;
    for n in 1..=9 {
        for k in 1..=n {
            let c = (n - k).min(k - 1);
            let mut adv = AdversaryConfig::compromised_random(c, HubStrategy::SubstituteRandom);
            adv.passive = true;
            let r = sim(n, k, 1, FieldId::Gf128, &adv, 1000, (n * 16 + k) as u64);
            check(r.aborted == 0 && r.wrong_secret == 0 && r.completed == 1000, || {
                format!("n={n} k={k} c={c}: {}", r.to_lines().join(" "))
            })?;
            cells += 1;
        }
    }
    Ok(format!(
        "{cells} cells x 1000 trials, compromised = min(n-k, k-1), 0 aborts, {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn wrong_secret() -> Outcome {
    let mut lines = Vec::new();
    for (n, k, c, strategy) in [
        (3, 2, 1, HubStrategy::SubstituteRandom),
        (3, 2, 1, HubStrategy::SubstituteConsistent),
        (5, 3, 2, HubStrategy::SubstituteConsistent),
    ] {
        let adv = AdversaryConfig::compromised_random(c, strategy);
        let r = sim(n, k, 4, FieldId::Gf128, &adv, 10_000, (n * 10 + c) as u64);
        check(r.wrong_secret == 0 && r.completed == 10_000, || {
            format!("GF(2^128) n={n} k={k} {}: {}", strategy.label(), r.to_lines().join(" "))
        })?;
        lines.push(format!("GF(2^128) n={n} k={k} {} x{c}: 0/10000", strategy.label()));
    }
    const TRIALS: u64 = 100_000;
    let p = 3.0 * 2.0 / 256.0;
    let limit = oracle::three_sigma_limit(p, TRIALS);
    for strategy in [HubStrategy::SubstituteRandom, HubStrategy::SubstituteConsistent] {
        let adv = AdversaryConfig::compromised_random(1, strategy);
        let r = sim(3, 2, 1, FieldId::Gf8, &adv, TRIALS, 0x6F8);
        let rate = r.wrong_secret as f64 / TRIALS as f64;
        check(rate <= limit, || format!("GF(2^8) {}: rate {rate} > {limit}", strategy.label()))?;
        lines.push(format!("GF(2^8) {}: {rate:.5} <= {limit:.5}", strategy.label()));
    }
    Ok(lines.join("; "))
}

fn bound_arithmetic() -> Outcome {
    let loss = log2_big(&binomial(99, 50));
    check((loss - 95.35).abs() <= 0.01, || format!("log2 C(99,50) = {loss}"))?;
    let c = binomial(11, 6);
    check(c.to_string() == "462", || format!("C(11,6) = {c}"))?;
    let r = bound_report(99, 50, 1, 128, 1, 0).unwrap();
    check((r.security_loss_bits - loss).abs() < 1e-12, || "report disagrees".into())?;
    Ok(format!("log2 C(99,50) = {loss:.4}; C(11,6) = {c}"))
}

fn throughput() -> Result<f64, String> {
    const M: usize = 1024;
    const REQUEST_BITS: u64 = 1 << 20;
    const REQUESTS: u64 = 8;
    let sessions = REQUESTS * REQUEST_BITS / (M as u64 * 128);
    let c = Cluster::start(Options { m: M, len: (sessions + 4) * iteration_len(M), sync: true, ..Options::default() });
    let start = Instant::now();
    for _ in 0..REQUESTS {
        let sent = c.agent("alice").request_key(&id("bob"), REQUEST_BITS).map_err(|e| e.to_string())?;
        let got = c.agent("bob").get_key_by_id(&id("alice"), sent.key_id, REQUEST_BITS).map_err(|e| e.to_string())?;
        check(sent == got, || "keys differ".into())?;
    }
    Ok((REQUESTS * REQUEST_BITS) as f64 / start.elapsed().as_secs_f64() / 1e6)
}

fn performance() -> Outcome {
    let start = Instant::now();
    let report = run_bench(&default_grid(), 1 << 20, 5).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let fit = report.fit.as_ref().ok_or("no fit")?;
    check((1.6..=2.4).contains(&fit.exponent), || format!("exponent {:.3}", fit.exponent))?;
    check(t < Duration::from_secs(300), || format!("bench took {t:?}"))?;
    let mbps = throughput()?;
    check(mbps >= 2.0, || format!("throughput {mbps:.2} Mbit/s"))?;
    Ok(format!(
        "exponent {:.3} in [1.6, 2.4] ({:.1} s); loopback n=3 k=2 throughput {mbps:.1} Mbit/s (floor 2, reference 20)",
        fit.exponent,
        t.as_secs_f64()
    ))
}

fn table_interleavings() -> Result<u64, String> {
    let mut ops = 0;
    for seed in 0..50u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let len = rng.random_range(1..200u64);
        let field = if seed % 2 == 0 { FieldId::Gf8 } else { FieldId::Gf128 };
        let mut src = EntropySource::seeded(seed);
        let mut t = generate_table(len, field, &mut src, id("c"), id("h"), Direction::ClientToHub).unwrap();
        let original = t.element_bytes().to_vec();
        let mut used = BTreeSet::new();
        for _ in 0..200 {
            ops += 1;
            let n = rng.random_range(0..6u64);
            let res = match rng.random_range(0..3) {
                0 => {
                    let off = rng.random_range(0..len + 3);
                    t.consume_span(off, n).map(|v| (off, v))
                }
                1 => t.consume_next(n),
                _ => {
                    let bytes = t.save();
                    t = PsrdTable::load(&bytes).map_err(|e| e.to_string())?;
                    continue;
                }
            };
            let span_free = |off: u64| off + n <= len && (off..off + n).all(|i| !used.contains(&i));
            if let Ok((off, v)) = res {
                check(span_free(off), || format!("seed {seed}: reused span {off}+{n}"))?;
                let eb = field.byte_len();
                check(v.as_bytes() == &original[off as usize * eb..(off + n) as usize * eb], || "wrong data".into())?;
                used.extend(off..off + n);
            }
            let eb = field.byte_len();
            for &i in &used {
                check(t.is_consumed(i), || "bitmap lost a span".into())?;
                let bytes = &t.element_bytes()[i as usize * eb..(i as usize + 1) * eb];
                check(bytes.iter().all(|&b| b == 0), || "consumed element not zeroed".into())?;
            }
            check(t.consumed_count() == used.len() as u64, || "consumed count".into())?;
        }
    }
    Ok(ops)
}

fn hub_crash_restart() -> Result<(u64, u64, u64), String> {
    let mut c = Cluster::start(Options { agents: vec![], len: 2_000, ..Options::default() });
    let hubs: Vec<Identity> = (1..=3).map(|i| id(&format!("hub-{i}"))).collect();
    let mut tables = FileTables::new(false);
    for h in &hubs {
        for d in [Direction::ClientToHub, Direction::HubToClient] {
            tables.open(&c.client_dir("alice"), &id("alice"), &id("alice"), h, d).map_err(|e| e.to_string())?;
        }
    }
    let params = SharingParams::new(3, 2, 4, FieldId::Gf128).unwrap();
    let mut sender = Sender::new(id("alice"), hubs.clone(), params);
    let mut rng = StdRng::seed_from_u64(0xC4A5);
    let mut sent: Vec<Vec<u8>> = Vec::new();
    let (mut fresh, mut replays, mut restarts) = (0u64, 0u64, 0u64);
    // counters seen by the currently running hub instance
    let (mut relayed_now, mut depleted_now) = (0u64, 0u64);
    let path = c.hub_configs[0].table_dir.join(table_file_name(&id("alice"), &hubs[0], Direction::ClientToHub));
    let span = iteration_len(4);
    let eb = FieldId::Gf128.byte_len();
    let mut conn = raw_connect(c.hub(1).addr(), "alice");
    for _ in 0..120 {
        match rng.random_range(0..10) {
            0..=4 => {
                let (_, outs) = sender.initiate(&id("bob"), &mut tables).map_err(|e| e.to_string())?;
                let frame = outs[0].message.encode();
                conn.write_all(&frame).map_err(|e| e.to_string())?;
                sent.push(frame);
                fresh += 1;
                relayed_now += 1;
            }
            5..=7 if !sent.is_empty() => {
                let frame = &sent[rng.random_range(0..sent.len())];
                conn.write_all(frame).map_err(|e| e.to_string())?;
                replays += 1;
                depleted_now += 1;
            }
            _ => {
                let hub = c.hub(1);
                let want = (relayed_now, depleted_now);
                check(
                    eventually(|| {
                        let s = hub.stats();
                        (s.relayed, s.discards.get(&DiscardReason::TableDepleted).copied().unwrap_or(0)) == want
                    }),
                    || format!("hub stats {:?}, expected {want:?}", hub.stats()),
                )?;
                c.stop_hub(1);
                restarts += 1;
                let f = TableFile::open(&path).map_err(|e| e.to_string())?;
                let t = f.table();
                check(t.consumed_count() == fresh * span, || "on-disk consumed count".into())?;
                check((0..fresh * span).all(|i| t.is_consumed(i)), || "on-disk bitmap".into())?;
                check(t.element_bytes()[..(fresh * span) as usize * eb].iter().all(|&b| b == 0), || {
                    "consumed span not zeroed on disk".into()
                })?;
                check(t.element_bytes()[(fresh * span) as usize * eb..].iter().any(|&b| b != 0), || {
                    "unconsumed data lost".into()
                })?;
                drop(f);
                c.restart_hub(1);
                conn = raw_connect(c.hub(1).addr(), "alice");
                relayed_now = 0;
                depleted_now = 0;
            }
        }
    }
    check(restarts > 0 && replays > 0, || "interleaving never restarted or replayed".into())?;
    Ok((fresh, replays, restarts))
}

fn psrd_hygiene() -> Outcome {
    let ops = table_interleavings()?;
    let (fresh, replays, restarts) = hub_crash_restart()?;
    Ok(format!(
        "{ops} random table ops with reloads, no reuse; hub daemon: {fresh} frames, {replays} replays refused, {restarts} restarts, consumed spans zeroed on disk"
    ))
}

fn fault_tolerance() -> Outcome {
    let mut c = Cluster::start(Options::default());
    let mut delivered = 0;
    for down in 1..=3 {
        c.stop_hub(down);
        c.wait_connected("alice", 2);
        c.wait_connected("bob", 2);
        let sent = c.agent("alice").request_key(&id("bob"), 256).map_err(|e| format!("hub {down} down: {e}"))?;
        let got = c.agent("bob").get_key_by_id(&id("alice"), sent.key_id, 256).map_err(|e| e.to_string())?;
        check(sent == got, || format!("hub {down} down: keys differ"))?;
        delivered += 1;
        c.restart_hub(down);
        c.wait_connected("alice", 3);
        c.wait_connected("bob", 3);
    }
    let mut refused = 0;
    for up in 1..=3 {
        for i in (1..=3).filter(|&i| i != up) {
            c.stop_hub(i);
        }
        c.wait_connected("alice", 1);
        match c.agent("alice").request_key(&id("bob"), 256) {
            Err(Error::PeerUnreachable { reachable: 1, needed: 2 }) => refused += 1,
            other => return Err(format!("only hub {up} up: {other:?}")),
        }
        for i in (1..=3).filter(|&i| i != up) {
            c.restart_hub(i);
        }
        c.wait_connected("alice", 3);
        c.wait_connected("bob", 3);
    }
    Ok(format!("{delivered}/3 two-hub configurations delivered; {refused}/3 one-hub configurations refused"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("honest correctness", honest_sessions),
        ("all-subsets reconstruction", all_subsets),
        ("perfect confidentiality", confidentiality),
        ("forgery bounds", forgery),
        ("robustness", robustness),
        ("wrong-secret security", wrong_secret),
        ("bound arithmetic", bound_arithmetic),
        ("performance scaling", performance),
        ("PSRD hygiene", psrd_hygiene),
        ("fault tolerance", fault_tolerance),
    ];
    // numeric arguments pick criteria; anything else (libtest flags) is ignored
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !picked.is_empty() && !picked.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
