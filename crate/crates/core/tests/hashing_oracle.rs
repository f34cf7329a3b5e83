mod common;

use dske_core::field::{ElementVector, FieldElement, FieldId};
use dske_core::hashing::{message_tag, secret_tag, HashError, MessageTagKey, SecretTagKey};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 100_000;

fn e8(v: u8) -> FieldElement {
    FieldElement::new(FieldId::Gf8, v as u128).unwrap()
}

fn v8(vals: &[u8]) -> ElementVector {
    ElementVector::from_bytes(FieldId::Gf8, vals.to_vec()).unwrap()
}

fn mkey(c: u8, d: u8) -> MessageTagKey {
    MessageTagKey::new(e8(c), e8(d)).unwrap()
}

fn skey(c: u8, d: u8, e: u8) -> SecretTagKey {
    SecretTagKey::new(e8(c), e8(d), e8(e)).unwrap()
}

fn byte(rng: &mut ChaCha8Rng) -> u8 {
    rng.next_u32() as u8
}

fn nonzero(rng: &mut ChaCha8Rng) -> u8 {
    loop {
        let b = byte(rng);
        if b != 0 {
            return b;
        }
    }
}

#[test]
fn examples() {
    assert_eq!(message_tag(&mkey(2, 0), &v8(&[1, 1])).unwrap(), e8(0x06));
    assert_eq!(message_tag(&mkey(9, 0x33), &v8(&[])).unwrap(), e8(0x33));
    assert_eq!(message_tag(&mkey(0, 0x44), &v8(&[5, 6, 7])).unwrap(), e8(0x44));
    assert_eq!(secret_tag(&skey(2, 0, 0), &v8(&[1])).unwrap(), e8(0x04));
    assert_eq!(secret_tag(&skey(0, 0x21, 0x99), &v8(&[1, 2])).unwrap(), e8(0x21));
    assert_eq!(
        secret_tag(&skey(0x10, 0x21, 0x99), &v8(&[0, 0])).unwrap().value() as u8,
        0x21 ^ common::mul8(0x10, 0x99)
    );
    assert_eq!(secret_tag(&skey(1, 2, 3), &v8(&[])), Err(HashError::EmptySecret));
}

#[test]
fn horner_matches_power_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in 0..20 {
        let msg: Vec<u8> = (0..s).map(|_| byte(&mut rng)).collect();
        let (c, d, e) = (byte(&mut rng), byte(&mut rng), byte(&mut rng));
        let vals: Vec<u128> = msg.iter().map(|&b| b as u128).collect();
        assert_eq!(
            message_tag(&mkey(c, d), &v8(&msg)).unwrap().value(),
            common::poly_hash(8, c as u128, d as u128, &vals)
        );
        if s > 0 {
            assert_eq!(
                secret_tag(&skey(c, d, e), &v8(&msg)).unwrap().value(),
                common::secret_hash(8, c as u128, d as u128, e as u128, &vals)
            );
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for s in 1..6 {
        let r = |rng: &mut ChaCha8Rng| ((rng.next_u64() as u128) << 64) | rng.next_u64() as u128;
        let vals: Vec<u128> = (0..s).map(|_| r(&mut rng)).collect();
        let (c, d, e) = (r(&mut rng), r(&mut rng), r(&mut rng));
        let f = |v| FieldElement::new(FieldId::Gf128, v).unwrap();
        let msg = ElementVector::from_values(FieldId::Gf128, &vals).unwrap();
        let mk = MessageTagKey::new(f(c), f(d)).unwrap();
        assert_eq!(message_tag(&mk, &msg).unwrap().value(), common::poly_hash(128, c, d, &vals));
        let sk = SecretTagKey::new(f(c), f(d), f(e)).unwrap();
        assert_eq!(secret_tag(&sk, &msg).unwrap().value(), common::secret_hash(128, c, d, e, &vals));
    }
}

#[test]
fn linear_in_d() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let msg = v8(&[byte(&mut rng), byte(&mut rng), byte(&mut rng)]);
        let (c, d) = (byte(&mut rng), byte(&mut rng));
        let with_d = message_tag(&mkey(c, d), &msg).unwrap();
        let without = message_tag(&mkey(c, 0), &msg).unwrap();
        assert_eq!(with_d, e8(d).add(without).unwrap());
    }
}

/// For fixed `(c, e, y)` and uniform `d`, every tag value occurs once.
#[test]
fn secret_tag_uniform_in_d() {
    for (c, e, y) in [(0u8, 0u8, 0u8), (2, 7, 1), (0x53, 0xCA, 0xFF)] {
        let mut hits = [0u32; 256];
        for d in 0..=255u8 {
            hits[secret_tag(&skey(c, d, e), &v8(&[y])).unwrap().value() as usize] += 1;
        }
        assert!(hits.iter().all(|&h| h == 1));
    }
}

/// Best forger with `s = 2`: keep the tag, alter the message by `(a1, a2)`.
/// It wins when `c a1 = c^2 a2`, i.e. for two of the 256 keys.
#[test]
fn message_forgery_rate_within_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0);
    let s = 2u64;
    let mut wins = 0u64;
    for _ in 0..TRIALS {
        let key = mkey(byte(&mut rng), byte(&mut rng));
        let msg = [byte(&mut rng), byte(&mut rng)];
        let tag = message_tag(&key, &v8(&msg)).unwrap();
        let forged = [msg[0] ^ byte(&mut rng), msg[1] ^ nonzero(&mut rng)];
        if message_tag(&key, &v8(&forged)).unwrap() == tag {
            wins += 1;
        }
    }
    let rate = wins as f64 / TRIALS as f64;
    let limit = common::three_sigma_limit(s as f64 / 256.0, TRIALS);
    assert!(rate <= limit, "forgery rate {rate} above {limit}");
    assert!(wins > 0);
}

#[test]
fn secret_alteration_rate_within_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1);
    let m = 1u64;
    let mut accepted = 0u64;
    for _ in 0..TRIALS {
        let (c, d, e, y) = (byte(&mut rng), byte(&mut rng), byte(&mut rng), byte(&mut rng));
        let t = secret_tag(&skey(c, d, e), &v8(&[y])).unwrap();
        let (tp, cp, dp, ep, yp) = (byte(&mut rng), byte(&mut rng), byte(&mut rng), byte(&mut rng), nonzero(&mut rng));
        let altered = secret_tag(&skey(c ^ cp, d ^ dp, e ^ ep), &v8(&[y ^ yp])).unwrap();
        if t.add(e8(tp)).unwrap() == altered {
            accepted += 1;
        }
    }
    let rate = accepted as f64 / TRIALS as f64;
    let limit = common::three_sigma_limit((m + 1) as f64 / 256.0, TRIALS);
    assert!(rate <= limit, "acceptance rate {rate} above {limit}");
}
