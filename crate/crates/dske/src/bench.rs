//! Share generation and reconstruction timing.
//!
//! Sharing runs over GF(2^8). The first 48 bytes of `Y_0` are read as the
//! three GF(2^128) elements of the secret tag key and the secret is tagged
//! through its padded GF(2^128) reading. Alice is timed on share
//! generation plus tagging; Bob on interpolating the first `k` shares plus
//! validation. Table reads and transport are excluded.

use std::fmt::Write as _;
use std::time::Instant;

use dske_core::field::{bytes_to_elements, ElementVector, FieldElement, FieldId};
use dske_core::hashing::{secret_tag, SecretTagKey};
use dske_core::psrd::EntropySource;
use dske_core::sharing::{generate_shares, reconstruct, reconstruct_via_coefficients, SharingParams};

use crate::Error;

/// GF(2^8) elements taken up by the GF(2^128) tag key.
pub const TAG_KEY_BYTES: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub k: usize,
    pub secret_bits: u64,
    pub alice_ms: f64,
    pub bob_ms: f64,
    /// Bob's reconstruction through Lagrange weights, for comparison.
    pub lagrange_ms: f64,
}

impl BenchRow {
    pub fn total_ms(&self) -> f64 {
        self.alice_ms + self.bob_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFit {
    pub exponent: f64,
    /// `ln` of the fitted constant factor.
    pub log_scale: f64,
    /// `ln(observed) - ln(fitted)` per point.
    pub residuals: Vec<f64>,
}

/// Least squares on `ln(time) = exponent ln(k) + log_scale`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Option<PowerFit> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(k, t)| *k > 0.0 && *t > 0.0).map(|(k, t)| (k.ln(), t.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let exponent = sxy / sxx;
    let log_scale = my - exponent * mx;
    let residuals = pts.iter().map(|p| p.1 - (exponent * p.0 + log_scale)).collect();
    Some(PowerFit { exponent, log_scale, residuals })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Mean total time of the `k = 1` cells: tagging, validation and
    /// copying, none of which depend on `k`.
    pub baseline_ms: f64,
    /// Fit of `total - baseline` against `k` over the `k >= 2` rows, i.e.
    /// `total = a k^b + baseline`.
    pub fit: Option<PowerFit>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,k,secret_bits,alice_ms,bob_ms,lagrange_ms\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4},{:.4}",
                r.n, r.k, r.secret_bits, r.alice_ms, r.bob_ms, r.lagrange_ms
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:>4} {:>4} {:>10} {:>10} {:>10} {:>12} {:>10}\n",
            "n", "k", "bits", "alice_ms", "bob_ms", "lagrange_ms", "Mbit/s"
        );
        for r in &self.rows {
            let mbps = r.secret_bits as f64 / 1e6 / (r.total_ms() / 1e3);
            let _ = writeln!(
                out,
                "{:>4} {:>4} {:>10} {:>10.3} {:>10.3} {:>12.3} {:>10.1}",
                r.n, r.k, r.secret_bits, r.alice_ms, r.bob_ms, r.lagrange_ms, mbps
            );
        }
        let _ = writeln!(out, "k = 1 baseline: {:.3} ms", self.baseline_ms);
        match &self.fit {
            Some(f) => {
                let _ = writeln!(out, "fitted exponent of k: {:.3} (scale {:.4} ms)", f.exponent, f.log_scale.exp());
            }
            None => out.push_str("fitted exponent of k: n/a\n"),
        }
        out
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn tag_key(u: &ElementVector) -> SecretTagKey {
    let b = u.as_bytes();
    let e = |i: usize| FieldElement::from_le_bytes(FieldId::Gf128, &b[16 * i..16 * i + 16]).expect("16 bytes");
    SecretTagKey::new(e(0), e(1), e(2)).expect("one field")
}

fn tag_of(y0: &ElementVector) -> FieldElement {
    let (u, s) = y0.split_at(TAG_KEY_BYTES);
    secret_tag(&tag_key(&u), &bytes_to_elements(s.as_bytes(), FieldId::Gf128)).expect("nonempty")
}

/// Within one round a cell repeats until it has spent this long and run at
/// least `MIN_RUNS` times, so every cell gets enough runs for a stable minimum.
pub const ROUND_BUDGET_MS: f64 = 100.0;
const MIN_RUNS: usize = 3;
const MAX_RUNS: usize = 400;

struct Cell {
    params: SharingParams,
    src: EntropySource,
    best: (f64, f64, f64),
}

impl Cell {
    fn new(n: usize, k: usize, secret_bits: u64, seed: u64) -> Result<Self, Error> {
        if secret_bits == 0 || !secret_bits.is_multiple_of(8) {
            return Err(Error::Request("secret_bits must be a positive multiple of 8".into()));
        }
        let m = (secret_bits / 8) as usize + TAG_KEY_BYTES - 3;
        let params = SharingParams::new(n, k, m, FieldId::Gf8).map_err(|e| Error::Request(e.to_string()))?;
        Ok(Self { params, src: EntropySource::seeded(seed), best: (f64::INFINITY, f64::INFINITY, f64::INFINITY) })
    }

    fn run_once(&mut self) -> Result<(), Error> {
        let (n, k, len) = (self.params.n(), self.params.k(), self.params.payload_len());
        let anchors: Vec<ElementVector> = (0..k)
            .map(|_| {
                let mut b = vec![0u8; len];
                self.src.fill(&mut b);
                ElementVector::from_bytes(FieldId::Gf8, b).expect("bytes are elements")
            })
            .collect();

        let t = Instant::now();
        let (y0, shares) = generate_shares(&anchors, &self.params).map_err(|e| Error::Request(e.to_string()))?;
        let o = tag_of(&y0);
        let alice = ms(t);

        let pts: Vec<(FieldElement, &ElementVector)> = shares[..k].iter().map(|s| (s.x, &s.payload)).collect();
        let t = Instant::now();
        let got = reconstruct_via_coefficients(&pts).map_err(|e| Error::Request(e.to_string()))?;
        let valid = tag_of(&got) == o;
        let bob = ms(t);

        let t = Instant::now();
        let via_weights = reconstruct(&pts).map_err(|e| Error::Request(e.to_string()))?;
        let lagrange = ms(t);

        if !valid || got != y0 || via_weights != y0 {
            return Err(Error::Request(format!("reconstruction mismatch at n={n} k={k}")));
        }
        let b = &mut self.best;
        *b = (b.0.min(alice), b.1.min(bob), b.2.min(lagrange));
        Ok(())
    }

    fn round(&mut self) -> Result<(), Error> {
        let started = Instant::now();
        let mut runs = 0;
        while runs < MIN_RUNS || (ms(started) < ROUND_BUDGET_MS && runs < MAX_RUNS) {
            self.run_once()?;
            runs += 1;
        }
        Ok(())
    }

    fn row(&self, secret_bits: u64) -> BenchRow {
        BenchRow {
            n: self.params.n(),
            k: self.params.k(),
            secret_bits,
            alice_ms: self.best.0,
            bob_ms: self.best.1,
            lagrange_ms: self.best.2,
        }
    }
}

/// Times one `(n, k)` cell, keeping the fastest runs over `repeats` rounds.
pub fn bench_cell(n: usize, k: usize, secret_bits: u64, repeats: usize, seed: u64) -> Result<BenchRow, Error> {
    let mut cell = Cell::new(n, k, secret_bits, seed)?;
    for _ in 0..repeats.max(1) {
        cell.round()?;
    }
    Ok(cell.row(secret_bits))
}

/// Benchmarks every grid cell and fits the total time against `k`. Rounds
/// visit every cell in turn so a slow spell on the host is spread across
/// cells instead of landing on one. Cells `(1, 1)` and `(2, 1)` are added
/// for the baseline when the grid has no `k = 1` cell; they are not
/// reported as rows then.
pub fn run_bench(grid: &[(usize, usize)], secret_bits: u64, repeats: usize) -> Result<BenchReport, Error> {
    let mut cells = Vec::with_capacity(grid.len() + 2);
    for (i, &(n, k)) in grid.iter().enumerate() {
        cells.push(Cell::new(n, k, secret_bits, 0xBE4C + i as u64)?);
    }
    let extra_baseline = !grid.iter().any(|&(_, k)| k == 1);
    if extra_baseline {
        for n in [1, 2] {
            cells.push(Cell::new(n, 1, secret_bits, 0xBA5E + n as u64)?);
        }
    }
    for _ in 0..repeats.max(1) {
        for cell in cells.iter_mut() {
            cell.round()?;
        }
    }
    let all: Vec<BenchRow> = cells.iter().map(|c| c.row(secret_bits)).collect();
    let base: Vec<f64> = all.iter().filter(|r| r.k == 1).map(BenchRow::total_ms).collect();
    let baseline_ms = base.iter().sum::<f64>() / base.len() as f64;
    let rows: Vec<BenchRow> = if extra_baseline { all[..grid.len()].to_vec() } else { all };
    let pts: Vec<(f64, f64)> =
        rows.iter().filter(|r| r.k >= 2).map(|r| (r.k as f64, r.total_ms() - baseline_ms)).collect();
    Ok(BenchReport { fit: fit_power_law(&pts), baseline_ms, rows })
}

/// `k` in {2, 4, 8, 16} with `n` in {k, k + 1}.
pub fn default_grid() -> Vec<(usize, usize)> {
    [2, 4, 8, 16].iter().flat_map(|&k| [(k, k), (k + 1, k)]).collect()
}

/// Parses `n:k,n:k,...`.
pub fn parse_grid(s: &str) -> Result<Vec<(usize, usize)>, Error> {
    s.split(',')
        .map(|cell| {
            let (n, k) =
                cell.split_once(':').ok_or_else(|| Error::Request(format!("grid cell {cell:?} is not n:k")))?;
            let n = n.trim().parse().map_err(|_| Error::Request(format!("bad n in {cell:?}")))?;
            let k = k.trim().parse().map_err(|_| Error::Request(format!("bad k in {cell:?}")))?;
            Ok((n, k))
        })
        .collect()
}
