//! Scenario files for `dske simulate`.
//!
//! ```toml
//! n = 3
//! k = 2
//! m = 1
//! field_bits = 8
//! trials = 1000
//! seed = 7
//!
//! [adversary]
//! compromised = [0]          # or: compromised_random = 1
//! strategy = "substitute-random"
//! passive = false
//!
//! [[adversary.channel]]
//! link = "to-hub"            # or "from-hub"
//! hub = 2
//! action = "tamper"          # drop | tamper | duplicate | reorder
//! from_end = 1
//! mask = 1
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use dske_core::field::FieldId;
use dske_core::sharing::SharingParams;
use dske_core::simnet::{run_scenario, AdversaryConfig, ChannelAction, Compromise, HubStrategy, Link, ScenarioReport};

use crate::Error;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    #[serde(default = "default_field_bits")]
    pub field_bits: u32,
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adversary: AdversarySection,
}

fn default_field_bits() -> u32 {
    128
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySection {
    #[serde(default)]
    pub compromised: Vec<usize>,
    pub compromised_random: Option<usize>,
    pub strategy: Option<String>,
    #[serde(default)]
    pub passive: bool,
    #[serde(default)]
    pub channel: Vec<ChannelSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub link: String,
    pub hub: usize,
    pub action: String,
    #[serde(default)]
    pub from_end: usize,
    #[serde(default)]
    pub mask: u8,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn params(&self) -> Result<SharingParams, Error> {
        let field = match self.field_bits {
            8 => FieldId::Gf8,
            128 => FieldId::Gf128,
            b => return Err(bad(format!("field_bits must be 8 or 128, got {b}"))),
        };
        SharingParams::new(self.n, self.k, self.m, field).map_err(|e| bad(e.to_string()))
    }

    pub fn adversary(&self) -> Result<AdversaryConfig, Error> {
        let a = &self.adversary;
        let strategy = match &a.strategy {
            None => HubStrategy::ForwardHonest,
            Some(s) => HubStrategy::parse(s).ok_or_else(|| bad(format!("unknown strategy {s:?}")))?,
        };
        let compromised = match (a.compromised_random, a.compromised.is_empty()) {
            (Some(_), false) => return Err(bad("give either compromised or compromised_random")),
            (Some(c), true) => Compromise::Random(c),
            (None, _) => Compromise::Fixed(a.compromised.iter().copied().collect()),
        };
        let mut channel_actions = Vec::with_capacity(a.channel.len());
        for c in &a.channel {
            let link = match c.link.as_str() {
                "to-hub" => Link::ToHub(c.hub),
                "from-hub" => Link::FromHub(c.hub),
                other => return Err(bad(format!("unknown link {other:?}"))),
            };
            let action = match c.action.as_str() {
                "drop" => ChannelAction::Drop,
                "tamper" => ChannelAction::Tamper { from_end: c.from_end, mask: c.mask },
                "duplicate" => ChannelAction::Duplicate,
                "reorder" => ChannelAction::Reorder,
                other => return Err(bad(format!("unknown action {other:?}"))),
            };
            channel_actions.push((link, action));
        }
        let cfg = AdversaryConfig { compromised, strategy, channel_actions, passive: a.passive };
        cfg.validate(self.n).map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn run(&self) -> Result<ScenarioReport, Error> {
        let params = self.params()?;
        let adversary = self.adversary()?;
        run_scenario(&params, &adversary, self.trials, self.seed).map_err(|e| bad(e.to_string()))
    }
}

/// Human-readable summary followed by the `key=value` lines.
pub fn render(scenario: &ScenarioFile, report: &ScenarioReport) -> String {
    let mut out = String::new();
    let rate = |x: u64| if report.trials == 0 { 0.0 } else { x as f64 / report.trials as f64 };
    let _ = writeln!(
        out,
        "n={} k={} m={} field=GF(2^{}) trials={} seed={}",
        scenario.n, scenario.k, scenario.m, scenario.field_bits, report.trials, report.seed
    );
    for (name, count) in [
        ("completed", report.completed),
        ("aborted", report.aborted),
        ("  insufficient shares", report.aborted_insufficient),
        ("wrong secret", report.wrong_secret),
        ("tampered frames", report.tampered),
        ("tampered accepted", report.tampered_accepted),
    ] {
        let _ = writeln!(out, "{name:<24}{count:>10}  {:>9.6}", rate(count));
    }
    for (reason, count) in &report.discard_histogram {
        let _ = writeln!(out, "{:<24}{count:>10}", format!("discard {}", reason.label()));
    }
    out.push('\n');
    for line in report.to_lines() {
        out.push_str(&line);
        out.push('\n');
    }
    out
}
