//! TOML configuration for hubs and agents.
//!
//! Relative `table_dir` paths are resolved against the config file's
//! directory.

use std::path::{Path, PathBuf};

use dske_core::field::FieldId;
use dske_core::protocol::Identity;
use dske_core::sharing::SharingParams;
use serde::{Deserialize, Serialize};

use crate::Error;

fn default_queue_depth() -> usize {
    1024
}

fn default_sync() -> bool {
    true
}

fn default_deadline() -> u64 {
    500
}

fn default_timeout() -> u64 {
    10_000
}

fn default_field_bits() -> u32 {
    128
}

/// `client` may send keys to `peer` through this hub.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclEntry {
    pub client: String,
    pub peer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HubConfig {
    pub identity: String,
    pub listen: String,
    pub table_dir: PathBuf,
    #[serde(default)]
    pub acl: Vec<AclEntry>,
    /// Frames held per offline receiver before new ones are dropped.
    #[serde(default = "default_queue_depth")]
    pub queue_depth: usize,
    /// fsync table files after every consumption.
    #[serde(default = "default_sync")]
    pub sync: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubEndpoint {
    pub identity: String,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub identity: String,
    pub table_dir: PathBuf,
    /// Local key API address; port 0 picks a free port.
    pub api_listen: String,
    /// Hub `i` is entry `i - 1`; the order fixes x-coordinates.
    pub hubs: Vec<HubEndpoint>,
    pub k: usize,
    pub m: usize,
    #[serde(default = "default_field_bits")]
    pub field_bits: u32,
    /// Finalize this long after the k-th share if the rest never arrive.
    #[serde(default = "default_deadline")]
    pub finalize_deadline_ms: u64,
    #[serde(default = "default_timeout")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_sync")]
    pub sync: bool,
}

fn identity(s: &str) -> Result<Identity, Error> {
    s.parse().map_err(|_| Error::Config(format!("bad identity {s:?}")))
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve(base: &Path, dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        dir.to_path_buf()
    } else {
        base.join(dir)
    }
}

impl HubConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let mut cfg: Self =
            toml::from_str(&read(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.table_dir = resolve(path.parent().unwrap_or(Path::new(".")), &cfg.table_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        identity(&self.identity)?;
        for e in &self.acl {
            identity(&e.client)?;
            identity(&e.peer)?;
        }
        Ok(())
    }

    pub fn hub_identity(&self) -> Result<Identity, Error> {
        identity(&self.identity)
    }

    /// Every identity named by the ACL, sorted and deduplicated.
    pub fn clients(&self) -> Result<Vec<Identity>, Error> {
        let mut out = Vec::new();
        for e in &self.acl {
            out.push(identity(&e.client)?);
            out.push(identity(&e.peer)?);
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl ClientConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let mut cfg: Self =
            toml::from_str(&read(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.table_dir = resolve(path.parent().unwrap_or(Path::new(".")), &cfg.table_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        identity(&self.identity)?;
        for h in &self.hubs {
            identity(&h.identity)?;
        }
        self.params()?;
        Ok(())
    }

    pub fn field(&self) -> Result<FieldId, Error> {
        FieldId::from_bits(self.field_bits)
            .ok_or_else(|| Error::Config(format!("field_bits must be 8 or 128, got {}", self.field_bits)))
    }

    pub fn params(&self) -> Result<SharingParams, Error> {
        SharingParams::new(self.hubs.len(), self.k, self.m, self.field()?).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn client_identity(&self) -> Result<Identity, Error> {
        identity(&self.identity)
    }

    pub fn hub_identities(&self) -> Result<Vec<Identity>, Error> {
        self.hubs.iter().map(|h| identity(&h.identity)).collect()
    }
}
