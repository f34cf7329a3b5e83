//! Table files on disk.
//!
//! Files are written whole once and then patched in place: consuming a span
//! rewrites its bitmap bytes, zeroes its elements and updates `next_offset`,
//! followed by a data sync when durability is requested.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use dske_core::field::FieldId;
use dske_core::protocol::{Identity, TableStore};
use dske_core::psrd::{generate_pair, Direction, EntropySource, PsrdError, PsrdTable};

use crate::Error;

/// `{client}_{hub}_{c2h|h2c}.dskt`
pub fn table_file_name(client: &Identity, hub: &Identity, direction: Direction) -> String {
    format!("{}_{}_{}.dskt", client, hub, direction.label())
}

pub struct TableFile {
    path: PathBuf,
    file: File,
    table: PsrdTable,
}

impl TableFile {
    pub fn open(path: &Path) -> Result<Self, Error> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let table = PsrdTable::load(&bytes).map_err(|e| Error::Table(format!("{}: {e}", path.display())))?;
        Ok(Self { path: path.to_path_buf(), file, table })
    }

    /// Writes `table` to a fresh file, replacing any existing one.
    pub fn create(path: &Path, table: PsrdTable) -> Result<Self, Error> {
        let tmp = path.with_extension("dskt.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&table.save())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        let file = OpenOptions::new().read(true).write(true).open(path)?;
        Ok(Self { path: path.to_path_buf(), file, table })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn table(&self) -> &PsrdTable {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut PsrdTable {
        &mut self.table
    }

    /// Flushes consumed spans to disk. Returns whether anything was written.
    pub fn persist(&mut self, sync: bool) -> Result<bool, Error> {
        let dirty = self.table.take_dirty();
        if dirty.is_empty() {
            return Ok(false);
        }
        let layout = self.table.layout();
        let w = layout.element_width as u64;
        for span in merge(dirty) {
            let zeros = vec![0u8; ((span.end - span.start) * w) as usize];
            self.file.seek(SeekFrom::Start(layout.elements_at as u64 + span.start * w))?;
            self.file.write_all(&zeros)?;
            let first = (span.start / 8) as usize;
            let last = ((span.end - 1) / 8) as usize;
            self.file.seek(SeekFrom::Start((layout.bitmap_at + first) as u64))?;
            self.file.write_all(&self.table.bitmap()[first..=last])?;
        }
        self.file.seek(SeekFrom::Start(layout.next_offset_at as u64))?;
        self.file.write_all(&self.table.next_offset().to_be_bytes())?;
        if sync {
            self.file.sync_data()?;
        }
        Ok(true)
    }
}

fn merge(mut spans: Vec<Range<u64>>) -> Vec<Range<u64>> {
    spans.retain(|s| s.start < s.end);
    spans.sort_by_key(|s| s.start);
    let mut out: Vec<Range<u64>> = Vec::with_capacity(spans.len());
    for s in spans {
        match out.last_mut() {
            Some(last) if s.start <= last.end => last.end = last.end.max(s.end),
            _ => out.push(s),
        }
    }
    out
}

/// File-backed tables keyed by counterpart identity and direction.
pub struct FileTables {
    files: BTreeMap<(Identity, Direction), TableFile>,
    sync: bool,
}

impl FileTables {
    pub fn new(sync: bool) -> Self {
        Self { files: BTreeMap::new(), sync }
    }

    /// Adds a table held by `owner`; the key is whichever side is not `owner`.
    pub fn insert(&mut self, owner: &Identity, file: TableFile) {
        let t = file.table();
        let counterpart = if t.client_id() == owner { t.hub_id() } else { t.client_id() };
        self.files.insert((counterpart.clone(), t.direction()), file);
    }

    pub fn open(
        &mut self,
        dir: &Path,
        owner: &Identity,
        client: &Identity,
        hub: &Identity,
        direction: Direction,
    ) -> Result<(), Error> {
        let path = dir.join(table_file_name(client, hub, direction));
        let file = TableFile::open(&path)?;
        let t = file.table();
        if t.client_id() != client || t.hub_id() != hub || t.direction() != direction {
            return Err(Error::Table(format!("{}: identities do not match file name", path.display())));
        }
        self.insert(owner, file);
        Ok(())
    }

    pub fn get(&self, counterpart: &Identity, direction: Direction) -> Option<&PsrdTable> {
        self.files.get(&(counterpart.clone(), direction)).map(|f| f.table())
    }

    pub fn persist(&mut self) -> Result<usize, Error> {
        let mut written = 0;
        for f in self.files.values_mut() {
            if f.persist(self.sync)? {
                written += 1;
            }
        }
        Ok(written)
    }
}

impl TableStore for FileTables {
    fn table_mut(&mut self, counterpart: &Identity, direction: Direction) -> Option<&mut PsrdTable> {
        self.files.get_mut(&(counterpart.clone(), direction)).map(|f| f.table_mut())
    }
}

/// Writes both direction tables for one client/hub pair into each of the
/// two directories. Returns the paths written.
pub fn provision_pair(
    client: &Identity,
    hub: &Identity,
    len: u64,
    field: FieldId,
    src: &mut EntropySource,
    client_dir: &Path,
    hub_dir: &Path,
) -> Result<Vec<PathBuf>, Error> {
    std::fs::create_dir_all(client_dir)?;
    std::fs::create_dir_all(hub_dir)?;
    let mut written = Vec::new();
    for direction in [Direction::ClientToHub, Direction::HubToClient] {
        let (a, b) = generate_pair(len, field, src, client.clone(), hub.clone(), direction)
            .map_err(|e: PsrdError| Error::Table(e.to_string()))?;
        let name = table_file_name(client, hub, direction);
        for (dir, table) in [(client_dir, a), (hub_dir, b)] {
            let path = dir.join(&name);
            TableFile::create(&path, table)?;
            written.push(path);
        }
    }
    Ok(written)
}
