use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Positions and sampled ids produced for one instance during `epoch`,
/// to be consumed in `epoch + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheEntry {
    pub epoch: u32,
    pub positions: Vec<usize>,
    pub ids: Vec<u32>,
}

/// Sampled token indices keyed by instance id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReplacementCache {
    entries: BTreeMap<u64, CacheEntry>,
}

impl ReplacementCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn store(&mut self, instance_id: u64, epoch: u32, positions: Vec<usize>, ids: Vec<u32>) -> Result<()> {
        if positions.len() != ids.len() {
            return Err(Error::ShapeMismatch {
                op: "cache_store",
                lhs: vec![positions.len()],
                rhs: vec![ids.len()],
            });
        }
        if let Some(e) = self.entries.get(&instance_id) {
            if e.epoch >= epoch {
                return Err(Error::DoubleWrite { instance: instance_id, epoch });
            }
        }
        self.entries.insert(instance_id, CacheEntry { epoch, positions, ids });
        Ok(())
    }

    pub fn get(&self, instance_id: u64) -> Option<&CacheEntry> {
        self.entries.get(&instance_id)
    }

    /// Remove and return the entry written in `epoch - 1` for use in `epoch`.
    pub fn take(&mut self, instance_id: u64, epoch: u32) -> Result<CacheEntry> {
        match self.entries.get(&instance_id) {
            Some(e) if epoch > 0 && e.epoch == epoch - 1 => Ok(self.entries.remove(&instance_id).expect("present")),
            _ => Err(Error::CacheMiss { instance: instance_id, epoch }),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (u64, &CacheEntry)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    /// Spill records, all little-endian `u32`: instance id, `|S|`, positions, ids.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let u32_of = |v: u64| u32::try_from(v).map_err(|_| Error::Invalid(format!("{v} does not fit the spill format")));
        for (&id, e) in &self.entries {
            out.extend_from_slice(&u32_of(id)?.to_le_bytes());
            out.extend_from_slice(&u32_of(e.positions.len() as u64)?.to_le_bytes());
            for &p in &e.positions {
                out.extend_from_slice(&u32_of(p as u64)?.to_le_bytes());
            }
            for &t in &e.ids {
                out.extend_from_slice(&t.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parse spill records; every entry is tagged with `epoch`.
    pub fn from_bytes(bytes: &[u8], epoch: u32) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::CorruptCheckpoint("cache spill length not a multiple of 4".into()));
        }
        let words: Vec<u32> = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut cache = Self::new();
        let mut i = 0;
        while i < words.len() {
            let truncated = || Error::CorruptCheckpoint("truncated cache spill".into());
            let id = words[i] as u64;
            let n = *words.get(i + 1).ok_or_else(truncated)? as usize;
            let end = i + 2 + 2 * n;
            if end > words.len() {
                return Err(truncated());
            }
            let positions = words[i + 2..i + 2 + n].iter().map(|&p| p as usize).collect();
            let ids = words[i + 2 + n..end].to_vec();
            cache.store(id, epoch, positions, ids)?;
            i = end;
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(&self.to_bytes()?).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, epoch: u32) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, epoch)
    }

    /// Hex SHA-256 over the spill bytes plus entry epochs.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (&id, e) in &self.entries {
            h.update(id.to_le_bytes());
            h.update(e.epoch.to_le_bytes());
            h.update((e.positions.len() as u64).to_le_bytes());
            for &p in &e.positions {
                h.update((p as u64).to_le_bytes());
            }
            for &t in &e.ids {
                h.update(t.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
