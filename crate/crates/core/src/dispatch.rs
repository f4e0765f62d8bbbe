//! The `auto` backend: static tuning tables and routing.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::CommOpKind;

/// Smallest and largest bucket boundaries: 4 B and 64 MiB.
pub const MIN_BUCKET_LOG2: u32 = 2;
pub const MAX_BUCKET_LOG2: u32 = 26;

/// Power-of-two message-size bucket boundary in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SizeBucket(pub u64);

impl SizeBucket {
    /// Smallest boundary ≥ `bytes`; anything above 64 MiB lands in the top
    /// bucket.
    pub fn of(bytes: u64) -> Self {
        let lo = 1u64 << MIN_BUCKET_LOG2;
        let hi = 1u64 << MAX_BUCKET_LOG2;
        SizeBucket(bytes.clamp(lo, hi).next_power_of_two().min(hi))
    }

    pub fn all() -> Vec<SizeBucket> {
        (MIN_BUCKET_LOG2..=MAX_BUCKET_LOG2).map(|e| SizeBucket(1 << e)).collect()
    }

    pub fn bytes(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub max_bytes: u64,
    pub backend: String,
}

/// op → world size → thresholds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningTable {
    pub version: u32,
    #[serde(default)]
    pub system: String,
    #[serde(default)]
    pub tables: BTreeMap<String, BTreeMap<String, Vec<TableEntry>>>,
}

impl Default for TuningTable {
    fn default() -> Self {
        TuningTable {
            version: 1,
            system: String::new(),
            tables: BTreeMap::new(),
        }
    }
}

/// Collapse runs of entries with the same backend into the run's last
/// threshold.
pub fn merge_runs(entries: Vec<TableEntry>) -> Vec<TableEntry> {
    let mut out: Vec<TableEntry> = Vec::with_capacity(entries.len());
    for e in entries {
        match out.last_mut() {
            Some(last) if last.backend == e.backend => last.max_bytes = e.max_bytes,
            _ => out.push(e),
        }
    }
    out
}

impl TuningTable {
    pub fn new(system: impl Into<String>) -> Self {
        TuningTable {
            system: system.into(),
            ..Default::default()
        }
    }

    /// Set the thresholds for (op, world), merging equal-backend runs.
    pub fn insert(&mut self, op: CommOpKind, world: usize, entries: Vec<TableEntry>) -> Result<()> {
        check_entries(op.as_str(), world, &entries)?;
        self.tables
            .entry(op.as_str().to_string())
            .or_default()
            .insert(world.to_string(), merge_runs(entries));
        Ok(())
    }

    pub fn entries(&self, op: CommOpKind, world: usize) -> Option<&[TableEntry]> {
        self.tables.get(op.as_str())?.get(&world.to_string()).map(Vec::as_slice)
    }

    /// Total entries across every (op, world).
    pub fn len(&self) -> usize {
        self.tables.values().flat_map(|w| w.values()).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Backend ids the table refers to.
    pub fn backends(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .tables
            .values()
            .flat_map(|w| w.values())
            .flatten()
            .map(|e| e.backend.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut t: TuningTable = serde_json::from_str(text)?;
        for (op, worlds) in &mut t.tables {
            let kind: CommOpKind = op.parse()?;
            if kind.as_str() != op {
                return Err(Error::Parse(format!("operation `{op}` must be spelled `{kind}`")));
            }
            for (world, entries) in worlds.iter_mut() {
                let w: usize = world
                    .parse()
                    .ok()
                    .filter(|&w| w > 0)
                    .ok_or_else(|| Error::Parse(format!("{op}: world size `{world}` is not a positive integer")))?;
                check_entries(op, w, entries)?;
                *entries = merge_runs(std::mem::take(entries));
            }
        }
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

fn check_entries(op: &str, world: usize, entries: &[TableEntry]) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::Parse(format!("{op} world {world}: empty threshold list")));
    }
    for w in entries.windows(2) {
        if w[1].max_bytes <= w[0].max_bytes {
            return Err(Error::Monotonicity(format!(
                "{op} world {world}: {} follows {}",
                w[1].max_bytes, w[0].max_bytes
            )));
        }
    }
    for e in entries {
        if e.backend.is_empty() || e.backend == "auto" {
            return Err(Error::Parse(format!("{op} world {world}: `{}` is not a backend id", e.backend)));
        }
    }
    Ok(())
}

/// Read and validate a table file.
pub fn load_table(path: &Path) -> Result<TuningTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let t = TuningTable::from_json(&text)?;
    log::debug!("loaded tuning table `{}` with {} entries", t.system, t.len());
    Ok(t)
}

/// Write `table` in the format [`load_table`] reads.
pub fn emit(table: &TuningTable, path: &Path) -> Result<()> {
    fs::write(path, table.to_json() + "\n").map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Pick a backend for a `bytes`-sized `kind` at `world` ranks.
///
/// The first threshold ≥ `bytes` wins, the last one if none is. Untuned
/// world sizes use the nearest smaller tuned one, then the first registered
/// backend. If the winner is not registered, the closest registered entry
/// in the same list is used instead.
pub fn route(table: &TuningTable, kind: CommOpKind, world: usize, bytes: u64, registered: &[String]) -> Result<String> {
    let default = || {
        registered
            .first()
            .cloned()
            .ok_or_else(|| Error::UnroutableRequest("no backends registered".into()))
    };
    let Some(worlds) = table.tables.get(kind.as_str()) else {
        return default();
    };
    let mut tuned: Vec<(usize, &Vec<TableEntry>)> = worlds
        .iter()
        .filter_map(|(w, e)| w.parse().ok().map(|w: usize| (w, e)))
        .collect();
    tuned.sort_by_key(|(w, _)| *w);
    let Some((_, entries)) = tuned.iter().rev().find(|(w, _)| *w <= world) else {
        return default();
    };
    let pick = entries.iter().position(|e| e.max_bytes >= bytes).unwrap_or(entries.len() - 1);
    let is_reg = |i: usize| registered.iter().any(|r| *r == entries[i].backend);
    if is_reg(pick) {
        return Ok(entries[pick].backend.clone());
    }
    let n = entries.len();
    for d in 1..n {
        for i in [pick.checked_sub(d), Some(pick + d)].into_iter().flatten() {
            if i < n && is_reg(i) {
                log::warn!(
                    "{kind} {bytes} B: table backend `{}` not registered, using `{}`",
                    entries[pick].backend,
                    entries[i].backend
                );
                return Ok(entries[i].backend.clone());
            }
        }
    }
    Err(Error::UnroutableRequest(format!(
        "{kind} at world {world}: table names only unregistered backends"
    )))
}
