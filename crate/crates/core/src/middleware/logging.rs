//! Per-rank communication log: one JSON record per completed operation.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    /// Microseconds since runtime init at which the operation started.
    pub ts_us: u64,
    pub rank: u32,
    pub op: String,
    pub backend: String,
    pub bytes: u64,
    pub dur_us: f64,
    pub seq: u64,
    pub fused: bool,
}

pub struct Logger {
    epoch: Instant,
    rank: u32,
    enabled: AtomicBool,
    records: Mutex<Vec<LogRecord>>,
}

impl Logger {
    pub fn new(rank: usize) -> Self {
        Logger {
            epoch: Instant::now(),
            rank: rank as u32,
            enabled: AtomicBool::new(false),
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn set_enabled(&self, on: bool) {
        self.enabled.store(on, Ordering::SeqCst);
    }

    pub fn enabled(&self) -> bool {
        self.enabled.load(Ordering::SeqCst)
    }

    pub(crate) fn emit(&self, op: &str, backend: &str, bytes: u64, start: Instant, dur: Duration, seq: u64, fused: bool) {
        if !self.enabled() {
            return;
        }
        let record = LogRecord {
            ts_us: start.saturating_duration_since(self.epoch).as_micros() as u64,
            rank: self.rank,
            op: op.to_string(),
            backend: backend.to_string(),
            bytes,
            // Sub-microsecond ops still report a positive duration.
            dur_us: (dur.as_secs_f64() * 1e6).max(1e-3),
            seq,
            fused,
        };
        self.records.lock().unwrap().push(record);
    }

    pub fn records(&self) -> Vec<LogRecord> {
        let mut out = self.records.lock().unwrap().clone();
        out.sort_by_key(|r| r.ts_us);
        out
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Write all records so far, ts-ordered, one JSON object per line.
    pub fn flush(&self, path: &Path) -> Result<()> {
        write_log(path, &self.records())
    }
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_logger_records_nothing() {
        let l = Logger::new(0);
        l.emit("bcast", "a", 4, Instant::now(), Duration::ZERO, 1, false);
        assert!(l.is_empty());
    }

    #[test]
    fn flush_roundtrip_and_schema() {
        let l = Logger::new(3);
        l.set_enabled(true);
        let t = Instant::now();
        l.emit("all_reduce", "a", 640, t, Duration::from_micros(12), 1, true);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r3.jsonl");
        l.flush(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 8);
        for k in ["ts_us", "rank", "op", "backend", "bytes", "dur_us", "seq", "fused"] {
            assert!(keys.contains(&k.to_string()), "{k}");
        }
        let back = read_log(&path).unwrap();
        assert_eq!(back, l.records());
        assert!(back[0].dur_us > 0.0);
    }

    #[test]
    fn empty_flush_writes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        Logger::new(0).flush(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), 0);
    }
}
