//! Communication breakdown per (op, backend) from per-rank logs.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::PathBuf;

use super::logging::{read_log, LogRecord};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub op: String,
    pub backend: String,
    pub count: usize,
    pub total_s: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Breakdown {
    pub rows: Vec<ReportRow>,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Keyed by rank.
    pub per_rank: BTreeMap<u32, Breakdown>,
    /// Slowest rank per op instance, then summed.
    pub cross_rank: Breakdown,
}

fn breakdown(durations: BTreeMap<(String, String), (usize, f64)>) -> Breakdown {
    let total_us: f64 = durations.values().map(|v| v.1).sum();
    let rows = durations
        .into_iter()
        .map(|((op, backend), (count, us))| ReportRow {
            op,
            backend,
            count,
            total_s: us / 1e6,
            percent: if total_us > 0.0 { 100.0 * us / total_us } else { 0.0 },
        })
        .collect();
    Breakdown {
        rows,
        total_s: total_us / 1e6,
    }
}

pub fn aggregate(records: &[LogRecord]) -> Report {
    let mut ranks: BTreeMap<u32, BTreeMap<(String, String), (usize, f64)>> = BTreeMap::new();
    let mut maxima: BTreeMap<(String, String, bool, u64), f64> = BTreeMap::new();
    for r in records {
        let key = (r.op.clone(), r.backend.clone());
        let e = ranks.entry(r.rank).or_default().entry(key).or_default();
        e.0 += 1;
        e.1 += r.dur_us;
        let m = maxima.entry((r.op.clone(), r.backend.clone(), r.fused, r.seq)).or_insert(0.0);
        *m = m.max(r.dur_us);
    }
    let mut cross: BTreeMap<(String, String), (usize, f64)> = BTreeMap::new();
    for ((op, backend, _, _), us) in maxima {
        let e = cross.entry((op, backend)).or_default();
        e.0 += 1;
        e.1 += us;
    }
    Report {
        per_rank: ranks.into_iter().map(|(r, d)| (r, breakdown(d))).collect(),
        cross_rank: breakdown(cross),
    }
}

/// Read one log per rank and aggregate.
pub fn report(paths: &[PathBuf]) -> Result<Report> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_log(p)?);
    }
    Ok(aggregate(&all))
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut table = |title: &str, b: &Breakdown| {
            let _ = writeln!(s, "{title} (total {:.6} s)", b.total_s);
            let _ = writeln!(s, "  {:<20} {:<16} {:>7} {:>12} {:>8}", "op", "backend", "count", "seconds", "percent");
            for r in &b.rows {
                let _ = writeln!(
                    s,
                    "  {:<20} {:<16} {:>7} {:>12.6} {:>7.2}%",
                    r.op, r.backend, r.count, r.total_s, r.percent
                );
            }
        };
        table("cross-rank (max per op instance)", &self.cross_rank);
        for (rank, b) in &self.per_rank {
            table(&format!("rank {rank}"), b);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,op,backend,count,total_s,percent\n");
        let mut rows = |view: &str, b: &Breakdown| {
            for r in &b.rows {
                let _ = writeln!(s, "{view},{},{},{},{:.9},{:.4}", r.op, r.backend, r.count, r.total_s, r.percent);
            }
        };
        rows("all", &self.cross_rank);
        for (rank, b) in &self.per_rank {
            rows(&format!("rank{rank}"), b);
        }
        s
    }
}
