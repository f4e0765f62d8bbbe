//! Micro-benchmarks per (op, backend, world size, message size) and tuning
//! table construction.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::collectives::prefix_sums;
use crate::dispatch::{SizeBucket, TableEntry, TuningTable};
use crate::error::{Error, Result};
use crate::request::CommRequest;
use crate::runtime::{Backend, Runtime};
use crate::types::{Buffer, CommOpKind, DType, ReduceOp};

pub use crate::dispatch::emit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    #[default]
    Median,
    Mean,
    Min,
}

impl Statistic {
    pub fn apply(self, xs: &[f64]) -> f64 {
        if xs.is_empty() {
            return f64::NAN;
        }
        match self {
            Statistic::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
            Statistic::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
            Statistic::Median => median(xs),
        }
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Statistic::Median),
            "mean" => Ok(Statistic::Mean),
            "min" => Ok(Statistic::Min),
            other => Err(Error::Config(format!("unknown statistic `{other}`"))),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Median => "median",
            Statistic::Mean => "mean",
            Statistic::Min => "min",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub ops: Vec<CommOpKind>,
    /// Message sizes in bytes, ascending.
    pub sizes: Vec<u64>,
    pub warmup_iters: usize,
    pub measure_iters: usize,
    pub statistic: Statistic,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            ops: vec![CommOpKind::AllReduce],
            sizes: SizeBucket::all().into_iter().map(SizeBucket::bytes).collect(),
            warmup_iters: 5,
            measure_iters: 20,
            statistic: Statistic::Median,
        }
    }
}

impl BenchConfig {
    pub fn check(&self) -> Result<()> {
        if self.measure_iters < 3 {
            return Err(Error::Config("measure_iters must be at least 3".into()));
        }
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sizes must be strictly ascending".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub op: CommOpKind,
    pub backend: String,
    pub world_size: usize,
    pub bytes: u64,
    /// Seconds per iteration, slowest rank.
    pub durations: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub op: CommOpKind,
    pub backend: String,
    pub world_size: usize,
    pub bytes: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub samples: Vec<BenchSample>,
    pub skipped: Vec<Skipped>,
}

impl BenchRun {
    pub fn extend(&mut self, other: BenchRun) {
        self.samples.extend(other.samples);
        self.skipped.extend(other.skipped);
    }

    /// Distinct (op, world, size) cells, measured or skipped.
    pub fn grid_cells(&self) -> usize {
        let mut cells: Vec<(CommOpKind, usize, u64)> = self
            .samples
            .iter()
            .map(|s| (s.op, s.world_size, s.bytes))
            .chain(self.skipped.iter().map(|s| (s.op, s.world_size, s.bytes)))
            .collect();
        cells.sort();
        cells.dedup();
        cells.len()
    }
}

/// Split `m` elements over `p` ranks, remainder first.
fn even_counts(m: usize, p: usize) -> Vec<usize> {
    (0..p).map(|i| m / p + usize::from(i < m % p)).collect()
}

/// A request of `kind` whose canonical message size is `bytes` (rounded
/// down where the op needs divisibility by the world size).
pub fn make_request(kind: CommOpKind, bytes: u64, rank: usize, p: usize) -> Result<CommRequest> {
    let dtype = if bytes % 4 == 0 { DType::F32 } else { DType::U8 };
    let m = bytes as usize / dtype.size_bytes();
    let buf = |n: usize| {
        let mut b = Buffer::zeros(dtype, n);
        for (i, x) in b.as_bytes_mut().iter_mut().enumerate() {
            *x = if dtype == DType::F32 && i % 4 == 3 { 0x3f } else { 0 };
        }
        b
    };
    let root = 0;
    let at_root = |n: usize| if rank == root { buf(n) } else { Buffer::empty(dtype) };
    let share = m / p;
    Ok(match kind {
        CommOpKind::Send | CommOpKind::Recv => {
            return Err(Error::Unsupported {
                backend: String::new(),
                op: format!("{kind} (point-to-point is not benchmarked)"),
            })
        }
        CommOpKind::AllReduce => CommRequest::all_reduce(buf(m), ReduceOp::Sum),
        CommOpKind::Reduce => CommRequest::reduce(buf(m), root, ReduceOp::Sum),
        CommOpKind::Bcast => CommRequest::bcast(buf(m), root),
        CommOpKind::AllGather => CommRequest::all_gather(buf(m * p), buf(m)),
        CommOpKind::Gather => CommRequest::gather(at_root(m * p), buf(m), root),
        CommOpKind::Scatter => CommRequest::scatter(buf(share), at_root(share * p), root),
        CommOpKind::ReduceScatter => CommRequest::reduce_scatter(buf(share), buf(share * p), ReduceOp::Sum),
        CommOpKind::AllToAllSingle => CommRequest::all_to_all_single(buf(share * p), buf(share * p)),
        CommOpKind::AllToAll => CommRequest::all_to_all((0..p).map(|_| buf(share)).collect(), (0..p).map(|_| buf(share)).collect()),
        CommOpKind::Gatherv => {
            let c = even_counts(m, p);
            let d = prefix_sums(&c);
            CommRequest::gatherv(at_root(m), buf(c[rank]), root, c, d)
        }
        CommOpKind::AllGatherv => {
            let c = even_counts(m, p);
            let d = prefix_sums(&c);
            CommRequest::all_gatherv(buf(m), buf(c[rank]), c, d)
        }
        CommOpKind::Scatterv => {
            let c = even_counts(m, p);
            let d = prefix_sums(&c);
            CommRequest::scatterv(buf(c[rank]), at_root(m), root, c, d)
        }
        CommOpKind::AllToAllv => {
            let sc = even_counts(m, p);
            let rc = vec![sc[rank]; p];
            let (sd, rd) = (prefix_sums(&sc), prefix_sums(&rc));
            CommRequest::all_to_allv(buf(rc.iter().sum()), buf(m), sc, rc, sd, rd)
        }
    })
}

fn barrier(b: &Backend) -> Result<()> {
    b.post(CommRequest::all_reduce(Buffer::empty(DType::F32), ReduceOp::Max))?
        .wait()
        .map(drop)
}

/// Time every (op, backend, size) combination on this rank. All ranks must
/// call this with the same arguments; every rank returns the same samples.
pub fn bench(cfg: &BenchConfig, rt: &Runtime, backends: &[String]) -> Result<BenchRun> {
    cfg.check()?;
    let (rank, p) = (rt.rank(), rt.world_size());
    let handles = backends.iter().map(|id| rt.backend(id)).collect::<Result<Vec<_>>>()?;
    let mut run = BenchRun::default();
    for &op in &cfg.ops {
        for &bytes in &cfg.sizes {
            // Backends take turns within each iteration so slow drift in the
            // host hits all of them alike.
            let mut live: Vec<usize> = (0..backends.len()).collect();
            let mut durations = vec![Vec::with_capacity(cfg.measure_iters); backends.len()];
            for i in 0..cfg.warmup_iters + cfg.measure_iters {
                let mut k = 0;
                while k < live.len() {
                    let j = live[k];
                    let b = &handles[j];
                    let posted = make_request(op, bytes, rank, p).and_then(|req| {
                        barrier(b)?;
                        let t0 = Instant::now();
                        b.post(req)?.wait()?;
                        Ok(t0.elapsed().as_secs_f64())
                    });
                    match posted {
                        Ok(t) => {
                            if i >= cfg.warmup_iters {
                                durations[j].push(t);
                            }
                            k += 1;
                        }
                        Err(e @ Error::Unsupported { .. }) => {
                            log::info!("skipping {op} on {}: {e}", backends[j]);
                            run.skipped.push(Skipped {
                                op,
                                backend: backends[j].clone(),
                                world_size: p,
                                bytes,
                                reason: e.to_string(),
                            });
                            live.remove(k);
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            for j in live {
                // Slowest rank per iteration.
                let local = Buffer::from_slice(&durations[j]);
                let maxed = handles[j]
                    .post(CommRequest::all_reduce(local, ReduceOp::Max))?
                    .wait()?
                    .into_buffer()
                    .to_vec::<f64>();
                run.samples.push(BenchSample {
                    op,
                    backend: backends[j].clone(),
                    world_size: p,
                    bytes,
                    durations: maxed,
                });
            }
        }
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableBuild {
    pub table: TuningTable,
    /// (op, world, size) cells with a winner, before merging equal runs.
    pub pre_merge: usize,
    pub post_merge: usize,
}

/// Fastest backend per (op, world, size) under `stat`; ties go to the
/// lexicographically smaller id.
pub fn build_table(samples: &[BenchSample], stat: Statistic, system: &str) -> Result<TableBuild> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut best: BTreeMap<(CommOpKind, usize), BTreeMap<u64, (f64, String)>> = BTreeMap::new();
    for s in samples {
        let v = stat.apply(&s.durations);
        let cell = best.entry((s.op, s.world_size)).or_default();
        match cell.get_mut(&s.bytes) {
            Some(cur) => {
                if v < cur.0 || (v == cur.0 && s.backend < cur.1) {
                    *cur = (v, s.backend.clone());
                }
            }
            None => {
                cell.insert(s.bytes, (v, s.backend.clone()));
            }
        }
    }
    let mut table = TuningTable::new(system);
    let mut pre_merge = 0;
    for ((op, world), sizes) in best {
        pre_merge += sizes.len();
        let entries = sizes
            .into_iter()
            .map(|(bytes, (_, backend))| TableEntry {
                max_bytes: bytes,
                backend,
            })
            .collect();
        table.insert(op, world, entries)?;
    }
    let post_merge = table.len();
    Ok(TableBuild {
        table,
        pre_merge,
        post_merge,
    })
}

/// One CSV row per sample: op,backend,world,bytes,p50_us,min_us,max_us.
pub fn csv_header() -> &'static str {
    "op,backend,world,bytes,p50_us,min_us,max_us,status"
}

pub fn csv_rows(run: &BenchRun) -> Vec<String> {
    let mut rows: Vec<String> = run
        .samples
        .iter()
        .map(|s| {
            let us = |x: f64| x * 1e6;
            format!(
                "{},{},{},{},{:.3},{:.3},{:.3},ok",
                s.op,
                s.backend,
                s.world_size,
                s.bytes,
                us(median(&s.durations)),
                us(Statistic::Min.apply(&s.durations)),
                us(s.durations.iter().copied().fold(0.0, f64::max)),
            )
        })
        .collect();
    rows.extend(
        run.skipped
            .iter()
            .map(|s| format!("{},{},{},{},,,,skipped", s.op, s.backend, s.world_size, s.bytes)),
    );
    rows
}
