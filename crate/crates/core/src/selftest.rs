//! Every collective on every registered backend, checked against results
//! computed locally from every rank's (deterministic) inputs.

use std::fmt;

use crate::collectives::prefix_sums;
use crate::error::Result;
use crate::request::{CommRequest, Payload};
use crate::runtime::Runtime;
use crate::types::{Buffer, CommOpKind, DType, ReduceOp};

pub const COUNTS: [usize; 4] = [0, 1, 7, 64];
pub const DTYPES: [DType; 2] = [DType::F32, DType::I64];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub world_size: usize,
    pub backends: usize,
    pub checks: usize,
    pub skipped: usize,
    pub failures: Vec<String>,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "selftest: world {}, {} backends, {} checks, {} unsupported: {}",
            self.world_size,
            self.backends,
            self.checks,
            self.skipped,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for msg in self.failures.iter().take(10) {
            write!(f, "\n  {msg}")?;
        }
        Ok(())
    }
}

/// Input value `i` of `rank` for test case `salt`; small positive integers,
/// so f32 sums and products stay exact.
pub fn value(seed: u64, salt: u64, rank: usize, i: usize) -> i64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((rank as u64) << 32 | i as u64);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z % 5) as i64 + 1
}

fn values(seed: u64, salt: u64, rank: usize, n: usize) -> Vec<i64> {
    (0..n).map(|i| value(seed, salt, rank, i)).collect()
}

fn to_buffer(dtype: DType, v: &[i64]) -> Buffer {
    match dtype {
        DType::F32 => Buffer::from_slice(&v.iter().map(|&x| x as f32).collect::<Vec<_>>()),
        _ => Buffer::from_slice(v),
    }
}

fn from_buffer(b: &Buffer) -> Vec<i64> {
    match b.dtype() {
        DType::F32 => b.to_vec::<f32>().into_iter().map(|x| x as i64).collect(),
        _ => b.to_vec::<i64>(),
    }
}

fn combine(op: ReduceOp, a: i64, b: i64) -> i64 {
    match op {
        ReduceOp::Sum => a + b,
        ReduceOp::Prod => a * b,
        ReduceOp::Min => a.min(b),
        ReduceOp::Max => a.max(b),
    }
}

fn fold(op: ReduceOp, rows: impl Iterator<Item = Vec<i64>>) -> Vec<i64> {
    rows.reduce(|acc, row| acc.iter().zip(&row).map(|(&a, &b)| combine(op, a, b)).collect())
        .unwrap_or_default()
}

/// Per-destination counts for vectored cases; includes zeros.
fn vcount(c: usize, i: usize, j: usize) -> usize {
    (c + i + 3 * j) % 7
}

/// Displacements with a one-element gap after each block.
fn gapped(counts: &[usize]) -> (Vec<usize>, usize) {
    let d: Vec<usize> = prefix_sums(counts).iter().enumerate().map(|(j, x)| x + j).collect();
    let total = counts.iter().sum::<usize>() + counts.len();
    (d, total)
}

struct Case<'a> {
    rt: &'a Runtime,
    backend: &'a str,
    seed: u64,
    salt: u64,
    summary: &'a mut Summary,
}

impl Case<'_> {
    fn data(&self, rank: usize, n: usize) -> Vec<i64> {
        values(self.seed, self.salt, rank, n)
    }

    fn run(&mut self, req: CommRequest) -> Result<Payload> {
        self.salt += 1;
        self.rt.post(req.on(self.backend).async_op(true))?.wait()
    }

    fn check(&mut self, what: String, got: Vec<i64>, want: Vec<i64>) {
        self.summary.checks += 1;
        if got != want {
            let rank = self.rt.rank();
            self.summary
                .failures
                .push(format!("{} {what} on rank {rank}: got {got:?}, want {want:?}", self.backend));
        }
    }
}

/// Run the suite on this rank. All ranks must call it with the same seed.
pub fn run(rt: &Runtime, seed: u64) -> Result<Summary> {
    let backends = rt.get_backends();
    let mut summary = Summary {
        world_size: rt.world_size(),
        backends: backends.len(),
        ..Summary::default()
    };
    for id in &backends {
        let policy = rt.backend(id)?.spec().policy.clone();
        for kind in CommOpKind::ALL {
            if !kind.is_p2p() && !policy.supports(kind) {
                summary.skipped += 1;
                continue;
            }
            for dtype in DTYPES {
                for c in COUNTS {
                    let mut case = Case {
                        rt,
                        backend: id,
                        seed,
                        salt: 0,
                        summary: &mut summary,
                    };
                    check_kind(&mut case, kind, dtype, c)?;
                }
            }
        }
    }
    Ok(summary)
}

fn check_kind(cs: &mut Case, kind: CommOpKind, dtype: DType, c: usize) -> Result<()> {
    let (r, p) = (cs.rt.rank(), cs.rt.world_size());
    let buf = |v: &[i64]| to_buffer(dtype, v);
    let zeros = |n: usize| Buffer::zeros(dtype, n);
    let root = c % p;
    let tag = |name: &str| format!("{kind}<{dtype}> count {c} {name}");
    match kind {
        CommOpKind::Send | CommOpKind::Recv => {
            // Both sides run in the Send pass.
            if kind == CommOpKind::Recv || p == 1 {
                return Ok(());
            }
            let salt = cs.salt;
            let (to, from) = ((r + 1) % p, (r + p - 1) % p);
            let s = cs.rt.send(cs.backend, buf(&cs.data(r, c)), to, true)?;
            let h = cs.rt.recv(cs.backend, zeros(c), from, true)?;
            s.wait()?;
            let got = from_buffer(&h.wait()?.into_buffer());
            let want = values(cs.seed, salt, from, c);
            cs.check(tag("ring"), got, want);
        }
        CommOpKind::AllReduce | CommOpKind::Reduce => {
            for op in ReduceOp::ALL {
                let mine = cs.data(r, c);
                let want = fold(op, (0..p).map(|j| cs.data(j, c)));
                let req = if kind == CommOpKind::AllReduce {
                    CommRequest::all_reduce(buf(&mine), op)
                } else {
                    CommRequest::reduce(buf(&mine), root, op)
                };
                let got = from_buffer(&cs.run(req)?.into_buffer());
                if kind == CommOpKind::AllReduce || r == root {
                    cs.check(tag(op.as_str()), got, want);
                }
            }
        }
        CommOpKind::Bcast => {
            let want = cs.data(root, c);
            let t = if r == root { buf(&want) } else { zeros(c) };
            let got = from_buffer(&cs.run(CommRequest::bcast(t, root))?.into_buffer());
            cs.check(tag(""), got, want);
        }
        CommOpKind::Gather | CommOpKind::AllGather => {
            let want: Vec<i64> = (0..p).flat_map(|j| cs.data(j, c)).collect();
            let input = buf(&cs.data(r, c));
            let req = if kind == CommOpKind::Gather {
                let out = if r == root { zeros(c * p) } else { Buffer::empty(dtype) };
                CommRequest::gather(out, input, root)
            } else {
                CommRequest::all_gather(zeros(c * p), input)
            };
            let got = from_buffer(&cs.run(req)?.into_buffer());
            if kind == CommOpKind::AllGather || r == root {
                cs.check(tag(""), got, want);
            }
        }
        CommOpKind::Scatter => {
            let all = cs.data(root, c * p);
            let input = if r == root { buf(&all) } else { Buffer::empty(dtype) };
            let got = from_buffer(&cs.run(CommRequest::scatter(zeros(c), input, root))?.into_buffer());
            cs.check(tag(""), got, all[r * c..(r + 1) * c].to_vec());
        }
        CommOpKind::ReduceScatter => {
            for op in [ReduceOp::Sum, ReduceOp::Max] {
                let want = fold(op, (0..p).map(|j| cs.data(j, c * p)[r * c..(r + 1) * c].to_vec()));
                let input = buf(&cs.data(r, c * p));
                let got = from_buffer(&cs.run(CommRequest::reduce_scatter(zeros(c), input, op))?.into_buffer());
                cs.check(tag(op.as_str()), got, want);
            }
        }
        CommOpKind::AllToAllSingle | CommOpKind::AllToAll => {
            let want: Vec<i64> = (0..p).flat_map(|j| cs.data(j, c * p)[r * c..(r + 1) * c].to_vec()).collect();
            let mine = cs.data(r, c * p);
            let got = if kind == CommOpKind::AllToAllSingle {
                from_buffer(&cs.run(CommRequest::all_to_all_single(zeros(c * p), buf(&mine)))?.into_buffer())
            } else {
                let inputs = mine.chunks(c.max(1)).map(buf).collect::<Vec<_>>();
                let inputs = if c == 0 { (0..p).map(|_| zeros(0)).collect() } else { inputs };
                let outputs = (0..p).map(|_| zeros(c)).collect();
                cs.run(CommRequest::all_to_all(outputs, inputs))?
                    .into_list()
                    .iter()
                    .flat_map(from_buffer)
                    .collect()
            };
            cs.check(tag(""), got, want);
        }
        CommOpKind::Gatherv | CommOpKind::AllGatherv => {
            let counts: Vec<usize> = (0..p).map(|j| vcount(c, j, 0)).collect();
            let (displs, total) = gapped(&counts);
            let mut want = vec![0i64; total];
            for j in 0..p {
                want[displs[j]..displs[j] + counts[j]].copy_from_slice(&cs.data(j, counts[j]));
            }
            let input = buf(&cs.data(r, counts[r]));
            let req = if kind == CommOpKind::Gatherv {
                let out = if r == root { zeros(total) } else { Buffer::empty(dtype) };
                CommRequest::gatherv(out, input, root, counts, displs)
            } else {
                CommRequest::all_gatherv(zeros(total), input, counts, displs)
            };
            let got = from_buffer(&cs.run(req)?.into_buffer());
            if kind == CommOpKind::AllGatherv || r == root {
                cs.check(tag(""), got, want);
            }
        }
        CommOpKind::Scatterv => {
            let counts: Vec<usize> = (0..p).map(|j| vcount(c, j, 0)).collect();
            let (displs, total) = gapped(&counts);
            let all = cs.data(root, total);
            let want = all[displs[r]..displs[r] + counts[r]].to_vec();
            let input = if r == root { buf(&all) } else { Buffer::empty(dtype) };
            let req = CommRequest::scatterv(zeros(counts[r]), input, root, counts, displs);
            let got = from_buffer(&cs.run(req)?.into_buffer());
            cs.check(tag(""), got, want);
        }
        CommOpKind::AllToAllv => {
            let scounts_of = |i: usize| (0..p).map(|j| vcount(c, i, j)).collect::<Vec<_>>();
            let scounts = scounts_of(r);
            let rcounts: Vec<usize> = (0..p).map(|j| vcount(c, j, r)).collect();
            let (sdispls, stotal) = gapped(&scounts);
            let (rdispls, rtotal) = gapped(&rcounts);
            let mut want = vec![0i64; rtotal];
            for j in 0..p {
                let (sd, st) = gapped(&scounts_of(j));
                let theirs = cs.data(j, st);
                want[rdispls[j]..rdispls[j] + rcounts[j]].copy_from_slice(&theirs[sd[r]..sd[r] + rcounts[j]]);
            }
            let input = buf(&cs.data(r, stotal));
            let req = CommRequest::all_to_allv(zeros(rtotal), input, scounts, rcounts, sdispls, rdispls);
            let got = from_buffer(&cs.run(req)?.into_buffer());
            cs.check(tag(""), got, want);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::launch::run_local_ok;
    use crate::runtime::BackendSpec;

    #[test]
    fn values_are_small_and_deterministic() {
        for i in 0..100 {
            let v = value(1, 2, 3, i);
            assert!((1..=5).contains(&v));
            assert_eq!(v, value(1, 2, 3, i));
        }
    }

    #[test]
    fn suite_passes_on_three_ranks() {
        let out = run_local_ok(3, |g| {
            let specs = vec![
                BackendSpec::new("ring")?,
                BackendSpec::new("tree")?.policy(crate::collectives::AlgorithmPolicy::preset("tree")?),
            ];
            let rt = Runtime::init(g, specs)?;
            run(&rt, 11)
        })
        .unwrap();
        for s in out {
            assert!(s.passed(), "{s}");
            assert!(s.checks > 100);
        }
    }
}
