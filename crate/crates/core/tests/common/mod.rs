//! Shared test scaffolding: worlds over either transport and sequential
//! oracles computed from every rank's inputs.
#![allow(dead_code)]

use std::thread;

use num_bigint::BigInt;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use mcrdl::launch;
use mcrdl::{Buffer, CommOpKind, CommRequest, DType, Group, Payload, ReduceOp, Result};

pub const F32_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Inproc,
    Tcp,
}

/// Run `f` on `p` thread ranks connected by `net`.
pub fn run_world<T, F>(p: usize, net: Net, f: F) -> Vec<Result<T>>
where
    T: Send,
    F: Fn(Group) -> Result<T> + Sync,
{
    match net {
        Net::Inproc => launch::run_local(p, f),
        Net::Tcp => {
            let master = format!("127.0.0.1:{}", launch::free_port());
            thread::scope(|s| {
                let hs: Vec<_> = (0..p)
                    .map(|rank| {
                        let (f, master) = (&f, master.clone());
                        s.spawn(move || f(Group::tcp(rank, p, master)?))
                    })
                    .collect();
                hs.into_iter().map(|h| h.join().expect("rank panicked")).collect()
            })
        }
    }
}

pub fn world_ok<T, F>(p: usize, net: Net, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Group) -> Result<T> + Sync,
{
    run_world(p, net, f)
        .into_iter()
        .enumerate()
        .map(|(r, x)| x.unwrap_or_else(|e| panic!("rank {r}: {e}")))
        .collect()
}

fn rng(seed: u64, rank: usize, salt: u64) -> StdRng {
    StdRng::seed_from_u64(seed ^ (rank as u64).wrapping_mul(0x1000_0000_01b3) ^ salt.rotate_left(40))
}

/// Positive floats, so sums and products have no cancellation.
pub fn f32_input(seed: u64, rank: usize, n: usize) -> Vec<f32> {
    let mut g = rng(seed, rank, 1);
    (0..n).map(|_| g.gen_range(0.5f32..1.5)).collect()
}

/// Large signed integers; sums and products wrap.
pub fn i64_input(seed: u64, rank: usize, n: usize) -> Vec<i64> {
    let mut g = rng(seed, rank, 2);
    (0..n).map(|_| g.gen_range(-(1i64 << 40)..(1i64 << 40))).collect()
}

/// Typed column used by the oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum Col {
    F(Vec<f32>),
    I(Vec<i64>),
}

impl Col {
    pub fn input(dtype: DType, seed: u64, rank: usize, n: usize) -> Col {
        match dtype {
            DType::F32 => Col::F(f32_input(seed, rank, n)),
            DType::I64 => Col::I(i64_input(seed, rank, n)),
            other => panic!("no test inputs for {other}"),
        }
    }

    pub fn zeros(dtype: DType, n: usize) -> Col {
        match dtype {
            DType::F32 => Col::F(vec![0.0; n]),
            _ => Col::I(vec![0; n]),
        }
    }

    pub fn from_buffer(b: &Buffer) -> Col {
        match b.dtype() {
            DType::F32 => Col::F(b.to_vec()),
            DType::I64 => Col::I(b.to_vec()),
            other => panic!("unexpected dtype {other}"),
        }
    }

    pub fn to_buffer(&self) -> Buffer {
        match self {
            Col::F(v) => Buffer::from_slice(v),
            Col::I(v) => Buffer::from_slice(v),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Col::F(v) => v.len(),
            Col::I(v) => v.len(),
        }
    }

    pub fn slice(&self, lo: usize, hi: usize) -> Col {
        match self {
            Col::F(v) => Col::F(v[lo..hi].to_vec()),
            Col::I(v) => Col::I(v[lo..hi].to_vec()),
        }
    }

    /// Copy `src` into self at `at`.
    pub fn put(&mut self, at: usize, src: &Col) {
        match (self, src) {
            (Col::F(d), Col::F(s)) => d[at..at + s.len()].copy_from_slice(s),
            (Col::I(d), Col::I(s)) => d[at..at + s.len()].copy_from_slice(s),
            _ => panic!("dtype mismatch"),
        }
    }

    pub fn concat(parts: &[Col]) -> Col {
        match parts.first() {
            Some(Col::F(_)) | None => {
                Col::F(parts.iter().flat_map(|c| if let Col::F(v) = c { v.clone() } else { vec![] }).collect())
            }
            Some(Col::I(_)) => {
                Col::I(parts.iter().flat_map(|c| if let Col::I(v) = c { v.clone() } else { vec![] }).collect())
            }
        }
    }
}

/// Expected output: exact, or f64 values compared with the f32 tolerance.
#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    Exact(Col),
    Approx(Vec<f64>),
}

impl Expect {
    pub fn check(&self, got: &Col) -> std::result::Result<(), String> {
        match (self, got) {
            (Expect::Exact(want), got) => {
                if want == got {
                    Ok(())
                } else {
                    Err(format!("got {}, want {}", short(got), short(want)))
                }
            }
            (Expect::Approx(want), Col::F(got)) => {
                if want.len() != got.len() {
                    return Err(format!("length {} != {}", got.len(), want.len()));
                }
                for (i, (&w, &g)) in want.iter().zip(got).enumerate() {
                    let err = (g as f64 - w).abs();
                    if err > F32_RTOL * w.abs() {
                        return Err(format!("element {i}: got {g}, want {w} (rel {:.2e})", err / w.abs()));
                    }
                }
                Ok(())
            }
            (Expect::Approx(_), Col::I(_)) => Err("integer result for float oracle".into()),
        }
    }
}

fn short(c: &Col) -> String {
    let s = format!("{c:?}");
    if s.len() > 160 {
        format!("{}...", &s[..160])
    } else {
        s
    }
}

/// Exact integer reduction: big-integer arithmetic, wrapped to 64 bits.
pub fn reduce_i64(op: ReduceOp, rows: &[Vec<i64>]) -> Vec<i64> {
    let n = rows.first().map_or(0, Vec::len);
    let modulus = BigInt::from(1u8) << 64;
    (0..n)
        .map(|i| {
            let col = rows.iter().map(|r| r[i]);
            match op {
                ReduceOp::Min => col.min().unwrap(),
                ReduceOp::Max => col.max().unwrap(),
                ReduceOp::Sum | ReduceOp::Prod => {
                    let exact = if op == ReduceOp::Sum {
                        col.map(BigInt::from).sum::<BigInt>()
                    } else {
                        col.map(BigInt::from).product::<BigInt>()
                    };
                    let mut w = ((exact % &modulus) + &modulus) % &modulus;
                    if w >= &modulus >> 1 {
                        w -= &modulus;
                    }
                    i64::try_from(w).unwrap()
                }
            }
        })
        .collect()
}

/// Float reduction carried out in f64.
pub fn reduce_f32(op: ReduceOp, rows: &[Vec<f32>]) -> Vec<f64> {
    let n = rows.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let col = rows.iter().map(|r| r[i] as f64);
            match op {
                ReduceOp::Sum => col.sum(),
                ReduceOp::Prod => col.product(),
                ReduceOp::Min => col.fold(f64::INFINITY, f64::min),
                ReduceOp::Max => col.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

pub fn reduce_cols(op: ReduceOp, rows: &[Col]) -> Expect {
    match rows.first() {
        Some(Col::I(_)) => Expect::Exact(Col::I(
            reduce_i64(op, &rows.iter().map(|c| if let Col::I(v) = c { v.clone() } else { unreachable!() }).collect::<Vec<_>>()),
        )),
        _ => Expect::Approx(reduce_f32(
            op,
            &rows.iter().map(|c| if let Col::F(v) = c { v.clone() } else { unreachable!() }).collect::<Vec<_>>(),
        )),
    }
}

fn prefix(counts: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    counts
        .iter()
        .map(|c| {
            let d = acc;
            acc += c;
            d
        })
        .collect()
}

/// Counts and gapped displacements shared by every rank of a vectored case.
#[derive(Debug, Clone)]
pub struct Layout {
    pub counts: Vec<usize>,
    pub displs: Vec<usize>,
    pub total: usize,
}

impl Layout {
    pub fn random(g: &mut StdRng, p: usize, max: usize) -> Layout {
        let counts: Vec<usize> = (0..p).map(|_| g.gen_range(0..=max)).collect();
        Layout::gapped(counts, g)
    }

    fn gapped(counts: Vec<usize>, g: &mut StdRng) -> Layout {
        let mut displs = Vec::with_capacity(counts.len());
        let mut at = 0;
        for &c in &counts {
            at += g.gen_range(0..=2);
            displs.push(at);
            at += c;
        }
        Layout { counts, displs, total: at }
    }
}

/// One collective at one rank: the request to post and what must come back.
pub struct Planned {
    pub request: CommRequest,
    /// `None` where the output is unspecified (non-root ranks).
    pub expect: Option<Expect>,
}

/// Build rank `r`'s request for `kind` and the oracle's answer. Every rank
/// derives all ranks' inputs from `seed`, so no communication is needed.
pub fn plan(kind: CommOpKind, dtype: DType, count: usize, op: ReduceOp, p: usize, r: usize, seed: u64) -> Planned {
    let input = |rank: usize, n: usize| Col::input(dtype, seed, rank, n);
    let zeros = |n: usize| Col::zeros(dtype, n).to_buffer();
    let empty = || Buffer::empty(dtype);
    let root = (seed as usize + count) % p;
    let mut g = StdRng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(count as u64));
    let exact = |c: Col| Some(Expect::Exact(c));
    let (request, expect) = match kind {
        CommOpKind::AllReduce => {
            let rows: Vec<Col> = (0..p).map(|j| input(j, count)).collect();
            (CommRequest::all_reduce(rows[r].to_buffer(), op), Some(reduce_cols(op, &rows)))
        }
        CommOpKind::Reduce => {
            let rows: Vec<Col> = (0..p).map(|j| input(j, count)).collect();
            let e = (r == root).then(|| reduce_cols(op, &rows));
            (CommRequest::reduce(rows[r].to_buffer(), root, op), e)
        }
        CommOpKind::Bcast => {
            let data = input(root, count);
            let t = if r == root { data.to_buffer() } else { zeros(count) };
            (CommRequest::bcast(t, root), exact(data))
        }
        CommOpKind::Gather | CommOpKind::AllGather => {
            let all = Col::concat(&(0..p).map(|j| input(j, count)).collect::<Vec<_>>());
            let mine = input(r, count).to_buffer();
            if kind == CommOpKind::Gather {
                let out = if r == root { zeros(count * p) } else { empty() };
                (CommRequest::gather(out, mine, root), if r == root { exact(all) } else { None })
            } else {
                (CommRequest::all_gather(zeros(count * p), mine), exact(all))
            }
        }
        CommOpKind::Scatter => {
            let all = input(root, count * p);
            let inp = if r == root { all.to_buffer() } else { empty() };
            (CommRequest::scatter(zeros(count), inp, root), exact(all.slice(r * count, (r + 1) * count)))
        }
        CommOpKind::ReduceScatter => {
            let rows: Vec<Col> = (0..p).map(|j| input(j, count * p).slice(r * count, (r + 1) * count)).collect();
            let mine = input(r, count * p).to_buffer();
            (CommRequest::reduce_scatter(zeros(count), mine, op), Some(reduce_cols(op, &rows)))
        }
        CommOpKind::AllToAllSingle | CommOpKind::AllToAll => {
            let want = Col::concat(&(0..p).map(|j| input(j, count * p).slice(r * count, (r + 1) * count)).collect::<Vec<_>>());
            let mine = input(r, count * p);
            let req = if kind == CommOpKind::AllToAllSingle {
                CommRequest::all_to_all_single(zeros(count * p), mine.to_buffer())
            } else {
                let ins = (0..p).map(|j| mine.slice(j * count, (j + 1) * count).to_buffer()).collect();
                let outs = (0..p).map(|_| zeros(count)).collect();
                CommRequest::all_to_all(outs, ins)
            };
            (req, exact(want))
        }
        CommOpKind::Gatherv | CommOpKind::AllGatherv => {
            let l = Layout::random(&mut g, p, count);
            let mut want = Col::zeros(dtype, l.total);
            for j in 0..p {
                want.put(l.displs[j], &input(j, l.counts[j]));
            }
            let mine = input(r, l.counts[r]).to_buffer();
            if kind == CommOpKind::Gatherv {
                let out = if r == root { zeros(l.total) } else { empty() };
                let e = if r == root { exact(want) } else { None };
                (CommRequest::gatherv(out, mine, root, l.counts, l.displs), e)
            } else {
                (CommRequest::all_gatherv(zeros(l.total), mine, l.counts, l.displs), exact(want))
            }
        }
        CommOpKind::Scatterv => {
            let l = Layout::random(&mut g, p, count);
            let all = input(root, l.total);
            let want = all.slice(l.displs[r], l.displs[r] + l.counts[r]);
            let inp = if r == root { all.to_buffer() } else { empty() };
            (CommRequest::scatterv(zeros(l.counts[r]), inp, root, l.counts.clone(), l.displs), exact(want))
        }
        CommOpKind::AllToAllv => {
            // Row i is what rank i sends; every rank draws the same matrix.
            let send: Vec<Layout> = (0..p).map(|_| Layout::random(&mut g, p, count)).collect();
            let rcounts: Vec<usize> = (0..p).map(|j| send[j].counts[r]).collect();
            let recv = Layout::gapped(rcounts, &mut g);
            let mut want = Col::zeros(dtype, recv.total);
            for j in 0..p {
                let theirs = input(j, send[j].total);
                let d = send[j].displs[r];
                want.put(recv.displs[j], &theirs.slice(d, d + recv.counts[j]));
            }
            let mine = input(r, send[r].total).to_buffer();
            let req = CommRequest::all_to_allv(
                zeros(recv.total),
                mine,
                send[r].counts.clone(),
                recv.counts,
                send[r].displs.clone(),
                recv.displs,
            );
            (req, exact(want))
        }
        CommOpKind::Send | CommOpKind::Recv => panic!("plan() covers collectives only"),
    };
    Planned { request, expect }
}

/// Collect the single output of a finished operation as a column.
pub fn output_col(kind: CommOpKind, out: Payload) -> Col {
    if kind == CommOpKind::AllToAll {
        Col::concat(&out.into_list().iter().map(Col::from_buffer).collect::<Vec<_>>())
    } else {
        Col::from_buffer(&out.into_buffer())
    }
}

pub fn ops_for(kind: CommOpKind) -> Vec<ReduceOp> {
    if kind.needs_reduce_op() {
        ReduceOp::ALL.to_vec()
    } else {
        vec![ReduceOp::Sum]
    }
}

/// Post every planned case on `backend` and compare with the oracle.
/// Returns one message per mismatch.
pub fn run_plans(
    rt: &mcrdl::Runtime,
    backend: &str,
    kinds: &[CommOpKind],
    dtypes: &[DType],
    counts: &[usize],
    seed: u64,
) -> Result<Vec<String>> {
    let (r, p) = (rt.rank(), rt.world_size());
    let policy = rt.backend(backend)?.spec().policy.clone();
    let mut failures = Vec::new();
    for &kind in kinds {
        if !policy.supports(kind) {
            continue;
        }
        for &dtype in dtypes {
            for &count in counts {
                for op in ops_for(kind) {
                    let case_seed = seed ^ (count as u64) << 8;
                    let planned = plan(kind, dtype, count, op, p, r, case_seed);
                    let out = rt.post(planned.request.on(backend).async_op(true))?.wait()?;
                    if let Some(e) = planned.expect {
                        if let Err(msg) = e.check(&output_col(kind, out)) {
                            failures.push(format!("{backend} {kind}<{dtype}> {op} count {count} p {p} rank {r}: {msg}"));
                        }
                    }
                }
            }
        }
    }
    Ok(failures)
}

pub fn presets() -> Vec<mcrdl::BackendSpec> {
    ["ring", "tree", "naive"]
        .iter()
        .map(|n| {
            mcrdl::BackendSpec::new(n)
                .unwrap()
                .policy(mcrdl::AlgorithmPolicy::preset(n).unwrap())
        })
        .collect()
}
