//! Collective semantics and algorithms, built on transport point-to-point.
//!
//! Every collective starts with a header exchange: each rank sends every
//! peer a small control frame with the operation kind, ordinal, dtype,
//! root, reduce op, algorithm, and the element counts it will send to and
//! expect from each peer. All ranks then hold the same header set and reach
//! the same verdict, so a mis-ordered program fails with
//! [`Error::OrderMismatch`] on every rank instead of hanging or corrupting
//! data. The agreed traffic matrix also gives algorithms every peer's block
//! sizes, which vectored variants need.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::middleware::compression::Codec;
use crate::request::{CommRequest, Payload};
use crate::types::{Buffer, CommOpKind, DType, ReduceOp};

mod allgather;
mod allreduce;
mod alltoall;
pub(crate) mod exchange;
mod rooted;

pub(crate) use exchange::Exchange;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ring,
    RecursiveDoubling,
    Naive,
    BinomialTree,
    Linear,
    Bruck,
    PairwiseExchange,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Ring,
        Algorithm::RecursiveDoubling,
        Algorithm::Naive,
        Algorithm::BinomialTree,
        Algorithm::Linear,
        Algorithm::Bruck,
        Algorithm::PairwiseExchange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ring => "ring",
            Algorithm::RecursiveDoubling => "recursive_doubling",
            Algorithm::Naive => "naive",
            Algorithm::BinomialTree => "binomial_tree",
            Algorithm::Linear => "linear",
            Algorithm::Bruck => "bruck",
            Algorithm::PairwiseExchange => "pairwise_exchange",
        }
    }

    /// Algorithms implemented for `kind`.
    pub fn choices(kind: CommOpKind) -> &'static [Algorithm] {
        use Algorithm::*;
        match kind {
            CommOpKind::Send | CommOpKind::Recv => &[Linear],
            CommOpKind::AllReduce => &[Ring, RecursiveDoubling, Naive],
            CommOpKind::Reduce | CommOpKind::Bcast => &[BinomialTree, Linear],
            CommOpKind::AllGather | CommOpKind::AllGatherv => &[Ring, Bruck, Naive],
            CommOpKind::Gather | CommOpKind::Scatter | CommOpKind::Gatherv | CommOpKind::Scatterv => {
                &[Linear, BinomialTree]
            }
            CommOpKind::ReduceScatter => &[Ring, Naive],
            CommOpKind::AllToAllSingle | CommOpKind::AllToAll | CommOpKind::AllToAllv => {
                &[PairwiseExchange, Bruck, Naive]
            }
        }
    }

    fn code(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = match s {
            "rd" => "recursive_doubling",
            "binomial" | "tree" => "binomial_tree",
            "pairwise" => "pairwise_exchange",
            other => other,
        };
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown algorithm `{s}`")))
    }
}

/// Which algorithm a backend runs for each operation kind. Kinds absent
/// from the map are unsupported by the backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlgorithmPolicy {
    algorithms: BTreeMap<CommOpKind, Algorithm>,
}

impl Default for AlgorithmPolicy {
    fn default() -> Self {
        Self::preset("ring").expect("ring preset exists")
    }
}

impl AlgorithmPolicy {
    /// Named policies:
    /// - `ring`: ring all-reduce/all-gather/reduce-scatter, binomial trees,
    ///   pairwise all-to-all.
    /// - `tree`: recursive doubling, Bruck, binomial trees.
    /// - `naive`: root-centric gather-then-broadcast and direct sends.
    /// - `nccl-like`: `ring`, without gather/scatter and vectored ops.
    pub fn preset(name: &str) -> Result<Self> {
        use Algorithm::*;
        let pick = |ar, tree, ag, rs, a2a| {
            let mut m = BTreeMap::new();
            for kind in CommOpKind::ALL {
                let algo = match kind {
                    CommOpKind::Send | CommOpKind::Recv => Linear,
                    CommOpKind::AllReduce => ar,
                    CommOpKind::Reduce | CommOpKind::Bcast => tree,
                    CommOpKind::Gather | CommOpKind::Scatter => tree,
                    CommOpKind::Gatherv | CommOpKind::Scatterv => Linear,
                    CommOpKind::AllGather | CommOpKind::AllGatherv => ag,
                    CommOpKind::ReduceScatter => rs,
                    CommOpKind::AllToAllSingle | CommOpKind::AllToAll | CommOpKind::AllToAllv => a2a,
                };
                m.insert(kind, algo);
            }
            m
        };
        let algorithms = match name {
            "ring" | "default" => pick(Ring, BinomialTree, Ring, Ring, PairwiseExchange),
            "tree" => pick(RecursiveDoubling, BinomialTree, Bruck, Ring, Bruck),
            "naive" => pick(Naive, Linear, Naive, Naive, Naive),
            "nccl-like" => {
                let mut m = pick(Ring, BinomialTree, Ring, Ring, PairwiseExchange);
                for k in [
                    CommOpKind::Gather,
                    CommOpKind::Gatherv,
                    CommOpKind::Scatter,
                    CommOpKind::Scatterv,
                    CommOpKind::AllGatherv,
                    CommOpKind::AllToAllv,
                ] {
                    m.remove(&k);
                }
                m
            }
            other => return Err(Error::Config(format!("unknown policy preset `{other}`"))),
        };
        Ok(AlgorithmPolicy { algorithms })
    }

    /// Override the algorithm for one kind.
    pub fn with(mut self, kind: CommOpKind, algo: Algorithm) -> Result<Self> {
        if !Algorithm::choices(kind).contains(&algo) {
            return Err(Error::Config(format!("{algo} is not an algorithm for {kind}")));
        }
        self.algorithms.insert(kind, algo);
        Ok(self)
    }

    /// Use `algo` for every kind that implements it.
    pub fn with_all(mut self, algo: Algorithm) -> Self {
        for kind in CommOpKind::ALL {
            if Algorithm::choices(kind).contains(&algo) && self.algorithms.contains_key(&kind) {
                self.algorithms.insert(kind, algo);
            }
        }
        self
    }

    pub fn without(mut self, kind: CommOpKind) -> Self {
        self.algorithms.remove(&kind);
        self
    }

    pub fn algorithm(&self, kind: CommOpKind) -> Option<Algorithm> {
        self.algorithms.get(&kind).copied()
    }

    pub fn supports(&self, kind: CommOpKind) -> bool {
        self.algorithms.contains_key(&kind)
    }
}

/// Cross-rank consistency record for one collective.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Header {
    kind: u8,
    dtype: u8,
    op: u8,
    algo: u8,
    root: u32,
    seq: u64,
    codec: u8,
    send: Vec<u64>,
    recv: Vec<u64>,
}

const HEADER_FIXED: usize = 24;

impl Header {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_FIXED + 16 * self.send.len());
        out.extend_from_slice(&[self.kind, self.dtype, self.op, self.algo]);
        out.extend_from_slice(&self.root.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&(self.send.len() as u32).to_le_bytes());
        out.extend_from_slice(&[self.codec, 0, 0, 0]);
        for v in self.send.iter().chain(&self.recv) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::OrderMismatch("malformed collective header".into());
        if bytes.len() < HEADER_FIXED {
            return Err(bad());
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let p = u32_at(16) as usize;
        if bytes.len() != HEADER_FIXED + 16 * p {
            return Err(bad());
        }
        Ok(Header {
            kind: bytes[0],
            dtype: bytes[1],
            op: bytes[2],
            algo: bytes[3],
            root: u32_at(4),
            seq: u64_at(8),
            codec: bytes[20],
            send: (0..p).map(|i| u64_at(HEADER_FIXED + 8 * i)).collect(),
            recv: (0..p).map(|i| u64_at(HEADER_FIXED + 8 * (p + i))).collect(),
        })
    }

    fn describe(&self) -> String {
        let kind = CommOpKind::ALL
            .get(self.kind as usize)
            .map_or_else(|| format!("internal#{}", self.kind), |k| k.to_string());
        let dtype = DType::from_code(self.dtype).map_or("?", DType::as_str);
        format!("{kind}<{dtype}> seq {}", self.seq)
    }
}

/// Element counts `counts[i][j]` that rank `i` sends to rank `j`, agreed by
/// every rank.
pub(crate) struct TrafficMatrix {
    counts: Vec<Vec<u64>>,
}

impl TrafficMatrix {
    pub fn get(&self, from: usize, to: usize) -> usize {
        self.counts[from][to] as usize
    }

    /// True if every off-diagonal and diagonal entry is identical.
    pub fn uniform(&self) -> bool {
        let first = self.counts[0][0];
        self.counts.iter().flatten().all(|&c| c == first)
    }
}

/// Exchange control frames carrying `body` with every peer; returns all
/// ranks' bodies indexed by rank.
pub(crate) fn allgather_control(ex: &Exchange, body: Vec<u8>) -> Result<Vec<Vec<u8>>> {
    for peer in (0..ex.size).filter(|&j| j != ex.rank) {
        ex.send_control(peer, body.clone())?;
    }
    let mut out = Vec::with_capacity(ex.size);
    for peer in 0..ex.size {
        if peer == ex.rank {
            out.push(body.clone());
        } else {
            out.push(ex.recv_control(peer)?);
        }
    }
    Ok(out)
}

fn agree(ex: &Exchange, mine: Header) -> Result<TrafficMatrix> {
    let bodies = allgather_control(ex, mine.encode())?;
    let headers: Vec<Header> = bodies
        .iter()
        .map(|b| Header::decode(b))
        .collect::<Result<_>>()?;
    let p = ex.size;
    for (j, h) in headers.iter().enumerate() {
        let global = |h: &Header| (h.kind, h.dtype, h.op, h.algo, h.root, h.seq, h.send.len());
        if global(h) != global(&headers[0]) {
            return Err(Error::OrderMismatch(format!(
                "rank 0 posted {} (op {}, root {}, algo {}) but rank {j} posted {} (op {}, root {}, algo {})",
                headers[0].describe(),
                headers[0].op,
                headers[0].root,
                headers[0].algo,
                h.describe(),
                h.op,
                h.root,
                h.algo,
            )));
        }
    }
    if let Some(h) = headers.iter().find(|h| h.codec != headers[0].codec) {
        return Err(Error::CodecMismatch(format!(
            "{}: codec {} on rank 0, codec {} elsewhere",
            headers[0].describe(),
            headers[0].codec,
            h.codec
        )));
    }
    if headers[0].send.len() != p {
        return Err(Error::OrderMismatch("header world size differs".into()));
    }
    for i in 0..p {
        for j in 0..p {
            if headers[i].send[j] != headers[j].recv[i] {
                return Err(Error::OrderMismatch(format!(
                    "{}: rank {i} sends {} elements to rank {j}, which expects {}",
                    headers[i].describe(),
                    headers[i].send[j],
                    headers[j].recv[i]
                )));
            }
        }
    }
    Ok(TrafficMatrix {
        counts: headers.into_iter().map(|h| h.send).collect(),
    })
}

/// Run a validated request on this rank and return its output payload.
pub(crate) fn execute(ex: &Exchange, policy: &AlgorithmPolicy, req: &CommRequest) -> Result<Payload> {
    let kind = req.kind;
    match kind {
        CommOpKind::Send => {
            let data = req.input_one().as_bytes().to_vec();
            crate::transport::p2p_send(ex.transport, req.peer.unwrap(), req.seq, data)?;
            return Ok(Payload::None);
        }
        CommOpKind::Recv => {
            let out = req.output_one();
            let bytes = crate::transport::p2p_recv(
                ex.transport,
                req.peer.unwrap(),
                out.byte_len(),
                ex.deadline,
            )?;
            return Ok(Payload::One(Buffer::from_bytes(out.dtype(), bytes)?));
        }
        _ => {}
    }
    let algo = policy.algorithm(kind).ok_or_else(|| Error::Unsupported {
        backend: String::new(),
        op: kind.to_string(),
    })?;
    let dtype = req.dtype().unwrap_or(DType::U8);
    let codec = match ex.codec {
        Some(c) if kind.is_compressible() && dtype == DType::F32 => Some(c),
        Some(c) if kind.is_compressible() => {
            log::debug!("{kind}<{dtype}> sent uncompressed: {c} applies to f32 only");
            None
        }
        _ => None,
    };
    let (send, recv) = req.traffic(ex.rank, ex.size);
    let header = Header {
        kind: kind.code(),
        dtype: dtype.code(),
        op: req.op.map_or(u8::MAX, ReduceOp::code),
        algo: algo.code(),
        root: req.root.map_or(u32::MAX, |r| r as u32),
        seq: ex.seq,
        codec: codec.map_or(0, Codec::id),
        send,
        recv,
    };
    let matrix = agree(ex, header)?;
    let ex = &Exchange { codec, ..*ex };
    let width = dtype.size_bytes();
    let root = req.root.unwrap_or(0);
    let op = req.op.unwrap_or(ReduceOp::Sum);

    Ok(match kind {
        CommOpKind::Send | CommOpKind::Recv => unreachable!(),
        CommOpKind::AllReduce => {
            let data = req.input_one().as_bytes().to_vec();
            let out = allreduce::all_reduce(ex, algo, dtype, op, data)?;
            Payload::One(Buffer::from_bytes(dtype, out)?)
        }
        CommOpKind::Reduce => {
            let input = req.input_one();
            let out = rooted::reduce(ex, algo, dtype, op, root, input.as_bytes().to_vec())?;
            Payload::One(match out {
                Some(bytes) => Buffer::from_bytes(dtype, bytes)?,
                None => input.clone(),
            })
        }
        CommOpKind::Bcast => {
            let buf = req.output_one();
            let data = rooted::bcast(ex, algo, root, buf.as_bytes().to_vec())?;
            Payload::One(Buffer::from_bytes(dtype, data)?)
        }
        CommOpKind::Gather | CommOpKind::Gatherv => {
            let input = req.input_one().as_bytes();
            let counts: Vec<usize> = (0..ex.size).map(|j| matrix.get(j, root)).collect();
            let displs = match &req.rdispls {
                Some(d) => d.clone(),
                None => prefix_sums(&counts),
            };
            let algo = if kind == CommOpKind::Gatherv { Algorithm::Linear } else { algo };
            let blocks = rooted::gather(ex, algo, root, input, &counts, width)?;
            let mut out = req.output.one().cloned().unwrap_or_else(|| Buffer::empty(dtype));
            if let Some(blocks) = blocks {
                place_blocks(&mut out, &blocks, &displs);
            }
            Payload::One(out)
        }
        CommOpKind::Scatter | CommOpKind::Scatterv => {
            let counts: Vec<usize> = (0..ex.size).map(|j| matrix.get(root, j)).collect();
            let blocks = if ex.rank == root {
                let input = req.input_one();
                let displs = match &req.sdispls {
                    Some(d) => d.clone(),
                    None => prefix_sums(&counts),
                };
                Some(take_blocks(input, &counts, &displs))
            } else {
                None
            };
            let algo = if kind == CommOpKind::Scatterv { Algorithm::Linear } else { algo };
            let mine = rooted::scatter(ex, algo, root, blocks, &counts, width)?;
            Payload::One(Buffer::from_bytes(dtype, mine)?)
        }
        CommOpKind::AllGather | CommOpKind::AllGatherv => {
            let counts: Vec<usize> = (0..ex.size).map(|j| matrix.get(j, j)).collect();
            let displs = match &req.rdispls {
                Some(d) => d.clone(),
                None => prefix_sums(&counts),
            };
            let input = req.input_one().as_bytes().to_vec();
            let blocks = allgather::all_gatherv(ex, algo, input, &counts, width)?;
            let mut out = req.output_one().clone();
            place_blocks(&mut out, &blocks, &displs);
            Payload::One(out)
        }
        CommOpKind::ReduceScatter => {
            let input = req.input_one().as_bytes().to_vec();
            let out = allreduce::reduce_scatter(ex, algo, dtype, op, input)?;
            Payload::One(Buffer::from_bytes(dtype, out)?)
        }
        CommOpKind::AllToAllSingle | CommOpKind::AllToAll | CommOpKind::AllToAllv => {
            let p = ex.size;
            let send_counts: Vec<usize> = (0..p).map(|j| matrix.get(ex.rank, j)).collect();
            let recv_counts: Vec<usize> = (0..p).map(|j| matrix.get(j, ex.rank)).collect();
            let send_blocks: Vec<Vec<u8>> = match kind {
                CommOpKind::AllToAll => req
                    .input
                    .many()
                    .unwrap()
                    .iter()
                    .map(|b| b.as_bytes().to_vec())
                    .collect(),
                CommOpKind::AllToAllv => {
                    take_blocks(req.input_one(), &send_counts, req.sdispls.as_ref().unwrap())
                }
                _ => take_blocks(req.input_one(), &send_counts, &prefix_sums(&send_counts)),
            };
            let algo = if algo == Algorithm::Bruck && !matrix.uniform() {
                Algorithm::PairwiseExchange
            } else {
                algo
            };
            let recv_bytes: Vec<usize> = recv_counts.iter().map(|c| c * width).collect();
            let blocks = alltoall::all_to_all(ex, algo, send_blocks, &recv_bytes)?;
            match kind {
                CommOpKind::AllToAll => Payload::Many(
                    blocks
                        .into_iter()
                        .map(|b| Buffer::from_bytes(dtype, b))
                        .collect::<Result<_>>()?,
                ),
                CommOpKind::AllToAllv => {
                    let mut out = req.output_one().clone();
                    place_blocks(&mut out, &blocks, req.rdispls.as_ref().unwrap());
                    Payload::One(out)
                }
                _ => {
                    let mut out = req.output_one().clone();
                    place_blocks(&mut out, &blocks, &prefix_sums(&recv_counts));
                    Payload::One(out)
                }
            }
        }
    })
}

pub(crate) fn prefix_sums(counts: &[usize]) -> Vec<usize> {
    counts
        .iter()
        .scan(0, |acc, &c| {
            let d = *acc;
            *acc += c;
            Some(d)
        })
        .collect()
}

fn take_blocks(buf: &Buffer, counts: &[usize], displs: &[usize]) -> Vec<Vec<u8>> {
    counts
        .iter()
        .zip(displs)
        .map(|(&c, &d)| buf.elements(d, c).to_vec())
        .collect()
}

fn place_blocks(out: &mut Buffer, blocks: &[Vec<u8>], displs: &[usize]) {
    let width = out.dtype().size_bytes();
    for (block, &d) in blocks.iter().zip(displs) {
        if !block.is_empty() {
            out.elements_mut(d, block.len() / width).copy_from_slice(block);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_roundtrip() {
        let h = Header {
            kind: 4,
            dtype: 0,
            op: 0,
            algo: 1,
            root: u32::MAX,
            seq: 99,
            codec: 1,
            send: vec![1, 2, 3],
            recv: vec![4, 5, 6],
        };
        assert_eq!(Header::decode(&h.encode()).unwrap(), h);
        assert!(Header::decode(&[0; 5]).is_err());
    }

    #[test]
    fn presets_are_valid() {
        for name in ["ring", "tree", "naive", "nccl-like"] {
            let p = AlgorithmPolicy::preset(name).unwrap();
            for kind in CommOpKind::ALL {
                if let Some(a) = p.algorithm(kind) {
                    assert!(Algorithm::choices(kind).contains(&a), "{name} {kind} {a}");
                }
            }
        }
        assert!(!AlgorithmPolicy::preset("nccl-like").unwrap().supports(CommOpKind::Gatherv));
        assert!(AlgorithmPolicy::default()
            .with(CommOpKind::AllReduce, Algorithm::Bruck)
            .is_err());
    }

    #[test]
    fn prefix_sums_pack() {
        assert_eq!(prefix_sums(&[1, 2, 3]), vec![0, 1, 3]);
        assert_eq!(prefix_sums(&[]), Vec::<usize>::new());
    }
}
