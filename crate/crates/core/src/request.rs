//! Operation descriptors and their validation.

use crate::error::{Error, Result};
use crate::types::{Buffer, CommOpKind, DType, ReduceOp};

/// Zero, one or many buffers attached to a request side.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Payload {
    #[default]
    None,
    One(Buffer),
    Many(Vec<Buffer>),
}

impl Payload {
    pub fn one(&self) -> Option<&Buffer> {
        match self {
            Payload::One(b) => Some(b),
            _ => None,
        }
    }

    pub fn many(&self) -> Option<&[Buffer]> {
        match self {
            Payload::Many(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Payload::None)
    }

    /// The single buffer. Panics on `None`/`Many`.
    pub fn into_buffer(self) -> Buffer {
        match self {
            Payload::One(b) => b,
            other => panic!("expected a single buffer, got {other:?}"),
        }
    }

    /// The buffer list. Panics unless this is `Many`.
    pub fn into_list(self) -> Vec<Buffer> {
        match self {
            Payload::Many(v) => v,
            other => panic!("expected a buffer list, got {other:?}"),
        }
    }

    pub fn byte_len(&self) -> usize {
        match self {
            Payload::None => 0,
            Payload::One(b) => b.byte_len(),
            Payload::Many(v) => v.iter().map(Buffer::byte_len).sum(),
        }
    }

    fn dtypes(&self) -> Vec<DType> {
        match self {
            Payload::None => vec![],
            Payload::One(b) => vec![b.dtype()],
            Payload::Many(v) => v.iter().map(Buffer::dtype).collect(),
        }
    }
}

/// Normalized descriptor of one communication operation.
///
/// In-place operations (`all_reduce`, `reduce`, `bcast`) carry their tensor
/// in `input` (or `output` for `bcast`) and return the result from the work
/// handle.
#[derive(Debug, Clone, PartialEq)]
pub struct CommRequest {
    pub kind: CommOpKind,
    pub input: Payload,
    pub output: Payload,
    pub root: Option<usize>,
    /// Destination (send) or source (recv) rank.
    pub peer: Option<usize>,
    pub op: Option<ReduceOp>,
    pub scounts: Option<Vec<usize>>,
    pub rcounts: Option<Vec<usize>>,
    pub sdispls: Option<Vec<usize>>,
    pub rdispls: Option<Vec<usize>>,
    pub backend: String,
    pub async_op: bool,
    /// Assigned by the runtime when the request is posted.
    pub seq: u64,
}

impl CommRequest {
    fn base(kind: CommOpKind) -> Self {
        CommRequest {
            kind,
            input: Payload::None,
            output: Payload::None,
            root: None,
            peer: None,
            op: None,
            scounts: None,
            rcounts: None,
            sdispls: None,
            rdispls: None,
            backend: "auto".into(),
            async_op: false,
            seq: 0,
        }
    }

    pub fn send(tensor: Buffer, dst: usize) -> Self {
        CommRequest {
            input: Payload::One(tensor),
            peer: Some(dst),
            ..Self::base(CommOpKind::Send)
        }
    }

    /// `tensor` fixes the expected size and dtype; its contents are replaced.
    pub fn recv(tensor: Buffer, src: usize) -> Self {
        CommRequest {
            output: Payload::One(tensor),
            peer: Some(src),
            ..Self::base(CommOpKind::Recv)
        }
    }

    pub fn bcast(tensor: Buffer, root: usize) -> Self {
        CommRequest {
            output: Payload::One(tensor),
            root: Some(root),
            ..Self::base(CommOpKind::Bcast)
        }
    }

    pub fn reduce(tensor: Buffer, root: usize, op: ReduceOp) -> Self {
        CommRequest {
            input: Payload::One(tensor),
            root: Some(root),
            op: Some(op),
            ..Self::base(CommOpKind::Reduce)
        }
    }

    pub fn all_reduce(tensor: Buffer, op: ReduceOp) -> Self {
        CommRequest {
            input: Payload::One(tensor),
            op: Some(op),
            ..Self::base(CommOpKind::AllReduce)
        }
    }

    /// `output` only matters at the root; other ranks may pass an empty buffer.
    pub fn gather(output: Buffer, input: Buffer, root: usize) -> Self {
        CommRequest {
            input: Payload::One(input),
            output: Payload::One(output),
            root: Some(root),
            ..Self::base(CommOpKind::Gather)
        }
    }

    pub fn gatherv(
        output: Buffer,
        input: Buffer,
        root: usize,
        rcounts: Vec<usize>,
        displs: Vec<usize>,
    ) -> Self {
        CommRequest {
            input: Payload::One(input),
            output: Payload::One(output),
            root: Some(root),
            rcounts: Some(rcounts),
            rdispls: Some(displs),
            ..Self::base(CommOpKind::Gatherv)
        }
    }

    /// `input` only matters at the root.
    pub fn scatter(output: Buffer, input: Buffer, root: usize) -> Self {
        CommRequest {
            input: Payload::One(input),
            output: Payload::One(output),
            root: Some(root),
            ..Self::base(CommOpKind::Scatter)
        }
    }

    pub fn scatterv(
        output: Buffer,
        input: Buffer,
        root: usize,
        scounts: Vec<usize>,
        displs: Vec<usize>,
    ) -> Self {
        CommRequest {
            input: Payload::One(input),
            output: Payload::One(output),
            root: Some(root),
            scounts: Some(scounts),
            sdispls: Some(displs),
            ..Self::base(CommOpKind::Scatterv)
        }
    }

    pub fn all_gather(output: Buffer, input: Buffer) -> Self {
        CommRequest {
            input: Payload::One(input),
            output: Payload::One(output),
            ..Self::base(CommOpKind::AllGather)
        }
    }

    pub fn all_gatherv(output: Buffer, input: Buffer, rcounts: Vec<usize>, displs: Vec<usize>) -> Self {
        CommRequest {
            input: Payload::One(input),
            output: Payload::One(output),
            rcounts: Some(rcounts),
            rdispls: Some(displs),
            ..Self::base(CommOpKind::AllGatherv)
        }
    }

    pub fn reduce_scatter(output: Buffer, input: Buffer, op: ReduceOp) -> Self {
        CommRequest {
            input: Payload::One(input),
            output: Payload::One(output),
            op: Some(op),
            ..Self::base(CommOpKind::ReduceScatter)
        }
    }

    pub fn all_to_all_single(output: Buffer, input: Buffer) -> Self {
        CommRequest {
            input: Payload::One(input),
            output: Payload::One(output),
            ..Self::base(CommOpKind::AllToAllSingle)
        }
    }

    pub fn all_to_all(outputs: Vec<Buffer>, inputs: Vec<Buffer>) -> Self {
        CommRequest {
            input: Payload::Many(inputs),
            output: Payload::Many(outputs),
            ..Self::base(CommOpKind::AllToAll)
        }
    }

    pub fn all_to_allv(
        output: Buffer,
        input: Buffer,
        scounts: Vec<usize>,
        rcounts: Vec<usize>,
        sdispls: Vec<usize>,
        rdispls: Vec<usize>,
    ) -> Self {
        CommRequest {
            input: Payload::One(input),
            output: Payload::One(output),
            scounts: Some(scounts),
            rcounts: Some(rcounts),
            sdispls: Some(sdispls),
            rdispls: Some(rdispls),
            ..Self::base(CommOpKind::AllToAllv)
        }
    }

    /// Route to `backend` (a registered id or `"auto"`).
    pub fn on(mut self, backend: impl Into<String>) -> Self {
        self.backend = backend.into();
        self
    }

    pub fn async_op(mut self, async_op: bool) -> Self {
        self.async_op = async_op;
        self
    }

    /// Element type of the request's payload.
    pub fn dtype(&self) -> Option<DType> {
        self.input
            .dtypes()
            .first()
            .copied()
            .or_else(|| self.output.dtypes().first().copied())
    }

    pub(crate) fn input_one(&self) -> &Buffer {
        self.input.one().expect("validated request has an input buffer")
    }

    pub(crate) fn output_one(&self) -> &Buffer {
        self.output.one().expect("validated request has an output buffer")
    }

    /// Canonical size used for tuning and dispatch: the per-rank send-side
    /// payload in bytes.
    pub fn message_bytes(&self, world_size: usize) -> u64 {
        let width = self.dtype().map_or(1, DType::size_bytes) as u64;
        let sum = |v: &Option<Vec<usize>>| v.as_ref().map_or(0, |v| v.iter().sum::<usize>()) as u64;
        match self.kind {
            CommOpKind::Gatherv | CommOpKind::AllGatherv => sum(&self.rcounts) * width,
            CommOpKind::Scatterv | CommOpKind::AllToAllv => sum(&self.scounts) * width,
            CommOpKind::Scatter => {
                self.output.one().map_or(0, |b| b.byte_len() * world_size) as u64
            }
            CommOpKind::Bcast | CommOpKind::Recv => self.output.byte_len() as u64,
            _ => self.input.byte_len() as u64,
        }
    }

    /// Validate against the local rank's view of the world.
    pub fn validate(&self, rank: usize, world_size: usize) -> Result<()> {
        Validator {
            req: self,
            rank,
            p: world_size,
        }
        .run()
    }

    /// Elements this rank sends to / expects from every peer (self included),
    /// as implied by the operation's semantics. Used for the cross-rank
    /// consistency check that precedes every collective.
    pub(crate) fn traffic(&self, rank: usize, p: usize) -> (Vec<u64>, Vec<u64>) {
        let mut send = vec![0u64; p];
        let mut recv = vec![0u64; p];
        let count = |b: &Buffer| b.count() as u64;
        let counts = |v: &Option<Vec<usize>>| -> Vec<u64> {
            v.as_ref().map(|v| v.iter().map(|&c| c as u64).collect()).unwrap_or_default()
        };
        let root = self.root.unwrap_or(0);
        let is_root = rank == root;
        match self.kind {
            CommOpKind::Send | CommOpKind::Recv => {}
            CommOpKind::Bcast => {
                let n = count(self.output_one());
                if is_root {
                    send.fill(n);
                }
                recv[root] = n;
            }
            CommOpKind::Reduce => {
                let n = count(self.input_one());
                send[root] = n;
                if is_root {
                    recv.fill(n);
                }
            }
            CommOpKind::AllReduce => {
                let n = count(self.input_one());
                send.fill(n);
                recv.fill(n);
            }
            CommOpKind::Gather => {
                send[root] = count(self.input_one());
                if is_root {
                    recv.fill(count(self.output_one()) / p as u64);
                }
            }
            CommOpKind::Gatherv => {
                send[root] = count(self.input_one());
                if is_root {
                    recv = counts(&self.rcounts);
                }
            }
            CommOpKind::Scatter => {
                if is_root {
                    send.fill(count(self.input_one()) / p as u64);
                }
                recv[root] = count(self.output_one());
            }
            CommOpKind::Scatterv => {
                if is_root {
                    send = counts(&self.scounts);
                }
                recv[root] = count(self.output_one());
            }
            CommOpKind::AllGather => {
                send.fill(count(self.input_one()));
                recv.fill(count(self.output_one()) / p as u64);
            }
            CommOpKind::AllGatherv => {
                send.fill(count(self.input_one()));
                recv = counts(&self.rcounts);
            }
            CommOpKind::ReduceScatter => {
                send.fill(count(self.input_one()) / p as u64);
                recv.fill(count(self.output_one()));
            }
            CommOpKind::AllToAllSingle => {
                let n = count(self.input_one()) / p as u64;
                send.fill(n);
                recv.fill(n);
            }
            CommOpKind::AllToAll => {
                let ins = self.input.many().unwrap_or_default();
                let outs = self.output.many().unwrap_or_default();
                send = ins.iter().map(count).collect();
                recv = outs.iter().map(count).collect();
            }
            CommOpKind::AllToAllv => {
                send = counts(&self.scounts);
                recv = counts(&self.rcounts);
            }
        }
        (send, recv)
    }
}

struct Validator<'a> {
    req: &'a CommRequest,
    rank: usize,
    p: usize,
}

impl Validator<'_> {
    fn run(&self) -> Result<()> {
        let r = self.req;
        let k = r.kind;
        if self.p == 0 {
            return Err(Error::validation("world_size", "must be positive"));
        }
        self.presence("root", r.root.is_some(), k.is_rooted())?;
        self.presence("peer", r.peer.is_some(), k.is_p2p())?;
        self.presence("op", r.op.is_some(), k.needs_reduce_op())?;
        let (sc, rc) = match k {
            CommOpKind::Gatherv | CommOpKind::AllGatherv => (false, true),
            CommOpKind::Scatterv => (true, false),
            CommOpKind::AllToAllv => (true, true),
            _ => (false, false),
        };
        self.presence("scounts", r.scounts.is_some(), sc)?;
        self.presence("sdispls", r.sdispls.is_some(), sc)?;
        self.presence("rcounts", r.rcounts.is_some(), rc)?;
        self.presence("rdispls", r.rdispls.is_some(), rc)?;

        if let Some(root) = r.root {
            if root >= self.p {
                return Err(Error::InvalidRoot {
                    root,
                    world_size: self.p,
                });
            }
        }
        if let Some(peer) = r.peer {
            if peer >= self.p || peer == self.rank {
                return Err(Error::InvalidDestination {
                    rank: peer,
                    me: self.rank,
                    world_size: self.p,
                });
            }
        }
        let dtypes: Vec<DType> = r.input.dtypes().into_iter().chain(r.output.dtypes()).collect();
        if dtypes.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::validation("dtype", "input and output dtypes differ"));
        }

        let is_root = r.root == Some(self.rank);
        match k {
            CommOpKind::Send => {
                self.one_in()?;
                self.no_output()
            }
            CommOpKind::Recv => {
                self.one_out()?;
                self.no_input()
            }
            CommOpKind::Bcast => {
                self.one_out()?;
                self.no_input()
            }
            CommOpKind::Reduce | CommOpKind::AllReduce => {
                let input = self.one_in()?;
                match &r.output {
                    Payload::None => Ok(()),
                    Payload::One(out) if out.count() == input.count() || (k == CommOpKind::Reduce && !is_root) => {
                        Ok(())
                    }
                    Payload::One(out) => Err(Error::validation(
                        "output",
                        format!("expected {}, got {}", input.count(), out.count()),
                    )),
                    Payload::Many(_) => Err(Error::validation("output", "expected a single buffer")),
                }
            }
            CommOpKind::Gather => {
                let input = self.one_in()?;
                if is_root {
                    let out = self.one_out()?;
                    self.expect_count("output", out.count(), self.p * input.count())?;
                }
                Ok(())
            }
            CommOpKind::Scatter => {
                let out = self.one_out()?;
                if is_root {
                    let input = self.one_in()?;
                    self.expect_count("input", input.count(), self.p * out.count())?;
                }
                Ok(())
            }
            CommOpKind::AllGather => {
                let input = self.one_in()?;
                let out = self.one_out()?;
                self.expect_count("output", out.count(), self.p * input.count())
            }
            CommOpKind::ReduceScatter => {
                let input = self.one_in()?;
                let out = self.one_out()?;
                self.expect_count("input", input.count(), self.p * out.count())
            }
            CommOpKind::AllToAllSingle => {
                let input = self.one_in()?;
                let out = self.one_out()?;
                self.expect_count("output", out.count(), input.count())?;
                if input.count() % self.p != 0 {
                    return Err(Error::validation(
                        "input",
                        format!("count {} not divisible by world size {}", input.count(), self.p),
                    ));
                }
                Ok(())
            }
            CommOpKind::AllToAll => {
                let ins = r
                    .input
                    .many()
                    .ok_or_else(|| Error::validation("input", "expected a list of buffers"))?;
                let outs = r
                    .output
                    .many()
                    .ok_or_else(|| Error::validation("output", "expected a list of buffers"))?;
                self.expect_count("input", ins.len(), self.p)?;
                self.expect_count("output", outs.len(), self.p)?;
                // The diagonal block never leaves the rank, so check it here.
                self.expect_count(
                    "output",
                    outs[self.rank].count(),
                    ins[self.rank].count(),
                )
            }
            CommOpKind::Gatherv => {
                let input = self.one_in()?;
                let (counts, displs) = self.vectors("rcounts", &r.rcounts, "rdispls", &r.rdispls)?;
                self.expect_count("input", input.count(), counts[self.rank])?;
                if is_root {
                    let out = self.one_out()?;
                    check_segments("rdispls", counts, displs, out.count())?;
                }
                Ok(())
            }
            CommOpKind::Scatterv => {
                let out = self.one_out()?;
                let (counts, displs) = self.vectors("scounts", &r.scounts, "sdispls", &r.sdispls)?;
                self.expect_count("output", out.count(), counts[self.rank])?;
                if is_root {
                    let input = self.one_in()?;
                    check_segments("sdispls", counts, displs, input.count())?;
                }
                Ok(())
            }
            CommOpKind::AllGatherv => {
                let input = self.one_in()?;
                let out = self.one_out()?;
                let (counts, displs) = self.vectors("rcounts", &r.rcounts, "rdispls", &r.rdispls)?;
                self.expect_count("input", input.count(), counts[self.rank])?;
                check_segments("rdispls", counts, displs, out.count())
            }
            CommOpKind::AllToAllv => {
                let input = self.one_in()?;
                let out = self.one_out()?;
                let (sc, sd) = self.vectors("scounts", &r.scounts, "sdispls", &r.sdispls)?;
                let (rc, rd) = self.vectors("rcounts", &r.rcounts, "rdispls", &r.rdispls)?;
                check_segments("sdispls", sc, sd, input.count())?;
                check_segments("rdispls", rc, rd, out.count())?;
                self.expect_count("rcounts", rc[self.rank], sc[self.rank])
            }
        }
    }

    fn presence(&self, field: &str, present: bool, required: bool) -> Result<()> {
        match (present, required) {
            (true, false) => Err(Error::validation(
                field,
                format!("not allowed for {}", self.req.kind),
            )),
            (false, true) => Err(Error::validation(
                field,
                format!("required for {}", self.req.kind),
            )),
            _ => Ok(()),
        }
    }

    fn one_in(&self) -> Result<&Buffer> {
        self.req
            .input
            .one()
            .ok_or_else(|| Error::validation("input", "expected a single buffer"))
    }

    fn one_out(&self) -> Result<&Buffer> {
        self.req
            .output
            .one()
            .ok_or_else(|| Error::validation("output", "expected a single buffer"))
    }

    fn no_input(&self) -> Result<()> {
        if self.req.input.is_none() {
            Ok(())
        } else {
            Err(Error::validation("input", format!("not used by {}", self.req.kind)))
        }
    }

    fn no_output(&self) -> Result<()> {
        if self.req.output.is_none() {
            Ok(())
        } else {
            Err(Error::validation("output", format!("not used by {}", self.req.kind)))
        }
    }

    fn expect_count(&self, field: &str, actual: usize, expected: usize) -> Result<()> {
        if actual == expected {
            Ok(())
        } else {
            Err(Error::validation(
                field,
                format!("expected {expected}, got {actual}"),
            ))
        }
    }

    fn vectors<'v>(
        &self,
        cname: &str,
        counts: &'v Option<Vec<usize>>,
        dname: &str,
        displs: &'v Option<Vec<usize>>,
    ) -> Result<(&'v [usize], &'v [usize])> {
        let c = counts.as_deref().unwrap_or_default();
        let d = displs.as_deref().unwrap_or_default();
        self.expect_count(cname, c.len(), self.p)?;
        self.expect_count(dname, d.len(), self.p)?;
        Ok((c, d))
    }
}

/// Segments `[displs[i], displs[i] + counts[i])` must fit in `len` and not
/// overlap. Zero-length segments are ignored.
pub(crate) fn check_segments(field: &str, counts: &[usize], displs: &[usize], len: usize) -> Result<()> {
    let mut segs: Vec<(usize, usize)> = counts
        .iter()
        .zip(displs)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &d)| (d, d + c))
        .collect();
    if let Some(&(s, e)) = segs.iter().find(|&&(_, e)| e > len) {
        return Err(Error::validation(
            field,
            format!("segment [{s}, {e}) exceeds buffer of {len} elements"),
        ));
    }
    segs.sort_unstable();
    if let Some(w) = segs.windows(2).find(|w| w[1].0 < w[0].1) {
        return Err(Error::validation(
            field,
            format!("segments [{}, {}) and [{}, {}) overlap", w[0].0, w[0].1, w[1].0, w[1].1),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f32s(n: usize) -> Buffer {
        Buffer::zeros(DType::F32, n)
    }

    #[test]
    fn all_reduce_matching_counts_ok() {
        let req = CommRequest::all_reduce(f32s(4), ReduceOp::Sum);
        req.validate(0, 3).unwrap();
    }

    #[test]
    fn all_gather_wrong_output_reports_expected_size() {
        let req = CommRequest::all_gather(f32s(8), f32s(4));
        match req.validate(0, 3) {
            Err(Error::Validation { field, reason }) => {
                assert_eq!(field, "output");
                assert!(reason.contains("expected 12"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gatherv_packed_segments_ok() {
        let req = CommRequest::gatherv(f32s(6), f32s(1), 0, vec![1, 2, 3], vec![0, 1, 3]);
        req.validate(0, 3).unwrap();
        let overlapping = CommRequest::gatherv(f32s(6), f32s(1), 0, vec![1, 2, 3], vec![0, 0, 3]);
        assert!(overlapping.validate(0, 3).is_err());
        let oob = CommRequest::gatherv(f32s(5), f32s(1), 0, vec![1, 2, 3], vec![0, 1, 3]);
        assert!(oob.validate(0, 3).is_err());
    }

    #[test]
    fn field_presence_is_enforced() {
        let mut req = CommRequest::all_reduce(f32s(4), ReduceOp::Sum);
        req.root = Some(0);
        assert!(req.validate(0, 2).is_err());
        let mut req = CommRequest::bcast(f32s(4), 0);
        req.op = Some(ReduceOp::Sum);
        assert!(req.validate(0, 2).is_err());
    }

    #[test]
    fn roots_and_peers_are_range_checked() {
        assert!(matches!(
            CommRequest::bcast(f32s(1), 4).validate(0, 4),
            Err(Error::InvalidRoot { .. })
        ));
        assert!(matches!(
            CommRequest::send(f32s(1), 0).validate(0, 2),
            Err(Error::InvalidDestination { .. })
        ));
    }

    #[test]
    fn message_bytes_examples() {
        let r = CommRequest::all_reduce(f32s(1000), ReduceOp::Sum);
        assert_eq!(r.message_bytes(4), 4000);
        let r = CommRequest::all_to_allv(
            Buffer::zeros(DType::I64, 6),
            Buffer::zeros(DType::I64, 6),
            vec![1, 2, 3],
            vec![1, 2, 3],
            vec![0, 1, 3],
            vec![0, 1, 3],
        );
        assert_eq!(r.message_bytes(3), 48);
        let r = CommRequest::all_to_all(vec![f32s(10); 4], vec![f32s(10); 4]);
        assert_eq!(r.message_bytes(4), 160);
    }
}
