//! Tensor fusion for small all-reduce requests.
//!
//! Eligible requests are queued per (dtype, op) key. Rank 0 decides when a
//! key's buffer is flushed, either because the next request would push it
//! past `max_bytes` or because `timeout` has passed since the buffer
//! opened, and sends the number of members to flush per key to every rank
//! on the backend's fusion lane. Each rank then waits until it holds that
//! many members, packs them, and runs one all-reduce per buffer. Flush
//! points depend only on rank 0, so ranks cannot disagree on grouping even
//! though the timer fires at different moments on each rank.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::handle::{Slot, WorkHandle};
use crate::request::{CommRequest, Payload};
use crate::runtime::lane::LaneCtx;
use crate::transport::{FrameKind, WireFrame};
use crate::types::{Buffer, CommOpKind, DType, ReduceOp};

const KEYS: usize = DType::ALL.len() * ReduceOp::ALL.len();
const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Largest fused buffer, in bytes.
    pub max_bytes: usize,
    /// Longest a buffer stays open before it is flushed.
    pub timeout: Duration,
}

impl FusionConfig {
    pub fn new(max_bytes: usize, timeout: Duration) -> Result<Self> {
        if max_bytes == 0 || timeout.is_zero() {
            return Err(Error::Config("fusion needs B > 0 and T > 0".into()));
        }
        Ok(FusionConfig { max_bytes, timeout })
    }

    pub fn eligible(&self, req: &CommRequest) -> bool {
        let bytes = req.message_bytes(1) as usize;
        req.kind == CommOpKind::AllReduce && bytes > 0 && bytes <= self.max_bytes
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionStats {
    /// Requests accepted into fusion buffers.
    pub members: u64,
    /// Flush decisions executed.
    pub flushes: u64,
    /// Data collectives run on the transport.
    pub collectives: u64,
}

fn key_of(dtype: DType, op: ReduceOp) -> usize {
    dtype.code() as usize * ReduceOp::ALL.len() + op.code() as usize
}

fn key_parts(k: usize) -> (DType, ReduceOp) {
    let n = ReduceOp::ALL.len();
    (DType::ALL[k / n], ReduceOp::ALL[k % n])
}

struct Member {
    data: Buffer,
    slot: Arc<Slot>,
}

#[derive(Default)]
struct Open {
    bytes: usize,
    count: u64,
    opened: Option<Instant>,
}

struct State {
    queues: Vec<VecDeque<Member>>,
    /// Rank 0's view of members not yet assigned to a flush.
    open: Vec<Open>,
    posted: u64,
    flushed: u64,
    stats: FusionStats,
    finished: bool,
}

enum Command {
    Flush(Vec<u64>),
    Stop,
}

impl Command {
    fn encode(&self) -> Vec<u8> {
        match self {
            Command::Stop => vec![1],
            Command::Flush(counts) => {
                let mut out = vec![0];
                for c in counts {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                out
            }
        }
    }

    fn decode(b: &[u8]) -> Result<Self> {
        match b.first() {
            Some(1) if b.len() == 1 => Ok(Command::Stop),
            Some(0) if b.len() == 1 + 8 * KEYS => Ok(Command::Flush(
                b[1..].chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect(),
            )),
            _ => Err(Error::OrderMismatch("malformed fusion command".into())),
        }
    }
}

/// Wakes the runtime-wide timer when a buffer opens.
#[derive(Default)]
pub(crate) struct TimerSignal {
    engines: Mutex<Vec<Weak<FusionEngine>>>,
    cv: Condvar,
    stop: AtomicBool,
}

impl TimerSignal {
    pub fn register(&self, engine: &Arc<FusionEngine>) {
        self.engines.lock().unwrap().push(Arc::downgrade(engine));
        self.cv.notify_all();
    }

    fn poke(&self) {
        let _guard = self.engines.lock().unwrap();
        self.cv.notify_all();
    }

    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::SeqCst);
        self.poke();
    }

    /// Fire T deadlines. When one backend's buffer times out, every other
    /// backend's open buffer is flushed in the same pass, so the flushes
    /// overlap instead of each waiting out its own timer.
    pub fn run(self: Arc<Self>) {
        let mut guard = self.engines.lock().unwrap();
        while !self.stop.load(Ordering::SeqCst) {
            guard.retain(|w| w.strong_count() > 0);
            let engines: Vec<_> = guard.iter().filter_map(Weak::upgrade).collect();
            let now = Instant::now();
            let next = engines.iter().filter_map(|e| e.next_deadline()).min();
            match next {
                Some(t) if t <= now => {
                    drop(guard);
                    let fired: Vec<_> = engines.iter().filter(|e| e.expired(now)).collect();
                    if !fired.is_empty() {
                        for e in &engines {
                            e.flush_open();
                        }
                    }
                    guard = self.engines.lock().unwrap();
                }
                Some(t) => guard = self.cv.wait_timeout(guard, t - now).unwrap().0,
                None => guard = self.cv.wait_timeout(guard, POLL).unwrap().0,
            }
        }
    }
}

pub(crate) struct FusionEngine {
    cfg: FusionConfig,
    backend: String,
    leader: bool,
    state: Mutex<State>,
    cv: Condvar,
    cmd_tx: Sender<Command>,
    abort: Arc<AtomicBool>,
    thread: Mutex<Option<JoinHandle<()>>>,
    timer: Arc<TimerSignal>,
}

impl FusionEngine {
    pub fn start(cfg: FusionConfig, ctx: LaneCtx, timer: Arc<TimerSignal>) -> Result<Arc<Self>> {
        let (cmd_tx, cmd_rx) = unbounded();
        let rank = ctx.transport.rank();
        let engine = Arc::new(FusionEngine {
            cfg,
            backend: ctx.backend.clone(),
            leader: rank == 0,
            state: Mutex::new(State {
                queues: (0..KEYS).map(|_| VecDeque::new()).collect(),
                open: (0..KEYS).map(|_| Open::default()).collect(),
                posted: 0,
                flushed: 0,
                stats: FusionStats::default(),
                finished: false,
            }),
            cv: Condvar::new(),
            cmd_tx,
            abort: Arc::new(AtomicBool::new(false)),
            thread: Mutex::new(None),
            timer: Arc::clone(&timer),
        });
        let worker = Arc::clone(&engine);
        let t = thread::Builder::new()
            .name(format!("mcrdl-fusion-{}-{rank}", ctx.backend))
            .spawn(move || worker.lane(ctx, cmd_rx))?;
        *engine.thread.lock().unwrap() = Some(t);
        if engine.leader {
            timer.register(&engine);
        }
        Ok(engine)
    }

    pub fn config(&self) -> FusionConfig {
        self.cfg
    }

    pub fn stats(&self) -> FusionStats {
        self.state.lock().unwrap().stats
    }

    /// Queue an eligible request; the handle completes when its buffer's
    /// all-reduce does.
    pub fn post(&self, req: CommRequest) -> WorkHandle {
        let data = req.input.into_buffer();
        let op = req.op.expect("validated all_reduce has an op");
        let k = key_of(data.dtype(), op);
        let bytes = data.byte_len();
        let slot = Slot::new();
        let mut st = self.state.lock().unwrap();
        if self.leader && st.open[k].count > 0 && st.open[k].bytes + bytes > self.cfg.max_bytes {
            self.commit(&mut st, &[k]);
        }
        st.queues[k].push_back(Member {
            data,
            slot: Arc::clone(&slot),
        });
        st.posted += 1;
        st.stats.members += 1;
        let mut poke = false;
        if self.leader {
            let open = &mut st.open[k];
            open.bytes += bytes;
            open.count += 1;
            poke = open.opened.is_none();
            open.opened.get_or_insert_with(Instant::now);
            if open.bytes >= self.cfg.max_bytes || !req.async_op {
                self.commit(&mut st, &[k]);
                poke = false;
            }
        }
        self.cv.notify_all();
        drop(st);
        // The timer takes its own lock before ours; never hold both.
        if poke {
            self.timer.poke();
        }
        WorkHandle::new(&self.backend, slot)
    }

    /// Leader only: assign all open members of `keys` to a flush.
    fn commit(&self, st: &mut State, keys: &[usize]) {
        let mut counts = vec![0u64; KEYS];
        for &k in keys {
            counts[k] = std::mem::take(&mut st.open[k]).count;
        }
        if counts.iter().any(|&c| c > 0) {
            let _ = self.cmd_tx.send(Command::Flush(counts));
        }
    }

    fn next_deadline(&self) -> Option<Instant> {
        let st = self.state.lock().unwrap();
        st.open.iter().filter_map(|o| o.opened).min().map(|t| t + self.cfg.timeout)
    }

    fn expired(&self, now: Instant) -> bool {
        self.next_deadline().is_some_and(|t| t <= now)
    }

    /// Leader only: flush every open buffer now.
    pub fn flush_open(&self) {
        if !self.leader {
            return;
        }
        let mut st = self.state.lock().unwrap();
        let keys: Vec<usize> = (0..KEYS).collect();
        self.commit(&mut st, &keys);
    }

    /// Wait until every member posted before the call has completed.
    pub fn drain(&self, deadline: Instant) -> Result<()> {
        self.flush_open();
        let mut st = self.state.lock().unwrap();
        let target = st.posted;
        while st.flushed < target {
            let now = Instant::now();
            if now >= deadline || st.finished {
                return Err(Error::PendingAfterTimeout {
                    backend: format!("{}#fusion", self.backend),
                    pending: target - st.flushed,
                    timeout: self.cfg.timeout,
                });
            }
            st = self.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
        Ok(())
    }

    /// Drain, then stop the fusion lane on every rank.
    pub fn shutdown(&self, deadline: Instant) -> Result<()> {
        let drained = self.drain(deadline);
        if self.leader {
            let _ = self.cmd_tx.send(Command::Stop);
        }
        let mut st = self.state.lock().unwrap();
        while !st.finished {
            let now = Instant::now();
            if now >= deadline {
                self.abort.store(true, Ordering::SeqCst);
                return drained.and(Err(Error::PendingAfterTimeout {
                    backend: format!("{}#fusion", self.backend),
                    pending: st.posted - st.flushed,
                    timeout: Duration::ZERO,
                }));
            }
            st = self.cv.wait_timeout(st, deadline - now).unwrap().0;
        }
        drop(st);
        if let Some(t) = self.thread.lock().unwrap().take() {
            let _ = t.join();
        }
        drained
    }

    /// Abandon the lane without draining (runtime dropped).
    pub fn abort(&self) {
        self.abort.store(true, Ordering::SeqCst);
        if self.leader {
            let _ = self.cmd_tx.send(Command::Stop);
        }
    }

    fn next_command(&self, ctx: &LaneCtx, rx: &Receiver<Command>, ordinal: u64) -> Result<Command> {
        let t = &*ctx.transport;
        if self.leader {
            let cmd = rx.recv().unwrap_or(Command::Stop);
            let body = cmd.encode();
            for peer in 1..t.world_size() {
                t.send_frame(peer, WireFrame::new(FrameKind::CollectiveHeader, ordinal, body.clone()))?;
            }
            return Ok(cmd);
        }
        loop {
            if self.abort.load(Ordering::SeqCst) {
                return Ok(Command::Stop);
            }
            match t.recv_frame(0, Instant::now() + POLL) {
                Ok(frame) => {
                    if frame.kind != FrameKind::CollectiveHeader || frame.seq != ordinal {
                        return Err(Error::OrderMismatch(format!(
                            "fusion lane expected command {ordinal}, got {:?} seq {}",
                            frame.kind, frame.seq
                        )));
                    }
                    return Command::decode(&frame.payload);
                }
                Err(Error::Timeout(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    fn lane(self: Arc<Self>, mut ctx: LaneCtx, rx: Receiver<Command>) {
        let mut ordinal = 0u64;
        loop {
            let cmd = match self.next_command(&ctx, &rx, ordinal) {
                Ok(c) => c,
                Err(e) => {
                    log::error!("{} fusion lane stopped: {e}", self.backend);
                    self.fail_all(e);
                    break;
                }
            };
            ordinal += 1;
            match cmd {
                Command::Stop => break,
                Command::Flush(counts) => self.flush(&mut ctx, &counts),
            }
        }
        let mut st = self.state.lock().unwrap();
        st.finished = true;
        self.cv.notify_all();
    }

    fn fail_all(&self, e: Error) {
        let mut st = self.state.lock().unwrap();
        for q in &mut st.queues {
            for m in q.drain(..) {
                m.slot.finish(Err(e.clone()));
            }
        }
        st.flushed = st.posted;
        self.cv.notify_all();
    }

    fn take_members(&self, counts: &[u64], deadline: Instant) -> Result<Vec<(usize, Vec<Member>)>> {
        let mut st = self.state.lock().unwrap();
        loop {
            let ready = (0..KEYS).all(|k| st.queues[k].len() as u64 >= counts[k]);
            if ready {
                break;
            }
            let now = Instant::now();
            if now >= deadline || self.abort.load(Ordering::SeqCst) {
                return Err(Error::Timeout(self.cfg.timeout));
            }
            st = self.cv.wait_timeout(st, (deadline - now).min(POLL)).unwrap().0;
        }
        Ok((0..KEYS)
            .filter(|&k| counts[k] > 0)
            .map(|k| (k, st.queues[k].drain(..counts[k] as usize).collect()))
            .collect())
    }

    fn flush(&self, ctx: &mut LaneCtx, counts: &[u64]) {
        let groups = match self.take_members(counts, Instant::now() + ctx.timeout) {
            Ok(g) => g,
            Err(e) => {
                log::error!("{}: fused members never arrived: {e}", self.backend);
                return;
            }
        };
        let work: Vec<(DType, ReduceOp, Vec<Member>)> = groups
            .into_iter()
            .flat_map(|(k, members)| {
                let (dtype, op) = key_parts(k);
                self.chunks(members).into_iter().map(move |c| (dtype, op, c))
            })
            .collect();
        let done: u64 = work.iter().map(|w| w.2.len() as u64).sum();
        // Counted before members complete, so a waiter sees final stats.
        {
            let mut st = self.state.lock().unwrap();
            st.stats.flushes += 1;
            st.stats.collectives += work.len() as u64;
        }
        for (dtype, op, chunk) in work {
            self.run_chunk(ctx, dtype, op, chunk);
        }
        let mut st = self.state.lock().unwrap();
        st.flushed += done;
        self.cv.notify_all();
    }

    fn chunks(&self, members: Vec<Member>) -> Vec<Vec<Member>> {
        let mut out: Vec<Vec<Member>> = Vec::new();
        let mut bytes = 0;
        for m in members {
            let b = m.data.byte_len();
            match out.last_mut() {
                Some(cur) if bytes + b <= self.cfg.max_bytes => {
                    bytes += b;
                    cur.push(m);
                }
                _ => {
                    bytes = b;
                    out.push(vec![m]);
                }
            }
        }
        out
    }

    fn run_chunk(&self, ctx: &mut LaneCtx, dtype: DType, op: ReduceOp, chunk: Vec<Member>) {
        for m in &chunk {
            m.slot.start();
        }
        let mut packed = Vec::with_capacity(chunk.iter().map(|m| m.data.byte_len()).sum());
        for m in &chunk {
            packed.extend_from_slice(m.data.as_bytes());
        }
        let fused = Buffer::from_bytes(dtype, packed).expect("packed whole elements");
        let mut req = CommRequest::all_reduce(fused, op);
        req.seq = ctx.ordinal;
        match ctx.run(&req, true) {
            Ok(out) => {
                let out = out.into_buffer();
                let mut off = 0;
                for m in chunk {
                    let n = m.data.count();
                    let part = Buffer::from_bytes(dtype, out.elements(off, n).to_vec()).expect("whole elements");
                    off += n;
                    m.slot.finish(Ok(Payload::One(part)));
                }
            }
            Err(e) => {
                for m in chunk {
                    m.slot.finish(Err(e.clone()));
                }
            }
        }
    }
}
