//! Backend registry, lifecycle and the user-facing communication API.

use std::collections::HashMap;
use std::env;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use crate::collectives::{Algorithm, AlgorithmPolicy};
use crate::dispatch::{self, TuningTable};
use crate::error::{Error, Result};
use crate::handle::{CompletionEvent, Slot, WorkHandle};
use crate::middleware::fusion::{FusionEngine, TimerSignal};
use crate::middleware::{Codec, FusionConfig, FusionStats, Logger};
use crate::request::CommRequest;
use crate::transport::tcp::TcpNode;
use crate::transport::{shaped_wrap, CostShape, InprocFabric, Transport};
use crate::types::{BackendId, Buffer, CommOpKind, ReduceOp};

pub(crate) mod lane;

use lane::{Lane, LaneCtx};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Ranks of one process that share in-process fabrics.
pub struct LocalWorld {
    size: usize,
    fabrics: Mutex<HashMap<String, Arc<InprocFabric>>>,
}

impl LocalWorld {
    pub fn new(size: usize) -> Arc<Self> {
        assert!(size > 0, "world size must be positive");
        Arc::new(LocalWorld {
            size,
            fabrics: Mutex::new(HashMap::new()),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn fabric(&self, name: &str) -> Arc<InprocFabric> {
        let mut map = self.fabrics.lock().unwrap();
        Arc::clone(map.entry(name.to_string()).or_insert_with(|| InprocFabric::new(self.size)))
    }
}

/// This rank's place in the process group.
#[derive(Clone)]
pub struct Group {
    rank: usize,
    world_size: usize,
    local: Option<Arc<LocalWorld>>,
    master: Option<String>,
    timeout: Duration,
}

impl Group {
    /// A thread rank of an in-process world.
    pub fn local(world: &Arc<LocalWorld>, rank: usize) -> Self {
        assert!(rank < world.size, "rank {rank} outside world of {}", world.size);
        Group {
            rank,
            world_size: world.size,
            local: Some(Arc::clone(world)),
            master: None,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    /// A process rank that rendezvouses through `master` (host:port).
    pub fn tcp(rank: usize, world_size: usize, master: impl Into<String>) -> Result<Self> {
        if world_size == 0 || rank >= world_size {
            return Err(Error::Config(format!("rank {rank} out of range for world size {world_size}")));
        }
        Ok(Group {
            rank,
            world_size,
            local: None,
            master: Some(master.into()),
            timeout: DEFAULT_TIMEOUT,
        })
    }

    /// Single-rank group.
    pub fn solo() -> Self {
        Group::local(&LocalWorld::new(1), 0)
    }

    /// Read `MCRDL_RANK`, `MCRDL_WORLD_SIZE`, `MCRDL_MASTER_ADDR`,
    /// `MCRDL_MASTER_PORT` and `MCRDL_TIMEOUT_SECS`. Without a world size
    /// the group is a single rank.
    pub fn from_env() -> Result<Self> {
        let num = |name: &str| -> Result<Option<u64>> {
            match env::var(name) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::Config(format!("{name}={v} is not a number"))),
                Err(_) => Ok(None),
            }
        };
        let world = num("MCRDL_WORLD_SIZE")?.unwrap_or(1) as usize;
        let rank = num("MCRDL_RANK")?.unwrap_or(0) as usize;
        let mut group = if world == 1 && rank == 0 {
            Group::solo()
        } else {
            let addr = env::var("MCRDL_MASTER_ADDR").unwrap_or_else(|_| "127.0.0.1".into());
            let port = num("MCRDL_MASTER_PORT")?
                .ok_or_else(|| Error::Config("MCRDL_MASTER_PORT is required when MCRDL_WORLD_SIZE > 1".into()))?;
            Group::tcp(rank, world, format!("{addr}:{port}"))?
        };
        if let Some(secs) = num("MCRDL_TIMEOUT_SECS")? {
            group.timeout = Duration::from_secs(secs.max(1));
        }
        Ok(group)
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn world_size(&self) -> usize {
        self.world_size
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    /// Whatever the group provides: inproc for thread worlds, tcp otherwise.
    #[default]
    Default,
    Inproc,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(TransportKind::Default),
            "inproc" => Ok(TransportKind::Inproc),
            "tcp" => Ok(TransportKind::Tcp),
            other => Err(Error::UnknownTransport(other.into())),
        }
    }
}

/// A backend to register: transport, algorithm policy and middleware.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendSpec {
    pub id: BackendId,
    pub transport: TransportKind,
    pub policy: AlgorithmPolicy,
    pub shape: Option<CostShape>,
    pub fusion: Option<FusionConfig>,
    pub compression: Option<Codec>,
}

impl BackendSpec {
    pub fn new(id: &str) -> Result<Self> {
        Ok(BackendSpec {
            id: BackendId::new(id)?,
            transport: TransportKind::Default,
            policy: AlgorithmPolicy::default(),
            shape: None,
            fusion: None,
            compression: None,
        })
    }

    pub fn transport(mut self, t: TransportKind) -> Self {
        self.transport = t;
        self
    }

    pub fn policy(mut self, p: AlgorithmPolicy) -> Self {
        self.policy = p;
        self
    }

    pub fn shaped(mut self, alpha_s: f64, beta_s_per_byte: f64) -> Result<Self> {
        self.shape = Some(CostShape::new(alpha_s, beta_s_per_byte)?);
        Ok(self)
    }

    pub fn fusion(mut self, cfg: FusionConfig) -> Self {
        self.fusion = Some(cfg);
        self
    }

    pub fn compression(mut self, codec: Codec) -> Self {
        self.compression = Some(codec);
        self
    }
}

fn parse_duration(s: &str) -> Result<Duration> {
    let bad = || Error::Config(format!("bad duration `{s}` (use e.g. 5ms, 100us, 1s)"));
    let (num, scale) = if let Some(v) = s.strip_suffix("ms") {
        (v, 1e-3)
    } else if let Some(v) = s.strip_suffix("us") {
        (v, 1e-6)
    } else if let Some(v) = s.strip_suffix('s') {
        (v, 1.0)
    } else {
        (s, 1.0)
    };
    let v: f64 = num.parse().map_err(|_| bad())?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(bad());
    }
    Ok(Duration::from_secs_f64(v * scale))
}

/// `id[:key=value]...` with keys `transport`, `policy`, `alpha`, `beta`
/// (seconds, seconds/byte), `algo.<op>`, `fusion=<bytes>/<duration>` and
/// `compress=trunc16`.
impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let mut spec = BackendSpec::new(parts.next().unwrap_or_default())?;
        let (mut alpha, mut beta) = (0.0, 0.0);
        for part in parts {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`{part}` in `{s}` is not key=value")))?;
            let float = || v.parse::<f64>().map_err(|_| Error::Config(format!("{k}={v} is not a number")));
            match k {
                "transport" => spec.transport = v.parse()?,
                "policy" => spec.policy = AlgorithmPolicy::preset(v)?,
                "alpha" => alpha = float()?,
                "beta" => beta = float()?,
                "compress" => spec.compression = Some(v.parse()?),
                "fusion" => {
                    let (b, t) = v
                        .split_once('/')
                        .ok_or_else(|| Error::Config(format!("fusion={v}: expected <bytes>/<duration>")))?;
                    let b = crate::cli::parse_size(b)?;
                    spec.fusion = Some(FusionConfig::new(b, parse_duration(t)?)?);
                }
                _ => match k.strip_prefix("algo.") {
                    Some(op) => {
                        let kind: CommOpKind = op.parse()?;
                        let algo: Algorithm = v.parse()?;
                        spec.policy = spec.policy.with(kind, algo)?;
                    }
                    None => return Err(Error::Config(format!("unknown backend option `{k}`"))),
                },
            }
        }
        if alpha != 0.0 || beta != 0.0 {
            spec.shape = Some(CostShape::new(alpha, beta)?);
        }
        Ok(spec)
    }
}

struct BackendInstance {
    spec: BackendSpec,
    lane: Lane,
    fusion: Option<Arc<FusionEngine>>,
    /// Next posting sequence number; the lock also orders lane submission.
    seq: Mutex<u64>,
    finalized: AtomicBool,
    rank: usize,
    size: usize,
}

impl BackendInstance {
    fn id(&self) -> &str {
        self.spec.id.as_str()
    }

    fn post(&self, mut req: CommRequest) -> Result<WorkHandle> {
        req.validate(self.rank, self.size)?;
        if !req.kind.is_p2p() && !self.spec.policy.supports(req.kind) {
            return Err(Error::Unsupported {
                backend: self.id().to_string(),
                op: req.kind.to_string(),
            });
        }
        let blocking = !req.async_op;
        let handle = match &self.fusion {
            Some(f) if f.config().eligible(&req) => {
                if self.finalized.load(Ordering::SeqCst) {
                    return Err(Error::BackendFinalized(self.id().into()));
                }
                f.post(req)
            }
            _ => {
                let slot = Slot::new();
                let mut seq = self.seq.lock().unwrap();
                if self.finalized.load(Ordering::SeqCst) {
                    return Err(Error::BackendFinalized(self.id().into()));
                }
                *seq += 1;
                req.seq = *seq;
                self.lane.submit(req, Arc::clone(&slot));
                drop(seq);
                WorkHandle::new(self.id(), slot)
            }
        };
        if blocking {
            handle.block()?;
        }
        Ok(handle)
    }

    /// Wait for everything posted so far, fused members included.
    fn drain(&self, deadline: Instant, timeout: Duration) -> Result<()> {
        let mut errors = Vec::new();
        if let Some(f) = &self.fusion {
            if let Err(e) = f.drain(deadline) {
                errors.push(e);
            }
        }
        let ev = self.lane.event();
        if !ev.wait_until(deadline) {
            errors.push(Error::PendingAfterTimeout {
                backend: self.id().into(),
                pending: ev.outstanding(),
                timeout,
            });
        }
        errors.extend(self.lane.take_failures());
        collapse(errors)
    }
}

fn collapse(mut errors: Vec<Error>) -> Result<()> {
    match errors.len() {
        0 => Ok(()),
        1 => Err(errors.pop().unwrap()),
        n => Err(Error::Multiple(n, errors)),
    }
}

/// One rank's handle on the runtime: the backend registry plus the
/// communication API.
///
/// Operations take a backend id (or `"auto"`), move their buffers in, and
/// return a [`WorkHandle`]. Blocking calls (`async_op = false`) return an
/// already completed handle; `wait` on it yields the output buffers.
pub struct Runtime {
    group: Group,
    registry: RwLock<Vec<Arc<BackendInstance>>>,
    table: RwLock<Option<TuningTable>>,
    logger: Arc<Logger>,
    timer: Arc<TimerSignal>,
    tcp: OnceLock<Arc<TcpNode>>,
}

impl Runtime {
    /// Register and start `backends`, in order.
    pub fn init(group: Group, backends: Vec<BackendSpec>) -> Result<Runtime> {
        let timer = Arc::new(TimerSignal::default());
        if group.rank == 0 {
            let t = Arc::clone(&timer);
            thread::Builder::new()
                .name("mcrdl-fusion-timer".into())
                .spawn(move || t.run())?;
        }
        let rt = Runtime {
            logger: Arc::new(Logger::new(group.rank)),
            group,
            registry: RwLock::new(Vec::new()),
            table: RwLock::new(None),
            timer,
            tcp: OnceLock::new(),
        };
        rt.add_backends(backends)?;
        Ok(rt)
    }

    /// Group and tuning table from the environment (`MCRDL_*`).
    pub fn from_env(backends: Vec<BackendSpec>) -> Result<Runtime> {
        let rt = Runtime::init(Group::from_env()?, backends)?;
        if let Ok(path) = env::var("MCRDL_TUNING_TABLE") {
            rt.set_tuning_table(dispatch::load_table(Path::new(&path))?);
        }
        Ok(rt)
    }

    /// Register more backends. Ids already registered are skipped; an id
    /// listed twice in `backends` is an error.
    pub fn add_backends(&self, backends: Vec<BackendSpec>) -> Result<()> {
        for (i, spec) in backends.iter().enumerate() {
            if backends[..i].iter().any(|b| b.id == spec.id) {
                return Err(Error::DuplicateBackend(spec.id.to_string()));
            }
        }
        for spec in backends {
            if self.find(spec.id.as_str()).is_ok() {
                log::debug!("backend {} already initialized", spec.id);
                continue;
            }
            let inst = self.start_backend(spec)?;
            self.registry.write().unwrap().push(Arc::new(inst));
        }
        Ok(())
    }

    fn transport_for(&self, spec: &BackendSpec, name: &str) -> Result<Arc<dyn Transport>> {
        let g = &self.group;
        let kind = match (spec.transport, &g.local) {
            (TransportKind::Default, Some(_)) => TransportKind::Inproc,
            (TransportKind::Default, None) => TransportKind::Tcp,
            (k, _) => k,
        };
        let raw: Arc<dyn Transport> = match kind {
            TransportKind::Inproc => {
                let world = match &g.local {
                    Some(w) => Arc::clone(w),
                    None if g.world_size == 1 => LocalWorld::new(1),
                    None => {
                        return Err(Error::UnknownTransport(
                            "inproc needs ranks that share one process".into(),
                        ))
                    }
                };
                Arc::new(world.fabric(name).endpoint(g.rank))
            }
            TransportKind::Tcp => {
                let master = match (&g.master, g.world_size) {
                    (Some(m), _) => m.clone(),
                    (None, 1) => "127.0.0.1:0".into(),
                    (None, _) => {
                        return Err(Error::UnknownTransport(
                            "tcp needs a master address (MCRDL_MASTER_ADDR/PORT)".into(),
                        ))
                    }
                };
                let node = match self.tcp.get() {
                    Some(n) => Arc::clone(n),
                    None => {
                        let n = TcpNode::bootstrap(g.rank, g.world_size, &master, g.timeout)?;
                        Arc::clone(self.tcp.get_or_init(|| n))
                    }
                };
                Arc::new(node.transport(name))
            }
            TransportKind::Default => unreachable!(),
        };
        Ok(match spec.shape {
            Some(s) => shaped_wrap(raw, s),
            None => raw,
        })
    }

    fn start_backend(&self, spec: BackendSpec) -> Result<BackendInstance> {
        let ctx = |name: &str| -> Result<LaneCtx> {
            Ok(LaneCtx {
                backend: spec.id.to_string(),
                transport: self.transport_for(&spec, name)?,
                policy: spec.policy.clone(),
                codec: spec.compression,
                timeout: self.group.timeout,
                logger: Arc::clone(&self.logger),
                ordinal: 0,
            })
        };
        let lane = Lane::spawn(ctx(spec.id.as_str())?, self.group.rank)?;
        let fusion = match spec.fusion {
            Some(cfg) => Some(FusionEngine::start(
                cfg,
                ctx(&format!("{}#fusion", spec.id))?,
                Arc::clone(&self.timer),
            )?),
            None => None,
        };
        Ok(BackendInstance {
            rank: self.group.rank,
            size: self.group.world_size,
            spec,
            lane,
            fusion,
            seq: Mutex::new(0),
            finalized: AtomicBool::new(false),
        })
    }

    fn find(&self, id: &str) -> Result<Arc<BackendInstance>> {
        self.registry
            .read()
            .unwrap()
            .iter()
            .find(|b| b.id() == id)
            .cloned()
            .ok_or_else(|| Error::UnknownBackend(id.into()))
    }

    /// Registered ids, or all of them for an empty list, in registry order.
    fn select(&self, ids: &[&str]) -> Result<Vec<Arc<BackendInstance>>> {
        for id in ids {
            self.find(id)?;
        }
        Ok(self
            .registry
            .read()
            .unwrap()
            .iter()
            .filter(|b| ids.is_empty() || ids.contains(&b.id()))
            .cloned()
            .collect())
    }

    /// Complete all pending work on `backends` (all if empty), stop their
    /// lanes, and refuse further posts. Finalizing twice is a no-op.
    pub fn finalize(&self, backends: &[&str]) -> Result<()> {
        let mut errors = Vec::new();
        for b in self.select(backends)? {
            {
                let _seq = b.seq.lock().unwrap();
                if b.finalized.swap(true, Ordering::SeqCst) {
                    continue;
                }
            }
            let deadline = Instant::now() + self.group.timeout;
            if let Some(f) = &b.fusion {
                if let Err(e) = f.shutdown(deadline) {
                    errors.push(e);
                }
            }
            if let Err(e) = b.drain(deadline, self.group.timeout) {
                errors.push(e);
            }
            b.lane.stop(b.lane.pending() == 0);
        }
        collapse(errors)
    }

    /// Wait, backend by backend in registry order, for all work posted
    /// before the call. Failures are collected across backends.
    pub fn synchronize(&self, backends: &[&str]) -> Result<()> {
        let deadline = Instant::now() + self.group.timeout;
        let mut errors = Vec::new();
        for b in self.select(backends)? {
            if let Err(e) = b.drain(deadline, self.group.timeout) {
                errors.push(e);
            }
        }
        collapse(errors)
    }

    /// Completion marker for everything posted to `backend` so far.
    pub fn record_event(&self, backend: &str) -> Result<CompletionEvent> {
        Ok(self.find(backend)?.lane.event())
    }

    /// Operations queued on `backend`'s lane and not yet finished.
    pub fn pending(&self, backend: &str) -> Result<u64> {
        Ok(self.find(backend)?.lane.pending())
    }

    pub fn fusion_stats(&self, backend: &str) -> Result<Option<FusionStats>> {
        Ok(self.find(backend)?.fusion.as_ref().map(|f| f.stats()))
    }

    pub fn get_backends(&self) -> Vec<String> {
        self.registry.read().unwrap().iter().map(|b| b.id().to_string()).collect()
    }

    pub fn get_size(&self, backend: &str) -> Result<usize> {
        Ok(self.find(backend)?.size)
    }

    pub fn get_rank(&self, backend: &str) -> Result<usize> {
        Ok(self.find(backend)?.rank)
    }

    pub fn rank(&self) -> usize {
        self.group.rank
    }

    pub fn world_size(&self) -> usize {
        self.group.world_size
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn logger(&self) -> &Logger {
        &self.logger
    }

    /// Record a [`LogRecord`](crate::middleware::LogRecord) per completed
    /// operation from now on.
    pub fn enable_logging(&self, on: bool) {
        self.logger.set_enabled(on);
    }

    pub fn flush_log(&self, path: &Path) -> Result<()> {
        self.logger.flush(path)
    }

    pub fn set_tuning_table(&self, table: TuningTable) {
        *self.table.write().unwrap() = Some(table);
    }

    pub fn tuning_table(&self) -> Option<TuningTable> {
        self.table.read().unwrap().clone()
    }

    /// Concrete backend that `req` would run on.
    pub fn resolve(&self, req: &CommRequest) -> Result<String> {
        if req.backend != BackendId::AUTO {
            return Ok(req.backend.clone());
        }
        let registered = self.get_backends();
        let bytes = req.message_bytes(self.group.world_size);
        match &*self.table.read().unwrap() {
            Some(t) => dispatch::route(t, req.kind, self.group.world_size, bytes, &registered),
            None => registered
                .first()
                .cloned()
                .ok_or_else(|| Error::UnroutableRequest("no backends registered".into())),
        }
    }

    /// Direct handle on one backend, bypassing dispatch.
    pub fn backend(&self, id: &str) -> Result<Backend> {
        Ok(Backend(self.find(id)?))
    }

    /// Validate, route and enqueue `req`.
    pub fn post(&self, req: CommRequest) -> Result<WorkHandle> {
        let id = self.resolve(&req)?;
        self.find(&id)?.post(req)
    }

    pub fn test(&self, handle: &WorkHandle) -> bool {
        handle.test()
    }

    pub fn wait(&self, handle: WorkHandle) -> Result<crate::request::Payload> {
        handle.wait()
    }

    pub fn send(&self, backend: &str, t: Buffer, dst: usize, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::send(t, dst).on(backend).async_op(async_op))
    }

    pub fn recv(&self, backend: &str, t: Buffer, src: usize, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::recv(t, src).on(backend).async_op(async_op))
    }

    pub fn bcast(&self, backend: &str, t: Buffer, root: usize, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::bcast(t, root).on(backend).async_op(async_op))
    }

    pub fn reduce(&self, backend: &str, t: Buffer, root: usize, op: ReduceOp, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::reduce(t, root, op).on(backend).async_op(async_op))
    }

    pub fn all_reduce(&self, backend: &str, t: Buffer, op: ReduceOp, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::all_reduce(t, op).on(backend).async_op(async_op))
    }

    pub fn gather(&self, backend: &str, output: Buffer, input: Buffer, root: usize, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::gather(output, input, root).on(backend).async_op(async_op))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn gatherv(
        &self,
        backend: &str,
        output: Buffer,
        input: Buffer,
        root: usize,
        rcounts: Vec<usize>,
        displs: Vec<usize>,
        async_op: bool,
    ) -> Result<WorkHandle> {
        self.post(CommRequest::gatherv(output, input, root, rcounts, displs).on(backend).async_op(async_op))
    }

    pub fn scatter(&self, backend: &str, output: Buffer, input: Buffer, root: usize, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::scatter(output, input, root).on(backend).async_op(async_op))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn scatterv(
        &self,
        backend: &str,
        output: Buffer,
        input: Buffer,
        root: usize,
        scounts: Vec<usize>,
        displs: Vec<usize>,
        async_op: bool,
    ) -> Result<WorkHandle> {
        self.post(CommRequest::scatterv(output, input, root, scounts, displs).on(backend).async_op(async_op))
    }

    pub fn all_gather(&self, backend: &str, output: Buffer, input: Buffer, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::all_gather(output, input).on(backend).async_op(async_op))
    }

    pub fn all_gatherv(
        &self,
        backend: &str,
        output: Buffer,
        input: Buffer,
        rcounts: Vec<usize>,
        displs: Vec<usize>,
        async_op: bool,
    ) -> Result<WorkHandle> {
        self.post(CommRequest::all_gatherv(output, input, rcounts, displs).on(backend).async_op(async_op))
    }

    pub fn reduce_scatter(&self, backend: &str, output: Buffer, input: Buffer, op: ReduceOp, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::reduce_scatter(output, input, op).on(backend).async_op(async_op))
    }

    pub fn all_to_all_single(&self, backend: &str, output: Buffer, input: Buffer, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::all_to_all_single(output, input).on(backend).async_op(async_op))
    }

    pub fn all_to_all(&self, backend: &str, outputs: Vec<Buffer>, inputs: Vec<Buffer>, async_op: bool) -> Result<WorkHandle> {
        self.post(CommRequest::all_to_all(outputs, inputs).on(backend).async_op(async_op))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn all_to_allv(
        &self,
        backend: &str,
        output: Buffer,
        input: Buffer,
        scounts: Vec<usize>,
        rcounts: Vec<usize>,
        sdispls: Vec<usize>,
        rdispls: Vec<usize>,
        async_op: bool,
    ) -> Result<WorkHandle> {
        self.post(
            CommRequest::all_to_allv(output, input, scounts, rcounts, sdispls, rdispls)
                .on(backend)
                .async_op(async_op),
        )
    }
}

impl Drop for Runtime {
    fn drop(&mut self) {
        self.timer.shutdown();
        for b in self.registry.read().unwrap().iter() {
            if let Some(f) = &b.fusion {
                f.abort();
            }
            b.lane.stop(false);
        }
    }
}

/// A registered backend addressed directly; requests skip routing.
#[derive(Clone)]
pub struct Backend(Arc<BackendInstance>);

impl Backend {
    pub fn id(&self) -> &str {
        self.0.id()
    }

    pub fn spec(&self) -> &BackendSpec {
        &self.0.spec
    }

    pub fn post(&self, req: CommRequest) -> Result<WorkHandle> {
        self.0.post(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_grammar() {
        let s: BackendSpec = "slow:transport=inproc:policy=tree:alpha=1e-4:beta=1e-9:algo.all_reduce=ring"
            .parse()
            .unwrap();
        assert_eq!(s.id.as_str(), "slow");
        assert_eq!(s.transport, TransportKind::Inproc);
        assert_eq!(s.policy.algorithm(CommOpKind::AllReduce), Some(Algorithm::Ring));
        assert_eq!(s.policy.algorithm(CommOpKind::AllToAll), Some(Algorithm::Bruck));
        assert_eq!(s.shape, Some(CostShape::new(1e-4, 1e-9).unwrap()));
        let f: BackendSpec = "f:fusion=8K/5ms:compress=trunc16".parse().unwrap();
        assert_eq!(f.fusion.unwrap().max_bytes, 8192);
        assert_eq!(f.fusion.unwrap().timeout, Duration::from_millis(5));
        assert_eq!(f.compression, Some(Codec::Trunc16));
        assert!("auto".parse::<BackendSpec>().is_err());
        assert!("a:bogus=1".parse::<BackendSpec>().is_err());
        assert!("a:transport=rdma".parse::<BackendSpec>().is_err());
    }

    #[test]
    fn solo_runtime_basics() {
        let rt = Runtime::init(Group::solo(), vec![BackendSpec::new("a").unwrap()]).unwrap();
        assert_eq!(rt.get_backends(), vec!["a"]);
        assert_eq!(rt.get_size("a").unwrap(), 1);
        assert_eq!(rt.get_rank("a").unwrap(), 0);
        assert_eq!(rt.get_size("zz").unwrap_err().kind(), "UnknownBackend");
        let out = rt
            .all_reduce("a", Buffer::from_slice(&[5i64]), ReduceOp::Sum, false)
            .unwrap()
            .wait()
            .unwrap();
        assert_eq!(out.into_buffer().to_vec::<i64>(), vec![5]);
        rt.finalize(&["a"]).unwrap();
        rt.finalize(&["a"]).unwrap();
        let err = rt.all_reduce("a", Buffer::from_slice(&[5i64]), ReduceOp::Sum, false).unwrap_err();
        assert_eq!(err.kind(), "BackendFinalized");
        assert_eq!(rt.finalize(&["nope"]).unwrap_err().kind(), "UnknownBackend");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = BackendSpec::new("x").unwrap();
        let r = Runtime::init(Group::solo(), vec![a.clone(), a]);
        assert_eq!(r.err().unwrap().kind(), "DuplicateBackend");
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration("5ms").unwrap(), Duration::from_millis(5));
        assert_eq!(parse_duration("100us").unwrap(), Duration::from_micros(100));
        assert_eq!(parse_duration("2").unwrap(), Duration::from_secs(2));
        assert!(parse_duration("x").is_err());
    }
}
