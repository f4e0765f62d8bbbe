//! Progress lanes: one executor thread per backend that performs all of
//! that backend's I/O, in posting order.

use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Sender};

use crate::collectives::{self, AlgorithmPolicy, Exchange};
use crate::error::{Error, Result};
use crate::handle::{CompletionEvent, LaneProgress, Slot};
use crate::middleware::{Codec, Logger};
use crate::request::{CommRequest, Payload};
use crate::transport::Transport;

/// Everything a lane needs to run requests on one transport.
pub(crate) struct LaneCtx {
    pub backend: String,
    pub transport: Arc<dyn Transport>,
    pub policy: AlgorithmPolicy,
    pub codec: Option<Codec>,
    pub timeout: Duration,
    pub logger: Arc<Logger>,
    /// Collectives run so far; stamped on headers and payload frames.
    pub ordinal: u64,
}

impl LaneCtx {
    pub fn run(&mut self, req: &CommRequest, fused: bool) -> Result<Payload> {
        let start = Instant::now();
        let ordinal = self.ordinal;
        if !req.kind.is_p2p() {
            self.ordinal += 1;
        }
        let mut ex = Exchange::new(&*self.transport, ordinal, start + self.timeout);
        ex.codec = self.codec;
        let out = collectives::execute(&ex, &self.policy, req).map_err(|e| match e {
            Error::Unsupported { op, .. } => Error::Unsupported {
                backend: self.backend.clone(),
                op,
            },
            e => e,
        })?;
        let bytes = req.message_bytes(self.transport.world_size());
        self.logger
            .emit(req.kind.as_str(), &self.backend, bytes, start, start.elapsed(), req.seq, fused);
        Ok(out)
    }
}

enum Job {
    Op { req: CommRequest, slot: Arc<Slot> },
    Stop,
}

pub(crate) struct Lane {
    tx: Sender<Job>,
    pub progress: Arc<LaneProgress>,
    failures: Arc<Mutex<Vec<Error>>>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl Lane {
    pub fn spawn(mut ctx: LaneCtx, rank: usize) -> Result<Lane> {
        let (tx, rx) = unbounded::<Job>();
        let progress = Arc::new(LaneProgress::default());
        let failures = Arc::new(Mutex::new(Vec::new()));
        let (p, f) = (Arc::clone(&progress), Arc::clone(&failures));
        let thread = thread::Builder::new()
            .name(format!("mcrdl-lane-{}-{rank}", ctx.backend))
            .spawn(move || {
                while let Ok(Job::Op { req, slot }) = rx.recv() {
                    slot.start();
                    let result = ctx.run(&req, false);
                    if let Err(e) = &result {
                        log::debug!("{} {} seq {} failed: {e}", ctx.backend, req.kind, req.seq);
                        f.lock().unwrap().push(e.clone());
                    }
                    slot.finish(result);
                    p.complete_one();
                }
            })?;
        Ok(Lane {
            tx,
            progress,
            failures,
            thread: Mutex::new(Some(thread)),
        })
    }

    /// Enqueue behind everything posted so far. Callers serialize this with
    /// sequence assignment.
    pub fn submit(&self, req: CommRequest, slot: Arc<Slot>) {
        self.progress.post();
        if self.tx.send(Job::Op { req, slot: Arc::clone(&slot) }).is_err() {
            slot.finish(Err(Error::BackendFinalized("lane stopped".into())));
            self.progress.complete_one();
        }
    }

    pub fn event(&self) -> CompletionEvent {
        CompletionEvent::record(&self.progress)
    }

    pub fn pending(&self) -> u64 {
        self.progress.posted() - self.progress.completed()
    }

    pub fn take_failures(&self) -> Vec<Error> {
        std::mem::take(&mut *self.failures.lock().unwrap())
    }

    /// Stop after the queued work; join only if `join`.
    pub fn stop(&self, join: bool) {
        let _ = self.tx.send(Job::Stop);
        if join {
            if let Some(t) = self.thread.lock().unwrap().take() {
                let _ = t.join();
            }
        }
    }
}
