//! Work handles and lane completion tracking.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::request::Payload;

#[derive(Debug, Clone, PartialEq)]
pub enum HandleState {
    Posted,
    InProgress,
    Complete,
    Failed(Error),
}

impl HandleState {
    fn rank(&self) -> u8 {
        match self {
            HandleState::Posted => 0,
            HandleState::InProgress => 1,
            HandleState::Complete | HandleState::Failed(_) => 2,
        }
    }

    pub fn is_done(&self) -> bool {
        self.rank() == 2
    }
}

struct SlotInner {
    state: HandleState,
    output: Option<Payload>,
}

/// Shared completion cell between a handle and whoever executes the op.
pub(crate) struct Slot {
    inner: Mutex<SlotInner>,
    cv: Condvar,
}

impl Slot {
    pub fn new() -> Arc<Self> {
        Arc::new(Slot {
            inner: Mutex::new(SlotInner {
                state: HandleState::Posted,
                output: None,
            }),
            cv: Condvar::new(),
        })
    }

    /// Move forward to `next`; backward transitions are ignored.
    fn advance(&self, next: HandleState, output: Option<Payload>) {
        let mut inner = self.inner.lock().unwrap();
        if next.rank() <= inner.state.rank() {
            return;
        }
        inner.state = next;
        inner.output = output;
        self.cv.notify_all();
    }

    pub fn start(&self) {
        self.advance(HandleState::InProgress, None);
    }

    pub fn finish(&self, result: Result<Payload>) {
        match result {
            Ok(p) => self.advance(HandleState::Complete, Some(p)),
            Err(e) => self.advance(HandleState::Failed(e), None),
        }
    }

    pub fn state(&self) -> HandleState {
        self.inner.lock().unwrap().state.clone()
    }

    /// Block until done. Returns the error if the op failed.
    pub fn block(&self) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        while !inner.state.is_done() {
            inner = self.cv.wait(inner).unwrap();
        }
        match &inner.state {
            HandleState::Failed(e) => Err(e.clone()),
            _ => Ok(()),
        }
    }

    fn take(&self) -> Result<Payload> {
        self.block()?;
        Ok(self.inner.lock().unwrap().output.take().unwrap_or(Payload::None))
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Completion token for one posted operation.
///
/// `wait` consumes the handle and hands back the operation's output
/// buffers; `test` can be called any number of times.
pub struct WorkHandle {
    id: u64,
    backend: String,
    slot: Arc<Slot>,
}

impl WorkHandle {
    pub(crate) fn new(backend: &str, slot: Arc<Slot>) -> Self {
        WorkHandle {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            backend: backend.to_string(),
            slot,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn backend(&self) -> &str {
        &self.backend
    }

    pub fn state(&self) -> HandleState {
        self.slot.state()
    }

    /// True once the operation has completed or failed. Never blocks.
    pub fn test(&self) -> bool {
        self.slot.state().is_done()
    }

    /// Block until the operation finishes and return its output.
    pub fn wait(self) -> Result<Payload> {
        self.slot.take()
    }

    /// Block until the operation finishes without collecting its output.
    pub fn block(&self) -> Result<()> {
        self.slot.block()
    }
}

impl fmt::Debug for WorkHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorkHandle")
            .field("id", &self.id)
            .field("backend", &self.backend)
            .field("state", &self.state())
            .finish()
    }
}

/// Posted/completed counters of one progress lane.
#[derive(Default)]
pub(crate) struct LaneProgress {
    posted: AtomicU64,
    completed: Mutex<u64>,
    cv: Condvar,
}

impl LaneProgress {
    pub fn post(&self) -> u64 {
        self.posted.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn complete_one(&self) {
        let mut done = self.completed.lock().unwrap();
        *done += 1;
        self.cv.notify_all();
    }

    pub fn posted(&self) -> u64 {
        self.posted.load(Ordering::SeqCst)
    }

    pub fn completed(&self) -> u64 {
        *self.completed.lock().unwrap()
    }

    /// Block until `target` ops have completed or `deadline` passes.
    pub fn wait_for(&self, target: u64, deadline: Instant) -> bool {
        let mut done = self.completed.lock().unwrap();
        while *done < target {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            done = self.cv.wait_timeout(done, deadline - now).unwrap().0;
        }
        true
    }
}

/// Marker recorded in a lane: satisfied once everything posted before it
/// has finished.
#[derive(Clone)]
pub struct CompletionEvent {
    target: u64,
    progress: Arc<LaneProgress>,
}

impl CompletionEvent {
    pub(crate) fn record(progress: &Arc<LaneProgress>) -> Self {
        CompletionEvent {
            target: progress.posted(),
            progress: Arc::clone(progress),
        }
    }

    pub fn is_satisfied(&self) -> bool {
        self.progress.completed() >= self.target
    }

    /// Wait until satisfied; false if `deadline` passed first.
    pub fn wait_until(&self, deadline: Instant) -> bool {
        self.progress.wait_for(self.target, deadline)
    }

    pub(crate) fn outstanding(&self) -> u64 {
        self.target.saturating_sub(self.progress.completed())
    }
}
