use std::sync::Arc;
use std::time::Instant;

use super::{sleep_until, CostShape, FrameKind, Transport, WireFrame};
use crate::error::Result;

/// Imposes `alpha + beta * len` on every payload frame before handing it to
/// the inner transport. Control frames (collective headers, bootstrap) pass
/// through unshaped so the cost model applies to data movement only.
pub struct ShapedTransport {
    inner: Arc<dyn Transport>,
    shape: CostShape,
}

impl ShapedTransport {
    pub fn new(inner: Arc<dyn Transport>, shape: CostShape) -> Self {
        ShapedTransport { inner, shape }
    }

    pub fn shape(&self) -> CostShape {
        self.shape
    }
}

/// Wrap `inner` with `shape`; a zero shape returns `inner` untouched.
pub fn shaped_wrap(inner: Arc<dyn Transport>, shape: CostShape) -> Arc<dyn Transport> {
    if shape.is_zero() {
        inner
    } else {
        Arc::new(ShapedTransport::new(inner, shape))
    }
}

impl Transport for ShapedTransport {
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    fn world_size(&self) -> usize {
        self.inner.world_size()
    }

    fn send_frame(&self, dst: usize, frame: WireFrame) -> Result<()> {
        if frame.kind == FrameKind::Payload {
            let due = Instant::now() + self.shape.cost(frame.payload.len());
            sleep_until(due);
        }
        self.inner.send_frame(dst, frame)
    }

    fn recv_frame(&self, src: usize, deadline: Instant) -> Result<WireFrame> {
        self.inner.recv_frame(src, deadline)
    }

    fn name(&self) -> &'static str {
        "shaped"
    }
}
