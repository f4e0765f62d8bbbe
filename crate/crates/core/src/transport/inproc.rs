use std::sync::Arc;
use std::time::Instant;

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};

use super::{Transport, WireFrame};
use crate::error::{Error, Result};

/// A full mesh of unbounded FIFO channels between `world_size` thread ranks.
pub struct InprocFabric {
    world_size: usize,
    // Indexed by src * world_size + dst.
    links: Vec<(Sender<WireFrame>, Receiver<WireFrame>)>,
}

impl InprocFabric {
    pub fn new(world_size: usize) -> Arc<Self> {
        let links = (0..world_size * world_size).map(|_| unbounded()).collect();
        Arc::new(InprocFabric { world_size, links })
    }

    pub fn world_size(&self) -> usize {
        self.world_size
    }

    pub fn endpoint(self: &Arc<Self>, rank: usize) -> InprocTransport {
        assert!(rank < self.world_size, "rank {rank} outside fabric of {}", self.world_size);
        InprocTransport {
            rank,
            fabric: Arc::clone(self),
        }
    }

    fn link(&self, src: usize, dst: usize) -> &(Sender<WireFrame>, Receiver<WireFrame>) {
        &self.links[src * self.world_size + dst]
    }
}

pub struct InprocTransport {
    rank: usize,
    fabric: Arc<InprocFabric>,
}

impl Transport for InprocTransport {
    fn rank(&self) -> usize {
        self.rank
    }

    fn world_size(&self) -> usize {
        self.fabric.world_size
    }

    fn send_frame(&self, dst: usize, frame: WireFrame) -> Result<()> {
        self.fabric
            .link(self.rank, dst)
            .0
            .send(frame)
            .map_err(|_| Error::PeerDisconnected(dst))
    }

    fn recv_frame(&self, src: usize, deadline: Instant) -> Result<WireFrame> {
        let rx = &self.fabric.link(src, self.rank).1;
        match rx.recv_deadline(deadline) {
            Ok(f) => Ok(f),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(
                deadline.saturating_duration_since(Instant::now()),
            )),
            Err(RecvTimeoutError::Disconnected) => Err(Error::PeerDisconnected(src)),
        }
    }

    fn name(&self) -> &'static str {
        "inproc"
    }
}
