use std::time::Instant;

use crate::error::{Error, Result};
use crate::middleware::compression::Codec;
use crate::transport::{FrameKind, Transport, WireFrame};

/// Point-to-point view of one collective in flight on a backend lane.
#[derive(Clone, Copy)]
pub(crate) struct Exchange<'a> {
    pub transport: &'a dyn Transport,
    pub rank: usize,
    pub size: usize,
    /// Per-backend ordinal of this collective; stamped on every frame.
    pub seq: u64,
    pub deadline: Instant,
    /// Payload codec; payloads are whole f32 elements when set.
    pub codec: Option<Codec>,
}

impl<'a> Exchange<'a> {
    pub fn new(transport: &'a dyn Transport, seq: u64, deadline: Instant) -> Self {
        Exchange {
            rank: transport.rank(),
            size: transport.world_size(),
            transport,
            seq,
            deadline,
            codec: None,
        }
    }

    pub fn send(&self, dst: usize, bytes: Vec<u8>) -> Result<()> {
        debug_assert_ne!(dst, self.rank);
        let bytes = match self.codec {
            Some(c) => c.compress(&bytes),
            None => bytes,
        };
        self.transport
            .send_frame(dst, WireFrame::new(FrameKind::Payload, self.seq, bytes))
    }

    pub fn send_control(&self, dst: usize, bytes: Vec<u8>) -> Result<()> {
        self.transport.send_frame(
            dst,
            WireFrame::new(FrameKind::CollectiveHeader, self.seq, bytes),
        )
    }

    fn recv_kind(&self, src: usize, kind: FrameKind) -> Result<WireFrame> {
        let frame = self.transport.recv_frame(src, self.deadline)?;
        if frame.kind != kind {
            return Err(Error::OrderMismatch(format!(
                "rank {} expected {kind:?} frame from rank {src} at seq {}, got {:?} (seq {})",
                self.rank, self.seq, frame.kind, frame.seq
            )));
        }
        if frame.seq != self.seq {
            return Err(Error::OrderMismatch(format!(
                "rank {} at seq {} received seq {} from rank {src}",
                self.rank, self.seq, frame.seq
            )));
        }
        Ok(frame)
    }

    pub fn recv(&self, src: usize, len: usize) -> Result<Vec<u8>> {
        let frame = self.recv_kind(src, FrameKind::Payload)?;
        let wire_len = match self.codec {
            Some(c) => c.wire_len(len),
            None => len,
        };
        if frame.payload.len() != wire_len {
            return Err(Error::LengthMismatch {
                expected: wire_len,
                actual: frame.payload.len(),
            });
        }
        match self.codec {
            Some(c) => c.decompress(&frame.payload, len),
            None => Ok(frame.payload),
        }
    }

    pub fn recv_into(&self, src: usize, out: &mut [u8]) -> Result<()> {
        let data = self.recv(src, out.len())?;
        out.copy_from_slice(&data);
        Ok(())
    }

    pub fn recv_control(&self, src: usize) -> Result<Vec<u8>> {
        Ok(self.recv_kind(src, FrameKind::CollectiveHeader)?.payload)
    }
}
