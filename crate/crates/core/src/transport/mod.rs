//! Point-to-point byte movement between ranks.
//!
//! A [`Transport`] moves [`WireFrame`]s between ranks with FIFO order per
//! directed pair. Two implementations exist: [`inproc`] (ranks are threads
//! sharing a fabric of channels) and [`tcp`] (ranks are processes or threads
//! talking over sockets). [`shaped`] wraps either one to impose an
//! alpha-beta cost on every payload frame.

use std::io::Read;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod inproc;
pub mod shaped;
pub mod tcp;

pub use inproc::{InprocFabric, InprocTransport};
pub use shaped::{shaped_wrap, ShapedTransport};
pub use tcp::{bootstrap, TcpNode, TcpTransport};

pub const FRAME_MAGIC: [u8; 4] = *b"MCDL";
pub const FRAME_VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    Payload = 0,
    CollectiveHeader = 1,
    Bootstrap = 2,
}

impl FrameKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(FrameKind::Payload),
            1 => Ok(FrameKind::CollectiveHeader),
            2 => Ok(FrameKind::Bootstrap),
            other => Err(Error::Serialization(format!("unknown frame kind {other}"))),
        }
    }
}

/// One framed message: `"MCDL" | version | kind | seq (u64 LE) | len (u64 LE) | payload`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub kind: FrameKind,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl WireFrame {
    pub fn new(kind: FrameKind, seq: u64, payload: Vec<u8>) -> Self {
        WireFrame { kind, seq, payload }
    }

    pub fn wire_len(&self) -> usize {
        FRAME_HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.header_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub(crate) fn header_bytes(&self) -> [u8; FRAME_HEADER_LEN] {
        let mut h = [0u8; FRAME_HEADER_LEN];
        h[0..4].copy_from_slice(&FRAME_MAGIC);
        h[4] = FRAME_VERSION;
        h[5] = self.kind as u8;
        h[6..14].copy_from_slice(&self.seq.to_le_bytes());
        h[14..22].copy_from_slice(&(self.payload.len() as u64).to_le_bytes());
        h
    }

    /// Parse a fixed header, returning the frame skeleton and payload length.
    pub fn decode_header(h: &[u8; FRAME_HEADER_LEN]) -> Result<(FrameKind, u64, u64)> {
        if h[0..4] != FRAME_MAGIC {
            return Err(Error::Serialization(format!("bad magic {:?}", &h[0..4])));
        }
        if h[4] != FRAME_VERSION {
            return Err(Error::Serialization(format!("unsupported version {}", h[4])));
        }
        let kind = FrameKind::from_u8(h[5])?;
        let seq = u64::from_le_bytes(h[6..14].try_into().unwrap());
        let len = u64::from_le_bytes(h[14..22].try_into().unwrap());
        Ok((kind, seq, len))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header: &[u8; FRAME_HEADER_LEN] = bytes
            .get(..FRAME_HEADER_LEN)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| Error::Serialization("truncated frame header".into()))?;
        let (kind, seq, len) = Self::decode_header(header)?;
        let body = &bytes[FRAME_HEADER_LEN..];
        if body.len() as u64 != len {
            return Err(Error::Serialization(format!(
                "payload_len {len} but {} bytes follow",
                body.len()
            )));
        }
        Ok(WireFrame::new(kind, seq, body.to_vec()))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut header = [0u8; FRAME_HEADER_LEN];
        r.read_exact(&mut header)?;
        let (kind, seq, len) = Self::decode_header(&header)?;
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)?;
        Ok(WireFrame::new(kind, seq, payload))
    }
}

/// Alpha-beta cost of a message: `alpha + beta * bytes` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostShape {
    pub alpha: f64,
    pub beta: f64,
}

impl CostShape {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let shape = CostShape { alpha, beta };
        shape.check()?;
        Ok(shape)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "cost shape needs finite alpha, beta >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn cost(&self, bytes: usize) -> Duration {
        Duration::from_secs_f64(self.alpha + self.beta * bytes as f64)
    }

    pub fn is_zero(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub rank: usize,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankAddressBook {
    pub world_size: usize,
    pub endpoints: Vec<Endpoint>,
}

impl RankAddressBook {
    pub fn address(&self, rank: usize) -> Option<&str> {
        self.endpoints.get(rank).map(|e| e.address.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("address book serializes")
    }
}

/// Ordered frame delivery between ranks of one backend.
pub trait Transport: Send + Sync {
    fn rank(&self) -> usize;
    fn world_size(&self) -> usize;

    /// Hand `frame` to the channel towards `dst`. Returns once the frame is
    /// enqueued (inproc) or written to the socket (tcp).
    fn send_frame(&self, dst: usize, frame: WireFrame) -> Result<()>;

    /// Next frame from `src` in FIFO order, waiting at most until `deadline`.
    fn recv_frame(&self, src: usize, deadline: Instant) -> Result<WireFrame>;

    /// Short label for logs (`inproc`, `tcp`, ...).
    fn name(&self) -> &'static str;
}

fn check_peer(t: &dyn Transport, peer: usize) -> Result<()> {
    if peer >= t.world_size() || peer == t.rank() {
        return Err(Error::InvalidDestination {
            rank: peer,
            me: t.rank(),
            world_size: t.world_size(),
        });
    }
    Ok(())
}

/// Send raw bytes to `dst` as a payload frame.
pub fn p2p_send(t: &dyn Transport, dst: usize, seq: u64, bytes: Vec<u8>) -> Result<()> {
    check_peer(t, dst)?;
    t.send_frame(dst, WireFrame::new(FrameKind::Payload, seq, bytes))
}

/// Receive the next payload frame from `src`, which must carry exactly
/// `expected_len` bytes.
pub fn p2p_recv(t: &dyn Transport, src: usize, expected_len: usize, deadline: Instant) -> Result<Vec<u8>> {
    check_peer(t, src)?;
    let frame = t.recv_frame(src, deadline)?;
    if frame.kind != FrameKind::Payload {
        return Err(Error::OrderMismatch(format!(
            "expected payload from rank {src}, got {:?} frame",
            frame.kind
        )));
    }
    if frame.payload.len() != expected_len {
        return Err(Error::LengthMismatch {
            expected: expected_len,
            actual: frame.payload.len(),
        });
    }
    Ok(frame.payload)
}

/// Sleep until `deadline` with tight wakeup.
///
/// The default Linux timer slack adds ~50 µs to every sleep, which swamps
/// microsecond-scale cost shapes, so it is reduced for the calling thread.
pub(crate) fn sleep_until(deadline: Instant) {
    thread_local! {
        static SLACK_SET: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
    }
    SLACK_SET.with(|set| {
        if !set.get() {
            #[cfg(target_os = "linux")]
            // SAFETY: PR_SET_TIMERSLACK only changes this thread's timer slack.
            unsafe {
                libc::prctl(libc::PR_SET_TIMERSLACK, 1 as libc::c_ulong, 0, 0, 0);
            }
            set.set(true);
        }
    });
    let now = Instant::now();
    if deadline > now {
        std::thread::sleep(deadline - now);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_frame_is_22_bytes() {
        let f = WireFrame::new(FrameKind::Payload, 7, vec![]);
        let bytes = f.encode();
        assert_eq!(bytes.len(), 22);
        assert_eq!(&bytes[0..4], b"MCDL");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 0);
        assert_eq!(&bytes[6..14], &7u64.to_le_bytes());
        assert_eq!(&bytes[14..22], &0u64.to_le_bytes());
        assert_eq!(WireFrame::decode(&bytes).unwrap(), f);
    }

    #[test]
    fn frame_layout_is_little_endian() {
        let f = WireFrame::new(FrameKind::CollectiveHeader, 0x0102030405060708, vec![9, 8, 7]);
        let bytes = f.encode();
        assert_eq!(
            bytes,
            vec![
                b'M', b'C', b'D', b'L', 1, 1, 8, 7, 6, 5, 4, 3, 2, 1, 3, 0, 0, 0, 0, 0, 0, 0, 9, 8, 7
            ]
        );
        let mut cursor = std::io::Cursor::new(bytes);
        assert_eq!(WireFrame::read_from(&mut cursor).unwrap(), f);
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(WireFrame::decode(b"XXXX").is_err());
        let mut bytes = WireFrame::new(FrameKind::Payload, 0, vec![1]).encode();
        bytes[4] = 2;
        assert!(WireFrame::decode(&bytes).is_err());
        let mut bytes = WireFrame::new(FrameKind::Payload, 0, vec![1]).encode();
        bytes[5] = 9;
        assert!(WireFrame::decode(&bytes).is_err());
        let bytes = WireFrame::new(FrameKind::Payload, 0, vec![1, 2]).encode();
        assert!(WireFrame::decode(&bytes[..23]).is_err());
    }

    #[test]
    fn cost_shape_model() {
        let s = CostShape::new(1e-3, 1e-6).unwrap();
        assert_eq!(s.cost(1000), Duration::from_secs_f64(2e-3));
        assert!(CostShape::new(-1.0, 0.0).is_err());
        assert!(CostShape::default().is_zero());
    }
}
