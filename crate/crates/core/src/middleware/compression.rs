//! `trunc16`: keep the top 16 bits of each f32 (sign, exponent, 7 mantissa
//! bits) on the wire and widen on receipt.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes of codec header in front of every compressed payload.
pub const CODEC_HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Trunc16,
}

impl Codec {
    pub fn id(self) -> u8 {
        match self {
            Codec::Trunc16 => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Codec::Trunc16 => "trunc16",
        }
    }

    /// Wire size of a payload of `raw_len` f32 bytes.
    pub fn wire_len(self, raw_len: usize) -> usize {
        CODEC_HEADER_LEN + raw_len / 2
    }

    /// `raw` must hold whole little-endian f32 values.
    pub fn compress(self, raw: &[u8]) -> Vec<u8> {
        debug_assert_eq!(raw.len() % 4, 0);
        let count = raw.len() / 4;
        let mut out = Vec::with_capacity(self.wire_len(raw.len()));
        out.extend_from_slice(&u32::from(self.id()).to_le_bytes());
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for chunk in raw.chunks_exact(4) {
            out.extend_from_slice(&chunk[2..4]);
        }
        out
    }

    pub fn decompress(self, wire: &[u8], raw_len: usize) -> Result<Vec<u8>> {
        if wire.len() < CODEC_HEADER_LEN {
            return Err(Error::CodecMismatch("payload shorter than codec header".into()));
        }
        let id = u32::from_le_bytes(wire[0..4].try_into().unwrap());
        let count = u32::from_le_bytes(wire[4..8].try_into().unwrap()) as usize;
        if id != u32::from(self.id()) {
            return Err(Error::CodecMismatch(format!(
                "expected codec {} (id {}), payload carries id {id}",
                self,
                self.id()
            )));
        }
        if count * 4 != raw_len || wire.len() != self.wire_len(raw_len) {
            return Err(Error::LengthMismatch {
                expected: raw_len,
                actual: count * 4,
            });
        }
        let mut out = Vec::with_capacity(raw_len);
        for half in wire[CODEC_HEADER_LEN..].chunks_exact(2) {
            out.extend_from_slice(&[0, 0, half[0], half[1]]);
        }
        Ok(out)
    }
}

/// Value `x` takes after a trip through `trunc16`.
pub fn trunc16(x: f32) -> f32 {
    f32::from_bits(x.to_bits() & 0xffff_0000)
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Codec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trunc16" => Ok(Codec::Trunc16),
            other => Err(Error::Config(format!("unknown codec `{other}`"))),
        }
    }
}
