//! Domain types shared by every layer: element types, buffers, reduction
//! operators, backend identifiers and operation kinds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    I32,
    I64,
    U8,
}

impl DType {
    pub const ALL: [DType; 5] = [DType::F32, DType::F64, DType::I32, DType::I64, DType::U8];

    pub const fn size_bytes(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::F64 | DType::I64 => 8,
            DType::U8 => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
            DType::I32 => "i32",
            DType::I64 => "i64",
            DType::U8 => "u8",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<DType> {
        DType::ALL.get(code as usize).copied()
    }

    pub fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F64)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceOp {
    Sum,
    Prod,
    Min,
    Max,
}

impl ReduceOp {
    pub const ALL: [ReduceOp; 4] = [ReduceOp::Sum, ReduceOp::Prod, ReduceOp::Min, ReduceOp::Max];

    pub fn as_str(self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Prod => "prod",
            ReduceOp::Min => "min",
            ReduceOp::Max => "max",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    /// Identity element of this operator for `T`.
    pub fn identity<T: Element>(self) -> T {
        match self {
            ReduceOp::Sum => T::ZERO,
            ReduceOp::Prod => T::ONE,
            ReduceOp::Min => T::MAX_VALUE,
            ReduceOp::Max => T::MIN_VALUE,
        }
    }
}

impl fmt::Display for ReduceOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A scalar type that can live in a [`Buffer`].
///
/// Integer arithmetic wraps; float arithmetic is native IEEE.
pub trait Element: Copy + Send + Sync + PartialOrd + fmt::Debug + 'static {
    const DTYPE: DType;
    const ZERO: Self;
    const ONE: Self;
    /// Identity of `min` (+inf for floats).
    const MAX_VALUE: Self;
    /// Identity of `max` (-inf for floats).
    const MIN_VALUE: Self;

    fn read_le(bytes: &[u8]) -> Self;
    fn write_le(self, out: &mut [u8]);
    fn combine(self, other: Self, op: ReduceOp) -> Self;
}

macro_rules! int_element {
    ($t:ty, $dt:expr) => {
        impl Element for $t {
            const DTYPE: DType = $dt;
            const ZERO: Self = 0;
            const ONE: Self = 1;
            const MAX_VALUE: Self = <$t>::MAX;
            const MIN_VALUE: Self = <$t>::MIN;

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }

            fn write_le(self, out: &mut [u8]) {
                out.copy_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn combine(self, other: Self, op: ReduceOp) -> Self {
                match op {
                    ReduceOp::Sum => self.wrapping_add(other),
                    ReduceOp::Prod => self.wrapping_mul(other),
                    ReduceOp::Min => self.min(other),
                    ReduceOp::Max => self.max(other),
                }
            }
        }
    };
}

macro_rules! float_element {
    ($t:ty, $dt:expr) => {
        impl Element for $t {
            const DTYPE: DType = $dt;
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const MAX_VALUE: Self = <$t>::INFINITY;
            const MIN_VALUE: Self = <$t>::NEG_INFINITY;

            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }

            fn write_le(self, out: &mut [u8]) {
                out.copy_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn combine(self, other: Self, op: ReduceOp) -> Self {
                match op {
                    ReduceOp::Sum => self + other,
                    ReduceOp::Prod => self * other,
                    ReduceOp::Min => self.min(other),
                    ReduceOp::Max => self.max(other),
                }
            }
        }
    };
}

int_element!(i32, DType::I32);
int_element!(i64, DType::I64);
int_element!(u8, DType::U8);
float_element!(f32, DType::F32);
float_element!(f64, DType::F64);

/// A dynamically typed scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    F32(f32),
    F64(f64),
    I32(i32),
    I64(i64),
    U8(u8),
}

impl Scalar {
    pub fn dtype(self) -> DType {
        match self {
            Scalar::F32(_) => DType::F32,
            Scalar::F64(_) => DType::F64,
            Scalar::I32(_) => DType::I32,
            Scalar::I64(_) => DType::I64,
            Scalar::U8(_) => DType::U8,
        }
    }
}

/// Combine two scalars of the same dtype.
pub fn element_reduce(a: Scalar, b: Scalar, op: ReduceOp) -> Result<Scalar> {
    Ok(match (a, b) {
        (Scalar::F32(x), Scalar::F32(y)) => Scalar::F32(x.combine(y, op)),
        (Scalar::F64(x), Scalar::F64(y)) => Scalar::F64(x.combine(y, op)),
        (Scalar::I32(x), Scalar::I32(y)) => Scalar::I32(x.combine(y, op)),
        (Scalar::I64(x), Scalar::I64(y)) => Scalar::I64(x.combine(y, op)),
        (Scalar::U8(x), Scalar::U8(y)) => Scalar::U8(x.combine(y, op)),
        _ => {
            return Err(Error::validation(
                "dtype",
                format!("cannot reduce {} with {}", a.dtype(), b.dtype()),
            ))
        }
    })
}

fn reduce_typed<T: Element>(acc: &mut [u8], other: &[u8], op: ReduceOp) {
    let w = std::mem::size_of::<T>();
    for (a, b) in acc.chunks_exact_mut(w).zip(other.chunks_exact(w)) {
        let v = T::read_le(a).combine(T::read_le(b), op);
        v.write_le(a);
    }
}

/// Element-wise `acc[i] = acc[i] (op) other[i]` over little-endian bytes.
pub(crate) fn reduce_bytes(dtype: DType, op: ReduceOp, acc: &mut [u8], other: &[u8]) {
    debug_assert_eq!(acc.len(), other.len());
    match dtype {
        DType::F32 => reduce_typed::<f32>(acc, other, op),
        DType::F64 => reduce_typed::<f64>(acc, other, op),
        DType::I32 => reduce_typed::<i32>(acc, other, op),
        DType::I64 => reduce_typed::<i64>(acc, other, op),
        DType::U8 => reduce_typed::<u8>(acc, other, op),
    }
}

/// Typed contiguous element array. The runtime's tensor stand-in.
#[derive(Clone, PartialEq)]
pub struct Buffer {
    dtype: DType,
    data: Vec<u8>,
}

impl Buffer {
    pub fn zeros(dtype: DType, count: usize) -> Self {
        Buffer {
            dtype,
            data: vec![0; count * dtype.size_bytes()],
        }
    }

    pub fn empty(dtype: DType) -> Self {
        Buffer::zeros(dtype, 0)
    }

    pub fn from_slice<T: Element>(values: &[T]) -> Self {
        let w = T::DTYPE.size_bytes();
        let mut data = vec![0; values.len() * w];
        for (chunk, v) in data.chunks_exact_mut(w).zip(values) {
            v.write_le(chunk);
        }
        Buffer {
            dtype: T::DTYPE,
            data,
        }
    }

    pub fn from_bytes(dtype: DType, data: Vec<u8>) -> Result<Self> {
        if data.len() % dtype.size_bytes() != 0 {
            return Err(Error::validation(
                "data",
                format!("{} bytes is not a whole number of {dtype} elements", data.len()),
            ));
        }
        Ok(Buffer { dtype, data })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dtype.size_bytes()
    }

    pub fn byte_len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    /// Copy the contents out as `T`. Panics if `T` is not this buffer's dtype.
    pub fn to_vec<T: Element>(&self) -> Vec<T> {
        assert_eq!(
            T::DTYPE,
            self.dtype,
            "buffer holds {} not {}",
            self.dtype,
            T::DTYPE
        );
        self.data
            .chunks_exact(self.dtype.size_bytes())
            .map(T::read_le)
            .collect()
    }

    pub fn get<T: Element>(&self, index: usize) -> T {
        assert_eq!(T::DTYPE, self.dtype);
        let w = self.dtype.size_bytes();
        T::read_le(&self.data[index * w..(index + 1) * w])
    }

    pub fn scalar(&self, index: usize) -> Scalar {
        match self.dtype {
            DType::F32 => Scalar::F32(self.get(index)),
            DType::F64 => Scalar::F64(self.get(index)),
            DType::I32 => Scalar::I32(self.get(index)),
            DType::I64 => Scalar::I64(self.get(index)),
            DType::U8 => Scalar::U8(self.get(index)),
        }
    }

    /// Bytes of the element range `[offset, offset + count)`.
    pub fn elements(&self, offset: usize, count: usize) -> &[u8] {
        let w = self.dtype.size_bytes();
        &self.data[offset * w..(offset + count) * w]
    }

    pub fn elements_mut(&mut self, offset: usize, count: usize) -> &mut [u8] {
        let w = self.dtype.size_bytes();
        &mut self.data[offset * w..(offset + count) * w]
    }

    /// Element-wise combine `other` into `self`.
    pub fn reduce_with(&mut self, other: &Buffer, op: ReduceOp) -> Result<()> {
        if self.dtype != other.dtype || self.count() != other.count() {
            return Err(Error::validation(
                "buffer",
                format!(
                    "cannot reduce {}x{} with {}x{}",
                    self.count(),
                    self.dtype,
                    other.count(),
                    other.dtype
                ),
            ));
        }
        reduce_bytes(self.dtype, op, &mut self.data, &other.data);
        Ok(())
    }
}

impl fmt::Debug for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        let shown = self.count().min(16);
        for i in 0..shown {
            match self.scalar(i) {
                Scalar::F32(v) => list.entry(&v),
                Scalar::F64(v) => list.entry(&v),
                Scalar::I32(v) => list.entry(&v),
                Scalar::I64(v) => list.entry(&v),
                Scalar::U8(v) => list.entry(&v),
            };
        }
        if self.count() > shown {
            list.entry(&format_args!("... {} total", self.count()));
        }
        list.finish()?;
        write!(f, ":{}", self.dtype)
    }
}

/// Name of a registered backend. `"auto"` is reserved for the dispatcher.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BackendId(String);

impl BackendId {
    pub const AUTO: &'static str = "auto";

    /// A concrete backend name: non-empty, lowercase, not `auto`.
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let valid_chars = name.chars().all(|c| {
            c.is_ascii_lowercase() || c.is_ascii_digit() || matches!(c, '-' | '_' | '.' | '#')
        });
        if name.is_empty() || !valid_chars {
            return Err(Error::Config(format!(
                "backend id `{name}` must be a non-empty lowercase identifier"
            )));
        }
        if name == Self::AUTO {
            return Err(Error::Config("`auto` is reserved for dispatch".into()));
        }
        Ok(BackendId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for BackendId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        BackendId::new(s)
    }
}

impl From<BackendId> for String {
    fn from(id: BackendId) -> String {
        id.0
    }
}

impl fmt::Display for BackendId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<str> for BackendId {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for BackendId {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommOpKind {
    Send,
    Recv,
    Bcast,
    Reduce,
    AllReduce,
    Gather,
    Gatherv,
    Scatter,
    Scatterv,
    AllGather,
    AllGatherv,
    ReduceScatter,
    AllToAllSingle,
    AllToAll,
    AllToAllv,
}

impl CommOpKind {
    pub const ALL: [CommOpKind; 15] = [
        CommOpKind::Send,
        CommOpKind::Recv,
        CommOpKind::Bcast,
        CommOpKind::Reduce,
        CommOpKind::AllReduce,
        CommOpKind::Gather,
        CommOpKind::Gatherv,
        CommOpKind::Scatter,
        CommOpKind::Scatterv,
        CommOpKind::AllGather,
        CommOpKind::AllGatherv,
        CommOpKind::ReduceScatter,
        CommOpKind::AllToAllSingle,
        CommOpKind::AllToAll,
        CommOpKind::AllToAllv,
    ];

    /// Every kind except point-to-point.
    pub const COLLECTIVES: [CommOpKind; 13] = [
        CommOpKind::Bcast,
        CommOpKind::Reduce,
        CommOpKind::AllReduce,
        CommOpKind::Gather,
        CommOpKind::Gatherv,
        CommOpKind::Scatter,
        CommOpKind::Scatterv,
        CommOpKind::AllGather,
        CommOpKind::AllGatherv,
        CommOpKind::ReduceScatter,
        CommOpKind::AllToAllSingle,
        CommOpKind::AllToAll,
        CommOpKind::AllToAllv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommOpKind::Send => "send",
            CommOpKind::Recv => "recv",
            CommOpKind::Bcast => "bcast",
            CommOpKind::Reduce => "reduce",
            CommOpKind::AllReduce => "all_reduce",
            CommOpKind::Gather => "gather",
            CommOpKind::Gatherv => "gatherv",
            CommOpKind::Scatter => "scatter",
            CommOpKind::Scatterv => "scatterv",
            CommOpKind::AllGather => "all_gather",
            CommOpKind::AllGatherv => "all_gatherv",
            CommOpKind::ReduceScatter => "reduce_scatter",
            CommOpKind::AllToAllSingle => "all_to_all_single",
            CommOpKind::AllToAll => "all_to_all",
            CommOpKind::AllToAllv => "all_to_allv",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub fn is_p2p(self) -> bool {
        matches!(self, CommOpKind::Send | CommOpKind::Recv)
    }

    pub fn is_rooted(self) -> bool {
        matches!(
            self,
            CommOpKind::Bcast
                | CommOpKind::Reduce
                | CommOpKind::Gather
                | CommOpKind::Gatherv
                | CommOpKind::Scatter
                | CommOpKind::Scatterv
        )
    }

    pub fn is_vectored(self) -> bool {
        matches!(
            self,
            CommOpKind::Gatherv | CommOpKind::Scatterv | CommOpKind::AllGatherv | CommOpKind::AllToAllv
        )
    }

    /// Kinds whose payloads travel unmodified and may be compressed.
    pub fn is_compressible(self) -> bool {
        !self.is_p2p() && !self.needs_reduce_op()
    }

    pub fn needs_reduce_op(self) -> bool {
        matches!(
            self,
            CommOpKind::Reduce | CommOpKind::AllReduce | CommOpKind::ReduceScatter
        )
    }
}

impl fmt::Display for CommOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommOpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let alias = match s {
            "allreduce" => "all_reduce",
            "allgather" => "all_gather",
            "allgatherv" => "all_gatherv",
            "alltoall" => "all_to_all",
            "alltoall_single" | "alltoallsingle" => "all_to_all_single",
            "alltoallv" => "all_to_allv",
            "broadcast" => "bcast",
            other => other,
        };
        CommOpKind::ALL
            .into_iter()
            .find(|k| k.as_str() == alias)
            .ok_or_else(|| Error::Parse(format!("unknown operation `{s}`")))
    }
}
