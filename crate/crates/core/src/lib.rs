//! Mix-and-match collective communication.
//!
//! A [`Runtime`] holds any number of named backends, each a transport plus
//! an algorithm policy and optional middleware (fusion, compression). Every
//! operation names the backend it runs on, or `"auto"` to route by a tuning
//! table. Operations on different backends progress independently, so they
//! can be interleaved freely as long as each backend sees the same order on
//! every rank.
//!
//! ```
//! use mcrdl::{launch, BackendSpec, Buffer, ReduceOp, Runtime};
//!
//! let sums = launch::run_local_ok(2, |group| {
//!     let rt = Runtime::init(group, vec![BackendSpec::new("ring")?])?;
//!     let x = Buffer::from_slice(&[rt.rank() as f32 + 1.0]);
//!     let out = rt.all_reduce("ring", x, ReduceOp::Sum, false)?.wait()?;
//!     Ok(out.into_buffer().to_vec::<f32>())
//! })
//! .unwrap();
//! assert_eq!(sums, vec![vec![3.0], vec![3.0]]);
//! ```

pub mod cli;
pub mod collectives;
pub mod dispatch;
pub mod error;
pub mod handle;
pub mod launch;
pub mod middleware;
pub mod request;
pub mod runtime;
pub mod selftest;
pub mod transport;
pub mod tuner;
pub mod types;

pub use collectives::{Algorithm, AlgorithmPolicy};
pub use dispatch::{load_table, route, SizeBucket, TableEntry, TuningTable};
pub use error::{Error, Result};
pub use handle::{CompletionEvent, HandleState, WorkHandle};
pub use middleware::{Codec, FusionConfig, FusionStats, LogRecord, Logger};
pub use request::{CommRequest, Payload};
pub use runtime::{Backend, BackendSpec, Group, LocalWorld, Runtime, TransportKind};
pub use transport::CostShape;
pub use types::{BackendId, Buffer, CommOpKind, DType, Element, ReduceOp, Scalar};
