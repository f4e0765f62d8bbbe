//! Optional request-path layers: tensor fusion, payload compression and
//! communication logging.

pub mod compression;
pub mod fusion;
pub mod logging;
pub mod report;

pub use compression::{trunc16, Codec};
pub use fusion::{FusionConfig, FusionStats};
pub use logging::{read_log, write_log, LogRecord, Logger};
pub use report::{aggregate, report, Breakdown, Report, ReportRow};
