//! Hypersparse traffic-matrix pipeline for network sensing.
//!
//! Workers turn streams of source/destination IPv4 pairs into base traffic
//! matrices, roll those up into local aggregates and ship them to a rank-0
//! coordinator, which forms global aggregates and computes network analytics
//! at every level.
//!
//! * [`matrix`]: the hypersparse matrix type and its plus-monoid algebra
//! * [`format`]: the canonical `.dbtm` binary format
//! * [`analytics`]: the nine network quantities and their record format
//! * [`ingest`]: synthetic, replayed and HTTP-tapped pair streams
//! * [`pipeline`]: worker-side base cutting and local aggregation
//! * [`transport`]: file-based message passing and shared-spool delivery
//! * [`coordinator`]: global aggregation, metrics and capacity estimates

pub mod analytics;
pub mod coordinator;
pub mod format;
pub mod ingest;
pub mod ip;
pub mod matrix;
pub mod pipeline;
pub mod transport;

pub use analytics::{compute_quantities, NetworkQuantities};
pub use ip::{IpAddr32, IpPair};
pub use matrix::{MatrixError, TrafficMatrix};
