//! Sources of IP-pair streams: seeded synthetic traffic, recorded pair files,
//! and a live HTTP tap.

mod http;
mod replay;
mod synthetic;
mod throttle;

use std::net::SocketAddrV4;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::ip::IpPair;

pub use http::{HttpTap, TapStats};
pub use replay::{read_pairs, write_pairs, PairFileFormat, ReplayStream};
pub use synthetic::SyntheticStream;
pub use throttle::Throttle;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid source configuration: {0}")]
    InvalidConfig(String),
    #[error("pair file {0} does not exist")]
    MissingFile(PathBuf),
    #[error("malformed record in {path} at {location}: {reason}")]
    Malformed {
        path: PathBuf,
        location: String,
        reason: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot bind HTTP tap to {addr}: {message}")]
    Bind { addr: SocketAddrV4, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    Synthetic,
    Replay,
    HttpTap,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Distribution {
    /// Source and destination drawn independently and uniformly from `[0, 2^32)`.
    Uniform32,
    /// Addresses drawn from a Zipf law over `universe` distinct addresses.
    Zipf { exponent: f64, universe: u64 },
}

#[derive(Clone, Debug)]
pub struct TrafficSourceConfig {
    pub kind: SourceKind,
    pub seed: u64,
    /// Target pairs per second; 0 disables throttling.
    pub rate: f64,
    pub distribution: Distribution,
    pub path: Option<PathBuf>,
    pub bind: Option<SocketAddrV4>,
    /// Stop after this many pairs.
    pub total: Option<u64>,
}

impl Default for TrafficSourceConfig {
    fn default() -> Self {
        Self {
            kind: SourceKind::Synthetic,
            seed: 0,
            rate: 0.0,
            distribution: Distribution::Uniform32,
            path: None,
            bind: None,
            total: None,
        }
    }
}

impl TrafficSourceConfig {
    pub fn synthetic(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidConfig(m.to_string()));
        if !self.rate.is_finite() || self.rate < 0.0 {
            return bad("rate must be a finite value >= 0");
        }
        if let Distribution::Zipf { exponent, universe } = self.distribution {
            if !(exponent > 0.0 && exponent.is_finite()) {
                return bad("zipf exponent must be > 0");
            }
            if universe == 0 || universe > 1 << 32 {
                return bad("zipf universe must be in 1..=2^32");
            }
        }
        match self.kind {
            SourceKind::Replay if self.path.is_none() => bad("replay source needs a path"),
            SourceKind::HttpTap if self.bind.is_none() => bad("http tap needs a bind address"),
            _ => Ok(()),
        }
    }
}

/// Cooperative stop signal shared between a stream and whoever controls it.
#[derive(Clone, Debug, Default)]
pub struct StopFlag(Arc<AtomicBool>);

impl StopFlag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::Relaxed)
    }
}

/// A boxed pair stream as consumed by a worker.
pub type PairStream = Box<dyn Iterator<Item = Result<IpPair, IngestError>> + Send>;

/// Opens the stream described by `cfg`. The stream ends early once `stop` is raised.
pub fn open_stream(cfg: &TrafficSourceConfig, stop: StopFlag) -> Result<PairStream, IngestError> {
    cfg.validate()?;
    Ok(match cfg.kind {
        SourceKind::Synthetic => Box::new(SyntheticStream::new(cfg, stop)?.map(Ok)),
        SourceKind::Replay => Box::new(ReplayStream::open(cfg, stop)?),
        SourceKind::HttpTap => Box::new(HttpTap::bind(cfg, stop)?.map(Ok)),
    })
}
