//! Worker-side pipeline: cut base matrices from the pair stream, roll them up
//! into local aggregates and hand those to a transport.

mod window;
mod worker;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analytics::Level;
use crate::format::{Compression, FormatError};
use crate::ingest::IngestError;
use crate::matrix::MatrixError;
use crate::transport::TransportError;

pub use window::IncrementalWindow;
pub use worker::{
    aggregate_batch, run_worker, BaseCutter, BaseEvent, LocalAggregate, LocalAggregator, StageTimes,
    WorkerReport,
};

/// How matrices are rolled up into the next level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Collect a full window, then reduce it with a balanced tree.
    Batch,
    /// Fold each arriving matrix into a working aggregate in place.
    Incremental,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportKind {
    MessagePassing,
    SharedFs,
}

/// What happens to base-matrix files after they have been aggregated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Retention {
    Keep,
    Delete,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("n_a ({n_a}) must equal n_v * n_b ({n_v} * {n_b})")]
    AggregateMismatch { n_a: u64, n_v: u64, n_b: u64 },
    #[error("n_g ({n_g}) must be a positive multiple of n_a ({n_a})")]
    GlobalNotMultiple { n_g: u64, n_a: u64 },
    #[error("worker rank must be >= 1 (rank 0 is the coordinator)")]
    WorkerRank,
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    /// Pairs per base matrix.
    pub n_v: u64,
    /// Base matrices per local aggregate.
    pub n_b: u64,
    /// Pairs per local aggregate; always `n_v * n_b`.
    pub n_a: u64,
    /// Pairs per global aggregate; a multiple of `n_a`.
    pub n_g: u64,
    pub strategy: Strategy,
    pub transport: TransportKind,
    pub spool_dir: PathBuf,
    pub rank: u32,
    pub retention: Retention,
    pub compression: Compression,
}

impl PipelineConfig {
    /// Builds a config from `n_v`, `n_b` and the number of locals per global.
    pub fn new(n_v: u64, n_b: u64, locals_per_global: u64, spool_dir: impl Into<PathBuf>) -> Self {
        Self {
            n_v,
            n_b,
            n_a: n_v.saturating_mul(n_b),
            n_g: n_v.saturating_mul(n_b).saturating_mul(locals_per_global),
            strategy: Strategy::Batch,
            transport: TransportKind::MessagePassing,
            spool_dir: spool_dir.into(),
            rank: 1,
            retention: Retention::Keep,
            compression: Compression::None,
        }
    }

    /// n_v = 2^17, n_a = 2^23, n_g = 2^25.
    pub fn cluster_scale(spool_dir: impl Into<PathBuf>) -> Self {
        Self::new(1 << 17, 1 << 6, 4, spool_dir)
    }

    /// n_v = 2^12, n_a = 2^14, n_g = 2^16.
    pub fn desk_scale(spool_dir: impl Into<PathBuf>) -> Self {
        Self::new(1 << 12, 1 << 2, 4, spool_dir)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (v, name) in [(self.n_v, "n_v"), (self.n_b, "n_b"), (self.n_a, "n_a"), (self.n_g, "n_g")] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if self.n_v.checked_mul(self.n_b) != Some(self.n_a) {
            return Err(ConfigError::AggregateMismatch {
                n_a: self.n_a,
                n_v: self.n_v,
                n_b: self.n_b,
            });
        }
        if !self.n_g.is_multiple_of(self.n_a) {
            return Err(ConfigError::GlobalNotMultiple {
                n_g: self.n_g,
                n_a: self.n_a,
            });
        }
        Ok(())
    }

    pub fn validate_worker(&self) -> Result<(), ConfigError> {
        self.validate()?;
        if self.rank == 0 {
            return Err(ConfigError::WorkerRank);
        }
        Ok(())
    }

    /// Number of local aggregates that make one global aggregate.
    pub fn locals_per_global(&self) -> u64 {
        self.n_g / self.n_a
    }

    pub fn rank_dir(&self) -> PathBuf {
        rank_dir(&self.spool_dir, self.rank)
    }

    pub fn level_dir(&self, level: Level) -> PathBuf {
        self.rank_dir().join(level.as_str())
    }

    pub fn analytics_log(&self) -> PathBuf {
        self.rank_dir().join("analytics.log")
    }

    /// Pair count every aggregate of `level` must carry.
    pub fn pairs_per(&self, level: Level) -> u64 {
        match level {
            Level::Base => self.n_v,
            Level::Local => self.n_a,
            Level::Global => self.n_g,
        }
    }
}

/// `<spool>/<rank>`
pub fn rank_dir(spool: &Path, rank: u32) -> PathBuf {
    spool.join(rank.to_string())
}

/// `<spool>/<rank>/<level>/<seq>.dbtm`
pub fn matrix_path(spool: &Path, rank: u32, level: Level, seq: u64) -> PathBuf {
    rank_dir(spool, rank)
        .join(level.as_str())
        .join(format!("{seq}.dbtm"))
}

/// Reference to a persisted matrix at some aggregation level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregateDescriptor {
    pub rank: u32,
    pub level: Level,
    /// Starts at 1 and increases by one per `(rank, level)`.
    pub seq: u64,
    pub pair_count: u64,
    pub path: PathBuf,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("base matrix {seq} missing at {path}")]
    MissingBase { seq: u64, path: PathBuf },
    #[error("base matrix {seq} is corrupt: {source}")]
    CorruptBase {
        seq: u64,
        #[source]
        source: FormatError,
    },
    #[error("batch window expects {expected} bases, got {got}")]
    WindowSize { expected: u64, got: u64 },
    #[error("aggregate window overrun: {mass} pairs exceed target {target}")]
    WindowOverrun { mass: u64, target: u64 },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("aggregation thread panicked")]
    AggregatorPanicked,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}
