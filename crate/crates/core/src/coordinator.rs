//! Rank-0 coordinator: turns incoming local aggregates into global aggregates
//! of exactly `n_g` pairs and keeps throughput metrics.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{append_record, compute_quantities, unix_millis, Level, NetworkQuantities, RecordMeta};
use crate::format::{self, Compression};
use crate::ingest::StopFlag;
use crate::matrix::TrafficMatrix;
use crate::pipeline::{matrix_path, rank_dir, IncrementalWindow, PipelineConfig, PipelineError, Strategy};
use crate::transport::{Inbox, InboxEvent, TransportError, COORDINATOR_RANK};

#[derive(Debug, Error, PartialEq)]
pub enum CapacityError {
    #[error("rates must be finite and > 0 (coordinator {coordinator_rps}, injection {injection_rps})")]
    NonPositive { coordinator_rps: f64, injection_rps: f64 },
}

/// Largest number of workers at `injection_rps` each that a coordinator
/// sustaining `coordinator_rps` can keep up with: `floor(coordinator / injection)`.
pub fn estimate_max_workers(coordinator_rps: f64, injection_rps: f64) -> Result<u64, CapacityError> {
    let ok = |x: f64| x.is_finite() && x > 0.0;
    if !ok(coordinator_rps) || !ok(injection_rps) {
        return Err(CapacityError::NonPositive {
            coordinator_rps,
            injection_rps,
        });
    }
    Ok((coordinator_rps / injection_rps).floor() as u64)
}

/// Requests per second represented by `globals` global aggregates of `n_g`
/// pairs over `elapsed_secs`.
pub fn coordinator_rps(globals: u64, n_g: u64, elapsed_secs: f64) -> f64 {
    if elapsed_secs <= 0.0 {
        return 0.0;
    }
    (globals as f64) * (n_g as f64) / elapsed_secs
}

/// Reduces one full window of local aggregates with a balanced tree.
pub fn incorporate_batch(locals: Vec<TrafficMatrix>) -> Result<TrafficMatrix, PipelineError> {
    Ok(TrafficMatrix::sum_tree(locals)?)
}

/// Window state for either incorporation strategy.
///
/// Windows are count-based: any `n_g / n_a` locals close a window, regardless
/// of which ranks sent them.
pub enum GlobalAccumulator {
    Batch {
        locals_per_global: u64,
        pending: Vec<TrafficMatrix>,
    },
    Incremental(IncrementalWindow),
}

impl GlobalAccumulator {
    pub fn new(cfg: &PipelineConfig) -> Self {
        match cfg.strategy {
            Strategy::Batch => GlobalAccumulator::Batch {
                locals_per_global: cfg.locals_per_global(),
                pending: Vec::new(),
            },
            Strategy::Incremental => GlobalAccumulator::Incremental(IncrementalWindow::new(cfg.n_g)),
        }
    }

    /// Adds one local; returns the finished global when the window closes.
    pub fn incorporate(&mut self, local: TrafficMatrix) -> Result<Option<TrafficMatrix>, PipelineError> {
        match self {
            GlobalAccumulator::Batch {
                locals_per_global,
                pending,
            } => {
                pending.push(local);
                if (pending.len() as u64) < *locals_per_global {
                    return Ok(None);
                }
                incorporate_batch(std::mem::take(pending)).map(Some)
            }
            GlobalAccumulator::Incremental(w) => w.push(local),
        }
    }

    pub fn pending_mass(&self) -> u64 {
        match self {
            GlobalAccumulator::Batch { pending, .. } => pending.iter().map(|m| m.request_total()).sum(),
            GlobalAccumulator::Incremental(w) => w.mass(),
        }
    }

    pub fn pending_locals(&self) -> u64 {
        match self {
            GlobalAccumulator::Batch { pending, .. } => pending.len() as u64,
            GlobalAccumulator::Incremental(w) => w.members(),
        }
    }
}

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("transport failed after {attempts} attempts: {source}")]
    Transport {
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug)]
pub struct CoordinatorConfig {
    pub pipeline: PipelineConfig,
    /// Exit once this many distinct ranks have sent shutdown. 0 means run
    /// until stopped or idle.
    pub expected_workers: u32,
    pub poll_interval: Duration,
    /// Exit after this long without any inbox event.
    pub idle_timeout: Option<Duration>,
    pub max_transport_retries: u32,
}

impl CoordinatorConfig {
    pub fn new(pipeline: PipelineConfig, expected_workers: u32) -> Self {
        Self {
            pipeline,
            expected_workers,
            poll_interval: Duration::from_millis(5),
            idle_timeout: None,
            max_transport_retries: 6,
        }
    }

    /// `<spool>/0`
    pub fn out_dir(&self) -> PathBuf {
        rank_dir(&self.pipeline.spool_dir, COORDINATOR_RANK)
    }
}

/// Final accounting written to `summary.json` when the loop exits.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoordinatorSummary {
    pub globals: u64,
    pub global_pairs: u64,
    pub locals_received: u64,
    pub bytes_received: u64,
    /// Locals and pairs of the unfinished window, reported but never emitted.
    pub pending_locals: u64,
    pub pending_pairs: u64,
    pub poison: u64,
    /// Decodable locals whose pair count was not `n_a`.
    pub rejected: u64,
    pub per_rank_locals: BTreeMap<u32, u64>,
    pub shutdown_ranks: Vec<u32>,
    pub elapsed_secs: f64,
    pub rps: f64,
    /// Seconds since start at which each global was finalized.
    pub global_times: Vec<f64>,
    pub aggregation_rps: Vec<f64>,
    pub analytics_rps: Vec<f64>,
}

impl CoordinatorSummary {
    /// Throughput after discarding the first window: `(G - 1) * n_g` over the
    /// time between the first and last global. `None` with fewer than 2 globals.
    pub fn steady_rps(&self, n_g: u64) -> Option<f64> {
        let (first, last) = (self.global_times.first()?, self.global_times.last()?);
        if self.global_times.len() < 2 || last <= first {
            return None;
        }
        Some((self.global_times.len() as f64 - 1.0) * n_g as f64 / (last - first))
    }
}

pub const METRICS_HEADER: &str = "timestamp_ms,globals,elapsed_s,rps,window_latency_s,finalize_lag_s";

/// A global aggregate produced by the coordinator.
#[derive(Debug)]
pub struct GlobalAggregate {
    pub seq: u64,
    pub matrix: TrafficMatrix,
    pub quantities: NetworkQuantities,
}

pub struct Coordinator {
    cfg: CoordinatorConfig,
    window: Window,
    summary: CoordinatorSummary,
    started: Instant,
    window_opened: Option<Instant>,
    out: PathBuf,
}

enum Window {
    /// Batch mode stages each arriving local as a temporary file and reduces
    /// the window from disk once it is complete.
    Staged(Vec<PathBuf>),
    Incremental(IncrementalWindow),
}

impl Coordinator {
    pub fn new(cfg: CoordinatorConfig) -> Result<Self, CoordinatorError> {
        cfg.pipeline.validate().map_err(PipelineError::from)?;
        let out = cfg.out_dir();
        for d in [out.join("global"), out.join("tmp")] {
            fs::create_dir_all(&d).map_err(|source| CoordinatorError::Io { path: d.clone(), source })?;
        }
        let metrics = out.join("metrics.csv");
        if !metrics.exists() {
            fs::write(&metrics, format!("{METRICS_HEADER}\n"))
                .map_err(|source| CoordinatorError::Io { path: metrics.clone(), source })?;
        }
        let window = match cfg.pipeline.strategy {
            Strategy::Batch => Window::Staged(Vec::new()),
            Strategy::Incremental => Window::Incremental(IncrementalWindow::new(cfg.pipeline.n_g)),
        };
        Ok(Self {
            window,
            cfg,
            summary: CoordinatorSummary::default(),
            started: Instant::now(),
            window_opened: None,
            out,
        })
    }

    pub fn summary(&self) -> &CoordinatorSummary {
        &self.summary
    }

    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CoordinatorError + '_ {
        move |source| CoordinatorError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Incorporates one received local aggregate, emitting a global when its window closes.
    pub fn incorporate(
        &mut self,
        rank: u32,
        seq: u64,
        local: TrafficMatrix,
    ) -> Result<Option<GlobalAggregate>, CoordinatorError> {
        let received = Instant::now();
        if local.request_total() != self.cfg.pipeline.n_a {
            log::warn!(
                "rejecting local {rank}/{seq}: {} pairs, expected {}",
                local.request_total(),
                self.cfg.pipeline.n_a
            );
            self.summary.rejected += 1;
            return Ok(None);
        }
        self.summary.locals_received += 1;
        *self.summary.per_rank_locals.entry(rank).or_default() += 1;
        let opened = *self.window_opened.get_or_insert(received);

        let agg_start = Instant::now();
        let closed = match &mut self.window {
            Window::Staged(staged) => {
                let tmp = self.out.join("tmp").join(format!("{rank}_{seq}.dbtm"));
                format::write_file(&tmp, &local, Compression::None).map_err(PipelineError::from)?;
                drop(local);
                staged.push(tmp);
                if (staged.len() as u64) < self.cfg.pipeline.locals_per_global() {
                    None
                } else {
                    let mut ms = Vec::with_capacity(staged.len());
                    for p in staged.iter() {
                        ms.push(format::read_file(p).map_err(PipelineError::from)?);
                    }
                    for p in staged.drain(..) {
                        let _ = fs::remove_file(p);
                    }
                    Some(incorporate_batch(ms)?)
                }
            }
            Window::Incremental(w) => w.push(local)?,
        };
        let Some(global) = closed else {
            return Ok(None);
        };
        let agg_secs = agg_start.elapsed().as_secs_f64();
        self.window_opened = None;
        self.finalize(global, opened, received, agg_secs).map(Some)
    }

    fn finalize(
        &mut self,
        matrix: TrafficMatrix,
        opened: Instant,
        last_received: Instant,
        agg_secs: f64,
    ) -> Result<GlobalAggregate, CoordinatorError> {
        let n_g = self.cfg.pipeline.n_g;
        debug_assert_eq!(matrix.request_total(), n_g);
        let seq = self.summary.globals + 1;
        let path = matrix_path(&self.cfg.pipeline.spool_dir, COORDINATOR_RANK, Level::Global, seq);
        format::write_file(&path, &matrix, self.cfg.pipeline.compression).map_err(PipelineError::from)?;

        let t = Instant::now();
        let quantities = compute_quantities(&matrix);
        let analytics_secs = t.elapsed().as_secs_f64();
        let log = self.out.join("analytics.log");
        append_record(&log, &quantities, &RecordMeta::now(COORDINATOR_RANK, seq, Level::Global))
            .map_err(Self::io(&log))?;

        self.summary.globals = seq;
        self.summary.global_pairs += matrix.request_total();
        self.summary.aggregation_rps.push(n_g as f64 / agg_secs.max(1e-9));
        self.summary.analytics_rps.push(n_g as f64 / analytics_secs.max(1e-9));
        let now = Instant::now();
        let elapsed = now.duration_since(self.started).as_secs_f64();
        self.summary.global_times.push(elapsed);

        let metrics = self.out.join("metrics.csv");
        let mut f = OpenOptions::new().append(true).open(&metrics).map_err(Self::io(&metrics))?;
        writeln!(
            f,
            "{},{},{:.6},{:.3},{:.6},{:.6}",
            unix_millis(),
            seq,
            elapsed,
            coordinator_rps(seq, n_g, elapsed),
            now.duration_since(opened).as_secs_f64(),
            now.duration_since(last_received).as_secs_f64(),
        )
        .map_err(Self::io(&metrics))?;
        Ok(GlobalAggregate {
            seq,
            matrix,
            quantities,
        })
    }

    fn poll_with_retry(&self, inbox: &mut Inbox) -> Result<Option<InboxEvent>, CoordinatorError> {
        let mut delay = Duration::from_millis(10);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match inbox.poll() {
                Ok(ev) => return Ok(ev),
                Err(e) if attempt > self.cfg.max_transport_retries => {
                    return Err(CoordinatorError::Transport {
                        attempts: attempt,
                        source: e,
                    })
                }
                Err(e) => {
                    log::warn!("transport fault (attempt {attempt}): {e}");
                    std::thread::sleep(delay);
                    delay = (delay * 2).min(Duration::from_secs(1));
                }
            }
        }
    }

    /// Runs the probe/receive/incorporate loop until every expected worker
    /// has shut down, `stop` is raised, or the idle timeout passes. The
    /// unfinished window is reported in the summary, not emitted.
    pub fn run(&mut self, inbox: &mut Inbox, stop: &StopFlag) -> Result<CoordinatorSummary, CoordinatorError> {
        self.started = Instant::now();
        let mut last_event = Instant::now();
        let expected = self.cfg.expected_workers as usize;
        loop {
            if stop.is_stopped() {
                break;
            }
            match self.poll_with_retry(inbox)? {
                Some(ev) => {
                    last_event = Instant::now();
                    match ev {
                        InboxEvent::Local {
                            rank,
                            seq,
                            matrix,
                            bytes,
                        } => {
                            self.summary.bytes_received += bytes;
                            if let Some(g) = self.incorporate(rank, seq, matrix)? {
                                log::info!("global {} finalized ({} links)", g.seq, g.quantities.unique_links);
                            }
                        }
                        InboxEvent::Shutdown { rank } => {
                            if !self.summary.shutdown_ranks.contains(&rank) {
                                self.summary.shutdown_ranks.push(rank);
                            }
                            if expected > 0 && self.summary.shutdown_ranks.len() >= expected {
                                break;
                            }
                        }
                        InboxEvent::Poison(e) => {
                            log::error!("{e}");
                            self.summary.poison += 1;
                        }
                    }
                }
                None => {
                    if let Some(t) = self.cfg.idle_timeout {
                        if last_event.elapsed() >= t {
                            break;
                        }
                    }
                    std::thread::sleep(self.cfg.poll_interval);
                }
            }
        }
        (self.summary.pending_locals, self.summary.pending_pairs) = match &self.window {
            Window::Staged(s) => (s.len() as u64, s.len() as u64 * self.cfg.pipeline.n_a),
            Window::Incremental(w) => (w.members(), w.mass()),
        };
        self.summary.elapsed_secs = self.started.elapsed().as_secs_f64();
        self.summary.rps = coordinator_rps(self.summary.globals, self.cfg.pipeline.n_g, self.summary.elapsed_secs);
        self.summary.shutdown_ranks.sort_unstable();
        let path = self.out.join("summary.json");
        let json = serde_json::to_string_pretty(&self.summary).expect("summary is plain data");
        fs::write(&path, json).map_err(Self::io(&path))?;
        Ok(self.summary.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ip::IpPair;

    #[test]
    fn capacity_model() {
        assert_eq!(estimate_max_workers(10f64.powf(6.4), 1e5), Ok(25));
        assert_eq!(estimate_max_workers(10f64.powf(7.2), 1e5), Ok(158));
        assert_eq!(estimate_max_workers(123.0, 123.0), Ok(1));
        assert!(estimate_max_workers(0.0, 1e5).is_err());
        assert!(estimate_max_workers(1e5, -1.0).is_err());
        assert!(estimate_max_workers(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn rps_formula() {
        assert_eq!(coordinator_rps(3, 1 << 25, 600.0), 3.0 * 33_554_432.0 / 600.0);
        assert_eq!(coordinator_rps(3, 8, 0.0), 0.0);
    }

    fn local(k: u32, n: u32) -> TrafficMatrix {
        TrafficMatrix::from_pairs(&(0..n).map(|i| IpPair::new(k, i % 3)).collect::<Vec<_>>())
    }

    #[test]
    fn singleton_window() {
        let dir = tempfile::tempdir().unwrap();
        let p = PipelineConfig::new(2, 2, 1, dir.path());
        let mut c = Coordinator::new(CoordinatorConfig::new(p, 1)).unwrap();
        let g = c.incorporate(1, 1, local(1, 4)).unwrap().unwrap();
        assert_eq!(g.matrix, local(1, 4));
        assert_eq!(g.seq, 1);
        assert!(dir.path().join("0/global/1.dbtm").exists());
    }

    #[test]
    fn wrong_mass_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = PipelineConfig::new(2, 2, 2, dir.path());
        let mut c = Coordinator::new(CoordinatorConfig::new(p, 1)).unwrap();
        assert!(c.incorporate(1, 1, local(1, 3)).unwrap().is_none());
        assert_eq!(c.summary().rejected, 1);
        assert_eq!(c.summary().locals_received, 0);
    }

    #[test]
    fn steady_rps_skips_first_window() {
        let s = CoordinatorSummary {
            global_times: vec![1.0, 2.0, 3.0],
            ..Default::default()
        };
        assert_eq!(s.steady_rps(10), Some(10.0));
        assert_eq!(CoordinatorSummary::default().steady_rps(10), None);
    }
}
