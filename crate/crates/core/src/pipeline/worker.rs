use std::fs;
use std::sync::mpsc::sync_channel;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    io_err, matrix_path, AggregateDescriptor, IncrementalWindow, PipelineConfig, PipelineError, Retention,
    Strategy,
};
use crate::analytics::{append_record, compute_quantities, Level, NetworkQuantities, RecordMeta};
use crate::format::{self, FormatError};
use crate::ingest::PairStream;
use crate::ip::IpPair;
use crate::matrix::TrafficMatrix;
use crate::transport::LocalSink;

/// A freshly cut and persisted base matrix.
#[derive(Debug)]
pub struct BaseEvent {
    pub descriptor: AggregateDescriptor,
    pub matrix: TrafficMatrix,
    pub build_secs: f64,
}

/// Buffers pairs and cuts a base matrix every `n_v` of them.
pub struct BaseCutter {
    cfg: PipelineConfig,
    buffer: Vec<IpPair>,
    next_seq: u64,
}

impl BaseCutter {
    pub fn new(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let dir = cfg.level_dir(Level::Base);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self {
            cfg: cfg.clone(),
            buffer: Vec::with_capacity(cfg.n_v as usize),
            next_seq: 1,
        })
    }

    /// Buffers `pair`; on the `n_v`-th pair builds, persists and returns a base.
    pub fn accept(&mut self, pair: IpPair) -> Result<Option<BaseEvent>, PipelineError> {
        self.buffer.push(pair);
        if (self.buffer.len() as u64) < self.cfg.n_v {
            return Ok(None);
        }
        let start = Instant::now();
        let matrix = TrafficMatrix::from_pairs(&self.buffer);
        let build_secs = start.elapsed().as_secs_f64();
        self.buffer.clear();

        let seq = self.next_seq;
        let path = matrix_path(&self.cfg.spool_dir, self.cfg.rank, Level::Base, seq);
        format::write_file(&path, &matrix, self.cfg.compression)?;
        self.next_seq += 1;
        Ok(Some(BaseEvent {
            descriptor: AggregateDescriptor {
                rank: self.cfg.rank,
                level: Level::Base,
                seq,
                pair_count: matrix.request_total(),
                path,
            },
            matrix,
            build_secs,
        }))
    }

    /// Pairs accepted since the last cut.
    pub fn buffered(&self) -> u64 {
        self.buffer.len() as u64
    }

    pub fn bases_cut(&self) -> u64 {
        self.next_seq - 1
    }
}

/// Reads `bases` back from disk and reduces them with [`TrafficMatrix::sum_tree`].
pub fn aggregate_batch(bases: &[AggregateDescriptor], n_b: u64) -> Result<TrafficMatrix, PipelineError> {
    if bases.len() as u64 != n_b {
        return Err(PipelineError::WindowSize {
            expected: n_b,
            got: bases.len() as u64,
        });
    }
    let mut ms = Vec::with_capacity(bases.len());
    for d in bases {
        let m = format::read_file(&d.path).map_err(|e| match e {
            FormatError::Io { .. } if !d.path.exists() => PipelineError::MissingBase {
                seq: d.seq,
                path: d.path.clone(),
            },
            source => PipelineError::CorruptBase { seq: d.seq, source },
        })?;
        ms.push(m);
    }
    Ok(TrafficMatrix::sum_tree(ms)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub aggregation_secs: f64,
    pub analytics_secs: f64,
}

/// A finalized, persisted local aggregate.
#[derive(Debug)]
pub struct LocalAggregate {
    pub descriptor: AggregateDescriptor,
    pub matrix: TrafficMatrix,
    pub quantities: NetworkQuantities,
    /// The persisted `.dbtm` image, ready for transport.
    pub bytes: Vec<u8>,
    pub times: StageTimes,
}

/// Rolls base matrices up into local aggregates of exactly `n_b` bases.
pub struct LocalAggregator {
    cfg: PipelineConfig,
    working: IncrementalWindow,
    window: Vec<AggregateDescriptor>,
    incremental_secs: f64,
    next_seq: u64,
}

impl LocalAggregator {
    pub fn new(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let dir = cfg.level_dir(Level::Local);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self {
            cfg: cfg.clone(),
            working: IncrementalWindow::new(cfg.n_a),
            window: Vec::new(),
            incremental_secs: 0.0,
            next_seq: 1,
        })
    }

    /// Takes one base and returns the local aggregate it completes, if any.
    pub fn push(&mut self, base: BaseEvent) -> Result<Option<LocalAggregate>, PipelineError> {
        match self.cfg.strategy {
            Strategy::Batch => self.aggregate_batch_step(base.descriptor),
            Strategy::Incremental => self.aggregate_incremental(base),
        }
    }

    fn aggregate_batch_step(&mut self, d: AggregateDescriptor) -> Result<Option<LocalAggregate>, PipelineError> {
        self.window.push(d);
        if (self.window.len() as u64) < self.cfg.n_b {
            return Ok(None);
        }
        let start = Instant::now();
        let m = aggregate_batch(&self.window, self.cfg.n_b)?;
        let secs = start.elapsed().as_secs_f64();
        self.finalize(m, secs).map(Some)
    }

    /// Adds `base` to the in-place working aggregate; finalizes once it holds `n_a` pairs.
    pub fn aggregate_incremental(&mut self, base: BaseEvent) -> Result<Option<LocalAggregate>, PipelineError> {
        let start = Instant::now();
        let closed = self.working.push(base.matrix)?;
        self.incremental_secs += start.elapsed().as_secs_f64();
        self.window.push(base.descriptor);
        match closed {
            Some(m) => {
                let secs = std::mem::take(&mut self.incremental_secs);
                self.finalize(m, secs).map(Some)
            }
            None => Ok(None),
        }
    }

    fn finalize(&mut self, matrix: TrafficMatrix, aggregation_secs: f64) -> Result<LocalAggregate, PipelineError> {
        debug_assert_eq!(matrix.request_total(), self.cfg.n_a);
        let seq = self.next_seq;
        let path = matrix_path(&self.cfg.spool_dir, self.cfg.rank, Level::Local, seq);
        let bytes = format::serialize_with(&matrix, self.cfg.compression);
        format::write_atomic(&path, &bytes).map_err(io_err(&path))?;

        let start = Instant::now();
        let quantities = compute_quantities(&matrix);
        let analytics_secs = start.elapsed().as_secs_f64();
        let log = self.cfg.analytics_log();
        append_record(&log, &quantities, &RecordMeta::now(self.cfg.rank, seq, Level::Local))
            .map_err(io_err(&log))?;

        if self.cfg.retention == Retention::Delete {
            for d in &self.window {
                if let Err(e) = fs::remove_file(&d.path) {
                    log::warn!("could not delete base {}: {e}", d.path.display());
                }
            }
        }
        self.window.clear();
        self.next_seq += 1;
        Ok(LocalAggregate {
            descriptor: AggregateDescriptor {
                rank: self.cfg.rank,
                level: Level::Local,
                seq,
                pair_count: matrix.request_total(),
                path,
            },
            matrix,
            quantities,
            bytes,
            times: StageTimes {
                aggregation_secs,
                analytics_secs,
            },
        })
    }

    /// Pairs held in bases that belong to the unfinished window.
    pub fn pending_mass(&self) -> u64 {
        self.window.iter().map(|d| d.pair_count).sum()
    }

    pub fn locals_emitted(&self) -> u64 {
        self.next_seq - 1
    }
}

/// End-of-run accounting for one worker.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub rank: u32,
    pub injected: u64,
    pub bases: u64,
    pub locals: u64,
    /// Pairs accepted but not yet cut into a base.
    pub buffered_pairs: u64,
    /// Pairs in bases of the unfinished local window.
    pub window_pairs: u64,
    pub delivered_bytes: u64,
    /// Time the ingest side spent blocked on a full aggregation queue.
    pub stall_secs: f64,
    pub elapsed_secs: f64,
    pub construction_rps: Vec<f64>,
    pub aggregation_rps: Vec<f64>,
    pub analytics_rps: Vec<f64>,
}

impl WorkerReport {
    /// Pairs that never reached a delivered local aggregate.
    pub fn unfinished_pairs(&self) -> u64 {
        self.buffered_pairs + self.window_pairs
    }
}

#[derive(Default)]
struct AggregatorSide {
    locals: u64,
    window_pairs: u64,
    delivered_bytes: u64,
    aggregation_rps: Vec<f64>,
    analytics_rps: Vec<f64>,
}

fn rate(pairs: u64, secs: f64) -> f64 {
    pairs as f64 / secs.max(1e-9)
}

/// Runs one worker to completion: ingestion on the calling thread, local
/// aggregation and delivery on a second thread.
///
/// The two sides are joined by a queue holding at most one base, so at most
/// `2 * n_v` pairs wait between ingestion and aggregation; beyond that the
/// ingest side blocks. When the source ends, the sink's shutdown is sent
/// after every completed local aggregate.
pub fn run_worker(
    cfg: &PipelineConfig,
    source: PairStream,
    mut sink: Box<dyn LocalSink>,
) -> Result<WorkerReport, PipelineError> {
    cfg.validate_worker()?;
    let started = Instant::now();
    let mut cutter = BaseCutter::new(cfg)?;
    let mut aggregator = LocalAggregator::new(cfg)?;
    let n_a = cfg.n_a;
    let (tx, rx) = sync_channel::<BaseEvent>(1);

    let handle = thread::Builder::new()
        .name(format!("aggregate-{}", cfg.rank))
        .spawn(move || -> Result<AggregatorSide, PipelineError> {
            let mut side = AggregatorSide::default();
            let mut result = Ok(());
            for ev in rx.iter() {
                match aggregator.push(ev) {
                    Ok(Some(local)) => {
                        if let Err(e) = sink.deliver(&local.descriptor, &local.bytes) {
                            result = Err(e.into());
                            break;
                        }
                        side.locals += 1;
                        side.delivered_bytes += local.bytes.len() as u64;
                        side.aggregation_rps.push(rate(n_a, local.times.aggregation_secs));
                        side.analytics_rps.push(rate(n_a, local.times.analytics_secs));
                    }
                    Ok(None) => {}
                    Err(e) => {
                        result = Err(e);
                        break;
                    }
                }
            }
            side.window_pairs = aggregator.pending_mass();
            let shut = sink.shutdown();
            result?;
            shut?;
            Ok(side)
        })
        .map_err(|e| PipelineError::Io {
            path: cfg.rank_dir(),
            source: e,
        })?;

    let mut report = WorkerReport {
        rank: cfg.rank,
        ..WorkerReport::default()
    };
    let mut ingest_result = Ok(());
    for item in source {
        let pair = match item {
            Ok(p) => p,
            Err(e) => {
                ingest_result = Err(PipelineError::from(e));
                break;
            }
        };
        report.injected += 1;
        match cutter.accept(pair) {
            Ok(Some(ev)) => {
                report.construction_rps.push(rate(cfg.n_v, ev.build_secs));
                let t = Instant::now();
                if tx.send(ev).is_err() {
                    // aggregator stopped; its error is reported on join
                    break;
                }
                report.stall_secs += t.elapsed().as_secs_f64();
            }
            Ok(None) => {}
            Err(e) => {
                ingest_result = Err(e);
                break;
            }
        }
    }
    drop(tx);
    let side = handle.join().map_err(|_| PipelineError::AggregatorPanicked)??;
    ingest_result?;

    report.bases = cutter.bases_cut();
    report.buffered_pairs = cutter.buffered();
    report.locals = side.locals;
    report.window_pairs = side.window_pairs;
    report.delivered_bytes = side.delivered_bytes;
    report.aggregation_rps = side.aggregation_rps;
    report.analytics_rps = side.analytics_rps;
    report.elapsed_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dir: &std::path::Path, n_v: u64, n_b: u64) -> PipelineConfig {
        PipelineConfig::new(n_v, n_b, 1, dir)
    }

    fn event(cutter: &mut BaseCutter, pairs: &[IpPair]) -> BaseEvent {
        let mut out = None;
        for &p in pairs {
            out = cutter.accept(p).unwrap();
        }
        out.expect("pairs should fill exactly one base")
    }

    #[test]
    fn cut_on_nth_pair() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = BaseCutter::new(&cfg(dir.path(), 4, 1)).unwrap();
        for i in 0..3 {
            assert!(c.accept(IpPair::new(i, i)).unwrap().is_none());
        }
        let ev = c.accept(IpPair::new(3, 3)).unwrap().unwrap();
        assert_eq!(ev.descriptor.pair_count, 4);
        assert_eq!(ev.descriptor.seq, 1);
        assert_eq!(ev.descriptor.path, dir.path().join("1/base/1.dbtm"));
        assert_eq!(format::read_file(&ev.descriptor.path).unwrap(), ev.matrix);
        assert_eq!(c.buffered(), 0);
    }

    #[test]
    fn base_equals_buffer_contents() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = BaseCutter::new(&cfg(dir.path(), 6, 1)).unwrap();
        let pairs = [
            IpPair::new(1, 2),
            IpPair::new(3, 4),
            IpPair::new(1, 2),
            IpPair::new(3, 4),
            IpPair::new(1, 2),
            IpPair::new(5, 5),
        ];
        let ev = event(&mut c, &pairs);
        assert_eq!(ev.matrix, TrafficMatrix::from_pairs(&pairs));
    }

    #[test]
    fn missing_and_corrupt_bases_name_the_seq() {
        let dir = tempfile::tempdir().unwrap();
        let conf = cfg(dir.path(), 2, 2);
        let mut c = BaseCutter::new(&conf).unwrap();
        let a = event(&mut c, &[IpPair::new(1, 1), IpPair::new(1, 2)]).descriptor;
        let b = event(&mut c, &[IpPair::new(2, 1), IpPair::new(2, 2)]).descriptor;

        fs::write(&b.path, b"DBTMgarbage").unwrap();
        match aggregate_batch(&[a.clone(), b.clone()], 2) {
            Err(PipelineError::CorruptBase { seq: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        fs::remove_file(&a.path).unwrap();
        match aggregate_batch(&[a.clone(), b.clone()], 2) {
            Err(PipelineError::MissingBase { seq: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            aggregate_batch(&[b], 2),
            Err(PipelineError::WindowSize { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn incremental_windows_follow_base_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut conf = cfg(dir.path(), 2, 2);
        conf.strategy = Strategy::Incremental;
        conf.retention = Retention::Delete;
        let mut c = BaseCutter::new(&conf).unwrap();
        let mut agg = LocalAggregator::new(&conf).unwrap();
        let bases: Vec<Vec<IpPair>> = (0..4u32)
            .map(|k| vec![IpPair::new(k, 7), IpPair::new(7, k)])
            .collect();
        let mut locals = Vec::new();
        for b in &bases {
            let ev = event(&mut c, b);
            let path = ev.descriptor.path.clone();
            if let Some(l) = agg.push(ev).unwrap() {
                locals.push(l);
                assert!(!path.exists(), "retention=delete removes window bases");
            }
        }
        assert_eq!(locals.len(), 2);
        let expect = |a: usize, b: usize| TrafficMatrix::from_pairs(&[bases[a].clone(), bases[b].clone()].concat());
        assert_eq!(locals[0].matrix, expect(0, 1));
        assert_eq!(locals[1].matrix, expect(2, 3));
        assert_eq!(locals[1].descriptor.seq, 2);
        assert_eq!(agg.pending_mass(), 0);
        let log = fs::read_to_string(conf.analytics_log()).unwrap();
        assert_eq!(log.lines().count(), 2);
    }
}
