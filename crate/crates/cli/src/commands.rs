use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use netsense_core::analytics::{compute_quantities, quantities_to_record, Level, RecordMeta};
use netsense_core::coordinator::{Coordinator, CoordinatorConfig};
use netsense_core::format;
use netsense_core::ingest::{open_stream, write_pairs, PairFileFormat, StopFlag, TrafficSourceConfig};
use netsense_core::pipeline::{run_worker, PipelineConfig, Retention, TransportKind};
use netsense_core::transport::{
    Disposition, Inbox, LocalSink, MessagePassing, MessageSink, SharedSpool, SpoolSink, COORDINATOR_RANK,
};

use crate::args::{AnalyzeArgs, CoordinatorArgs, DistributionArg, GenArgs, WorkerArgs};
use crate::signals;

fn describe(c: &PipelineConfig) {
    log::info!(
        "rank {}: n_v={} n_b={} n_a={} n_g={} strategy={:?} transport={:?}",
        c.rank,
        c.n_v,
        c.n_b,
        c.n_a,
        c.n_g,
        c.strategy,
        c.transport
    );
}

pub fn worker(a: WorkerArgs) -> Result<()> {
    if a.rank == 0 {
        crate::usage_error("worker rank must be >= 1 (rank 0 is the coordinator)");
    }
    let cfg = a.pipeline.checked(a.rank);
    describe(&cfg);
    let src: TrafficSourceConfig = a.source.to_config();
    src.validate().context("traffic source")?;

    let stop = StopFlag::new();
    signals::install(&stop, a.duration);
    let stream = open_stream(&src, stop).context("opening traffic source")?;
    let sink: Box<dyn LocalSink> = match cfg.transport {
        TransportKind::MessagePassing => Box::new(MessageSink(
            MessagePassing::new(&a.pipeline.msg_root, a.rank, Disposition::Delete).context("message root")?,
        )),
        TransportKind::SharedFs => Box::new(SpoolSink {
            spool: SharedSpool::new(&cfg.spool_dir, Disposition::Delete).context("shared spool")?,
            rank: a.rank,
        }),
    };
    let report = run_worker(&cfg, stream, sink)?;
    let json = serde_json::to_string_pretty(&report)?;
    let path = cfg.rank_dir().join("summary.json");
    std::fs::write(&path, &json).with_context(|| format!("writing {}", path.display()))?;
    println!("{json}");
    Ok(())
}

pub fn coordinator(a: CoordinatorArgs) -> Result<()> {
    let pipeline = a.pipeline.checked(COORDINATOR_RANK);
    describe(&pipeline);
    let disposition = match pipeline.retention {
        Retention::Keep => Disposition::Archive,
        Retention::Delete => Disposition::Delete,
    };
    let mut inbox = match pipeline.transport {
        TransportKind::MessagePassing => Inbox::MessagePassing(
            MessagePassing::new(&a.pipeline.msg_root, COORDINATOR_RANK, disposition).context("message root")?,
        ),
        TransportKind::SharedFs => {
            Inbox::shared_fs(SharedSpool::new(&pipeline.spool_dir, disposition).context("shared spool")?)
        }
    };
    let mut cfg = CoordinatorConfig::new(pipeline, a.workers);
    cfg.idle_timeout = a.idle_timeout.map(Duration::from_secs_f64);
    let stop = StopFlag::new();
    signals::install(&stop, a.duration);
    let summary = Coordinator::new(cfg)?.run(&mut inbox, &stop)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Reads `(rank, level, seq)` from a `<rank>/<level>/<seq>.dbtm` path.
fn infer_meta(path: &Path) -> (Option<u32>, Option<Level>, Option<u64>) {
    let seq = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok());
    let parent = path.parent();
    let level = parent
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok());
    let rank = parent
        .and_then(|p| p.parent())
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok());
    (rank, level, seq)
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let m = format::read_file(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let (rank, level, seq) = infer_meta(&a.file);
    let level = match a.level {
        Some(l) => l.parse().map_err(|e| anyhow::anyhow!("{e}"))?,
        None => level.unwrap_or(Level::Base),
    };
    let meta = RecordMeta::now(a.rank.or(rank).unwrap_or(0), a.seq.or(seq).unwrap_or(0), level);
    println!("{}", quantities_to_record(&compute_quantities(&m), &meta));
    Ok(())
}

pub fn gen(a: GenArgs) -> Result<()> {
    let src = TrafficSourceConfig {
        total: Some(a.count),
        distribution: match a.distribution {
            DistributionArg::Uniform => netsense_core::ingest::Distribution::Uniform32,
            DistributionArg::Zipf => netsense_core::ingest::Distribution::Zipf {
                exponent: a.zipf_exponent,
                universe: a.universe,
            },
        },
        ..TrafficSourceConfig::synthetic(a.seed)
    };
    src.validate()?;
    let stream = open_stream(&src, StopFlag::new())?;
    let pairs = stream.map(|r| r.expect("synthetic streams do not fail"));
    let n = write_pairs(&a.out, pairs, PairFileFormat::from_path(&a.out))
        .with_context(|| format!("writing {}", a.out.display()))?;
    log::info!("wrote {n} pairs to {}", a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_from_spool_path() {
        assert_eq!(
            infer_meta(Path::new("/s/3/local/17.dbtm")),
            (Some(3), Some(Level::Local), Some(17))
        );
        assert_eq!(infer_meta(Path::new("x.dbtm")), (None, None, None));
    }
}
