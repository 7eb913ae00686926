mod common;

use std::time::Duration;

use common::{random_pairs, rng};
use netsense_core::analytics::{parse_record, Level};
use netsense_core::coordinator::{Coordinator, CoordinatorConfig, GlobalAccumulator};
use netsense_core::format;
use netsense_core::ingest::StopFlag;
use netsense_core::pipeline::{matrix_path, PipelineConfig, Strategy};
use netsense_core::transport::{Disposition, Inbox, MessagePassing, SharedSpool, Tag};
use netsense_core::TrafficMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

fn locals(seed: u64, count: usize, n_a: usize) -> Vec<TrafficMatrix> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| TrafficMatrix::from_pairs(&random_pairs(&mut r, n_a, 10)))
        .collect()
}

fn pipeline(dir: &std::path::Path, n_a: u64, per_global: u64, s: Strategy) -> PipelineConfig {
    let mut p = PipelineConfig::new(n_a, 1, per_global, dir);
    p.strategy = s;
    p
}

#[test]
fn global_strategies_are_byte_identical() {
    let mut r = rng(21);
    for run in 0..100 {
        let n_a = r.random_range(1..50u64);
        let per = r.random_range(1..6u64);
        let count = r.random_range(0..20usize);
        let ls = locals(run, count, n_a as usize);
        let mut out = vec![];
        for s in [Strategy::Batch, Strategy::Incremental] {
            let dir = tempfile::tempdir().unwrap();
            let mut c = Coordinator::new(CoordinatorConfig::new(pipeline(dir.path(), n_a, per, s), 0)).unwrap();
            let mut images = vec![];
            for (i, l) in ls.iter().enumerate() {
                if let Some(g) = c.incorporate(1, i as u64 + 1, l.clone()).unwrap() {
                    images.push(std::fs::read(matrix_path(dir.path(), 0, Level::Global, g.seq)).unwrap());
                }
            }
            out.push(images);
        }
        assert_eq!(out[0], out[1], "run {run}");
        assert_eq!(out[0].len(), count / per as usize);
    }
}

#[test]
fn global_is_permutation_invariant() {
    let ls = locals(5, 8, 40);
    let expected = TrafficMatrix::sum_tree(ls.clone()).unwrap();
    let mut r = rng(6);
    for _ in 0..20 {
        let mut shuffled = ls.clone();
        shuffled.shuffle(&mut r);
        let dir = tempfile::tempdir().unwrap();
        let mut acc = GlobalAccumulator::new(&pipeline(dir.path(), 40, 8, Strategy::Incremental));
        let mut got = None;
        for l in shuffled {
            got = acc.incorporate(l).unwrap().or(got);
        }
        assert_eq!(got.unwrap(), expected);
    }
}

#[test]
fn run_over_message_passing() {
    let dir = tempfile::tempdir().unwrap();
    let msg = dir.path().join("msg");
    let spool = dir.path().join("spool");
    let n_a = 30;
    let ls = locals(7, 9, n_a);
    for rank in 1..=3u32 {
        let mut mp = MessagePassing::new(&msg, rank, Disposition::Delete).unwrap();
        for l in &ls[(rank as usize - 1) * 3..rank as usize * 3] {
            mp.send_msg(0, Tag::LocalAggregate, &format::serialize(l)).unwrap();
        }
        mp.send_msg(0, Tag::Shutdown, &[]).unwrap();
    }
    let cfg = CoordinatorConfig::new(pipeline(&spool, n_a as u64, 2, Strategy::Batch), 3);
    let mut c = Coordinator::new(cfg).unwrap();
    let mut inbox = Inbox::MessagePassing(MessagePassing::new(&msg, 0, Disposition::Delete).unwrap());
    let s = c.run(&mut inbox, &StopFlag::new()).unwrap();
    assert_eq!(s.locals_received, 9);
    assert_eq!(s.globals, 4);
    assert_eq!(s.global_pairs, 4 * 60);
    assert_eq!(s.pending_locals, 1);
    assert_eq!(s.pending_pairs, 30);
    assert_eq!(s.global_pairs + s.pending_pairs, 9 * n_a as u64);
    assert_eq!(s.shutdown_ranks, vec![1, 2, 3]);
    assert_eq!(s.per_rank_locals.values().sum::<u64>(), 9);

    // probe order is lowest (seq, src), so globals pair up locals by seq round
    let g1 = format::read_file(&matrix_path(&spool, 0, Level::Global, 1)).unwrap();
    assert_eq!(g1, ls[0].add(&ls[3]).unwrap());

    let log = std::fs::read_to_string(spool.join("0/analytics.log")).unwrap();
    let seqs: Vec<u64> = log.lines().map(|l| parse_record(l).unwrap().meta.seq).collect();
    assert_eq!(seqs, vec![1, 2, 3, 4]);
    let metrics = std::fs::read_to_string(spool.join("0/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(spool.join("0/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["globals"], 4);
    assert!(std::fs::read_dir(spool.join("0/tmp")).unwrap().next().is_some());
}

#[test]
fn run_over_shared_spool() {
    let dir = tempfile::tempdir().unwrap();
    let shared = SharedSpool::new(dir.path().join("sfs"), Disposition::Delete).unwrap();
    let n_a = 12;
    let ls = locals(8, 4, n_a);
    for (i, l) in ls.iter().enumerate() {
        shared.publish(1 + (i as u32 % 2), 1 + i as u64 / 2, &format::serialize(l)).unwrap();
    }
    shared.publish_shutdown(1).unwrap();
    shared.publish_shutdown(2).unwrap();
    let cfg = CoordinatorConfig::new(pipeline(&dir.path().join("spool"), n_a as u64, 4, Strategy::Incremental), 2);
    let mut c = Coordinator::new(cfg).unwrap();
    let s = c.run(&mut Inbox::shared_fs(shared), &StopFlag::new()).unwrap();
    assert_eq!(s.globals, 1);
    assert_eq!(s.pending_pairs, 0);
    let g = format::read_file(&matrix_path(&dir.path().join("spool"), 0, Level::Global, 1)).unwrap();
    assert_eq!(g, TrafficMatrix::sum_tree(ls).unwrap());
}

#[test]
fn idle_coordinator_exits_with_empty_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = CoordinatorConfig::new(pipeline(&dir.path().join("spool"), 8, 2, Strategy::Batch), 2);
    cfg.idle_timeout = Some(Duration::from_millis(100));
    let mut c = Coordinator::new(cfg).unwrap();
    let mut inbox = Inbox::MessagePassing(MessagePassing::new(dir.path().join("msg"), 0, Disposition::Delete).unwrap());
    let s = c.run(&mut inbox, &StopFlag::new()).unwrap();
    assert_eq!(s.globals, 0);
    assert_eq!(s.locals_received, 0);
    assert!(s.shutdown_ranks.is_empty());
    let metrics = std::fs::read_to_string(dir.path().join("spool/0/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
}

#[test]
fn stop_flag_ends_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CoordinatorConfig::new(pipeline(&dir.path().join("spool"), 8, 2, Strategy::Batch), 2);
    let mut c = Coordinator::new(cfg).unwrap();
    let mut inbox = Inbox::MessagePassing(MessagePassing::new(dir.path().join("msg"), 0, Disposition::Delete).unwrap());
    let stop = StopFlag::new();
    let s2 = stop.clone();
    let h = std::thread::spawn(move || {
        std::thread::sleep(Duration::from_millis(50));
        s2.stop();
    });
    c.run(&mut inbox, &stop).unwrap();
    h.join().unwrap();
}
