use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use netsense_core::ingest::{
    open_stream, read_pairs, write_pairs, HttpTap, PairFileFormat, SourceKind, StopFlag, TrafficSourceConfig,
};
use netsense_core::IpPair;

#[test]
fn throttle_holds_ten_thousand_rps() {
    let cfg = TrafficSourceConfig {
        rate: 1e4,
        ..TrafficSourceConfig::synthetic(1)
    };
    let stop = StopFlag::new();
    let stream = open_stream(&cfg, stop.clone()).unwrap();
    let s = stop.clone();
    let timer = std::thread::spawn(move || {
        std::thread::sleep(Duration::from_secs(10));
        s.stop();
    });
    let n = stream.count() as i64;
    timer.join().unwrap();
    assert!((n - 100_000).abs() <= 5_000, "emitted {n}");
}

#[test]
fn replay_round_trips_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let pairs: Vec<IpPair> = open_stream(
        &TrafficSourceConfig {
            total: Some(1000),
            ..TrafficSourceConfig::synthetic(2)
        },
        StopFlag::new(),
    )
    .unwrap()
    .map(Result::unwrap)
    .collect();
    for name in ["p.bin", "p.csv"] {
        let path = dir.path().join(name);
        let n = write_pairs(&path, pairs.iter().copied(), PairFileFormat::from_path(&path)).unwrap();
        assert_eq!(n, 1000);
        assert_eq!(read_pairs(&path).unwrap(), pairs);
        let cfg = TrafficSourceConfig {
            kind: SourceKind::Replay,
            path: Some(path.clone()),
            total: Some(10),
            ..Default::default()
        };
        let got: Vec<IpPair> = open_stream(&cfg, StopFlag::new()).unwrap().map(Result::unwrap).collect();
        assert_eq!(got, pairs[..10]);
    }
}

fn get(addr: std::net::SocketAddrV4) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(b"GET / HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

fn tap(total: u64) -> HttpTap {
    let cfg = TrafficSourceConfig {
        kind: SourceKind::HttpTap,
        bind: Some("127.0.0.1:0".parse().unwrap()),
        total: Some(total),
        ..Default::default()
    };
    HttpTap::bind(&cfg, StopFlag::new()).unwrap()
}

#[test]
fn http_tap_single_request() {
    let mut t = tap(1);
    let addr = t.local_addr();
    let client = std::thread::spawn(move || get(addr));
    let p = t.next().unwrap();
    assert!(client.join().unwrap().starts_with("HTTP/1.1 204"));
    assert_eq!(p, IpPair::new(std::net::Ipv4Addr::LOCALHOST, std::net::Ipv4Addr::LOCALHOST));
    assert!(t.next().is_none());
}

#[test]
fn http_tap_concurrent_requests() {
    let t = tap(100);
    let addr = t.local_addr();
    let stats = t.stats();
    let clients: Vec<_> = (0..100).map(|_| std::thread::spawn(move || get(addr))).collect();
    let start = Instant::now();
    let n = t.count();
    for c in clients {
        c.join().unwrap();
    }
    assert_eq!(n, 100);
    assert_eq!(stats.accepted.load(std::sync::atomic::Ordering::Relaxed), 100);
    assert!(start.elapsed() < Duration::from_secs(30));
}
