mod common;

use common::{brute_force_quantities, random_pairs, rng};
use netsense_core::analytics::{parse_record, quantities_to_record, Level, RecordMeta};
use netsense_core::{compute_quantities, TrafficMatrix};
use rand::Rng;

#[test]
fn matches_brute_force_on_4096_pairs_over_256_addresses() {
    let pairs = random_pairs(&mut rng(4096), 4096, 8);
    let q = compute_quantities(&TrafficMatrix::from_pairs(&pairs));
    assert_eq!(q, brute_force_quantities(&pairs));
    assert!(q.check_ordering().is_ok());
}

#[test]
fn matches_brute_force_across_universes() {
    let mut r = rng(2);
    for i in 0..1000 {
        let len = r.random_range(0..=4096);
        let bits = r.random_range(4..=16);
        let pairs = random_pairs(&mut r, len, bits);
        let q = compute_quantities(&TrafficMatrix::from_pairs(&pairs));
        assert_eq!(q, brute_force_quantities(&pairs), "instance {i} len {len} bits {bits}");
        q.check_ordering().unwrap();
    }
}

#[test]
fn aggregation_is_monotone() {
    let mut r = rng(3);
    for _ in 0..200 {
        let (la, lb) = (r.random_range(0..500), r.random_range(0..500));
        let a = TrafficMatrix::from_pairs(&random_pairs(&mut r, la, 6));
        let b = TrafficMatrix::from_pairs(&random_pairs(&mut r, lb, 6));
        let (qa, qb) = (compute_quantities(&a), compute_quantities(&b));
        let qs = compute_quantities(&a.add(&b).unwrap());
        assert_eq!(qs.valid_requests, qa.valid_requests + qb.valid_requests);
        assert!(qs.unique_links <= qa.unique_links + qb.unique_links);
        for (s, x, y) in [
            (qs.max_link_requests, qa.max_link_requests, qb.max_link_requests),
            (qs.max_source_requests, qa.max_source_requests, qb.max_source_requests),
            (qs.max_source_fanout, qa.max_source_fanout, qb.max_source_fanout),
            (qs.max_destination_requests, qa.max_destination_requests, qb.max_destination_requests),
            (qs.max_destination_fanin, qa.max_destination_fanin, qb.max_destination_fanin),
        ] {
            assert!(s >= x && s >= y);
        }
    }
}

#[test]
fn record_fields_match_schema_doc() {
    let doc = include_str!("../../../docs/schema.md");
    let block = doc
        .split("```json")
        .nth(1)
        .and_then(|s| s.split("```").next())
        .expect("schema.md carries an example record");
    let golden: serde_json::Value = serde_json::from_str(block.trim()).unwrap();
    let mut golden_keys: Vec<&String> = golden.as_object().unwrap().keys().collect();
    golden_keys.sort();

    let q = compute_quantities(&TrafficMatrix::new());
    let line = quantities_to_record(&q, &RecordMeta::now(0, 1, Level::Global));
    let produced: serde_json::Value = serde_json::from_str(&line).unwrap();
    let mut keys: Vec<&String> = produced.as_object().unwrap().keys().collect();
    keys.sort();
    assert_eq!(keys, golden_keys);

    // the documented example itself must parse
    parse_record(block.trim()).unwrap();
}
