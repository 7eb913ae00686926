//! Independent oracles. Nothing here goes through the matrix reductions
//! under test: everything is tallied straight from raw pair lists.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use netsense_core::{IpAddr32, IpPair, NetworkQuantities, TrafficMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Multiplicity of every link, by direct counting.
pub fn tally(pairs: &[IpPair]) -> BTreeMap<(u32, u32), u64> {
    let mut m = BTreeMap::new();
    for p in pairs {
        *m.entry((p.src.0, p.dst.0)).or_insert(0) += 1;
    }
    m
}

pub fn entries(m: &TrafficMatrix) -> BTreeMap<(u32, u32), u64> {
    m.iter().map(|(s, d, c)| ((s.0, d.0), c)).collect()
}

/// The nine quantities computed from the raw pair list.
pub fn brute_force_quantities(pairs: &[IpPair]) -> NetworkQuantities {
    let mut links: HashMap<(u32, u32), u64> = HashMap::new();
    let mut src_req: HashMap<u32, u64> = HashMap::new();
    let mut src_dsts: HashMap<u32, HashSet<u32>> = HashMap::new();
    let mut dst_req: HashMap<u32, u64> = HashMap::new();
    let mut dst_srcs: HashMap<u32, HashSet<u32>> = HashMap::new();
    for p in pairs {
        let (s, d) = (p.src.0, p.dst.0);
        *links.entry((s, d)).or_default() += 1;
        *src_req.entry(s).or_default() += 1;
        src_dsts.entry(s).or_default().insert(d);
        *dst_req.entry(d).or_default() += 1;
        dst_srcs.entry(d).or_default().insert(s);
    }
    NetworkQuantities {
        valid_requests: pairs.len() as u64,
        unique_links: links.len() as u64,
        max_link_requests: links.values().copied().max().unwrap_or(0),
        unique_sources: src_req.len() as u64,
        max_source_requests: src_req.values().copied().max().unwrap_or(0),
        max_source_fanout: src_dsts.values().map(|s| s.len() as u64).max().unwrap_or(0),
        unique_destinations: dst_req.len() as u64,
        max_destination_requests: dst_req.values().copied().max().unwrap_or(0),
        max_destination_fanin: dst_srcs.values().map(|s| s.len() as u64).max().unwrap_or(0),
    }
}

/// `len` pairs drawn uniformly from a universe of `2^bits` addresses.
pub fn random_pairs(rng: &mut ChaCha8Rng, len: usize, bits: u32) -> Vec<IpPair> {
    let draw = |rng: &mut ChaCha8Rng| -> IpAddr32 {
        if bits >= 32 {
            IpAddr32(rng.random())
        } else {
            IpAddr32(rng.random_range(0..(1u32 << bits)))
        }
    };
    (0..len)
        .map(|_| {
            let src = draw(rng);
            let dst = draw(rng);
            IpPair { src, dst }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
