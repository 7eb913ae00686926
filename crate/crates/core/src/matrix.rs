//! Hypersparse 2^32 x 2^32 traffic matrices.
//!
//! Rows are source addresses, columns are destination addresses and each
//! stored entry is the number of requests observed on that link. Storage is
//! doubly compressed (DCSR): only nonzero rows get a header, and the row list,
//! each row's column list, and therefore the whole entry sequence are kept in
//! ascending `(src, dst)` order. That order is also the canonical wire order,
//! so serialization never needs to sort.
//!
//! The only algebra provided is the plus monoid: element-wise addition with
//! absent entries treated as zero.

use std::sync::OnceLock;

use thiserror::Error;

use crate::ip::{IpAddr32, IpPair};

/// Logical number of rows and of columns, independent of occupancy.
pub const DIMENSION: u64 = 1 << 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MatrixError {
    #[error("count overflow on link {src} -> {dst}")]
    CountOverflow { src: IpAddr32, dst: IpAddr32 },
    #[error("request total overflow")]
    TotalOverflow,
    #[error("cannot reduce an empty sequence of matrices")]
    EmptyInput,
}

/// A hypersparse traffic matrix with 64-bit request counts.
///
/// Immutable once built, apart from [`TrafficMatrix::add_assign`]; it can be
/// shared freely across threads for reading.
#[derive(Clone, Debug, Default)]
pub struct TrafficMatrix {
    /// Nonzero row ids, strictly ascending.
    rows: Vec<u32>,
    /// `row_ptr[i]..row_ptr[i + 1]` is the slice of `cols`/`counts` owned by `rows[i]`.
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    counts: Vec<u64>,
    request_total: u64,
    col_index: OnceLock<ColumnIndex>,
}

/// Column-major view of a matrix (DCSC), built on first column-side query.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ColumnIndex {
    cols: Vec<u32>,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    counts: Vec<u64>,
}

impl ColumnIndex {
    /// Number of nonzero columns.
    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    /// Iterates `(dst, source rows, counts)` in ascending destination order.
    pub fn iter(&self) -> impl Iterator<Item = (IpAddr32, &[u32], &[u64])> + '_ {
        self.cols.iter().enumerate().map(move |(i, &c)| {
            let span = self.col_ptr[i]..self.col_ptr[i + 1];
            (IpAddr32(c), &self.rows[span.clone()], &self.counts[span])
        })
    }

    /// Source rows and counts of one destination column.
    pub fn column(&self, dst: IpAddr32) -> Option<(&[u32], &[u64])> {
        let i = self.cols.binary_search(&dst.0).ok()?;
        let span = self.col_ptr[i]..self.col_ptr[i + 1];
        Some((&self.rows[span.clone()], &self.counts[span]))
    }
}

impl PartialEq for TrafficMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.request_total == other.request_total
            && self.rows == other.rows
            && self.row_ptr == other.row_ptr
            && self.cols == other.cols
            && self.counts == other.counts
    }
}

impl Eq for TrafficMatrix {}

/// Accumulates entries that arrive in strictly ascending `(src, dst)` order.
struct SortedBuilder {
    m: TrafficMatrix,
}

impl SortedBuilder {
    fn with_capacity(nnz: usize) -> Self {
        let mut m = TrafficMatrix {
            cols: Vec::with_capacity(nnz),
            counts: Vec::with_capacity(nnz),
            ..TrafficMatrix::default()
        };
        m.row_ptr.push(0);
        Self { m }
    }

    #[inline]
    fn push(&mut self, src: u32, dst: u32, count: u64) {
        debug_assert!(count > 0);
        if self.m.rows.last() != Some(&src) {
            if !self.m.rows.is_empty() {
                self.m.row_ptr.push(self.m.cols.len());
            }
            self.m.rows.push(src);
        }
        self.m.cols.push(dst);
        self.m.counts.push(count);
    }

    fn finish(mut self, request_total: u64) -> TrafficMatrix {
        if self.m.rows.is_empty() {
            self.m.row_ptr.clear();
        } else {
            self.m.row_ptr.push(self.m.cols.len());
        }
        self.m.request_total = request_total;
        self.m
    }
}

impl TrafficMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a matrix whose entry `(s, d)` is the multiplicity of `(s, d)` in `pairs`.
    pub fn from_pairs(pairs: &[IpPair]) -> Self {
        let mut keys: Vec<u64> = pairs.iter().map(|p| p.key()).collect();
        keys.sort_unstable();
        Self::from_sorted_keys(&keys)
    }

    fn from_sorted_keys(keys: &[u64]) -> Self {
        let mut b = SortedBuilder::with_capacity(keys.len());
        let mut i = 0;
        while i < keys.len() {
            let k = keys[i];
            let mut j = i + 1;
            while j < keys.len() && keys[j] == k {
                j += 1;
            }
            b.push((k >> 32) as u32, k as u32, (j - i) as u64);
            i = j;
        }
        b.finish(keys.len() as u64)
    }

    /// Builds a matrix from arbitrary `(src, dst, count)` triples. Duplicate
    /// links are summed and zero counts are ignored.
    pub fn from_entries<I>(entries: I) -> Result<Self, MatrixError>
    where
        I: IntoIterator<Item = (IpAddr32, IpAddr32, u64)>,
    {
        let mut v: Vec<(u64, u64)> = entries
            .into_iter()
            .filter(|e| e.2 > 0)
            .map(|(s, d, c)| (IpPair { src: s, dst: d }.key(), c))
            .collect();
        v.sort_unstable_by_key(|e| e.0);
        let mut b = SortedBuilder::with_capacity(v.len());
        let mut total = 0u64;
        let mut i = 0;
        while i < v.len() {
            let key = v[i].0;
            let mut c = 0u64;
            while i < v.len() && v[i].0 == key {
                c = c.checked_add(v[i].1).ok_or(MatrixError::CountOverflow {
                    src: IpAddr32((key >> 32) as u32),
                    dst: IpAddr32(key as u32),
                })?;
                i += 1;
            }
            total = total.checked_add(c).ok_or(MatrixError::TotalOverflow)?;
            b.push((key >> 32) as u32, key as u32, c);
        }
        Ok(b.finish(total))
    }

    /// Reassembles a matrix from triples already known to be strictly
    /// ascending with nonzero counts. Callers must have validated that.
    pub(crate) fn from_canonical_triples(triples: &[(u32, u32, u64)], request_total: u64) -> Self {
        let mut b = SortedBuilder::with_capacity(triples.len());
        for &(s, d, c) in triples {
            b.push(s, d, c);
        }
        b.finish(request_total)
    }

    /// Number of stored (nonzero) entries, i.e. unique links.
    pub fn nnz(&self) -> u64 {
        self.counts.len() as u64
    }

    /// Sum of all counts, i.e. the number of requests the matrix represents.
    pub fn request_total(&self) -> u64 {
        self.request_total
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Number of nonzero rows (distinct sources).
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// Count stored for one link, 0 when absent.
    pub fn get(&self, src: IpAddr32, dst: IpAddr32) -> u64 {
        self.row(src)
            .and_then(|(cols, counts)| cols.binary_search(&dst.0).ok().map(|j| counts[j]))
            .unwrap_or(0)
    }

    /// Destination columns and counts of one source row.
    pub fn row(&self, src: IpAddr32) -> Option<(&[u32], &[u64])> {
        let i = self.rows.binary_search(&src.0).ok()?;
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        Some((&self.cols[span.clone()], &self.counts[span]))
    }

    /// Iterates `(src, destination columns, counts)` in ascending source order.
    pub fn iter_rows(&self) -> impl Iterator<Item = (IpAddr32, &[u32], &[u64])> + '_ {
        self.rows.iter().enumerate().map(move |(i, &r)| {
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            (IpAddr32(r), &self.cols[span.clone()], &self.counts[span])
        })
    }

    /// Iterates all entries in canonical `(src, dst)` order.
    pub fn iter(&self) -> impl Iterator<Item = (IpAddr32, IpAddr32, u64)> + '_ {
        self.iter_rows().flat_map(|(r, cols, counts)| {
            cols.iter()
                .zip(counts)
                .map(move |(&c, &n)| (r, IpAddr32(c), n))
        })
    }

    /// Column-major index, materialized on first use and cached.
    pub fn columns(&self) -> &ColumnIndex {
        self.col_index.get_or_init(|| {
            let mut t: Vec<(u32, u32, u64)> = self
                .iter()
                .map(|(s, d, c)| (d.0, s.0, c))
                .collect();
            t.sort_unstable_by_key(|e| (e.0, e.1));
            let mut idx = ColumnIndex {
                cols: Vec::new(),
                col_ptr: vec![0],
                rows: Vec::with_capacity(t.len()),
                counts: Vec::with_capacity(t.len()),
            };
            for (d, s, c) in t {
                if idx.cols.last() != Some(&d) {
                    if !idx.cols.is_empty() {
                        idx.col_ptr.push(idx.rows.len());
                    }
                    idx.cols.push(d);
                }
                idx.rows.push(s);
                idx.counts.push(c);
            }
            if idx.cols.is_empty() {
                idx.col_ptr.clear();
            } else {
                idx.col_ptr.push(idx.rows.len());
            }
            idx
        })
    }

    /// Element-wise sum. Counts never wrap: overflow is reported as an error.
    pub fn add(&self, other: &TrafficMatrix) -> Result<TrafficMatrix, MatrixError> {
        let request_total = self
            .request_total
            .checked_add(other.request_total)
            .ok_or(MatrixError::TotalOverflow)?;
        let mut b = SortedBuilder::with_capacity(self.counts.len().max(other.counts.len()));
        let mut a = self.iter().peekable();
        let mut c = other.iter().peekable();
        loop {
            let next = match (a.peek(), c.peek()) {
                (None, None) => break,
                (Some(_), None) => a.next().unwrap(),
                (None, Some(_)) => c.next().unwrap(),
                (Some(x), Some(y)) => match (x.0, x.1).cmp(&(y.0, y.1)) {
                    std::cmp::Ordering::Less => a.next().unwrap(),
                    std::cmp::Ordering::Greater => c.next().unwrap(),
                    std::cmp::Ordering::Equal => {
                        let (s, d, n1) = a.next().unwrap();
                        let (_, _, n2) = c.next().unwrap();
                        let n = n1
                            .checked_add(n2)
                            .ok_or(MatrixError::CountOverflow { src: s, dst: d })?;
                        (s, d, n)
                    }
                },
            };
            b.push(next.0 .0, next.1 .0, next.2);
        }
        Ok(b.finish(request_total))
    }

    /// In-place `self += other`. On error `self` is left unchanged.
    pub fn add_assign(&mut self, other: &TrafficMatrix) -> Result<(), MatrixError> {
        if other.is_empty() && other.request_total == 0 {
            return Ok(());
        }
        *self = self.add(other)?;
        Ok(())
    }

    /// Sums a non-empty sequence with a balanced pairwise reduction tree:
    /// `[m1, m2, m3, m4]` becomes `(m1 + m2) + (m3 + m4)`.
    pub fn sum_tree(matrices: Vec<TrafficMatrix>) -> Result<TrafficMatrix, MatrixError> {
        if matrices.is_empty() {
            return Err(MatrixError::EmptyInput);
        }
        let mut level = matrices;
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            let mut it = level.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(a.add(&b)?),
                    None => next.push(a),
                }
            }
            level = next;
        }
        Ok(level.pop().unwrap())
    }

    /// Checks every structural invariant: ordering, nonzero counts, cached
    /// total, and agreement of the row and column views.
    pub fn is_consistent(&self) -> bool {
        if self.counts.len() != self.cols.len() {
            return false;
        }
        if self.rows.is_empty() {
            return self.row_ptr.is_empty() && self.cols.is_empty() && self.request_total == 0;
        }
        if self.row_ptr.len() != self.rows.len() + 1
            || self.row_ptr[0] != 0
            || *self.row_ptr.last().unwrap() != self.cols.len()
        {
            return false;
        }
        if self.rows.windows(2).any(|w| w[0] >= w[1]) {
            return false;
        }
        let mut fanout_sum = 0usize;
        for i in 0..self.rows.len() {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            if lo >= hi || self.cols[lo..hi].windows(2).any(|w| w[0] >= w[1]) {
                return false;
            }
            fanout_sum += hi - lo;
        }
        if self.counts.contains(&0) {
            return false;
        }
        let total: Option<u64> = self.counts.iter().try_fold(0u64, |a, &c| a.checked_add(c));
        if total != Some(self.request_total) {
            return false;
        }
        let cols = self.columns();
        let fanin_sum: usize = cols.iter().map(|(_, r, _)| r.len()).sum();
        fanout_sum == self.cols.len() && fanin_sum == self.cols.len()
    }
}
