//! Shared-filesystem spool.
//!
//! Workers publish `local/<rank>_<seq>.dbtm` (via `.tmp` + rename) and, when
//! finished, an empty `local/<rank>.shutdown` marker. The coordinator scans
//! for complete files and consumes them in `(rank, seq)` order; consumed
//! files are deleted or moved to `consumed/`, undecodable ones to
//! `quarantine/`.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use super::{Disposition, TransportError, COORDINATOR_RANK};
use crate::format::{self, write_atomic};
use crate::matrix::TrafficMatrix;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SfsEntry {
    pub rank: u32,
    pub seq: u64,
    pub path: PathBuf,
}

#[derive(Clone, Debug)]
pub struct SharedSpool {
    root: PathBuf,
    disposition: Disposition,
}

fn parse_local_name(name: &str) -> Option<(u32, u64)> {
    let (r, s) = name.strip_suffix(".dbtm")?.split_once('_')?;
    Some((r.parse().ok()?, s.parse().ok()?))
}

fn read_dir_names(dir: &Path) -> Result<Vec<(String, PathBuf)>, TransportError> {
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(TransportError::io(dir)(e)),
    };
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(TransportError::io(dir))?;
        if let Some(n) = entry.file_name().to_str() {
            out.push((n.to_string(), entry.path()));
        }
    }
    Ok(out)
}

impl SharedSpool {
    pub fn new(root: impl Into<PathBuf>, disposition: Disposition) -> Result<Self, TransportError> {
        let root = root.into();
        let local = root.join("local");
        fs::create_dir_all(&local).map_err(TransportError::io(&local))?;
        Ok(Self { root, disposition })
    }

    fn local_dir(&self) -> PathBuf {
        self.root.join("local")
    }

    /// Atomically publishes one local aggregate image.
    pub fn publish(&self, rank: u32, seq: u64, bytes: &[u8]) -> Result<PathBuf, TransportError> {
        let path = self.local_dir().join(format!("{rank}_{seq}.dbtm"));
        write_atomic(&path, bytes).map_err(TransportError::io(&path))?;
        Ok(path)
    }

    pub fn publish_shutdown(&self, rank: u32) -> Result<(), TransportError> {
        let path = self.local_dir().join(format!("{rank}.shutdown"));
        write_atomic(&path, &[]).map_err(TransportError::io(&path))
    }

    /// Ranks that have published a shutdown marker.
    pub fn shutdown_ranks(&self) -> Result<Vec<u32>, TransportError> {
        let mut ranks: Vec<u32> = read_dir_names(&self.local_dir())?
            .into_iter()
            .filter_map(|(n, _)| n.strip_suffix(".shutdown")?.parse().ok())
            .filter(|&r| r != COORDINATOR_RANK)
            .collect();
        ranks.sort_unstable();
        Ok(ranks)
    }

    /// Complete, unconsumed local aggregates ordered by `(rank, seq)`.
    pub fn scan(&self) -> Result<Vec<SfsEntry>, TransportError> {
        let mut out: Vec<SfsEntry> = read_dir_names(&self.local_dir())?
            .into_iter()
            .filter_map(|(n, path)| {
                let (rank, seq) = parse_local_name(&n)?;
                Some(SfsEntry { rank, seq, path })
            })
            .collect();
        out.sort();
        Ok(out)
    }

    fn move_to(&self, kind: &str, e: &SfsEntry) -> Result<(), TransportError> {
        let dir = self.root.join(kind);
        fs::create_dir_all(&dir).map_err(TransportError::io(&dir))?;
        let name = e.path.file_name().expect("scanned entries have a file name");
        fs::rename(&e.path, dir.join(name)).map_err(TransportError::io(&e.path))
    }

    /// Reads and decodes one scanned entry, then removes it from the spool.
    /// Returns the matrix and the size of its image.
    pub fn consume(&self, e: &SfsEntry) -> Result<(TrafficMatrix, u64), TransportError> {
        let bytes = fs::read(&e.path).map_err(TransportError::io(&e.path))?;
        match format::deserialize(&bytes) {
            Ok(m) => {
                match self.disposition {
                    Disposition::Delete => fs::remove_file(&e.path).map_err(TransportError::io(&e.path))?,
                    Disposition::Archive => self.move_to("consumed", e)?,
                }
                Ok((m, bytes.len() as u64))
            }
            Err(err) => {
                self.move_to("quarantine", e)?;
                Err(TransportError::poison(e.rank, COORDINATOR_RANK, e.seq, err))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ip::IpPair;

    #[test]
    fn local_names() {
        assert_eq!(parse_local_name("3_17.dbtm"), Some((3, 17)));
        assert_eq!(parse_local_name("3_17.dbtm.tmp"), None);
        assert_eq!(parse_local_name("3.shutdown"), None);
    }

    #[test]
    fn publish_scan_consume() {
        let dir = tempfile::tempdir().unwrap();
        let s = SharedSpool::new(dir.path(), Disposition::Delete).unwrap();
        assert!(s.scan().unwrap().is_empty());
        let m = TrafficMatrix::from_pairs(&[IpPair::new(1, 2)]);
        s.publish(4, 1, &format::serialize(&m)).unwrap();
        let found = s.scan().unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!((found[0].rank, found[0].seq), (4, 1));
        assert_eq!(s.consume(&found[0]).unwrap().0, m);
        assert!(s.scan().unwrap().is_empty());
    }

    #[test]
    fn shutdown_markers() {
        let dir = tempfile::tempdir().unwrap();
        let s = SharedSpool::new(dir.path(), Disposition::Delete).unwrap();
        s.publish_shutdown(2).unwrap();
        s.publish_shutdown(1).unwrap();
        assert_eq!(s.shutdown_ranks().unwrap(), vec![1, 2]);
        assert!(s.scan().unwrap().is_empty());
    }
}
