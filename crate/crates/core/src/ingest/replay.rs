//! Recorded pair files.
//!
//! Binary files are a flat sequence of 8-byte records, `src` then `dst`, each
//! a little-endian u32. CSV files hold one `src,dst` dotted-quad pair per line;
//! blank lines, `#` comments and a leading `src,dst` header are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use super::{IngestError, StopFlag, Throttle, TrafficSourceConfig};
use crate::ip::{IpAddr32, IpPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairFileFormat {
    Binary,
    Csv,
}

impl PairFileFormat {
    /// `.csv` files are CSV, everything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Binary,
        }
    }
}

enum Reader {
    Binary { r: BufReader<File>, offset: u64 },
    Csv { r: BufReader<File>, line_no: u64, buf: String },
}

/// Streams pairs from a recorded file in file order.
pub struct ReplayStream {
    path: PathBuf,
    reader: Reader,
    throttle: Option<Throttle>,
    remaining: Option<u64>,
    stop: StopFlag,
    failed: bool,
}

impl ReplayStream {
    pub fn open(cfg: &TrafficSourceConfig, stop: StopFlag) -> Result<Self, IngestError> {
        let path = cfg
            .path
            .clone()
            .ok_or_else(|| IngestError::InvalidConfig("replay source needs a path".into()))?;
        let file = File::open(&path).map_err(|e| match e.kind() {
            ErrorKind::NotFound => IngestError::MissingFile(path.clone()),
            _ => IngestError::Io {
                path: path.clone(),
                source: e,
            },
        })?;
        let r = BufReader::new(file);
        let reader = match PairFileFormat::from_path(&path) {
            PairFileFormat::Binary => Reader::Binary { r, offset: 0 },
            PairFileFormat::Csv => Reader::Csv {
                r,
                line_no: 0,
                buf: String::new(),
            },
        };
        Ok(Self {
            path,
            reader,
            throttle: Throttle::new(cfg.rate),
            remaining: cfg.total,
            stop,
            failed: false,
        })
    }

    fn malformed(&self, location: String, reason: impl Into<String>) -> IngestError {
        IngestError::Malformed {
            path: self.path.clone(),
            location,
            reason: reason.into(),
        }
    }

    fn read_one(&mut self) -> Option<Result<IpPair, IngestError>> {
        match &mut self.reader {
            Reader::Binary { r, offset } => {
                let mut rec = [0u8; 8];
                let mut got = 0;
                while got < rec.len() {
                    match r.read(&mut rec[got..]) {
                        Ok(0) => break,
                        Ok(n) => got += n,
                        Err(e) if e.kind() == ErrorKind::Interrupted => {}
                        Err(e) => {
                            return Some(Err(IngestError::Io {
                                path: self.path.clone(),
                                source: e,
                            }))
                        }
                    }
                }
                let at = *offset;
                *offset += got as u64;
                match got {
                    0 => None,
                    8 => Some(Ok(IpPair::new(
                        u32::from_le_bytes(rec[0..4].try_into().unwrap()),
                        u32::from_le_bytes(rec[4..8].try_into().unwrap()),
                    ))),
                    n => Some(Err(self.malformed(
                        format!("byte offset {at}"),
                        format!("partial record of {n} bytes"),
                    ))),
                }
            }
            Reader::Csv { r, line_no, buf } => loop {
                buf.clear();
                match r.read_line(buf) {
                    Ok(0) => return None,
                    Ok(_) => {}
                    Err(e) => {
                        return Some(Err(IngestError::Io {
                            path: self.path.clone(),
                            source: e,
                        }))
                    }
                }
                *line_no += 1;
                let line = buf.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                if *line_no == 1 && line.eq_ignore_ascii_case("src,dst") {
                    continue;
                }
                let n = *line_no;
                let parsed = line.split_once(',').and_then(|(s, d)| {
                    Some(IpPair {
                        src: s.parse::<IpAddr32>().ok()?,
                        dst: d.parse::<IpAddr32>().ok()?,
                    })
                });
                let line = line.to_string();
                return Some(match parsed {
                    Some(p) => Ok(p),
                    None => Err(self.malformed(format!("line {n}"), format!("expected `src,dst`, got {line:?}"))),
                });
            },
        }
    }
}

impl Iterator for ReplayStream {
    type Item = Result<IpPair, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.stop.is_stopped() || self.remaining == Some(0) {
            return None;
        }
        let item = self.read_one()?;
        match &item {
            Ok(_) => {
                if let Some(r) = self.remaining.as_mut() {
                    *r -= 1;
                }
                if let Some(t) = self.throttle.as_mut() {
                    t.take();
                }
            }
            Err(_) => self.failed = true,
        }
        Some(item)
    }
}

/// Writes a pair file in the given format.
pub fn write_pairs<I>(path: &Path, pairs: I, format: PairFileFormat) -> std::io::Result<u64>
where
    I: IntoIterator<Item = IpPair>,
{
    let mut w = BufWriter::new(File::create(path)?);
    let mut n = 0u64;
    for p in pairs {
        match format {
            PairFileFormat::Binary => {
                w.write_all(&p.src.0.to_le_bytes())?;
                w.write_all(&p.dst.0.to_le_bytes())?;
            }
            PairFileFormat::Csv => writeln!(w, "{},{}", p.src, p.dst)?,
        }
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

/// Reads a whole pair file, format chosen by extension.
pub fn read_pairs(path: &Path) -> Result<Vec<IpPair>, IngestError> {
    let cfg = TrafficSourceConfig {
        kind: super::SourceKind::Replay,
        path: Some(path.to_path_buf()),
        ..TrafficSourceConfig::default()
    };
    ReplayStream::open(&cfg, StopFlag::new())?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_file() {
        let err = read_pairs(Path::new("/nonexistent/pairs.bin")).unwrap_err();
        assert!(matches!(err, IngestError::MissingFile(_)));
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["e.bin", "e.csv"] {
            let p = dir.path().join(name);
            std::fs::write(&p, b"").unwrap();
            assert!(read_pairs(&p).unwrap().is_empty());
        }
    }

    #[test]
    fn odd_binary_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        std::fs::write(&p, [1u8; 8 + 8 + 3]).unwrap();
        match read_pairs(&p).unwrap_err() {
            IngestError::Malformed { location, .. } => assert_eq!(location, "byte offset 16"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_with_header_and_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "src,dst\n1.2.3.4,5.6.7.8\n\n10.0.0.1, 10.0.0.2\n").unwrap();
        let pairs = read_pairs(&p).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[1].dst.to_string(), "10.0.0.2");

        std::fs::write(&p, "1.2.3.4,5.6.7.8\n1.2.3.4;5.6.7.8\n").unwrap();
        match read_pairs(&p).unwrap_err() {
            IngestError::Malformed { location, .. } => assert_eq!(location, "line 2"),
            e => panic!("unexpected {e}"),
        }
    }
}
