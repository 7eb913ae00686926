//! The `.dbtm` binary matrix format.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "DBTM"
//!      4     2  version (u16, currently 1)
//!      6     2  flags (u16, bit 0 = payload zlib-compressed, others zero)
//!      8     8  nnz (u64)
//!     16     8  request_total (u64)
//!     24   ...  payload: nnz triples (src u32, dst u32, count u64)
//! ```
//!
//! Everything is little-endian. Triples are strictly ascending by
//! `(src, dst)` with nonzero counts, so equal matrices always serialize to
//! identical bytes. When bit 0 of `flags` is set, the payload region is a
//! single zlib stream (RFC 1950) whose inflated form is the triple array.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use thiserror::Error;

use crate::matrix::TrafficMatrix;

pub const MAGIC: [u8; 4] = *b"DBTM";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const TRIPLE_LEN: usize = 16;
pub const FLAG_COMPRESSED: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {0:02x?}, expected \"DBTM\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown flag bits {0:#06x}")]
    UnknownFlags(u16),
    #[error("truncated input: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("header declares {header} entries but payload holds {body}")]
    NnzMismatch { header: u64, body: u64 },
    #[error("header declares request total {header} but entries sum to {body:?}")]
    TotalMismatch { header: u64, body: Option<u64> },
    #[error("entry {index} is out of order")]
    Unsorted { index: u64 },
    #[error("entry {index} duplicates the previous link")]
    DuplicateEntry { index: u64 },
    #[error("entry {index} has a zero count")]
    ZeroCount { index: u64 },
    #[error("payload decompression failed: {0}")]
    Decompression(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Payload encoding selector for [`serialize_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Compression {
    #[default]
    None,
    Zlib,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatrixHeader {
    pub version: u16,
    pub flags: u16,
    pub nnz: u64,
    pub request_total: u64,
}

impl MatrixHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.flags.to_le_bytes());
        b[8..16].copy_from_slice(&self.nnz.to_le_bytes());
        b[16..24].copy_from_slice(&self.request_total.to_le_bytes());
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let flags = u16::from_le_bytes(bytes[6..8].try_into().unwrap());
        if flags & !FLAG_COMPRESSED != 0 {
            return Err(FormatError::UnknownFlags(flags));
        }
        Ok(Self {
            version,
            flags,
            nnz: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
            request_total: u64::from_le_bytes(bytes[16..24].try_into().unwrap()),
        })
    }
}

/// Serializes with an uncompressed payload.
pub fn serialize(m: &TrafficMatrix) -> Vec<u8> {
    serialize_with(m, Compression::None)
}

pub fn serialize_with(m: &TrafficMatrix, compression: Compression) -> Vec<u8> {
    let header = MatrixHeader {
        version: VERSION,
        flags: match compression {
            Compression::None => 0,
            Compression::Zlib => FLAG_COMPRESSED,
        },
        nnz: m.nnz(),
        request_total: m.request_total(),
    };
    let mut payload = Vec::with_capacity(m.nnz() as usize * TRIPLE_LEN);
    for (s, d, c) in m.iter() {
        payload.extend_from_slice(&s.0.to_le_bytes());
        payload.extend_from_slice(&d.0.to_le_bytes());
        payload.extend_from_slice(&c.to_le_bytes());
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&header.encode());
    match compression {
        Compression::None => out.extend_from_slice(&payload),
        Compression::Zlib => {
            let mut enc = ZlibEncoder::new(out, flate2::Compression::default());
            enc.write_all(&payload).expect("writing to a Vec cannot fail");
            out = enc.finish().expect("writing to a Vec cannot fail");
        }
    }
    out
}

/// Parses and fully validates a `.dbtm` byte image.
pub fn deserialize(bytes: &[u8]) -> Result<TrafficMatrix, FormatError> {
    let header = MatrixHeader::decode(bytes)?;
    let raw = &bytes[HEADER_LEN..];
    let inflated;
    let body: &[u8] = if header.flags & FLAG_COMPRESSED != 0 {
        let mut out = Vec::new();
        // Cap the inflated size so a lying header cannot make us allocate without bound.
        let limit = header.nnz.saturating_mul(TRIPLE_LEN as u64).saturating_add(1);
        ZlibDecoder::new(raw)
            .take(limit)
            .read_to_end(&mut out)
            .map_err(|e| FormatError::Decompression(e.to_string()))?;
        inflated = out;
        &inflated
    } else {
        raw
    };
    if !body.len().is_multiple_of(TRIPLE_LEN) {
        let needed = body.len().next_multiple_of(TRIPLE_LEN);
        return Err(FormatError::Truncated {
            needed: HEADER_LEN + needed,
            available: HEADER_LEN + body.len(),
        });
    }
    let body_nnz = (body.len() / TRIPLE_LEN) as u64;
    if body_nnz != header.nnz {
        return Err(FormatError::NnzMismatch {
            header: header.nnz,
            body: body_nnz,
        });
    }

    let mut triples = Vec::with_capacity(body_nnz as usize);
    let mut total: Option<u64> = Some(0);
    let mut prev: Option<(u32, u32)> = None;
    for (i, chunk) in body.chunks_exact(TRIPLE_LEN).enumerate() {
        let index = i as u64;
        let s = u32::from_le_bytes(chunk[0..4].try_into().unwrap());
        let d = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
        let c = u64::from_le_bytes(chunk[8..16].try_into().unwrap());
        if c == 0 {
            return Err(FormatError::ZeroCount { index });
        }
        if let Some(p) = prev {
            match p.cmp(&(s, d)) {
                std::cmp::Ordering::Equal => return Err(FormatError::DuplicateEntry { index }),
                std::cmp::Ordering::Greater => return Err(FormatError::Unsorted { index }),
                std::cmp::Ordering::Less => {}
            }
        }
        prev = Some((s, d));
        total = total.and_then(|t| t.checked_add(c));
        triples.push((s, d, c));
    }
    if total != Some(header.request_total) {
        return Err(FormatError::TotalMismatch {
            header: header.request_total,
            body: total,
        });
    }
    Ok(TrafficMatrix::from_canonical_triples(&triples, header.request_total))
}

/// Writes `bytes` to `path` via a sibling `.tmp` file and a rename, so a
/// reader never observes a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_file(path: &Path, m: &TrafficMatrix, compression: Compression) -> Result<(), FormatError> {
    write_atomic(path, &serialize_with(m, compression)).map_err(|e| FormatError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_file(path: &Path) -> Result<TrafficMatrix, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    deserialize(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ip::IpPair;

    fn sample() -> TrafficMatrix {
        TrafficMatrix::from_pairs(&[
            IpPair::new(0x0a00_0001, 0x0a00_0002),
            IpPair::new(0x0a00_0001, 0x0a00_0002),
            IpPair::new(0xc0a8_0001, 0x0808_0808),
        ])
    }

    #[test]
    fn empty_matrix_is_header_only() {
        let b = serialize(&TrafficMatrix::new());
        assert_eq!(b.len(), HEADER_LEN);
        assert_eq!(&b[..4], b"DBTM");
        assert_eq!(&b[4..], &[1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(deserialize(&b).unwrap(), TrafficMatrix::new());
    }

    #[test]
    fn compressed_round_trip() {
        let m = sample();
        let b = serialize_with(&m, Compression::Zlib);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), FLAG_COMPRESSED);
        assert_eq!(deserialize(&b).unwrap(), m);
    }

    #[test]
    fn truncated_stream() {
        let b = serialize(&sample());
        let err = deserialize(&b[..b.len() - 5]).unwrap_err();
        assert!(matches!(err, FormatError::Truncated { .. }), "{err}");
        assert!(matches!(deserialize(&b[..10]), Err(FormatError::Truncated { .. })));
    }

    #[test]
    fn header_claims_entry_without_body() {
        let h = MatrixHeader {
            version: VERSION,
            flags: 0,
            nnz: 1,
            request_total: 1,
        };
        assert_eq!(
            deserialize(&h.encode()),
            Err(FormatError::NnzMismatch { header: 1, body: 0 })
        );
    }

    #[test]
    fn header_field_errors() {
        let mut b = serialize(&sample());
        b[0] = b'X';
        assert!(matches!(deserialize(&b), Err(FormatError::BadMagic(_))));

        let mut b = serialize(&sample());
        b[4] = 2;
        assert_eq!(deserialize(&b), Err(FormatError::UnsupportedVersion(2)));

        let mut b = serialize(&sample());
        b[6] = 0b10;
        assert_eq!(deserialize(&b), Err(FormatError::UnknownFlags(2)));

        let mut b = serialize(&sample());
        b[16] ^= 1;
        assert!(matches!(deserialize(&b), Err(FormatError::TotalMismatch { .. })));
    }

    #[test]
    fn body_ordering_errors() {
        let b = serialize(&sample());
        let (first, second) = (HEADER_LEN, HEADER_LEN + TRIPLE_LEN);

        let mut swapped = b.clone();
        swapped[first..second].copy_from_slice(&b[second..second + TRIPLE_LEN]);
        swapped[second..second + TRIPLE_LEN].copy_from_slice(&b[first..second]);
        assert_eq!(deserialize(&swapped), Err(FormatError::Unsorted { index: 1 }));

        let mut dup = b.clone();
        dup[second..second + 8].copy_from_slice(&b[first..first + 8]);
        assert_eq!(deserialize(&dup), Err(FormatError::DuplicateEntry { index: 1 }));

        let mut zero = b.clone();
        zero[first + 8..second].fill(0);
        assert_eq!(deserialize(&zero), Err(FormatError::ZeroCount { index: 0 }));
    }

    #[test]
    fn garbage_compressed_payload() {
        let mut b = MatrixHeader {
            version: VERSION,
            flags: FLAG_COMPRESSED,
            nnz: 1,
            request_total: 1,
        }
        .encode()
        .to_vec();
        b.extend_from_slice(b"not zlib at all");
        assert!(matches!(deserialize(&b), Err(FormatError::Decompression(_))));
    }
}
