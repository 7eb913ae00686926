//! Rank-addressed, file-based message passing.
//!
//! Layout under the message root:
//!
//! ```text
//! from_<src>_to_<dst>/<seq>.msg        undelivered messages, seq from 1
//! consumed/from_<src>_to_<dst>/<seq>.msg   archived after receipt (optional)
//! quarantine/from_<src>_to_<dst>/<seq>.msg payloads that failed to decode
//! ```
//!
//! A message file is a 16-byte envelope followed by the payload:
//! magic `DBMG`, version u16 (1), tag u16 (1 = local aggregate, 2 = shutdown),
//! payload length u64, all little-endian.

use std::collections::HashMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use super::{Disposition, TransportError};
use crate::format::{self, write_atomic};
use crate::matrix::TrafficMatrix;

pub const COORDINATOR_RANK: u32 = 0;

const ENVELOPE_MAGIC: [u8; 4] = *b"DBMG";
const ENVELOPE_VERSION: u16 = 1;
const ENVELOPE_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    LocalAggregate,
    Shutdown,
}

impl Tag {
    fn code(self) -> u16 {
        match self {
            Tag::LocalAggregate => 1,
            Tag::Shutdown => 2,
        }
    }

    fn from_code(c: u16) -> Option<Self> {
        match c {
            1 => Some(Tag::LocalAggregate),
            2 => Some(Tag::Shutdown),
            _ => None,
        }
    }
}

/// A received message. `matrix` holds the decoded payload of a local aggregate.
#[derive(Clone, Debug)]
pub struct Message {
    pub src_rank: u32,
    pub dst_rank: u32,
    pub seq: u64,
    pub tag: Tag,
    pub payload: Vec<u8>,
    pub matrix: Option<TrafficMatrix>,
}

/// Handle to an undelivered message found by [`MessagePassing::probe_msg`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MsgRef {
    pub src_rank: u32,
    pub dst_rank: u32,
    pub seq: u64,
    pub path: PathBuf,
}

/// One rank's endpoint on a shared message root.
#[derive(Debug)]
pub struct MessagePassing {
    root: PathBuf,
    rank: u32,
    next_seq: HashMap<u32, u64>,
    disposition: Disposition,
}

fn channel_name(src: u32, dst: u32) -> String {
    format!("from_{src}_to_{dst}")
}

fn parse_channel(name: &str) -> Option<(u32, u32)> {
    let rest = name.strip_prefix("from_")?;
    let (s, d) = rest.split_once("_to_")?;
    Some((s.parse().ok()?, d.parse().ok()?))
}

fn parse_msg_name(name: &str) -> Option<u64> {
    name.strip_suffix(".msg")?.parse().ok()
}

/// Sequence numbers of complete `.msg` files in `dir`; a missing dir is empty.
fn list_seqs(dir: &Path) -> Result<Vec<u64>, TransportError> {
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(TransportError::io(dir)(e)),
    };
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(TransportError::io(dir))?;
        if let Some(seq) = entry.file_name().to_str().and_then(parse_msg_name) {
            out.push(seq);
        }
    }
    Ok(out)
}

fn encode(tag: Tag, payload: &[u8]) -> Vec<u8> {
    let mut b = Vec::with_capacity(ENVELOPE_LEN + payload.len());
    b.extend_from_slice(&ENVELOPE_MAGIC);
    b.extend_from_slice(&ENVELOPE_VERSION.to_le_bytes());
    b.extend_from_slice(&tag.code().to_le_bytes());
    b.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    b.extend_from_slice(payload);
    b
}

fn decode(bytes: &[u8]) -> Result<(Tag, &[u8]), String> {
    if bytes.len() < ENVELOPE_LEN {
        return Err(format!("envelope truncated at {} bytes", bytes.len()));
    }
    if bytes[0..4] != ENVELOPE_MAGIC {
        return Err("bad envelope magic".into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != ENVELOPE_VERSION {
        return Err(format!("unsupported envelope version {version}"));
    }
    let code = u16::from_le_bytes([bytes[6], bytes[7]]);
    let tag = Tag::from_code(code).ok_or_else(|| format!("unknown tag {code}"))?;
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let payload = &bytes[ENVELOPE_LEN..];
    if payload.len() as u64 != len {
        return Err(format!("payload length {} != declared {len}", payload.len()));
    }
    Ok((tag, payload))
}

impl MessagePassing {
    pub fn new(root: impl Into<PathBuf>, rank: u32, disposition: Disposition) -> Result<Self, TransportError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(TransportError::io(&root))?;
        Ok(Self {
            root,
            rank,
            next_seq: HashMap::new(),
            disposition,
        })
    }

    pub fn rank(&self) -> u32 {
        self.rank
    }

    pub fn channel_dir(&self, src: u32, dst: u32) -> PathBuf {
        self.root.join(channel_name(src, dst))
    }

    fn side_dir(&self, kind: &str, src: u32, dst: u32) -> PathBuf {
        self.root.join(kind).join(channel_name(src, dst))
    }

    /// Continues numbering after anything already on disk for this channel.
    fn resume_seq(&self, dst: u32) -> Result<u64, TransportError> {
        let mut max = 0;
        for dir in [
            self.channel_dir(self.rank, dst),
            self.side_dir("consumed", self.rank, dst),
            self.side_dir("quarantine", self.rank, dst),
        ] {
            max = list_seqs(&dir)?.into_iter().fold(max, u64::max);
        }
        Ok(max + 1)
    }

    /// Publishes `payload` as the next message on the channel to `dst` and
    /// returns its sequence number.
    pub fn send_msg(&mut self, dst: u32, tag: Tag, payload: &[u8]) -> Result<u64, TransportError> {
        let dir = self.channel_dir(self.rank, dst);
        let seq = match self.next_seq.get(&dst) {
            Some(&s) => s,
            None => {
                fs::create_dir_all(&dir).map_err(TransportError::io(&dir))?;
                self.resume_seq(dst)?
            }
        };
        let path = dir.join(format!("{seq}.msg"));
        write_atomic(&path, &encode(tag, payload)).map_err(TransportError::io(&path))?;
        self.next_seq.insert(dst, seq + 1);
        Ok(seq)
    }

    /// Reports the lowest-sequence undelivered message addressed to this rank
    /// (ties go to the lower source rank). Never blocks and consumes nothing.
    pub fn probe_msg(&self) -> Result<Option<MsgRef>, TransportError> {
        let rd = fs::read_dir(&self.root).map_err(TransportError::io(&self.root))?;
        let mut best: Option<MsgRef> = None;
        for entry in rd {
            let entry = entry.map_err(TransportError::io(&self.root))?;
            let Some((src, dst)) = entry.file_name().to_str().and_then(parse_channel) else {
                continue;
            };
            if dst != self.rank {
                continue;
            }
            let dir = entry.path();
            if let Some(seq) = list_seqs(&dir)?.into_iter().min() {
                let better = best
                    .as_ref()
                    .is_none_or(|b| (seq, src) < (b.seq, b.src_rank));
                if better {
                    best = Some(MsgRef {
                        src_rank: src,
                        dst_rank: dst,
                        seq,
                        path: dir.join(format!("{seq}.msg")),
                    });
                }
            }
        }
        Ok(best)
    }

    fn move_to(&self, kind: &str, r: &MsgRef) -> Result<(), TransportError> {
        let dir = self.side_dir(kind, r.src_rank, r.dst_rank);
        fs::create_dir_all(&dir).map_err(TransportError::io(&dir))?;
        fs::rename(&r.path, dir.join(format!("{}.msg", r.seq))).map_err(TransportError::io(&r.path))
    }

    /// Retrieves and consumes the referenced message.
    ///
    /// A payload that fails to decode is moved to `quarantine/` and reported
    /// as [`TransportError::Poison`]; the channel then continues with the next
    /// sequence number.
    pub fn recv_msg(&mut self, r: &MsgRef) -> Result<Message, TransportError> {
        let bytes = match fs::read(&r.path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => {
                return Err(TransportError::Gone {
                    src: r.src_rank,
                    dst: r.dst_rank,
                    seq: r.seq,
                })
            }
            Err(e) => return Err(TransportError::io(&r.path)(e)),
        };
        let decoded = decode(&bytes).and_then(|(tag, payload)| {
            let matrix = match tag {
                Tag::LocalAggregate => Some(format::deserialize(payload).map_err(|e| e.to_string())?),
                Tag::Shutdown => None,
            };
            Ok((tag, payload.to_vec(), matrix))
        });
        match decoded {
            Ok((tag, payload, matrix)) => {
                match self.disposition {
                    Disposition::Delete => fs::remove_file(&r.path).map_err(TransportError::io(&r.path))?,
                    Disposition::Archive => self.move_to("consumed", r)?,
                }
                Ok(Message {
                    src_rank: r.src_rank,
                    dst_rank: r.dst_rank,
                    seq: r.seq,
                    tag,
                    payload,
                    matrix,
                })
            }
            Err(reason) => {
                self.move_to("quarantine", r)?;
                Err(TransportError::poison(r.src_rank, r.dst_rank, r.seq, reason))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ip::IpPair;

    fn payload(k: u32) -> Vec<u8> {
        format::serialize(&TrafficMatrix::from_pairs(&[IpPair::new(k, k + 1)]))
    }

    #[test]
    fn names() {
        assert_eq!(parse_channel("from_3_to_0"), Some((3, 0)));
        assert_eq!(parse_channel("consumed"), None);
        assert_eq!(parse_msg_name("12.msg"), Some(12));
        assert_eq!(parse_msg_name("12.msg.tmp"), None);
    }

    #[test]
    fn first_send_is_seq_one_and_probe_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MessagePassing::new(dir.path(), 1, Disposition::Delete).unwrap();
        let c = MessagePassing::new(dir.path(), 0, Disposition::Delete).unwrap();
        assert_eq!(c.probe_msg().unwrap(), None);
        assert_eq!(w.send_msg(0, Tag::LocalAggregate, &payload(1)).unwrap(), 1);
        assert!(dir.path().join("from_1_to_0/1.msg").exists());
        let r1 = c.probe_msg().unwrap().unwrap();
        assert_eq!(r1.seq, 1);
        assert_eq!(c.probe_msg().unwrap().unwrap(), r1);
    }

    #[test]
    fn recv_then_probe_advances() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MessagePassing::new(dir.path(), 2, Disposition::Delete).unwrap();
        let mut c = MessagePassing::new(dir.path(), 0, Disposition::Archive).unwrap();
        w.send_msg(0, Tag::LocalAggregate, &payload(1)).unwrap();
        w.send_msg(0, Tag::Shutdown, &[]).unwrap();
        let r = c.probe_msg().unwrap().unwrap();
        let m = c.recv_msg(&r).unwrap();
        assert_eq!(m.payload, payload(1));
        assert_eq!(m.src_rank, 2);
        assert!(dir.path().join("consumed/from_2_to_0/1.msg").exists());
        let r2 = c.probe_msg().unwrap().unwrap();
        assert_eq!(r2.seq, 2);
        assert_eq!(c.recv_msg(&r2).unwrap().tag, Tag::Shutdown);
        assert!(matches!(c.recv_msg(&r2), Err(TransportError::Gone { .. })));
    }

    #[test]
    fn sender_resumes_numbering() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MessagePassing::new(dir.path(), 1, Disposition::Delete).unwrap();
        w.send_msg(0, Tag::Shutdown, &[]).unwrap();
        w.send_msg(0, Tag::Shutdown, &[]).unwrap();
        let mut again = MessagePassing::new(dir.path(), 1, Disposition::Delete).unwrap();
        assert_eq!(again.send_msg(0, Tag::Shutdown, &[]).unwrap(), 3);
    }

    #[test]
    fn messages_to_other_ranks_are_invisible() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = MessagePassing::new(dir.path(), 1, Disposition::Delete).unwrap();
        w.send_msg(5, Tag::Shutdown, &[]).unwrap();
        let c = MessagePassing::new(dir.path(), 0, Disposition::Delete).unwrap();
        assert_eq!(c.probe_msg().unwrap(), None);
    }
}
