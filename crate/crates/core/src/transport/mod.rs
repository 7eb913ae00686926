//! Delivery of serialized local aggregates from workers to the coordinator.
//!
//! Two user-space, file-based transports are provided:
//!
//! * [`MessagePassing`]: rank-addressed channels `from_<src>_to_<dst>/` holding
//!   numbered `<seq>.msg` files, with send/probe/receive primitives.
//! * [`SharedSpool`]: workers publish `local/<rank>_<seq>.dbtm` into a shared
//!   directory that the coordinator scans.
//!
//! Both publish by writing a `.tmp` file and renaming it, so a visible file is
//! always complete.

mod mp;
mod sfs;

use std::collections::VecDeque;
use std::path::PathBuf;

use thiserror::Error;

use crate::matrix::TrafficMatrix;
use crate::pipeline::AggregateDescriptor;

pub use mp::{Message, MessagePassing, MsgRef, Tag, COORDINATOR_RANK};
pub use sfs::{SfsEntry, SharedSpool};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("poison message from rank {src} to rank {dst} seq {seq}: {reason}")]
    Poison {
        src: u32,
        dst: u32,
        seq: u64,
        reason: String,
    },
    #[error("message {seq} on channel {src}->{dst} is no longer available")]
    Gone { src: u32, dst: u32, seq: u64 },
}

impl TransportError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> TransportError {
        let path = path.into();
        move |source| TransportError::Io { path, source }
    }

    pub(crate) fn poison(src: u32, dst: u32, seq: u64, reason: impl ToString) -> Self {
        TransportError::Poison {
            src,
            dst,
            seq,
            reason: reason.to_string(),
        }
    }
}

/// What to do with a message once it has been consumed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Disposition {
    #[default]
    Delete,
    /// Move into a `consumed/` tree for later inspection.
    Archive,
}

/// Worker-side end of a transport.
pub trait LocalSink: Send {
    /// Ships one local aggregate's `.dbtm` image to the coordinator.
    fn deliver(&mut self, descriptor: &AggregateDescriptor, bytes: &[u8]) -> Result<(), TransportError>;
    /// Tells the coordinator that no more aggregates will follow.
    fn shutdown(&mut self) -> Result<(), TransportError>;
}

/// Message-passing sink: every aggregate is a `local_aggregate` message to rank 0.
pub struct MessageSink(pub MessagePassing);

impl LocalSink for MessageSink {
    fn deliver(&mut self, _d: &AggregateDescriptor, bytes: &[u8]) -> Result<(), TransportError> {
        self.0.send_msg(COORDINATOR_RANK, Tag::LocalAggregate, bytes).map(|_| ())
    }

    fn shutdown(&mut self) -> Result<(), TransportError> {
        self.0.send_msg(COORDINATOR_RANK, Tag::Shutdown, &[]).map(|_| ())
    }
}

/// Shared-filesystem sink.
pub struct SpoolSink {
    pub spool: SharedSpool,
    pub rank: u32,
}

impl LocalSink for SpoolSink {
    fn deliver(&mut self, d: &AggregateDescriptor, bytes: &[u8]) -> Result<(), TransportError> {
        self.spool.publish(self.rank, d.seq, bytes).map(|_| ())
    }

    fn shutdown(&mut self) -> Result<(), TransportError> {
        self.spool.publish_shutdown(self.rank)
    }
}

/// Sink that keeps everything in memory; useful for tests and dry runs.
#[derive(Debug, Default)]
pub struct CollectSink {
    pub delivered: Vec<(AggregateDescriptor, Vec<u8>)>,
    pub shut_down: bool,
}

impl LocalSink for std::sync::Arc<std::sync::Mutex<CollectSink>> {
    fn deliver(&mut self, d: &AggregateDescriptor, bytes: &[u8]) -> Result<(), TransportError> {
        self.lock().unwrap().delivered.push((d.clone(), bytes.to_vec()));
        Ok(())
    }

    fn shutdown(&mut self) -> Result<(), TransportError> {
        self.lock().unwrap().shut_down = true;
        Ok(())
    }
}

/// One thing the coordinator learned from its inbox.
#[derive(Debug)]
pub enum InboxEvent {
    Local {
        rank: u32,
        seq: u64,
        matrix: TrafficMatrix,
        bytes: u64,
    },
    Shutdown {
        rank: u32,
    },
    /// A payload failed to decode and was quarantined.
    Poison(TransportError),
}

/// Coordinator-side end of either transport.
pub enum Inbox {
    MessagePassing(MessagePassing),
    SharedFs {
        spool: SharedSpool,
        queue: VecDeque<InboxEvent>,
        announced: std::collections::HashSet<u32>,
    },
}

impl Inbox {
    pub fn shared_fs(spool: SharedSpool) -> Self {
        Inbox::SharedFs {
            spool,
            queue: VecDeque::new(),
            announced: Default::default(),
        }
    }

    /// Returns the next event without blocking, or `None` when nothing is pending.
    pub fn poll(&mut self) -> Result<Option<InboxEvent>, TransportError> {
        match self {
            Inbox::MessagePassing(mp) => {
                let Some(r) = mp.probe_msg()? else {
                    return Ok(None);
                };
                match mp.recv_msg(&r) {
                    Ok(msg) => Ok(Some(match msg.tag {
                        Tag::Shutdown => InboxEvent::Shutdown { rank: msg.src_rank },
                        Tag::LocalAggregate => InboxEvent::Local {
                            rank: msg.src_rank,
                            seq: msg.seq,
                            bytes: msg.payload.len() as u64,
                            matrix: msg.matrix.expect("verified on receive"),
                        },
                    })),
                    Err(e @ TransportError::Poison { .. }) => Ok(Some(InboxEvent::Poison(e))),
                    Err(e) => Err(e),
                }
            }
            Inbox::SharedFs {
                spool,
                queue,
                announced,
            } => {
                if queue.is_empty() {
                    // Markers first: anything a rank published before its marker is then visible to the scan.
                    let done = spool.shutdown_ranks()?;
                    for entry in spool.scan()? {
                        let (rank, seq) = (entry.rank, entry.seq);
                        queue.push_back(match spool.consume(&entry) {
                            Ok((matrix, bytes)) => InboxEvent::Local {
                                rank,
                                seq,
                                matrix,
                                bytes,
                            },
                            Err(e @ TransportError::Poison { .. }) => InboxEvent::Poison(e),
                            Err(e) => return Err(e),
                        });
                    }
                    for rank in done {
                        if announced.insert(rank) {
                            queue.push_back(InboxEvent::Shutdown { rank });
                        }
                    }
                }
                Ok(queue.pop_front())
            }
        }
    }
}
