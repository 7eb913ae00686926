use std::net::{IpAddr, SocketAddr, SocketAddrV4};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tiny_http::{Response, Server};

use super::{IngestError, StopFlag, TrafficSourceConfig};
use crate::ip::{IpAddr32, IpPair};

const POLL: Duration = Duration::from_millis(50);

/// Counters shared with the tap's owner.
#[derive(Debug, Default)]
pub struct TapStats {
    pub accepted: AtomicU64,
    pub skipped_non_ipv4: AtomicU64,
}

/// HTTP endpoint that turns every request into one pair.
///
/// Any method and path is answered with `204 No Content`. The pair is the
/// client's IPv4 address as source and the bound server address as
/// destination. Requests are emitted in the order their parsing completes.
pub struct HttpTap {
    server: Server,
    local: SocketAddrV4,
    stats: Arc<TapStats>,
    remaining: Option<u64>,
    stop: StopFlag,
}

impl HttpTap {
    pub fn bind(cfg: &TrafficSourceConfig, stop: StopFlag) -> Result<Self, IngestError> {
        let addr = cfg
            .bind
            .ok_or_else(|| IngestError::InvalidConfig("http tap needs a bind address".into()))?;
        let server = Server::http(SocketAddr::V4(addr)).map_err(|e| IngestError::Bind {
            addr,
            message: e.to_string(),
        })?;
        let local = match server.server_addr().to_ip() {
            Some(SocketAddr::V4(a)) => a,
            _ => addr,
        };
        Ok(Self {
            server,
            local,
            stats: Arc::default(),
            remaining: cfg.total,
            stop,
        })
    }

    /// Actual listening address (resolves port 0).
    pub fn local_addr(&self) -> SocketAddrV4 {
        self.local
    }

    pub fn stats(&self) -> Arc<TapStats> {
        self.stats.clone()
    }
}

impl Iterator for HttpTap {
    type Item = IpPair;

    fn next(&mut self) -> Option<IpPair> {
        loop {
            if self.remaining == Some(0) || self.stop.is_stopped() {
                return None;
            }
            let req = match self.server.recv_timeout(POLL) {
                Ok(Some(r)) => r,
                Ok(None) => continue,
                Err(e) => {
                    log::warn!("http tap receive error: {e}");
                    continue;
                }
            };
            let peer = req.remote_addr().map(|a| a.ip());
            if let Err(e) = req.respond(Response::empty(204)) {
                log::debug!("http tap response failed: {e}");
            }
            match peer {
                Some(IpAddr::V4(src)) => {
                    self.stats.accepted.fetch_add(1, Ordering::Relaxed);
                    if let Some(r) = self.remaining.as_mut() {
                        *r -= 1;
                    }
                    return Some(IpPair {
                        src: IpAddr32::from(src),
                        dst: IpAddr32::from(*self.local.ip()),
                    });
                }
                _ => {
                    self.stats.skipped_non_ipv4.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }
}
