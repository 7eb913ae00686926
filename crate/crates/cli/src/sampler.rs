//! Periodic CPU and resident-memory sampling of child processes via `/proc`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::Serialize;

pub const RESOURCES_HEADER: &str = "elapsed_s,role,rank,pid,cpu_pct,rss_kb";

/// Process being watched.
#[derive(Clone, Debug)]
pub struct Target {
    pub role: &'static str,
    pub rank: u32,
    pub pid: u32,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ResourceStats {
    pub samples: u64,
    pub peak_rss_kb: u64,
    pub mean_cpu_pct: f64,
}

/// Cumulative user+system CPU ticks from the contents of `/proc/<pid>/stat`.
pub fn parse_stat_ticks(stat: &str) -> Option<u64> {
    // The command name may contain spaces; fields resume after its closing paren.
    let rest = &stat[stat.rfind(')')? + 1..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    // utime and stime are fields 14 and 15 overall, i.e. 12 and 13 after the name.
    let utime: u64 = fields.get(11)?.parse().ok()?;
    let stime: u64 = fields.get(12)?.parse().ok()?;
    Some(utime + stime)
}

/// `VmRSS` in KiB from the contents of `/proc/<pid>/status`.
pub fn parse_status_rss_kb(status: &str) -> Option<u64> {
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn clock_ticks() -> f64 {
    // SAFETY: sysconf has no preconditions.
    let t = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if t > 0 {
        t as f64
    } else {
        100.0
    }
}

/// Per `(role, rank)`: statistics plus the running CPU sum behind the mean.
type SharedStats = Arc<Mutex<HashMap<(String, u32), (ResourceStats, f64)>>>;

pub struct Sampler {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    stats: SharedStats,
}

impl Sampler {
    /// Starts sampling `targets` every `interval` into the CSV at `path`.
    pub fn start(path: &Path, targets: Vec<Target>, interval: Duration) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{RESOURCES_HEADER}")?;
        let stop = Arc::new(AtomicBool::new(false));
        let stats: SharedStats = Arc::default();
        let (stop2, stats2) = (stop.clone(), stats.clone());
        let handle = thread::Builder::new().name("sampler".into()).spawn(move || {
            let hz = clock_ticks();
            let start = Instant::now();
            let mut last: HashMap<u32, (u64, Instant)> = HashMap::new();
            while !stop2.load(Ordering::Relaxed) {
                let now = Instant::now();
                for t in &targets {
                    let proc_dir = Path::new("/proc").join(t.pid.to_string());
                    let Some(ticks) = std::fs::read_to_string(proc_dir.join("stat"))
                        .ok()
                        .and_then(|s| parse_stat_ticks(&s))
                    else {
                        continue;
                    };
                    let rss = std::fs::read_to_string(proc_dir.join("status"))
                        .ok()
                        .and_then(|s| parse_status_rss_kb(&s))
                        .unwrap_or(0);
                    let cpu = match last.insert(t.pid, (ticks, now)) {
                        Some((prev, at)) => {
                            let wall = now.duration_since(at).as_secs_f64().max(1e-6);
                            100.0 * ticks.saturating_sub(prev) as f64 / hz / wall
                        }
                        None => continue,
                    };
                    let _ = writeln!(
                        out,
                        "{:.3},{},{},{},{:.1},{}",
                        now.duration_since(start).as_secs_f64(),
                        t.role,
                        t.rank,
                        t.pid,
                        cpu,
                        rss
                    );
                    let mut s = stats2.lock().unwrap();
                    let (st, cpu_sum) = s.entry((t.role.to_string(), t.rank)).or_default();
                    st.samples += 1;
                    st.peak_rss_kb = st.peak_rss_kb.max(rss);
                    *cpu_sum += cpu;
                    st.mean_cpu_pct = *cpu_sum / st.samples as f64;
                }
                let _ = out.flush();
                thread::sleep(interval);
            }
            let _ = out.flush();
        })?;
        Ok(Self {
            stop,
            handle: Some(handle),
            stats,
        })
    }

    /// Stops sampling and returns per-process statistics keyed by `(role, rank)`.
    pub fn finish(mut self) -> Vec<(String, u32, ResourceStats)> {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        let mut v: Vec<_> = self
            .stats
            .lock()
            .unwrap()
            .drain()
            .map(|((role, rank), (s, _))| (role, rank, s))
            .collect();
        v.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
        v
    }
}
