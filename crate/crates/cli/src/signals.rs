use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use netsense_core::ingest::StopFlag;

static SIGNALLED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    SIGNALLED.store(true, Ordering::SeqCst);
}

/// Raises `stop` on SIGINT/SIGTERM, or once `deadline` seconds have passed.
pub fn install(stop: &StopFlag, deadline: Option<f64>) {
    // SAFETY: the handler only stores to an atomic, which is async-signal-safe.
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_signal as *const () as libc::sighandler_t);
    }
    let stop = stop.clone();
    let until = deadline.map(|s| Instant::now() + Duration::from_secs_f64(s.max(0.0)));
    thread::Builder::new()
        .name("signals".into())
        .spawn(move || loop {
            if SIGNALLED.load(Ordering::SeqCst) || until.is_some_and(|t| Instant::now() >= t) {
                stop.stop();
                return;
            }
            thread::sleep(Duration::from_millis(20));
        })
        .expect("spawn signal watcher");
}

/// Sends SIGTERM to `pid`.
pub fn terminate(pid: u32) {
    // SAFETY: plain kill(2) on a child pid we spawned.
    unsafe {
        libc::kill(pid as libc::pid_t, libc::SIGTERM);
    }
}
