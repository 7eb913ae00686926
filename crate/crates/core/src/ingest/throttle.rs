use std::time::{Duration, Instant};

/// Token bucket over the monotonic clock.
///
/// Tokens refill continuously at `rate`. When the bucket runs dry the caller
/// sleeps until one batch (at most 1 ms of traffic) is available, so pairs are
/// released in small bursts rather than one syscall per pair. The bucket can
/// hold a few batches to absorb sleep overshoot; time lost while the consumer
/// is blocked longer than that is not made up.
#[derive(Debug)]
pub struct Throttle {
    rate: f64,
    batch: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

const BATCH_WINDOW: f64 = 1e-3;
const BURST_WINDOW: f64 = 20e-3;

impl Throttle {
    /// Returns `None` for an unthrottled (`rate == 0`) source.
    pub fn new(rate: f64) -> Option<Self> {
        if rate <= 0.0 {
            return None;
        }
        let batch = (rate * BATCH_WINDOW).max(1.0);
        Some(Self {
            rate,
            batch,
            capacity: (rate * BURST_WINDOW).max(batch),
            tokens: 0.0,
            last: Instant::now(),
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn refill(&mut self) {
        let now = Instant::now();
        let dt = now.duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + dt * self.rate).min(self.capacity);
    }

    /// Blocks until one token is available and consumes it.
    pub fn take(&mut self) {
        if self.tokens < 1.0 {
            self.refill();
            if self.tokens < 1.0 {
                let wait = (self.batch - self.tokens) / self.rate;
                std::thread::sleep(Duration::from_secs_f64(wait));
                self.refill();
            }
        }
        self.tokens -= 1.0;
    }
}
