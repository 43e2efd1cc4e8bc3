use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Time source for backoff and rate limiting, swappable in tests.
pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// A clock that only moves when slept on or advanced explicitly.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: Mutex<Duration>,
    slept: Mutex<Vec<Duration>>,
}

impl ManualClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }

    /// Every sleep requested so far, in order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.slept.lock().unwrap().push(d);
        self.advance(d);
    }
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: Duration,
}

/// Token bucket shared by every caller holding the same `Arc`.
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    clock: Arc<dyn Clock>,
    state: Mutex<Bucket>,
}

impl std::fmt::Debug for TokenBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TokenBucket")
            .field("capacity", &self.capacity)
            .field("per_second", &self.per_second)
            .finish()
    }
}

impl TokenBucket {
    /// `per_minute` sustained requests with bursts of up to `burst`.
    pub fn per_minute(per_minute: f64, burst: u32, clock: Arc<dyn Clock>) -> Self {
        assert!(per_minute > 0.0 && burst >= 1, "rate and burst must be positive");
        let now = clock.now();
        Self {
            capacity: burst as f64,
            per_second: per_minute / 60.0,
            state: Mutex::new(Bucket { tokens: burst as f64, last: now }),
            clock,
        }
    }

    /// Blocks (on the bucket's clock) until a token is available, then takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut b = self.state.lock().unwrap();
                let now = self.clock.now();
                let elapsed = now.saturating_sub(b.last).as_secs_f64();
                b.tokens = (b.tokens + elapsed * self.per_second).min(self.capacity);
                b.last = now;
                if b.tokens >= 1.0 - 1e-9 {
                    b.tokens = (b.tokens - 1.0).max(0.0);
                    return;
                }
                Duration::from_secs_f64((1.0 - b.tokens) / self.per_second)
            };
            self.clock.sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spaces_requests_at_the_sustained_rate() {
        let clock = Arc::new(ManualClock::default());
        let bucket = TokenBucket::per_minute(30.0, 1, clock.clone());
        let mut times = Vec::new();
        for _ in 0..5 {
            bucket.acquire();
            times.push(clock.now().as_secs_f64());
        }
        for (i, t) in times.iter().enumerate() {
            assert!((t - 2.0 * i as f64).abs() < 1e-6, "{times:?}");
        }
    }

    #[test]
    fn burst_is_available_up_front() {
        let clock = Arc::new(ManualClock::default());
        let bucket = TokenBucket::per_minute(60.0, 3, clock.clone());
        for _ in 0..3 {
            bucket.acquire();
        }
        assert_eq!(clock.now(), Duration::ZERO);
        bucket.acquire();
        assert!((clock.now().as_secs_f64() - 1.0).abs() < 1e-6);
    }
}
