use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Time source for rate limiting and retry backoff. Tests swap in
/// [`ManualClock`] so limits can be checked without waiting.
pub trait Clock: Send + Sync {
    /// Monotonic time since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Virtual clock: `sleep` advances time instantly.
#[derive(Debug, Default, Clone)]
pub struct ManualClock {
    now: Arc<Mutex<Duration>>,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, by: Duration) {
        *self.now.lock().unwrap() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, duration: Duration) {
        self.advance(duration);
    }
}

const WINDOW: Duration = Duration::from_secs(60);

/// Sliding-window limiter: at most `per_minute` acquisitions in any
/// 60-second window. Shared across worker threads.
pub struct RateLimiter {
    per_minute: usize,
    clock: Arc<dyn Clock>,
    issued: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32, clock: Arc<dyn Clock>) -> Self {
        Self {
            per_minute: per_minute.max(1) as usize,
            clock,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    pub fn per_minute(&self) -> u32 {
        self.per_minute as u32
    }

    /// Blocks until a request slot is free, then records it. Returns the
    /// clock time at which the slot was taken.
    pub fn acquire(&self) -> Duration {
        loop {
            let wait = {
                let mut issued = self.issued.lock().unwrap();
                let now = self.clock.now();
                while issued.front().is_some_and(|&t| now >= t + WINDOW) {
                    issued.pop_front();
                }
                if issued.len() < self.per_minute {
                    issued.push_back(now);
                    return now;
                }
                (*issued.front().expect("window is full") + WINDOW) - now
            };
            self.clock.sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_never_exceeds_limit() {
        let clock = ManualClock::new();
        let limiter = RateLimiter::new(5, Arc::new(clock.clone()));
        let stamps: Vec<Duration> = (0..23).map(|_| limiter.acquire()).collect();
        for (i, &start) in stamps.iter().enumerate() {
            let in_window = stamps[i..].iter().filter(|&&t| t < start + WINDOW).count();
            assert!(in_window <= 5, "window starting at {start:?} holds {in_window}");
        }
        // 23 requests at 5/min need at least four full windows of waiting.
        assert!(clock.now() >= Duration::from_secs(240));
    }

    #[test]
    fn limiter_is_shared_across_threads() {
        let clock = ManualClock::new();
        let limiter = Arc::new(RateLimiter::new(7, Arc::new(clock.clone())));
        let stamps = Arc::new(Mutex::new(Vec::new()));
        std::thread::scope(|s| {
            for _ in 0..4 {
                let limiter = Arc::clone(&limiter);
                let stamps = Arc::clone(&stamps);
                s.spawn(move || {
                    for _ in 0..5 {
                        let t = limiter.acquire();
                        stamps.lock().unwrap().push(t);
                    }
                });
            }
        });
        let mut stamps = stamps.lock().unwrap().clone();
        stamps.sort();
        assert_eq!(stamps.len(), 20);
        for (i, &start) in stamps.iter().enumerate() {
            let in_window = stamps[i..].iter().filter(|&&t| t < start + WINDOW).count();
            assert!(in_window <= 7);
        }
    }
}
