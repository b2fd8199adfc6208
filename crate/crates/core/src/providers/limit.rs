use std::sync::{Arc, Condvar, Mutex};

/// Counting semaphore bounding concurrent remote requests.
#[derive(Debug, Clone)]
pub struct InflightLimit {
    inner: Arc<(Mutex<usize>, Condvar)>,
    max: usize,
}

pub struct Permit<'a> {
    limit: &'a InflightLimit,
}

impl InflightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            inner: Arc::new((Mutex::new(0), Condvar::new())),
            max: max.max(1),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> Permit<'_> {
        let (lock, cv) = &*self.inner;
        let mut n = lock.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { limit: self }
    }

    fn release(&self) {
        let (lock, cv) = &*self.inner;
        let mut n = lock.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        cv.notify_one();
    }
}

impl Default for InflightLimit {
    fn default() -> Self {
        Self::new(8)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        self.limit.release();
    }
}
