use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

/// Counts live [`crate::layers::BlockCache`]s and remembers the peak.
///
/// Blocks sharing one tracker report into the same counters, which is how
/// the trainer measures how many hidden activation caches are held at once.
#[derive(Clone, Debug, Default)]
pub struct CacheTracker {
    inner: Arc<Counters>,
}

#[derive(Debug, Default)]
struct Counters {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl CacheTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn live(&self) -> usize {
        self.inner.live.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.inner.peak.load(Ordering::SeqCst)
    }

    pub fn reset_peak(&self) {
        self.inner.peak.store(self.live(), Ordering::SeqCst);
    }

    pub(crate) fn acquire(&self) -> LiveToken {
        let now = self.inner.live.fetch_add(1, Ordering::SeqCst) + 1;
        self.inner.peak.fetch_max(now, Ordering::SeqCst);
        LiveToken { tracker: self.clone() }
    }
}

/// Held by a cache; releases its slot when dropped.
#[derive(Debug)]
pub struct LiveToken {
    tracker: CacheTracker,
}

impl Drop for LiveToken {
    fn drop(&mut self) {
        self.tracker.inner.live.fetch_sub(1, Ordering::SeqCst);
    }
}
